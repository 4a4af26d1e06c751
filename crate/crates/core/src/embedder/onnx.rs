//! Pretrained face-recognition models in ONNX form, run with tract.

use std::path::Path;

use tract_onnx::prelude::*;

use super::{crop_tensor, EmbeddingBackend, PretrainedSlot};
use crate::error::{Error, Result};
use crate::preprocess::{FaceCrop, CROP_SIZE};

type Plan = SimplePlan<TypedFact, Box<dyn TypedOp>, Graph<TypedFact, Box<dyn TypedOp>>>;

/// A ResNet-style recognizer taking `1×3×112×112` input in `[-1, 1]`.
pub struct OnnxBackend {
    slot: PretrainedSlot,
    plan: Plan,
    dim: usize,
}

impl OnnxBackend {
    pub fn load(slot: PretrainedSlot, path: &Path) -> Result<Self> {
        let fail = |e: TractError| Error::Extraction {
            backend_id: slot.id().to_string(),
            message: format!("{}: {e:#}", path.display()),
        };
        let side = CROP_SIZE as usize;
        let plan = tract_onnx::onnx()
            .model_for_path(path)
            .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, side, side]).into()))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(fail)?;
        let mut backend = Self { slot, plan, dim: 0 };
        let probe = FaceCrop::new(image::RgbImage::new(CROP_SIZE, CROP_SIZE), 0)?;
        backend.dim = backend.run(&probe)?.len();
        Ok(backend)
    }

    fn run(&self, crop: &FaceCrop) -> Result<Vec<f32>> {
        let side = CROP_SIZE as usize;
        let fail = |e: TractError| Error::Extraction {
            backend_id: self.slot.id().to_string(),
            message: format!("{e:#}"),
        };
        let input = Tensor::from_shape(&[1, 3, side, side], &crop_tensor(crop, self.slot.expects_bgr())).map_err(fail)?;
        let out = self.plan.run(tvec!(input.into())).map_err(fail)?;
        let view = out[0].to_array_view::<f32>().map_err(fail)?;
        Ok(view.iter().copied().collect())
    }
}

impl EmbeddingBackend for OnnxBackend {
    fn backend_id(&self) -> &str {
        self.slot.id()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, crop: &FaceCrop) -> Result<Vec<f32>> {
        self.run(crop)
    }
}
