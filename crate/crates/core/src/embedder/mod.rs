//! Identity vectors: pluggable face-recognition backends, per-video
//! extraction and the on-disk embedding cache.

mod cache;
#[cfg(feature = "onnx")]
mod onnx;
mod projection;
pub mod synthetic;

pub use cache::{cache_read, cache_write, EmbeddingCacheDir, CACHE_MAGIC, CACHE_VERSION};
#[cfg(feature = "onnx")]
pub use onnx::OnnxBackend;
pub use projection::ProjectionBackend;
pub use synthetic::{synthetic_identity_vector, SyntheticBackend};

use std::path::Path;

use crate::error::{Error, Result};
use crate::preprocess::FaceCrop;

pub const DEFAULT_DIM: usize = 512;

/// A d-dimensional identity embedding of one aligned face crop.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityVector {
    pub values: Vec<f32>,
    pub backend_id: String,
}

impl IdentityVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt()
    }
}

/// Per-frame identity vectors of one video plus its registered-image vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub video_id: String,
    pub vectors: Vec<IdentityVector>,
    pub aux_vector: IdentityVector,
}

impl EmbeddingSequence {
    pub fn new(video_id: impl Into<String>, vectors: Vec<IdentityVector>, aux_vector: IdentityVector) -> Result<Self> {
        let seq = Self {
            video_id: video_id.into(),
            vectors,
            aux_vector,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vectors.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "embedding sequence {} needs at least 2 frames, got {}",
                self.video_id,
                self.vectors.len()
            )));
        }
        let d = self.aux_vector.dim();
        let backend = &self.aux_vector.backend_id;
        for (i, v) in self.vectors.iter().enumerate() {
            if v.dim() != d {
                return Err(Error::Shape(format!("frame {i} has dim {} (aux has {d})", v.dim())));
            }
            if &v.backend_id != backend {
                return Err(Error::InvalidArgument(format!(
                    "frame {i} extracted by {} but aux by {backend}",
                    v.backend_id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.aux_vector.dim()
    }

    pub fn backend_id(&self) -> &str {
        &self.aux_vector.backend_id
    }

    /// Sub-sequence at the given frame indices, sharing the aux vector.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let vectors = indices
            .iter()
            .map(|&i| {
                self.vectors.get(i).cloned().ok_or_else(|| {
                    Error::InvalidArgument(format!("frame index {i} out of range for {}", self.video_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.video_id.clone(), vectors, self.aux_vector.clone())
    }
}

/// A face-recognition model mapping a crop to a raw (unnormalized) vector.
/// Implementations must be safe to call concurrently.
pub trait EmbeddingBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_raw(&self, crop: &FaceCrop) -> Result<Vec<f32>>;
}

/// Extracts an L2-normalized identity vector.
pub fn extract(crop: &FaceCrop, backend: &dyn EmbeddingBackend) -> Result<IdentityVector> {
    extract_with(crop, backend, true)
}

pub fn extract_with(crop: &FaceCrop, backend: &dyn EmbeddingBackend, normalize: bool) -> Result<IdentityVector> {
    let fail = |message: String| Error::Extraction {
        backend_id: backend.backend_id().to_string(),
        message,
    };
    let raw = backend.embed_raw(crop)?;
    if raw.len() != backend.dim() {
        return Err(fail(format!("expected dim {}, got {}", backend.dim(), raw.len())));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(fail("non-finite embedding".into()));
    }
    let values = if normalize {
        l2_normalize(&raw).ok_or_else(|| fail("zero embedding cannot be normalized".into()))?
    } else {
        raw
    };
    Ok(IdentityVector {
        values,
        backend_id: backend.backend_id().to_string(),
    })
}

/// Planar `3×112×112` input scaled to `[-1, 1]`, channels in RGB or BGR order.
pub fn crop_tensor(crop: &FaceCrop, bgr: bool) -> Vec<f32> {
    let img = crop.pixels();
    let plane = (img.width() * img.height()) as usize;
    let mut out = vec![0f32; 3 * plane];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            let dst = if bgr { 2 - c } else { c };
            out[dst * plane + i] = (f32::from(p[c]) - 127.5) / 127.5;
        }
    }
    out
}

/// Normalizes in f64 and rounds once to f32.
pub fn l2_normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

/// Extracts every frame crop plus the auxiliary crop.
pub fn extract_video(
    video_id: &str,
    crops: &[FaceCrop],
    aux: &FaceCrop,
    backend: &dyn EmbeddingBackend,
    normalize: bool,
) -> Result<EmbeddingSequence> {
    if crops.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "video {video_id}: need at least 2 crops, got {}",
            crops.len()
        )));
    }
    let vectors = crate::par::map(crops, |c| extract_with(c, backend, normalize))
        .into_iter()
        .enumerate()
        .map(|(index, r)| r.map_err(|e| Error::Frame { index, source: Box::new(e) }))
        .collect::<Result<Vec<_>>>()?;
    let aux_vector = extract_with(aux, backend, normalize)?;
    EmbeddingSequence::new(video_id, vectors, aux_vector)
}

/// Pretrained face-recognition slots loadable through the model-file adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainedSlot {
    Ms1mv2ArcFace,
    Ms1mv2AdaFace,
    WebFace12mAdaFace,
}

impl PretrainedSlot {
    pub const ALL: [PretrainedSlot; 3] = [
        PretrainedSlot::Ms1mv2ArcFace,
        PretrainedSlot::Ms1mv2AdaFace,
        PretrainedSlot::WebFace12mAdaFace,
    ];

    pub fn id(self) -> &'static str {
        match self {
            PretrainedSlot::Ms1mv2ArcFace => "ms1mv2-r100-arcface",
            PretrainedSlot::Ms1mv2AdaFace => "ms1mv2-r100-adaface",
            PretrainedSlot::WebFace12mAdaFace => "webface12m-r100-adaface",
        }
    }

    pub fn parse(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.id() == id)
    }

    /// AdaFace checkpoints are trained on BGR input, ArcFace on RGB.
    pub fn expects_bgr(self) -> bool {
        !matches!(self, PretrainedSlot::Ms1mv2ArcFace)
    }
}

impl Default for PretrainedSlot {
    fn default() -> Self {
        PretrainedSlot::WebFace12mAdaFace
    }
}

/// Builds a crop-level backend from its string id.
///
/// `projection[:<dim>]` is self-contained; the pretrained slot ids need a
/// model file and the `onnx` feature.
pub fn backend_from_id(id: &str, model_path: Option<&Path>, seed: u64) -> Result<Box<dyn EmbeddingBackend>> {
    let (name, arg) = id.split_once(':').unwrap_or((id, ""));
    if name == "projection" {
        let dim = if arg.is_empty() {
            ProjectionBackend::DEFAULT_DIM
        } else {
            arg.parse()
                .map_err(|_| Error::InvalidArgument(format!("bad projection dim {arg:?}")))?
        };
        return Ok(Box::new(ProjectionBackend::new(dim, seed)));
    }
    let Some(slot) = PretrainedSlot::parse(name) else {
        return Err(Error::InvalidArgument(format!(
            "unknown backend {id:?} (expected projection[:dim] or one of {})",
            PretrainedSlot::ALL.map(|s| s.id()).join(", ")
        )));
    };
    let Some(path) = model_path else {
        return Err(Error::InvalidArgument(format!("backend {} needs --model-path", slot.id())));
    };
    #[cfg(feature = "onnx")]
    {
        Ok(Box::new(OnnxBackend::load(slot, path)?))
    }
    #[cfg(not(feature = "onnx"))]
    {
        let _ = path;
        Err(Error::InvalidArgument(format!(
            "backend {} requires building with the `onnx` feature",
            slot.id()
        )))
    }
}
