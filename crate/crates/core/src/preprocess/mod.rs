//! Face alignment: raw frames in, canonical 112×112 RGB face crops out.

mod decode;
mod similarity;

pub use decode::{decode_frames, decode_image, load_image_locator, Frame};
pub use similarity::{SimilarityTransform, ARCFACE_TEMPLATE_112};

use std::collections::BTreeMap;
use std::path::Path;

use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CROP_SIZE: u32 = 112;

/// An aligned face crop, always 112×112×3.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceCrop {
    pixels: RgbImage,
    source_frame_index: usize,
}

impl FaceCrop {
    pub fn new(pixels: RgbImage, source_frame_index: usize) -> Result<Self> {
        if pixels.dimensions() != (CROP_SIZE, CROP_SIZE) {
            return Err(Error::Shape(format!(
                "face crop must be {CROP_SIZE}x{CROP_SIZE}, got {:?}",
                pixels.dimensions()
            )));
        }
        Ok(Self {
            pixels,
            source_frame_index,
        })
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn source_frame_index(&self) -> usize {
        self.source_frame_index
    }

    pub fn into_pixels(self) -> RgbImage {
        self.pixels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlignOutcome {
    Face(FaceCrop),
    NoFace,
}

impl AlignOutcome {
    pub fn into_crop(self) -> Option<FaceCrop> {
        match self {
            AlignOutcome::Face(c) => Some(c),
            AlignOutcome::NoFace => None,
        }
    }
}

/// Alignment backend. Implementations must be callable from several threads.
pub trait Aligner: Send + Sync {
    fn align(&self, frame: &RgbImage, frame_index: usize) -> Result<AlignOutcome>;
}

/// Aligns one decoded frame.
pub fn align_and_crop(
    frame: &RgbImage,
    frame_index: usize,
    aligner: &dyn Aligner,
) -> Result<AlignOutcome> {
    aligner.align(frame, frame_index)
}

/// Decodes an encoded image and aligns it. Undecodable bytes are an input
/// error, distinct from [`AlignOutcome::NoFace`].
pub fn align_encoded(bytes: &[u8], frame_index: usize, aligner: &dyn Aligner) -> Result<AlignOutcome> {
    let frame = decode_image(bytes)?;
    aligner.align(&frame, frame_index)
}

/// Pass-through backend: takes the centered square of the frame and
/// resizes it to 112×112. Frames whose brightest channel value stays below
/// `min_content` are reported as [`AlignOutcome::NoFace`].
#[derive(Debug, Clone, Copy)]
pub struct CenterCropAligner {
    pub min_content: u8,
}

impl Default for CenterCropAligner {
    fn default() -> Self {
        Self { min_content: 16 }
    }
}

impl Aligner for CenterCropAligner {
    fn align(&self, frame: &RgbImage, frame_index: usize) -> Result<AlignOutcome> {
        let (w, h) = frame.dimensions();
        if w == 0 || h == 0 {
            return Ok(AlignOutcome::NoFace);
        }
        let peak = frame.as_raw().iter().copied().max().unwrap_or(0);
        if peak < self.min_content {
            return Ok(AlignOutcome::NoFace);
        }
        let side = w.min(h);
        let square = imageops::crop_imm(frame, (w - side) / 2, (h - side) / 2, side, side).to_image();
        let pixels = if side == CROP_SIZE {
            square
        } else {
            imageops::resize(&square, CROP_SIZE, CROP_SIZE, imageops::FilterType::Triangle)
        };
        Ok(AlignOutcome::Face(FaceCrop::new(pixels, frame_index)?))
    }
}

/// One detected face: bounding box `[x0, y0, x1, y1]` and five landmarks
/// (left eye, right eye, nose, left mouth corner, right mouth corner).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceDetection {
    pub bbox: [f32; 4],
    pub landmarks: [[f32; 2]; 5],
    #[serde(default)]
    pub score: f32,
}

impl FaceDetection {
    pub fn area(&self) -> f32 {
        (self.bbox[2] - self.bbox[0]).max(0.0) * (self.bbox[3] - self.bbox[1]).max(0.0)
    }
}

/// Source of 5-point face detections (an MTCNN-compatible detector).
pub trait LandmarkDetector: Send + Sync {
    fn detect(&self, frame: &RgbImage, frame_index: usize) -> Result<Vec<FaceDetection>>;
}

/// Detections precomputed by an external detector, stored as JSON:
/// `{"<frame_index>": [{"bbox": [...], "landmarks": [[x,y] x5], "score": s}]}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SidecarLandmarks {
    pub frames: BTreeMap<usize, Vec<FaceDetection>>,
}

impl SidecarLandmarks {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::input(path, e.to_string()))
    }
}

impl LandmarkDetector for SidecarLandmarks {
    fn detect(&self, _frame: &RgbImage, frame_index: usize) -> Result<Vec<FaceDetection>> {
        Ok(self.frames.get(&frame_index).cloned().unwrap_or_default())
    }
}

/// Landmark-based backend: keeps the largest detected face and warps it
/// onto the standard 112×112 five-point template with a similarity transform.
pub struct LandmarkAligner<D> {
    pub detector: D,
}

impl<D: LandmarkDetector> LandmarkAligner<D> {
    pub fn new(detector: D) -> Self {
        Self { detector }
    }
}

impl<D: LandmarkDetector> Aligner for LandmarkAligner<D> {
    fn align(&self, frame: &RgbImage, frame_index: usize) -> Result<AlignOutcome> {
        let detections = self.detector.detect(frame, frame_index)?;
        let Some(face) = detections
            .iter()
            .max_by(|a, b| a.area().total_cmp(&b.area()))
        else {
            return Ok(AlignOutcome::NoFace);
        };
        let src = face.landmarks.map(|[x, y]| [f64::from(x), f64::from(y)]);
        let Some(tf) = SimilarityTransform::estimate(&src, &ARCFACE_TEMPLATE_112) else {
            return Ok(AlignOutcome::NoFace);
        };
        let pixels = tf.warp(frame, CROP_SIZE, CROP_SIZE);
        Ok(AlignOutcome::Face(FaceCrop::new(pixels, frame_index)?))
    }
}
