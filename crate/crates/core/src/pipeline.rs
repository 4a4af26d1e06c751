//! Where embedding sequences come from: memory, the on-disk cache, or the
//! full decode → (corrupt) → align → extract path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::corrupt::{self, CorruptionSpec, CorruptionTable};
use crate::embedder::{extract_video, EmbeddingBackend, EmbeddingCacheDir, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::manifest::VideoRecord;
use crate::preprocess::{
    decode_frames, load_image_locator, AlignOutcome, Aligner, FaceCrop, LandmarkAligner, SidecarLandmarks,
};

/// Suffix of the per-source landmark file read when
/// [`FramePipeline::landmark_sidecars`] is set.
pub const SIDECAR_SUFFIX: &str = ".landmarks.json";

/// `<source>.landmarks.json` for a frame source or image path.
pub fn sidecar_path(source: &str) -> PathBuf {
    PathBuf::from(format!("{}{SIDECAR_SUFFIX}", source.trim_end_matches(['/', '\\'])))
}

/// Produces the embedding sequence of a video, optionally under a corruption.
pub trait SequenceSource: Sync {
    fn load(&self, record: &VideoRecord, corruption: Option<&CorruptionSpec>) -> Result<EmbeddingSequence>;
}

fn reject_corruption(corruption: Option<&CorruptionSpec>) -> Result<()> {
    match corruption {
        Some(spec) if spec.severity > 0 => Err(Error::InvalidArgument(format!(
            "precomputed embeddings cannot be re-corrupted ({spec}); evaluate from frames instead"
        ))),
        _ => Ok(()),
    }
}

impl SequenceSource for BTreeMap<String, EmbeddingSequence> {
    fn load(&self, record: &VideoRecord, corruption: Option<&CorruptionSpec>) -> Result<EmbeddingSequence> {
        reject_corruption(corruption)?;
        self.get(&record.video_id)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("no embeddings for video {}", record.video_id)))
    }
}

impl SequenceSource for EmbeddingCacheDir {
    fn load(&self, record: &VideoRecord, corruption: Option<&CorruptionSpec>) -> Result<EmbeddingSequence> {
        reject_corruption(corruption)?;
        self.read(&record.video_id)
    }
}

/// Frames on disk, an aligner and an embedding backend.
pub struct FramePipeline<'a> {
    pub backend: &'a dyn EmbeddingBackend,
    pub aligner: &'a dyn Aligner,
    pub table: &'a CorruptionTable,
    /// Relative paths in the manifest resolve against this directory.
    pub root: Option<PathBuf>,
    pub frame_stride: usize,
    pub normalize: bool,
    /// Degrade full frames (true) or the aligned crops (false).
    pub corrupt_before_align: bool,
    /// Align with precomputed 5-point detections stored next to each frame
    /// source (see [`sidecar_path`]) instead of `aligner`.
    pub landmark_sidecars: bool,
}

impl<'a> FramePipeline<'a> {
    pub fn new(backend: &'a dyn EmbeddingBackend, aligner: &'a dyn Aligner) -> Self {
        Self {
            backend,
            aligner,
            table: CorruptionTable::builtin(),
            root: None,
            frame_stride: 1,
            normalize: true,
            corrupt_before_align: true,
            landmark_sidecars: false,
        }
    }

    fn aligner_for(&self, source: &str) -> Result<Box<dyn Aligner + 'a>> {
        if self.landmark_sidecars {
            Ok(Box::new(LandmarkAligner::new(SidecarLandmarks::load(sidecar_path(source))?)))
        } else {
            Ok(Box::new(Borrowed(self.aligner)))
        }
    }

    fn resolve(&self, path: &str) -> String {
        match &self.root {
            Some(root) if Path::new(path).is_relative() => root.join(path).to_string_lossy().into_owned(),
            _ => path.to_string(),
        }
    }

    /// Aligned crops of every frame that contains a face.
    pub fn crops(&self, record: &VideoRecord, corruption: Option<&CorruptionSpec>) -> Result<Vec<FaceCrop>> {
        let source = self.resolve(&record.frames_path);
        let aligner = self.aligner_for(&source)?;
        let mut frames = decode_frames(&source, self.frame_stride)?;
        if let (Some(spec), true) = (corruption, self.corrupt_before_align) {
            frames = corrupt::corrupt_video(&frames, spec, self.table)?;
        }
        let aligned = crate::par::try_map(&frames, |f| {
            aligner
                .align(&f.image, f.index)
                .map_err(|e| Error::Frame {
                    index: f.index,
                    source: Box::new(e),
                })
        })?;
        let mut crops: Vec<FaceCrop> = aligned.into_iter().filter_map(AlignOutcome::into_crop).collect();
        if crops.len() < frames.len() {
            log::debug!(
                "{}: {} of {} frames had no face",
                record.video_id,
                frames.len() - crops.len(),
                frames.len()
            );
        }
        if let (Some(spec), false) = (corruption, self.corrupt_before_align) {
            crops = crate::par::try_map(&crops, |c| {
                let img = corrupt::apply_with(c.pixels(), &spec.for_frame(c.source_frame_index()), self.table)?;
                FaceCrop::new(img, c.source_frame_index())
            })?;
        }
        Ok(crops)
    }

    /// The registered image, aligned. It is never corrupted.
    pub fn aux_crop(&self, record: &VideoRecord) -> Result<FaceCrop> {
        let locator = record.aux_image_path.as_deref().ok_or_else(|| {
            Error::InvalidArgument(format!("video {} has no auxiliary image", record.video_id))
        })?;
        let resolved = self.resolve(locator);
        let img = load_image_locator(&resolved)?;
        let (source, index) = resolved
            .rsplit_once('#')
            .and_then(|(src, idx)| Some((src, idx.parse::<usize>().ok()?)))
            .unwrap_or((resolved.as_str(), 0));
        self.aligner_for(source)?.align(&img, index)?.into_crop().ok_or_else(|| {
            Error::input(locator, "no face found in auxiliary image")
        })
    }
}

struct Borrowed<'a>(&'a dyn Aligner);

impl Aligner for Borrowed<'_> {
    fn align(&self, frame: &image::RgbImage, frame_index: usize) -> Result<AlignOutcome> {
        self.0.align(frame, frame_index)
    }
}

impl SequenceSource for FramePipeline<'_> {
    fn load(&self, record: &VideoRecord, corruption: Option<&CorruptionSpec>) -> Result<EmbeddingSequence> {
        let crops = self.crops(record, corruption)?;
        let aux = self.aux_crop(record)?;
        extract_video(&record.video_id, &crops, &aux, self.backend, self.normalize)
    }
}

/// Loads every record's sequence in parallel, keyed by video id.
pub fn load_all<'r>(
    source: &dyn SequenceSource,
    records: impl IntoIterator<Item = &'r VideoRecord>,
    corruption: Option<&CorruptionSpec>,
) -> Result<BTreeMap<String, EmbeddingSequence>> {
    let records: Vec<&VideoRecord> = records.into_iter().collect();
    let seqs = crate::par::try_map(&records, |r| source.load(r, corruption))?;
    Ok(records.iter().map(|r| r.video_id.clone()).zip(seqs).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::ProjectionBackend;
    use crate::manifest::Label;
    use crate::preprocess::{CenterCropAligner, FaceDetection, ARCFACE_TEMPLATE_112};
    use image::{Rgb, RgbImage};

    /// Landmarks of a face whose template position is shifted by (dx, dy).
    fn shifted_face(dx: f32, dy: f32) -> FaceDetection {
        FaceDetection {
            bbox: [dx, dy, dx + 112.0, dy + 112.0],
            landmarks: ARCFACE_TEMPLATE_112.map(|[x, y]| [x as f32 + dx, y as f32 + dy]),
            score: 1.0,
        }
    }

    #[test]
    fn sidecar_landmarks_drive_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let frames = dir.path().join("v");
        std::fs::create_dir(&frames).unwrap();
        for i in 0..3u8 {
            RgbImage::from_fn(200, 200, |x, y| Rgb([x as u8, y as u8, i]))
                .save(frames.join(format!("{i:03}.png")))
                .unwrap();
        }
        let source = frames.to_string_lossy().into_owned();
        let sidecar = SidecarLandmarks {
            frames: [(0, vec![shifted_face(50.0, 40.0)]), (2, vec![shifted_face(20.0, 30.0)])].into(),
        };
        std::fs::write(sidecar_path(&source), serde_json::to_string(&sidecar).unwrap()).unwrap();
        let record = VideoRecord {
            video_id: "v".into(),
            identity_id: "a".into(),
            label: Label::Real,
            fake_type: None,
            frames_path: "v".into(),
            aux_image_path: Some("v#2".into()),
            aux_source_video_id: None,
            split: None,
        };
        let backend = ProjectionBackend::new(8, 0);
        let center = CenterCropAligner::default();
        let mut pipeline = FramePipeline::new(&backend, &center);
        pipeline.root = Some(dir.path().to_path_buf());
        pipeline.landmark_sidecars = true;

        let crops = pipeline.crops(&record, None).unwrap();
        let idx: Vec<usize> = crops.iter().map(FaceCrop::source_frame_index).collect();
        assert_eq!(idx, [0, 2]);
        let near = |a: &Rgb<u8>, b: [u8; 3]| a.0.iter().zip(b).all(|(&p, q)| p.abs_diff(q) <= 1);
        assert!(near(crops[0].pixels().get_pixel(10, 20), [60, 60, 0]));
        assert!(near(crops[1].pixels().get_pixel(10, 20), [30, 50, 2]));

        let aux = pipeline.aux_crop(&record).unwrap();
        assert!(near(aux.pixels().get_pixel(10, 20), [30, 50, 2]));

        std::fs::remove_file(sidecar_path(&source)).unwrap();
        assert!(pipeline.crops(&record, None).is_err());
        pipeline.landmark_sidecars = false;
        assert_eq!(pipeline.crops(&record, None).unwrap().len(), 3);
    }
}
