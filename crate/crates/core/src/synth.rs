//! Synthetic oracle datasets with known ground truth.
//!
//! Identity vectors live near a per-identity unit base direction.
//!
//! * REAL: base + small per-frame jitter `sigma_real`.
//! * swap-like FAKE (`FS`): frames sit near a *different* identity's base,
//!   occasionally flipping back to the claimed identity — visible to the
//!   auxiliary differences.
//! * reenactment-like FAKE (`FOMM`): the claimed identity with large jitter
//!   `sigma_fake` — visible to the temporal differences.
//!
//! [`synth_embeddings`] produces vectors directly; [`synth_pixels`] renders
//! frames to disk for the full decode/align/embed path.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedder::synthetic::{identity_base, jitter_direction, SYNTHETIC_BACKEND_ID};
use crate::embedder::{EmbeddingSequence, IdentityVector};
use crate::error::{Error, Result};
use crate::manifest::{make_identity_splits, pair_aux_images, FakeType, Label, Manifest, VideoRecord};
use crate::seed::SeedMixer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub identities: usize,
    pub real_per_identity: usize,
    pub swap_per_identity: usize,
    pub reenact_per_identity: usize,
    pub frames: usize,
    pub dim: usize,
    pub sigma_real: f64,
    pub sigma_fake: f64,
    /// Per-frame probability that a swap-like fake shows the claimed identity.
    pub flip_prob: f64,
    pub split_fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            identities: 10,
            real_per_identity: 2,
            swap_per_identity: 1,
            reenact_per_identity: 1,
            frames: 96,
            dim: 32,
            sigma_real: 0.05,
            sigma_fake: 0.3,
            flip_prob: 0.1,
            split_fractions: [0.6, 0.2, 0.2],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.identities < 3 {
            return bad(format!("need at least 3 identities, got {}", self.identities));
        }
        if self.real_per_identity < 2 {
            return bad("need at least 2 real videos per identity (one supplies the registered image)".into());
        }
        if self.frames < 2 || self.dim < 2 {
            return bad("frames and dim must be >= 2".into());
        }
        if !(self.sigma_real >= 0.0 && self.sigma_fake >= 0.0) {
            return bad("sigmas must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob must be in [0, 1], got {}", self.flip_prob));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VideoKind {
    Real,
    /// Index of the identity whose face is shown.
    Swap(usize),
    Reenact,
}

#[derive(Debug, Clone)]
struct Plan {
    record: VideoRecord,
    identity: usize,
    kind: VideoKind,
}

pub fn identity_name(i: usize) -> String {
    format!("id{i:02}")
}

fn plan_videos(cfg: &SynthConfig, frames_root: &str) -> Result<Vec<Plan>> {
    cfg.validate()?;
    let mut rng = SeedMixer::new("synth-plan").u64(cfg.seed).rng();
    let mut plans = Vec::new();
    for i in 0..cfg.identities {
        let identity = identity_name(i);
        let mut push = |name: String, kind: VideoKind| {
            let video_id = format!("{identity}/{name}");
            let (label, fake_type) = match kind {
                VideoKind::Real => (Label::Real, None),
                VideoKind::Swap(_) => (Label::Fake, Some(FakeType::Fs)),
                VideoKind::Reenact => (Label::Fake, Some(FakeType::Fomm)),
            };
            plans.push(Plan {
                record: VideoRecord {
                    frames_path: format!("{frames_root}/{video_id}"),
                    video_id,
                    identity_id: identity.clone(),
                    label,
                    fake_type,
                    aux_image_path: None,
                    aux_source_video_id: None,
                    split: None,
                },
                identity: i,
                kind,
            });
        };
        for k in 0..cfg.real_per_identity {
            push(format!("real{k}"), VideoKind::Real);
        }
        for k in 0..cfg.swap_per_identity {
            let other = (i + rng.random_range(1..cfg.identities)) % cfg.identities;
            push(format!("swap{k}"), VideoKind::Swap(other));
        }
        for k in 0..cfg.reenact_per_identity {
            push(format!("reenact{k}"), VideoKind::Reenact);
        }
    }
    Ok(plans)
}

/// Pairs auxiliary images and splits identities; returns the manifest with
/// plans in manifest order.
fn finish_manifest(cfg: &SynthConfig, plans: Vec<Plan>) -> Result<(Manifest, Vec<Plan>)> {
    let records = pair_aux_images(plans.iter().map(|p| p.record.clone()).collect(), cfg.seed)?;
    let manifest = make_identity_splits(records, cfg.split_fractions, cfg.seed)?;
    let plans = plans
        .into_iter()
        .zip(&manifest.records)
        .map(|(p, r)| Plan { record: r.clone(), ..p })
        .collect();
    Ok((manifest, plans))
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub manifest: Manifest,
    pub sequences: BTreeMap<String, EmbeddingSequence>,
}

fn frame_vector(cfg: &SynthConfig, plan: &Plan, t: usize, bases: &[Vec<f64>]) -> Vec<f32> {
    let tag = plan.record.video_id.as_str();
    let base = &bases[plan.identity];
    match plan.kind {
        VideoKind::Real => jitter_direction(base, tag, t as u64, cfg.sigma_real, cfg.seed),
        VideoKind::Reenact => jitter_direction(base, tag, t as u64, cfg.sigma_fake, cfg.seed),
        VideoKind::Swap(other) => {
            let mut rng = SeedMixer::new("synth-flip").u64(cfg.seed).str(tag).u64(t as u64).rng();
            let shown = if rng.random_bool(cfg.flip_prob) { base } else { &bases[other] };
            jitter_direction(shown, tag, t as u64, cfg.sigma_real, cfg.seed)
        }
    }
}

/// Identity-vector dataset: manifest plus one sequence per video. The
/// registered-image vector is frame 0 of the paired REAL video.
pub fn synth_embeddings(cfg: &SynthConfig) -> Result<SynthDataset> {
    let (manifest, plans) = finish_manifest(cfg, plan_videos(cfg, "synthetic")?)?;
    let bases: Vec<Vec<f64>> = (0..cfg.identities)
        .map(|i| identity_base(cfg.dim, &identity_name(i), cfg.seed))
        .collect();
    let by_id: BTreeMap<&str, &Plan> = plans.iter().map(|p| (p.record.video_id.as_str(), p)).collect();
    let vector = |values| IdentityVector {
        values,
        backend_id: SYNTHETIC_BACKEND_ID.to_string(),
    };
    let sequences = crate::par::try_map(&plans, |p| {
        let vectors = (0..cfg.frames).map(|t| vector(frame_vector(cfg, p, t, &bases))).collect();
        let src = p.record.aux_source_video_id.as_deref().expect("paired");
        let aux = vector(frame_vector(cfg, by_id[src], 0, &bases));
        EmbeddingSequence::new(p.record.video_id.clone(), vectors, aux)
    })?;
    Ok(SynthDataset {
        manifest,
        sequences: sequences.into_iter().map(|s| (s.video_id.clone(), s)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PixelSynthConfig {
    pub identities: usize,
    pub real_per_identity: usize,
    pub swap_per_identity: usize,
    pub reenact_per_identity: usize,
    pub frames: usize,
    /// Square frame side in pixels.
    pub size: u32,
    /// Max per-frame translation (pixels) of real videos.
    pub jitter_real: f64,
    /// Max per-frame translation (pixels) of reenactment-like fakes.
    pub jitter_fake: f64,
    pub flip_prob: f64,
    pub split_fractions: [f64; 3],
    pub seed: u64,
}

impl Default for PixelSynthConfig {
    fn default() -> Self {
        Self {
            identities: 6,
            real_per_identity: 2,
            swap_per_identity: 1,
            reenact_per_identity: 1,
            frames: 12,
            size: 64,
            jitter_real: 0.5,
            jitter_fake: 6.0,
            flip_prob: 0.1,
            split_fractions: [0.5, 0.17, 0.33],
            seed: 0,
        }
    }
}

impl PixelSynthConfig {
    fn as_embedding_config(&self) -> SynthConfig {
        SynthConfig {
            identities: self.identities,
            real_per_identity: self.real_per_identity,
            swap_per_identity: self.swap_per_identity,
            reenact_per_identity: self.reenact_per_identity,
            frames: self.frames,
            dim: 2,
            sigma_real: 0.0,
            sigma_fake: 0.0,
            flip_prob: self.flip_prob,
            split_fractions: self.split_fractions,
            seed: self.seed,
        }
    }
}

/// Smooth random pattern of one identity: a sum of oriented sinusoids.
fn identity_pattern(identity: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = SeedMixer::new("synth-pattern").u64(seed).u64(identity as u64).rng();
    (0..6)
        .map(|_| {
            [
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(15.0..35.0),
            ]
        })
        .collect()
}

fn render(pattern: &[[f64; 4]], size: u32, dx: f64, dy: f64, noise: &mut impl Rng) -> RgbImage {
    RgbImage::from_fn(size, size, |x, y| {
        let (fx, fy) = (f64::from(x) + dx, f64::from(y) + dy);
        let v: f64 = 128.0 + pattern.iter().map(|[kx, ky, ph, a]| a * (kx * fx + ky * fy + ph).sin()).sum::<f64>();
        let n: f64 = noise.sample::<f64, _>(StandardNormal) * 2.0;
        let l = (v + n).round().clamp(20.0, 235.0) as u8;
        Rgb([l, l.saturating_sub(10), l.saturating_add(10)])
    })
}

/// Renders PNG frame directories under `out_dir` and returns the manifest;
/// frame paths in it are relative to `out_dir`.
pub fn synth_pixels(cfg: &PixelSynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    if cfg.size < 16 {
        return Err(Error::InvalidArgument("frame size must be >= 16".into()));
    }
    let ecfg = cfg.as_embedding_config();
    let (manifest, plans) = finish_manifest(&ecfg, plan_videos(&ecfg, "frames")?)?;
    let patterns: Vec<_> = (0..cfg.identities).map(|i| identity_pattern(i, cfg.seed)).collect();
    crate::par::try_map(&plans, |p| -> Result<()> {
        let dir = out_dir.join(&p.record.frames_path);
        std::fs::create_dir_all(&dir)?;
        let mut rng = SeedMixer::new("synth-frames").u64(cfg.seed).str(&p.record.video_id).rng();
        for t in 0..cfg.frames {
            let (pattern, jitter) = match p.kind {
                VideoKind::Real => (&patterns[p.identity], cfg.jitter_real),
                VideoKind::Reenact => (&patterns[p.identity], cfg.jitter_fake),
                VideoKind::Swap(other) => {
                    let back = rng.random_bool(cfg.flip_prob);
                    (&patterns[if back { p.identity } else { other }], cfg.jitter_real)
                }
            };
            let dx = rng.random_range(-1.0..=1.0) * jitter;
            let dy = rng.random_range(-1.0..=1.0) * jitter;
            render(pattern, cfg.size, dx, dy, &mut rng).save(dir.join(format!("frame_{t:04}.png")))?;
        }
        Ok(())
    })?;
    manifest.save(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
