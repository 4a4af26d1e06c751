use rand::Rng;
use rand_distr::StandardNormal;

use super::EmbeddingBackend;
use crate::error::Result;
use crate::preprocess::FaceCrop;
use crate::seed::SeedMixer;

pub const SYNTHETIC_BACKEND_ID: &str = "synthetic";

/// Unit base direction of an identity, shared by every video of it.
pub fn identity_base(dim: usize, identity: &str, world_seed: u64) -> Vec<f64> {
    let mut rng = SeedMixer::new("synthetic-base")
        .u64(world_seed)
        .str(identity)
        .u64(dim as u64)
        .rng();
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Deterministic identity vector: `normalize(base + sigma * g / sqrt(d))`
/// with `g ~ N(0, I)` seeded by (identity, frame index, sigma, rng seed).
/// The jitter has expected norm `sigma`, so for small sigma two draws of the
/// same identity have cosine similarity `1 - sigma^2` on average.
pub fn synthetic_identity_vector(
    dim: usize,
    identity: &str,
    frame_index: u64,
    sigma: f64,
    world_seed: u64,
    rng_seed: u64,
) -> Vec<f32> {
    let base = identity_base(dim, identity, world_seed);
    jitter_direction(&base, identity, frame_index, sigma, rng_seed)
}

pub(crate) fn jitter_direction(base: &[f64], tag: &str, frame_index: u64, sigma: f64, rng_seed: u64) -> Vec<f32> {
    let dim = base.len();
    let scale = sigma / (dim as f64).sqrt();
    let mut rng = SeedMixer::new("synthetic-jitter")
        .u64(rng_seed)
        .str(tag)
        .u64(frame_index)
        .f64(sigma)
        .rng();
    let v: Vec<f64> = base
        .iter()
        .map(|b| b + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / n) as f32).collect()
}

/// Weight-free backend for hermetic tests: every crop of the bound identity
/// maps to that identity's base direction plus frame-indexed jitter.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    dim: usize,
    sigma: f64,
    world_seed: u64,
    rng_seed: u64,
    identity: String,
}

impl SyntheticBackend {
    pub fn new(dim: usize, sigma: f64, world_seed: u64, rng_seed: u64) -> Self {
        Self {
            dim,
            sigma,
            world_seed,
            rng_seed,
            identity: String::new(),
        }
    }

    pub fn with_identity(mut self, identity: impl Into<String>) -> Self {
        self.identity = identity.into();
        self
    }
}

impl EmbeddingBackend for SyntheticBackend {
    fn backend_id(&self) -> &str {
        SYNTHETIC_BACKEND_ID
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, crop: &FaceCrop) -> Result<Vec<f32>> {
        Ok(synthetic_identity_vector(
            self.dim,
            &self.identity,
            crop.source_frame_index() as u64,
            self.sigma,
            self.world_seed,
            self.rng_seed,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
    }

    #[test]
    fn jittered_vectors_stay_close_to_each_other() {
        // 1 - cos concentrates around sigma^2; k = 2 leaves a wide margin at d = 64.
        let (dim, k) = (64, 2.0);
        for sigma in [0.01, 0.05, 0.1] {
            let mut worst = f64::INFINITY;
            for i in 0..1000u64 {
                let a = synthetic_identity_vector(dim, "A", 2 * i, sigma, 0, 3);
                let b = synthetic_identity_vector(dim, "A", 2 * i + 1, sigma, 0, 3);
                worst = worst.min(cosine(&a, &b));
            }
            assert!(worst >= 1.0 - k * sigma * sigma, "sigma {sigma}: worst cos {worst}");
        }
    }

    #[test]
    fn identities_are_nearly_orthogonal() {
        let a = synthetic_identity_vector(256, "A", 0, 0.0, 0, 0);
        let b = synthetic_identity_vector(256, "B", 0, 0.0, 0, 0);
        assert!(cosine(&a, &b).abs() < 0.3);
    }
}
