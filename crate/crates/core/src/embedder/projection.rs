use rand::Rng;
use rand_distr::StandardNormal;

use super::EmbeddingBackend;
use crate::error::Result;
use crate::preprocess::{FaceCrop, CROP_SIZE};
use crate::seed::SeedMixer;

const POOL: u32 = 4;
const GRID: u32 = CROP_SIZE / POOL;
const FEATURES: usize = (GRID * GRID) as usize;

/// Pixel-level stand-in for a face-recognition model: luma is average-pooled
/// to a 28×28 grid, standardized per crop, and mapped through a fixed
/// Gaussian random projection. Brightness/contrast changes cancel in the
/// standardization; blur, noise and compression perturb the output, which is
/// what the robustness harness needs without model weights.
#[derive(Debug, Clone)]
pub struct ProjectionBackend {
    id: String,
    dim: usize,
    /// Row-major `dim × FEATURES`.
    weights: Vec<f32>,
}

impl ProjectionBackend {
    pub const DEFAULT_DIM: usize = 128;

    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = SeedMixer::new("projection-backend").u64(seed).u64(dim as u64).rng();
        let scale = 1.0 / (FEATURES as f64).sqrt();
        let weights = (0..dim * FEATURES)
            .map(|_| (rng.sample::<f64, _>(StandardNormal) * scale) as f32)
            .collect();
        Self {
            id: format!("projection:{dim}:{seed}"),
            dim,
            weights,
        }
    }

    fn features(crop: &FaceCrop) -> Vec<f32> {
        let img = crop.pixels();
        let mut pooled = vec![0f64; FEATURES];
        for (x, y, p) in img.enumerate_pixels() {
            let luma = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            pooled[((y / POOL) * GRID + x / POOL) as usize] += luma;
        }
        let n = FEATURES as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let var = pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-9);
        pooled.into_iter().map(|v| ((v - mean) / sd) as f32).collect()
    }
}

impl EmbeddingBackend for ProjectionBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, crop: &FaceCrop) -> Result<Vec<f32>> {
        let x = Self::features(crop);
        Ok(self
            .weights
            .chunks_exact(FEATURES)
            .map(|row| row.iter().zip(&x).map(|(w, v)| w * v).sum())
            .collect())
    }
}
