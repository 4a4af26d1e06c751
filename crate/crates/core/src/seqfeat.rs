//! Difference sequences over identity vectors and frame-window sampling.
//!
//! For a window of frame vectors `f_1..f_ℓ` and registered-image vector
//! `f_aux`:
//!
//! * temporal (TMP): `f_{t+1} - f_t` for `t = 1..ℓ-1`
//! * auxiliary (AUX): `f_t - f_aux` for `t = 1..ℓ-1`
//! * concatenated (CAT): `[tmp_t ; aux_t]` per timestep, dimension `2d`
//!
//! All three kinds have exactly `ℓ - 1` steps.

use std::fmt;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedder::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::seed::SeedMixer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingType {
    Tmp,
    Aux,
    #[default]
    Cat,
}

impl EmbeddingType {
    /// RNN input width for identity vectors of dimension `d`.
    pub fn input_dim(self, d: usize) -> usize {
        match self {
            EmbeddingType::Cat => 2 * d,
            _ => d,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tmp" => Some(Self::Tmp),
            "aux" => Some(Self::Aux),
            "cat" => Some(Self::Cat),
            _ => None,
        }
    }
}

impl fmt::Display for EmbeddingType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingType::Tmp => "tmp",
            EmbeddingType::Aux => "aux",
            EmbeddingType::Cat => "cat",
        })
    }
}

/// Ordered per-timestep difference vectors, stored as a `steps × step_dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceSequence {
    pub kind: EmbeddingType,
    pub steps: Array2<f64>,
}

impl DifferenceSequence {
    pub fn len(&self) -> usize {
        self.steps.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.nrows() == 0
    }

    pub fn step_dim(&self) -> usize {
        self.steps.ncols()
    }
}

fn frame_matrix(seq: &EmbeddingSequence, rows: std::ops::Range<usize>) -> Array2<f64> {
    let d = seq.dim();
    let n = rows.len();
    let mut m = Array2::zeros((n, d));
    for (r, t) in rows.enumerate() {
        for (j, &v) in seq.vectors[t].values.iter().enumerate() {
            m[[r, j]] = f64::from(v);
        }
    }
    m
}

fn check_len(seq: &EmbeddingSequence) -> Result<()> {
    if seq.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "difference sequences need at least 2 frames, got {}",
            seq.len()
        )));
    }
    Ok(())
}

/// Temporal differences `f(x_{t+1}) - f(x_t)`.
pub fn tdc_sequence(seq: &EmbeddingSequence) -> Result<DifferenceSequence> {
    check_len(seq)?;
    let l = seq.len();
    let steps = frame_matrix(seq, 1..l) - frame_matrix(seq, 0..l - 1);
    Ok(DifferenceSequence {
        kind: EmbeddingType::Tmp,
        steps,
    })
}

/// Differences to the registered image, `f(x_t) - f(x_aux)` for `t < ℓ`.
pub fn adc_sequence(seq: &EmbeddingSequence) -> Result<DifferenceSequence> {
    check_len(seq)?;
    if seq.aux_vector.dim() != seq.dim() || seq.aux_vector.values.is_empty() {
        return Err(Error::InvalidArgument("missing auxiliary vector".into()));
    }
    let aux = ndarray::Array1::from_iter(seq.aux_vector.values.iter().map(|&v| f64::from(v)));
    let steps = frame_matrix(seq, 0..seq.len() - 1) - &aux;
    Ok(DifferenceSequence {
        kind: EmbeddingType::Aux,
        steps,
    })
}

/// Per-timestep concatenation `[tmp_t ; aux_t]`.
pub fn cat_sequence(tmp: &DifferenceSequence, aux: &DifferenceSequence) -> Result<DifferenceSequence> {
    if tmp.kind != EmbeddingType::Tmp || aux.kind != EmbeddingType::Aux {
        return Err(Error::InvalidArgument(format!(
            "cat_sequence expects (tmp, aux), got ({}, {})",
            tmp.kind, aux.kind
        )));
    }
    if tmp.len() != aux.len() || tmp.step_dim() != aux.step_dim() {
        return Err(Error::Shape(format!(
            "tmp is {}x{}, aux is {}x{}",
            tmp.len(),
            tmp.step_dim(),
            aux.len(),
            aux.step_dim()
        )));
    }
    let steps = concatenate(Axis(1), &[tmp.steps.view(), aux.steps.view()])
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(DifferenceSequence {
        kind: EmbeddingType::Cat,
        steps,
    })
}

/// Builds the difference sequence of the requested kind.
pub fn difference_sequence(seq: &EmbeddingSequence, kind: EmbeddingType) -> Result<DifferenceSequence> {
    match kind {
        EmbeddingType::Tmp => tdc_sequence(seq),
        EmbeddingType::Aux => adc_sequence(seq),
        EmbeddingType::Cat => cat_sequence(&tdc_sequence(seq)?, &adc_sequence(seq)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    SlidingWindow,
    Random,
}

impl SamplingMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sliding" | "sliding_window" => Some(Self::SlidingWindow),
            "random" => Some(Self::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub sequence_length: usize,
    pub sequences_per_video_per_epoch: usize,
    pub mode: SamplingMode,
    /// Step between evaluation windows; 0 means `sequence_length`.
    pub eval_stride: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            sequence_length: 64,
            sequences_per_video_per_epoch: 20,
            mode: SamplingMode::SlidingWindow,
            eval_stride: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_length < 2 {
            return Err(Error::InvalidArgument(format!(
                "sequence_length must be >= 2, got {}",
                self.sequence_length
            )));
        }
        if self.sequences_per_video_per_epoch == 0 {
            return Err(Error::InvalidArgument("sequences_per_video_per_epoch must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_eval_stride(&self) -> usize {
        if self.eval_stride == 0 {
            self.sequence_length
        } else {
            self.eval_stride
        }
    }
}

/// Frame-index windows for one video.
///
/// TRAIN draws `sequences_per_video_per_epoch` windows: contiguous runs at
/// uniform start offsets (sliding) or `ℓ` distinct ascending indices
/// (random). EVAL returns contiguous windows every `eval_stride` frames plus
/// a final right-aligned window when frames remain uncovered.
pub fn sample_windows(num_frames: usize, cfg: &SamplerConfig, seed: u64, phase: Phase) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let l = cfg.sequence_length;
    if num_frames < l {
        return Err(Error::InvalidArgument(format!(
            "video has {num_frames} frames, fewer than sequence length {l}"
        )));
    }
    match phase {
        Phase::Eval => {
            let stride = cfg.effective_eval_stride();
            let mut starts: Vec<usize> = (0..=num_frames - l).step_by(stride).collect();
            if starts.last().is_some_and(|&s| s + l < num_frames) {
                starts.push(num_frames - l);
            }
            Ok(starts.into_iter().map(|s| (s..s + l).collect()).collect())
        }
        Phase::Train => {
            let mut rng = SeedMixer::new("windows").u64(seed).u64(num_frames as u64).rng();
            let windows = (0..cfg.sequences_per_video_per_epoch)
                .map(|_| match cfg.mode {
                    SamplingMode::SlidingWindow => {
                        let s = rng.random_range(0..=num_frames - l);
                        (s..s + l).collect()
                    }
                    SamplingMode::Random => {
                        let mut idx = index::sample(&mut rng, num_frames, l).into_vec();
                        idx.sort_unstable();
                        idx
                    }
                })
                .collect();
            Ok(windows)
        }
    }
}
