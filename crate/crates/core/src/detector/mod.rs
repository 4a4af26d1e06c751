//! Recurrent classifier over difference sequences:
//! dropout → (bi)GRU → last-step embedding `H` → dropout → FC → ReLU → FC → softmax.

mod checkpoint;
pub mod gru;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::softmax;
use crate::seed::SeedMixer;
use crate::seqfeat::DifferenceSequence;
use gru::GruParams;

pub const NUM_CLASSES: usize = 2;
/// Index of the FAKE logit.
pub const FAKE_CLASS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub input_dim: usize,
    pub hidden_size: usize,
    pub bidirectional: bool,
    pub head_hidden: usize,
    pub dropout_pre_rnn: f64,
    pub dropout_pre_head: f64,
    pub num_classes: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            input_dim: 1024,
            hidden_size: 1024,
            bidirectional: true,
            head_hidden: 512,
            dropout_pre_rnn: 0.2,
            dropout_pre_head: 0.5,
            num_classes: NUM_CLASSES,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("dropout_pre_rnn", self.dropout_pre_rnn), ("dropout_pre_head", self.dropout_pre_head)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1), got {p}")));
            }
        }
        if self.hidden_size == 0 || self.input_dim == 0 || self.head_hidden == 0 {
            return Err(Error::InvalidArgument("detector dimensions must be >= 1".into()));
        }
        if self.num_classes != NUM_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "num_classes must be {NUM_CLASSES}, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Dimension of the sequence embedding `H`.
    pub fn embedding_dim(&self) -> usize {
        self.hidden_size * if self.bidirectional { 2 } else { 1 }
    }
}

/// All trainable tensors. Gradients and optimizer moments share this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub forward: GruParams,
    pub backward: Option<GruParams>,
    /// `head_hidden × dim(H)`
    pub head_w1: Array2<f64>,
    pub head_b1: Array1<f64>,
    /// `2 × head_hidden`
    pub head_w2: Array2<f64>,
    pub head_b2: Array1<f64>,
}

impl DetectorParams {
    pub fn zeros(cfg: &DetectorConfig) -> Self {
        let gru = || GruParams::zeros(cfg.input_dim, cfg.hidden_size);
        Self {
            forward: gru(),
            backward: cfg.bidirectional.then(gru),
            head_w1: Array2::zeros((cfg.head_hidden, cfg.embedding_dim())),
            head_b1: Array1::zeros(cfg.head_hidden),
            head_w2: Array2::zeros((cfg.num_classes, cfg.head_hidden)),
            head_b2: Array1::zeros(cfg.num_classes),
        }
    }

    pub fn init(cfg: &DetectorConfig, seed: u64) -> Self {
        let mut rng = SeedMixer::new("detector-init").u64(seed).rng();
        let forward = GruParams::init(cfg.input_dim, cfg.hidden_size, &mut rng);
        let backward = cfg
            .bidirectional
            .then(|| GruParams::init(cfg.input_dim, cfg.hidden_size, &mut rng));
        let mut p = Self {
            forward,
            backward,
            ..Self::zeros(cfg)
        };
        gru::fill_uniform(&mut p.head_w1, cfg.embedding_dim(), &mut rng);
        gru::fill_uniform(&mut p.head_w2, cfg.head_hidden, &mut rng);
        p
    }

    fn gru_tensors(g: &GruParams) -> [&[f64]; 4] {
        [
            g.w_ih.as_slice().expect("standard layout"),
            g.w_hh.as_slice().expect("standard layout"),
            g.b_ih.as_slice().expect("standard layout"),
            g.b_hh.as_slice().expect("standard layout"),
        ]
    }

    fn gru_tensors_mut(g: &mut GruParams) -> [&mut [f64]; 4] {
        [
            g.w_ih.as_slice_mut().expect("standard layout"),
            g.w_hh.as_slice_mut().expect("standard layout"),
            g.b_ih.as_slice_mut().expect("standard layout"),
            g.b_hh.as_slice_mut().expect("standard layout"),
        ]
    }

    /// Tensors in canonical (serialization) order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Self::gru_tensors(&self.forward).into();
        if let Some(b) = &self.backward {
            out.extend(Self::gru_tensors(b));
        }
        out.extend([
            self.head_w1.as_slice().expect("standard layout"),
            self.head_b1.as_slice().expect("standard layout"),
            self.head_w2.as_slice().expect("standard layout"),
            self.head_b2.as_slice().expect("standard layout"),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Self::gru_tensors_mut(&mut self.forward).into();
        if let Some(b) = &mut self.backward {
            out.extend(Self::gru_tensors_mut(b));
        }
        out.extend([
            self.head_w1.as_slice_mut().expect("standard layout"),
            self.head_b1.as_slice_mut().expect("standard layout"),
            self.head_w2.as_slice_mut().expect("standard layout"),
            self.head_b2.as_slice_mut().expect("standard layout"),
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor in fixed order.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Sequence embedding `H` taken from the last time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEmbedding(pub Array1<f64>);

impl SequenceEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("contiguous")
    }
}

/// How per-window probabilities are pooled into one video score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

/// Activations of one embedding pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EmbedTrace {
    input: Array2<f64>,
    forward: gru::GruTrace,
    backward: Option<gru::GruTrace>,
    pub embedding: SequenceEmbedding,
}

/// Activations of one head pass.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    /// Dropout multipliers applied to `H` (1 when inactive).
    mask: Array1<f64>,
    head_in: Array1<f64>,
    pre_act: Array1<f64>,
    hidden: Array1<f64>,
    pub logits: Array1<f64>,
}

impl HeadTrace {
    /// Which hidden ReLU units are active; changes mark a kink.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.pre_act.iter().map(|&v| v > 0.0).collect()
    }
}

fn dropout_mask(len: usize, rate: f64, rng: &mut impl Rng) -> Array1<f64> {
    let keep = 1.0 - rate;
    Array1::from_shape_fn(len, |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    pub params: DetectorParams,
}

impl DetectorModel {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: DetectorParams::init(&config, seed),
            config,
        })
    }

    pub fn from_params(config: DetectorConfig, params: DetectorParams) -> Result<Self> {
        config.validate()?;
        let expected = DetectorParams::zeros(&config);
        let shapes_match = expected
            .tensors()
            .iter()
            .zip(params.tensors())
            .all(|(a, b)| a.len() == b.len())
            && expected.tensors().len() == params.tensors().len();
        if !shapes_match {
            return Err(Error::Shape("parameter tensors do not match detector config".into()));
        }
        Ok(Self { config, params })
    }

    fn check_input(&self, diff: &DifferenceSequence) -> Result<()> {
        if diff.step_dim() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "difference steps have dim {}, detector expects {}",
                diff.step_dim(),
                self.config.input_dim
            )));
        }
        if diff.is_empty() {
            return Err(Error::Shape("empty difference sequence".into()));
        }
        Ok(())
    }

    /// Embedding pass. `dropout_seed = None` disables dropout (inference).
    pub fn embed_traced(&self, diff: &DifferenceSequence, dropout_seed: Option<u64>, keep_trace: bool) -> Result<(SequenceEmbedding, Option<EmbedTrace>)> {
        self.check_input(diff)?;
        let input = match dropout_seed {
            Some(seed) if self.config.dropout_pre_rnn > 0.0 => {
                let mut rng = SeedMixer::new("dropout-rnn").u64(seed).rng();
                let mask = dropout_mask(diff.steps.len(), self.config.dropout_pre_rnn, &mut rng);
                let mask = mask.into_shape_with_order(diff.steps.raw_dim()).expect("same size");
                &diff.steps * &mask
            }
            _ => diff.steps.clone(),
        };
        let (h_fwd, t_fwd) = gru::run(&self.params.forward, input.view(), false, keep_trace);
        let (h, t_bwd) = match &self.params.backward {
            Some(bp) => {
                let (h_bwd, t_bwd) = gru::run(bp, input.view(), true, keep_trace);
                (concatenate(Axis(0), &[h_fwd.view(), h_bwd.view()]).expect("1-d concat"), t_bwd)
            }
            None => (h_fwd, None),
        };
        let embedding = SequenceEmbedding(h);
        let trace = keep_trace.then(|| EmbedTrace {
            input,
            forward: t_fwd.expect("trace kept"),
            backward: t_bwd,
            embedding: embedding.clone(),
        });
        Ok((embedding, trace))
    }

    /// `H`: final forward state, concatenated with the final backward state
    /// when bidirectional. Dropout is active only when `training`.
    pub fn forward_embed(&self, diff: &DifferenceSequence, training: bool, rng_seed: u64) -> Result<SequenceEmbedding> {
        Ok(self.embed_traced(diff, training.then_some(rng_seed), false)?.0)
    }

    pub fn head_traced(&self, h: &SequenceEmbedding, dropout_seed: Option<u64>) -> Result<HeadTrace> {
        let dim = self.config.embedding_dim();
        if h.dim() != dim {
            return Err(Error::Shape(format!("embedding has dim {}, head expects {dim}", h.dim())));
        }
        let mask = match dropout_seed {
            Some(seed) if self.config.dropout_pre_head > 0.0 => {
                let mut rng = SeedMixer::new("dropout-head").u64(seed).rng();
                dropout_mask(dim, self.config.dropout_pre_head, &mut rng)
            }
            _ => Array1::ones(dim),
        };
        let head_in = &h.0 * &mask;
        let pre_act = self.params.head_w1.dot(&head_in) + &self.params.head_b1;
        let hidden = pre_act.mapv(|v| v.max(0.0));
        let logits = self.params.head_w2.dot(&hidden) + &self.params.head_b2;
        Ok(HeadTrace {
            mask,
            head_in,
            pre_act,
            hidden,
            logits,
        })
    }

    /// Class logits `(real, fake)` for an embedding.
    pub fn logits(&self, h: &SequenceEmbedding, training: bool, rng_seed: u64) -> Result<Array1<f64>> {
        Ok(self.head_traced(h, training.then_some(rng_seed))?.logits)
    }

    /// Probability of FAKE under a softmax over the two logits.
    pub fn forward_prob(&self, h: &SequenceEmbedding, training: bool, rng_seed: u64) -> Result<f64> {
        let logits = self.logits(h, training, rng_seed)?;
        Ok(fake_probability(logits.as_slice().expect("contiguous")))
    }

    /// Inference-mode FAKE probability of one window.
    pub fn window_prob(&self, diff: &DifferenceSequence) -> Result<f64> {
        let h = self.forward_embed(diff, false, 0)?;
        self.forward_prob(&h, false, 0)
    }

    /// Video score: mean of per-window FAKE probabilities.
    pub fn score_video(&self, windows: &[DifferenceSequence]) -> Result<f64> {
        self.score_video_with(windows, Aggregation::Mean)
    }

    pub fn score_video_with(&self, windows: &[DifferenceSequence], agg: Aggregation) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::InvalidArgument("cannot score a video with no windows".into()));
        }
        let probs = crate::par::try_map(windows, |w| self.window_prob(w))?;
        Ok(match agg {
            Aggregation::Mean => probs.iter().sum::<f64>() / probs.len() as f64,
            Aggregation::Max => probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    /// Backpropagates `∂L/∂logits` through the head; returns `∂L/∂H`.
    pub fn head_backward(&self, trace: &HeadTrace, dlogits: ArrayView1<f64>, grads: &mut DetectorParams) -> Array1<f64> {
        let p = &self.params;
        grads.head_w2 += &outer(dlogits, trace.hidden.view());
        grads.head_b2 += &dlogits;
        let dhidden = p.head_w2.t().dot(&dlogits);
        let dpre = Array1::from_shape_fn(dhidden.len(), |k| if trace.pre_act[k] > 0.0 { dhidden[k] } else { 0.0 });
        grads.head_w1 += &outer(dpre.view(), trace.head_in.view());
        grads.head_b1 += &dpre;
        p.head_w1.t().dot(&dpre) * &trace.mask
    }

    /// Backpropagates `∂L/∂H` through the recurrent layers.
    pub fn embed_backward(&self, trace: &EmbedTrace, dh: ArrayView1<f64>, grads: &mut DetectorParams) {
        let hs = self.config.hidden_size;
        gru::backward(
            &self.params.forward,
            trace.input.view(),
            &trace.forward,
            dh.slice(ndarray::s![..hs]),
            &mut grads.forward,
        );
        if let (Some(bp), Some(bt), Some(bg)) = (&self.params.backward, &trace.backward, &mut grads.backward) {
            gru::backward(bp, trace.input.view(), bt, dh.slice(ndarray::s![hs..]), bg);
        }
    }
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    a.insert_axis(Axis(1)).dot(&b.insert_axis(Axis(0)))
}

/// `softmax(logits)[FAKE]`.
pub fn fake_probability(logits: &[f64]) -> f64 {
    softmax(logits)[FAKE_CLASS]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqfeat::EmbeddingType;

    fn tiny() -> DetectorConfig {
        DetectorConfig {
            input_dim: 8,
            hidden_size: 6,
            head_hidden: 5,
            ..Default::default()
        }
    }

    fn diff(rows: usize, cols: usize, seed: u64) -> DifferenceSequence {
        let mut rng = SeedMixer::new("diff").u64(seed).rng();
        DifferenceSequence {
            kind: EmbeddingType::Cat,
            steps: Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0)),
        }
    }

    #[test]
    fn embedding_shape_bidirectional() {
        let cfg = DetectorConfig {
            input_dim: 16,
            hidden_size: 12,
            head_hidden: 4,
            ..Default::default()
        };
        let m = DetectorModel::new(cfg, 0).unwrap();
        assert_eq!(m.forward_embed(&diff(63, 16, 0), false, 0).unwrap().dim(), 24);
        let uni = DetectorModel::new(DetectorConfig { bidirectional: false, ..cfg }, 0).unwrap();
        assert_eq!(uni.forward_embed(&diff(5, 16, 0), false, 0).unwrap().dim(), 12);
    }

    #[test]
    fn inference_is_deterministic_and_dropout_is_not() {
        let m = DetectorModel::new(tiny(), 1).unwrap();
        let x = diff(9, 8, 1);
        assert_eq!(m.forward_embed(&x, false, 1).unwrap(), m.forward_embed(&x, false, 2).unwrap());
        assert_ne!(m.forward_embed(&x, true, 1).unwrap(), m.forward_embed(&x, true, 2).unwrap());
        assert_eq!(m.forward_embed(&x, true, 3).unwrap(), m.forward_embed(&x, true, 3).unwrap());
    }

    #[test]
    fn zero_recurrent_weights_and_biases_map_zero_input_to_zero() {
        let cfg = tiny();
        let mut m = DetectorModel::new(cfg, 4).unwrap();
        for g in std::iter::once(&mut m.params.forward).chain(m.params.backward.as_mut()) {
            g.w_hh.fill(0.0);
            g.b_hh.fill(0.0);
            g.b_ih.fill(0.0);
        }
        let zero = DifferenceSequence {
            kind: EmbeddingType::Cat,
            steps: Array2::zeros((5, 8)),
        };
        assert!(m.forward_embed(&zero, false, 0).unwrap().0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_input_dim_is_error() {
        let m = DetectorModel::new(tiny(), 0).unwrap();
        assert!(m.forward_embed(&diff(4, 7, 0), false, 0).is_err());
    }

    #[test]
    fn probability_properties() {
        assert_eq!(fake_probability(&[1.7, 1.7]), 0.5);
        assert!((fake_probability(&[0.0, 20.0]) - 1.0).abs() < 1e-8);
        let p = softmax(&[0.3, -1.2]);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn video_score_is_mean_of_window_probabilities() {
        let m = DetectorModel::new(tiny(), 2).unwrap();
        let windows: Vec<DifferenceSequence> = (0..100).map(|i| diff(4, 8, i)).collect();
        let probs: Vec<f64> = windows.iter().map(|w| m.window_prob(w).unwrap()).collect();
        let mean = probs.iter().sum::<f64>() / probs.len() as f64;
        let s = m.score_video(&windows).unwrap();
        assert!((s - mean).abs() < 1e-12);
        assert_eq!(s, m.score_video(&windows).unwrap());
        assert_eq!(m.score_video(&windows[..1]).unwrap(), probs[0]);
        assert!(m.score_video(&[]).is_err());
        let max = m.score_video_with(&windows, Aggregation::Max).unwrap();
        assert_eq!(max, probs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn dropout_rate_validation() {
        let bad = DetectorConfig {
            dropout_pre_head: 1.0,
            ..tiny()
        };
        assert!(DetectorModel::new(bad, 0).is_err());
    }
}
