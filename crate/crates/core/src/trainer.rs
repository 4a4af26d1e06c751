//! Triplet assembly and the optimization loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::detector::{
    save_checkpoint, Aggregation, Checkpoint, CheckpointMeta, DetectorConfig, DetectorModel, DetectorParams,
};
use crate::embedder::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalReport, Scorer, VideoScore};
use crate::losses::{self, LossConfig, LOG_CLAMP};
use crate::manifest::{Label, Manifest, Split, VideoRecord};
use crate::optim::{Adam, Optimizer};
use crate::pipeline::{self, SequenceSource};
use crate::seed::SeedMixer;
use crate::seqfeat::{difference_sequence, sample_windows, DifferenceSequence, EmbeddingType, Phase, SamplerConfig};

/// Triplets per gradient work unit. Fixed, so the floating-point reduction
/// order — and therefore the result — does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Triplets per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub embedding_type: EmbeddingType,
    pub sampler: SamplerConfig,
    pub loss: LossConfig,
    /// Draw the positive from another real video of the anchor's identity
    /// when one exists; otherwise from any other real video.
    pub ap_same_identity: bool,
    pub aggregation: Aggregation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.0005,
            optimizer: Optimizer::Adam,
            batch_size: 16,
            seed: 0,
            embedding_type: EmbeddingType::Cat,
            sampler: SamplerConfig::default(),
            loss: LossConfig::default(),
            ap_same_identity: true,
            aggregation: Aggregation::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        self.sampler.validate()?;
        self.loss.validate()
    }
}

/// One window of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowRef {
    pub video_id: String,
    pub frames: Vec<usize>,
}

/// Anchor and positive from REAL videos, negative from a FAKE video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletPlan {
    pub anchor: WindowRef,
    pub positive: WindowRef,
    pub negative: WindowRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: DifferenceSequence,
    pub positive: DifferenceSequence,
    pub negative: DifferenceSequence,
    pub plan: TripletPlan,
}

impl Triplet {
    /// Classification targets of (anchor, positive, negative).
    pub const LABELS: [Label; 3] = [Label::Real, Label::Real, Label::Fake];
}

fn eligible<'a>(records: impl Iterator<Item = &'a VideoRecord>, seqs: &BTreeMap<String, EmbeddingSequence>, l: usize) -> Vec<&'a VideoRecord> {
    records
        .filter(|r| match seqs.get(&r.video_id) {
            Some(s) if s.len() >= l => true,
            Some(s) => {
                log::warn!("{}: {} frames < sequence length {l}, not used for training", r.video_id, s.len());
                false
            }
            None => false,
        })
        .collect()
}

fn pick_window(rng: &mut impl rand::Rng, seq: &EmbeddingSequence, sampler: &SamplerConfig) -> Result<Vec<usize>> {
    let one = SamplerConfig {
        sequences_per_video_per_epoch: 1,
        ..*sampler
    };
    let mut w = sample_windows(seq.len(), &one, rng.random(), Phase::Train)?;
    Ok(w.pop().expect("one window"))
}

/// The triplets of one epoch: `sequences_per_video_per_epoch` per TRAIN real
/// video (as anchor), shuffled.
pub fn plan_epoch(
    manifest: &Manifest,
    seqs: &BTreeMap<String, EmbeddingSequence>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<TripletPlan>> {
    let l = cfg.sampler.sequence_length;
    let train = || manifest.split(Split::Train);
    let reals = eligible(train().filter(|r| r.label == Label::Real), seqs, l);
    let fakes = eligible(train().filter(|r| r.label == Label::Fake), seqs, l);
    if reals.len() < 2 || fakes.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "TRAIN needs >= 2 real and >= 1 fake video of >= {l} frames, found {} real and {} fake",
            reals.len(),
            fakes.len()
        )));
    }
    let mut rng = SeedMixer::new("epoch-plan").u64(seed).rng();
    let mut plans = Vec::with_capacity(reals.len() * cfg.sampler.sequences_per_video_per_epoch);
    for anchor in &reals {
        let others: Vec<&&VideoRecord> = reals.iter().filter(|r| r.video_id != anchor.video_id).collect();
        let same: Vec<&&VideoRecord> = others
            .iter()
            .copied()
            .filter(|r| r.identity_id == anchor.identity_id)
            .collect();
        let pool = if cfg.ap_same_identity && !same.is_empty() { &same } else { &others };
        for _ in 0..cfg.sampler.sequences_per_video_per_epoch {
            let positive = pool.choose(&mut rng).expect("non-empty");
            let negative = fakes.choose(&mut rng).expect("non-empty");
            let window = |r: &VideoRecord, rng: &mut _| -> Result<WindowRef> {
                Ok(WindowRef {
                    video_id: r.video_id.clone(),
                    frames: pick_window(rng, &seqs[&r.video_id], &cfg.sampler)?,
                })
            };
            plans.push(TripletPlan {
                anchor: window(anchor, &mut rng)?,
                positive: window(positive, &mut rng)?,
                negative: window(negative, &mut rng)?,
            });
        }
    }
    plans.shuffle(&mut rng);
    Ok(plans)
}

pub fn materialize(plan: &TripletPlan, seqs: &BTreeMap<String, EmbeddingSequence>, kind: EmbeddingType) -> Result<Triplet> {
    let diff = |w: &WindowRef| -> Result<DifferenceSequence> {
        let seq = seqs
            .get(&w.video_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no embeddings for video {}", w.video_id)))?;
        difference_sequence(&seq.select(&w.frames)?, kind)
    };
    Ok(Triplet {
        anchor: diff(&plan.anchor)?,
        positive: diff(&plan.positive)?,
        negative: diff(&plan.negative)?,
        plan: plan.clone(),
    })
}

/// One batch of `batch_size` triplets drawn with `seed`.
pub fn build_triplet_batch(
    manifest: &Manifest,
    seqs: &BTreeMap<String, EmbeddingSequence>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<Triplet>> {
    let plans = plan_epoch(manifest, seqs, cfg, seed)?;
    plans
        .iter()
        .cycle()
        .take(cfg.batch_size)
        .map(|p| materialize(p, seqs, cfg.embedding_type))
        .collect()
}

/// Loss terms of a triplet or the mean over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub cls: f64,
    pub tri: f64,
    pub ap: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.cls += o.cls;
        self.tri += o.tri;
        self.ap += o.ap;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.cls *= s;
        self.tri *= s;
        self.ap *= s;
    }

    fn is_finite(&self) -> bool {
        self.total.is_finite() && self.cls.is_finite() && self.tri.is_finite() && self.ap.is_finite()
    }
}

/// Dropout seed of one triplet member (0 anchor, 1 positive, 2 negative).
pub fn member_seed(triplet_seed: u64, member: usize) -> u64 {
    SeedMixer::new("member-dropout").u64(triplet_seed).u64(member as u64).finish()
}

/// `mean_i CE_i + λ1·triplet(H_a, H_p, H_n) + λ2·‖H_a − H_p‖` for one
/// triplet; accumulates its gradient into `grads` when given. The metric
/// terms act on the sequence embeddings before head dropout.
/// `dropout_seed = None` evaluates without dropout.
pub fn triplet_objective(
    model: &DetectorModel,
    triplet: &Triplet,
    loss: &LossConfig,
    dropout_seed: Option<u64>,
    grads: Option<&mut DetectorParams>,
) -> Result<LossParts> {
    let keep = grads.is_some();
    let members = [&triplet.anchor, &triplet.positive, &triplet.negative];
    let mut embeds = Vec::with_capacity(3);
    let mut heads = Vec::with_capacity(3);
    let mut dlogits = Vec::with_capacity(3);
    let mut cls = 0.0;
    for (i, seq) in members.iter().enumerate() {
        let seed = dropout_seed.map(|s| member_seed(s, i));
        let (h, trace) = model.embed_traced(seq, seed, keep)?;
        let head = model.head_traced(&h, seed)?;
        let (ce, g) = losses::cross_entropy_with_logits(Triplet::LABELS[i].target(), head.logits.as_slice().expect("contiguous"));
        cls += ce / 3.0;
        dlogits.push(Array1::from(g) / 3.0);
        heads.push(head);
        embeds.push((h, trace));
    }
    let (ha, hp, hn) = (embeds[0].0.as_slice(), embeds[1].0.as_slice(), embeds[2].0.as_slice());
    let tri = losses::triplet_loss(ha, hp, hn, loss.margin)?;
    let ap = losses::anchor_positive_loss(ha, hp)?;
    let parts = LossParts {
        total: losses::total_loss(cls, tri, ap, loss.lambda_triplet, loss.lambda_ap),
        cls,
        tri,
        ap,
    };
    if let Some(grads) = grads {
        let mut dh: Vec<Array1<f64>> = (0..3)
            .map(|i| model.head_backward(&heads[i], dlogits[i].view(), grads))
            .collect();
        if loss.lambda_triplet != 0.0 {
            for (d, g) in dh.iter_mut().zip(losses::triplet_grad(ha, hp, hn, loss.margin)) {
                d.scaled_add(loss.lambda_triplet, &ArrayView1::from(&g));
            }
        }
        if loss.lambda_ap != 0.0 {
            for (d, g) in dh.iter_mut().zip(losses::anchor_positive_grad(ha, hp)) {
                d.scaled_add(loss.lambda_ap, &ArrayView1::from(&g));
            }
        }
        for (i, d) in dh.iter().enumerate() {
            let trace = embeds[i].1.as_ref().expect("trace kept");
            model.embed_backward(trace, d.view(), grads);
        }
    }
    Ok(parts)
}

/// Mean loss and mean gradient over a batch. `seeds[i]` is the dropout seed
/// of triplet `i`.
pub fn batch_gradient(
    model: &DetectorModel,
    batch: &[Triplet],
    seeds: &[u64],
    loss: &LossConfig,
) -> Result<(LossParts, DetectorParams)> {
    let items: Vec<(&Triplet, u64)> = batch.iter().zip(seeds.iter().copied()).collect();
    let chunks: Vec<&[(&Triplet, u64)]> = items.chunks(GRAD_CHUNK).collect();
    let partial = crate::par::try_map(&chunks, |chunk| -> Result<(LossParts, DetectorParams)> {
        let mut g = DetectorParams::zeros(&model.config);
        let mut parts = LossParts::default();
        for (t, seed) in chunk.iter() {
            parts.add(&triplet_objective(model, t, loss, Some(*seed), Some(&mut g))?);
        }
        Ok((parts, g))
    })?;
    let mut iter = partial.into_iter();
    let (mut parts, mut grads) = iter.next().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    for (p, g) in iter {
        parts.add(&p);
        grads.add_scaled(&g, 1.0);
    }
    let inv = 1.0 / batch.len() as f64;
    parts.scale(inv);
    for t in grads.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= inv);
    }
    Ok((parts, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub loss_cls: f64,
    pub loss_tri: f64,
    pub loss_ap: f64,
    pub val_auc: Option<f64>,
    /// Mean video-level log-loss on VAL; breaks VAL AUC ties.
    pub val_loss: Option<f64>,
    pub batches: usize,
    pub triplets: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<EpochMetrics>,
}

/// Where [`train`] writes its artifacts.
#[derive(Debug, Clone, Copy)]
pub struct TrainOutputs<'a> {
    pub dir: &'a Path,
}

impl TrainOutputs<'_> {
    pub const METRICS: &'static str = "metrics.jsonl";
    pub const BEST: &'static str = "best.ckpt";
    pub const LAST: &'static str = "last.ckpt";
}

fn check_dims(seqs: &BTreeMap<String, EmbeddingSequence>) -> Result<(usize, String)> {
    let mut it = seqs.values();
    let first = it.next().ok_or_else(|| Error::InvalidArgument("no training sequences".into()))?;
    for s in it {
        if s.dim() != first.dim() || s.backend_id() != first.backend_id() {
            return Err(Error::Shape(format!(
                "video {} has dim {} from {}, video {} has dim {} from {}",
                first.video_id,
                first.dim(),
                first.backend_id(),
                s.video_id,
                s.dim(),
                s.backend_id()
            )));
        }
    }
    Ok((first.dim(), first.backend_id().to_string()))
}

/// Mean binary log-loss of video-level fake probabilities.
pub fn video_log_loss(scores: &[VideoScore]) -> f64 {
    let sum: f64 = scores
        .iter()
        .map(|v| {
            let p = if v.label == Label::Fake { v.score } else { 1.0 - v.score };
            -p.max(LOG_CLAMP).ln()
        })
        .sum();
    sum / scores.len().max(1) as f64
}

/// Checkpoint order: higher VAL AUC wins; equal AUC goes to the lower VAL
/// log-loss. Without VAL metrics the newer epoch wins.
fn is_better(candidate: (Option<f64>, Option<f64>), incumbent: (Option<f64>, Option<f64>)) -> bool {
    match (candidate, incumbent) {
        ((Some(a), la), (Some(b), lb)) => a > b || (a == b && matches!((la, lb), (Some(x), Some(y)) if x < y)),
        ((Some(_), _), (None, _)) => true,
        ((None, _), _) => true,
    }
}

/// Trains on TRAIN, tracks VAL video-level AUC each epoch and keeps the
/// best-VAL checkpoint. The detector's `input_dim` is derived from the data.
pub fn train(
    manifest: &Manifest,
    source: &dyn SequenceSource,
    detector: DetectorConfig,
    cfg: &TrainConfig,
    outputs: Option<TrainOutputs>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let records: Vec<&VideoRecord> = manifest.split(Split::Train).chain(manifest.split(Split::Val)).collect();
    let seqs = pipeline::load_all(source, records.iter().copied(), None)?;
    train_on(manifest, &seqs, detector, cfg, outputs)
}

/// [`train`] over sequences already in memory.
pub fn train_on(
    manifest: &Manifest,
    seqs: &BTreeMap<String, EmbeddingSequence>,
    detector: DetectorConfig,
    cfg: &TrainConfig,
    outputs: Option<TrainOutputs>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (d, backend_id) = check_dims(seqs)?;
    let detector = DetectorConfig {
        input_dim: cfg.embedding_type.input_dim(d),
        ..detector
    };
    let mut model = DetectorModel::new(detector, SeedMixer::new("init").u64(cfg.seed).finish())?;
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let val_records: Vec<&VideoRecord> = manifest.split(Split::Val).collect();
    let val_usable = val_records.iter().any(|r| r.label == Label::Real) && val_records.iter().any(|r| r.label == Label::Fake);
    if !val_usable {
        log::warn!("VAL lacks one class; checkpoint selection falls back to the last epoch");
    }
    let mut metrics_log = match outputs {
        Some(o) => {
            std::fs::create_dir_all(o.dir)?;
            Some(std::io::BufWriter::new(std::fs::File::create(o.dir.join(TrainOutputs::METRICS))?))
        }
        None => None,
    };
    let meta = |epoch, val_auc, val_loss| CheckpointMeta {
        embedding_type: cfg.embedding_type,
        identity_dim: d,
        backend_id: backend_id.clone(),
        sequence_length: cfg.sampler.sequence_length,
        epoch,
        val_auc,
        val_loss,
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Checkpoint> = None;
    for epoch in 1..=cfg.epochs {
        let epoch_seed = SeedMixer::new("epoch").u64(cfg.seed).u64(epoch as u64).finish();
        let plans = plan_epoch(manifest, seqs, cfg, epoch_seed)?;
        let mut sum = LossParts::default();
        let mut batches = 0;
        for (b, chunk) in plans.chunks(cfg.batch_size).enumerate() {
            let batch = crate::par::try_map(chunk, |p| materialize(p, seqs, cfg.embedding_type))?;
            let seeds: Vec<u64> = (0..chunk.len())
                .map(|i| SeedMixer::new("triplet").u64(epoch_seed).u64((b * cfg.batch_size + i) as u64).finish())
                .collect();
            let (parts, grads) = batch_gradient(&model, &batch, &seeds, &cfg.loss)?;
            if !parts.is_finite() || !grads.is_finite() {
                let ids: Vec<String> = chunk
                    .iter()
                    .map(|p| format!("({}, {}, {})", p.anchor.video_id, p.positive.video_id, p.negative.video_id))
                    .collect();
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    detail: format!("loss {:?}; triplets {}", parts, ids.join(" ")),
                });
            }
            adam.step(&mut model.params, &grads);
            sum.add(&parts);
            batches += 1;
        }
        sum.scale(1.0 / batches as f64);
        let (val_auc, val_loss) = if val_usable {
            let scorer = Scorer {
                model: &model,
                embedding_type: cfg.embedding_type,
                sampler: cfg.sampler,
                aggregation: cfg.aggregation,
            };
            let report = evaluation::evaluate(&scorer, manifest, Split::Val, seqs)?;
            (Some(report.auc_overall), Some(video_log_loss(&report.per_video)))
        } else {
            (None, None)
        };
        let m = EpochMetrics {
            epoch,
            loss: sum.total,
            loss_cls: sum.cls,
            loss_tri: sum.tri,
            loss_ap: sum.ap,
            val_auc,
            val_loss,
            batches,
            triplets: plans.len(),
        };
        log::info!(
            "epoch {epoch}: L {:.5} (cls {:.5}, tri {:.5}, ap {:.5}) val AUC {}",
            m.loss,
            m.loss_cls,
            m.loss_tri,
            m.loss_ap,
            val_auc.map_or("n/a".to_string(), |a| format!("{a:.4}"))
        );
        if let Some(w) = metrics_log.as_mut() {
            serde_json::to_writer(&mut *w, &m)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        history.push(m);
        let improved = match &best {
            None => true,
            Some(b) => is_better((val_auc, val_loss), (b.meta.val_auc, b.meta.val_loss)),
        };
        if improved {
            let ckpt = Checkpoint {
                model: model.clone(),
                meta: meta(epoch, val_auc, val_loss),
            };
            if let Some(o) = outputs {
                save_checkpoint(&ckpt, o.dir.join(TrainOutputs::BEST))?;
            }
            best = Some(ckpt);
        }
    }
    let last = Checkpoint {
        meta: meta(
            cfg.epochs,
            history.last().and_then(|m| m.val_auc),
            history.last().and_then(|m| m.val_loss),
        ),
        model,
    };
    if let Some(o) = outputs {
        save_checkpoint(&last, o.dir.join(TrainOutputs::LAST))?;
    }
    Ok(TrainOutcome {
        best: best.expect("epochs >= 1"),
        last,
        history,
    })
}

/// Video-level AUC of a checkpoint on one split.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    manifest: &Manifest,
    split: Split,
    source: &dyn SequenceSource,
) -> Result<EvalReport> {
    evaluate_checkpoint_with(&Scorer::from_checkpoint(ckpt), ckpt, manifest, split, source)
}

pub fn evaluate_checkpoint_with(
    scorer: &Scorer,
    ckpt: &Checkpoint,
    manifest: &Manifest,
    split: Split,
    source: &dyn SequenceSource,
) -> Result<EvalReport> {
    let expected = ckpt.meta.embedding_type.input_dim(ckpt.meta.identity_dim);
    if expected != ckpt.model.config.input_dim {
        return Err(Error::Shape(format!(
            "checkpoint metadata implies input dim {expected}, model has {}",
            ckpt.model.config.input_dim
        )));
    }
    let guard = DimGuard::for_checkpoint(source, ckpt);
    evaluation::evaluate(scorer, manifest, split, &guard)
}

/// Rejects sequences whose dimension or backend differs from the checkpoint's.
pub struct DimGuard<'a> {
    pub inner: &'a dyn SequenceSource,
    pub dim: usize,
    pub backend_id: &'a str,
}

impl<'a> DimGuard<'a> {
    pub fn for_checkpoint(inner: &'a dyn SequenceSource, ckpt: &'a Checkpoint) -> Self {
        Self {
            inner,
            dim: ckpt.meta.identity_dim,
            backend_id: &ckpt.meta.backend_id,
        }
    }
}

impl SequenceSource for DimGuard<'_> {
    fn load(&self, record: &VideoRecord, corruption: Option<&crate::corrupt::CorruptionSpec>) -> Result<EmbeddingSequence> {
        let seq = self.inner.load(record, corruption)?;
        if seq.dim() != self.dim {
            return Err(Error::Shape(format!(
                "video {} has identity dim {}, checkpoint expects {}",
                record.video_id,
                seq.dim(),
                self.dim
            )));
        }
        if seq.backend_id() != self.backend_id {
            return Err(Error::InvalidArgument(format!(
                "video {} was embedded with {}, checkpoint was trained on {}",
                record.video_id,
                seq.backend_id(),
                self.backend_id
            )));
        }
        Ok(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_embeddings, SynthConfig};

    fn small_detector() -> DetectorConfig {
        DetectorConfig {
            hidden_size: 8,
            head_hidden: 8,
            ..Default::default()
        }
    }

    fn small_train() -> TrainConfig {
        TrainConfig {
            epochs: 5,
            learning_rate: 0.005,
            batch_size: 8,
            sampler: SamplerConfig {
                sequence_length: 8,
                sequences_per_video_per_epoch: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn small_data() -> crate::synth::SynthDataset {
        synth_embeddings(&SynthConfig {
            identities: 5,
            frames: 16,
            dim: 6,
            split_fractions: [0.6, 0.2, 0.2],
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn minimal_triplet_and_errors() {
        let ds = small_data();
        let cfg = small_train();
        let batch = build_triplet_batch(&ds.manifest, &ds.sequences, &cfg, 3).unwrap();
        assert_eq!(batch.len(), 8);
        for t in &batch {
            let label = |id: &str| ds.manifest.get(id).unwrap().label;
            assert_eq!(label(&t.plan.anchor.video_id), Label::Real);
            assert_eq!(label(&t.plan.positive.video_id), Label::Real);
            assert_eq!(label(&t.plan.negative.video_id), Label::Fake);
            assert_ne!(t.plan.anchor.video_id, t.plan.positive.video_id);
            assert_eq!(t.anchor.len(), 7);
        }
        assert_eq!(batch, build_triplet_batch(&ds.manifest, &ds.sequences, &cfg, 3).unwrap());

        // exactly 1 real + 1 fake in TRAIN
        let keep: Vec<VideoRecord> = ds
            .manifest
            .records
            .iter()
            .filter(|r| r.split != Some(Split::Train) || r.video_id.ends_with("real0") || r.video_id.ends_with("swap0"))
            .cloned()
            .collect();
        let first_train = keep.iter().find(|r| r.split == Some(Split::Train)).unwrap().identity_id.clone();
        let keep: Vec<VideoRecord> = keep
            .into_iter()
            .filter(|r| r.split != Some(Split::Train) || r.identity_id == first_train)
            .map(|mut r| {
                r.aux_source_video_id = None;
                r
            })
            .collect();
        let m = Manifest::from_records(keep).unwrap();
        assert!(build_triplet_batch(&m, &ds.sequences, &cfg, 0).is_err());
    }

    #[test]
    fn zero_epochs_rejected() {
        let ds = small_data();
        let cfg = TrainConfig { epochs: 0, ..small_train() };
        assert!(train_on(&ds.manifest, &ds.sequences, small_detector(), &cfg, None).is_err());
    }

    #[test]
    fn loss_decreases_and_is_reproducible() {
        let ds = small_data();
        let cfg = small_train();
        let a = train_on(&ds.manifest, &ds.sequences, small_detector(), &cfg, None).unwrap();
        let first = a.history.first().unwrap().loss;
        let last = a.history.last().unwrap().loss;
        assert!(last < first, "loss {first} -> {last}");
        let b = train_on(&ds.manifest, &ds.sequences, small_detector(), &cfg, None).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best.model, b.best.model);
    }

    #[test]
    fn zero_weights_reduce_to_cross_entropy() {
        let ds = small_data();
        let cfg = TrainConfig {
            loss: LossConfig {
                lambda_triplet: 0.0,
                lambda_ap: 0.0,
                ..Default::default()
            },
            epochs: 2,
            ..small_train()
        };
        let out = train_on(&ds.manifest, &ds.sequences, small_detector(), &cfg, None).unwrap();
        for m in &out.history {
            assert_eq!(m.loss, m.loss_cls);
        }
        // objective equals a hand-rolled mean cross-entropy with the same dropout
        let model = DetectorModel::new(DetectorConfig { input_dim: 12, ..small_detector() }, 1).unwrap();
        let t = &build_triplet_batch(&ds.manifest, &ds.sequences, &cfg, 5).unwrap()[0];
        let parts = triplet_objective(&model, t, &cfg.loss, Some(77), None).unwrap();
        let mut ce = 0.0;
        for (i, seq) in [&t.anchor, &t.positive, &t.negative].into_iter().enumerate() {
            let s = member_seed(77, i);
            let h = model.forward_embed(seq, true, s).unwrap();
            let logits = model.logits(&h, true, s).unwrap();
            ce += losses::cross_entropy_with_logits(Triplet::LABELS[i].target(), logits.as_slice().unwrap()).0 / 3.0;
        }
        assert_eq!(parts.total, ce);
    }

    #[test]
    fn batch_gradient_independent_of_worker_count() {
        let ds = small_data();
        let cfg = small_train();
        let model = DetectorModel::new(DetectorConfig { input_dim: 12, ..small_detector() }, 2).unwrap();
        let batch = build_triplet_batch(&ds.manifest, &ds.sequences, &cfg, 1).unwrap();
        let seeds: Vec<u64> = (0..batch.len() as u64).collect();
        let one = crate::par::with_workers(1, || batch_gradient(&model, &batch, &seeds, &cfg.loss).unwrap());
        let many = crate::par::with_workers(4, || batch_gradient(&model, &batch, &seeds, &cfg.loss).unwrap());
        assert_eq!(one.0, many.0);
        assert_eq!(one.1, many.1);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_val_auc() {
        let ds = small_data();
        let dir = tempfile::tempdir().unwrap();
        let out = train_on(
            &ds.manifest,
            &ds.sequences,
            small_detector(),
            &small_train(),
            Some(TrainOutputs { dir: dir.path() }),
        )
        .unwrap();
        let loaded = crate::detector::load_checkpoint(dir.path().join(TrainOutputs::BEST)).unwrap();
        assert_eq!(loaded, out.best);
        let report = evaluate_checkpoint(&loaded, &ds.manifest, Split::Val, &ds.sequences).unwrap();
        assert_eq!(Some(report.auc_overall), out.best.meta.val_auc);
        let lines = std::fs::read_to_string(dir.path().join(TrainOutputs::METRICS)).unwrap();
        assert_eq!(lines.lines().count(), 5);
    }

    #[test]
    fn mismatched_dims_rejected_at_eval() {
        let ds = small_data();
        let out = train_on(&ds.manifest, &ds.sequences, small_detector(), &TrainConfig { epochs: 1, ..small_train() }, None).unwrap();
        let other = synth_embeddings(&SynthConfig {
            identities: 5,
            frames: 16,
            dim: 7,
            ..Default::default()
        })
        .unwrap();
        let err = evaluate_checkpoint(&out.best, &other.manifest, Split::Test, &other.sequences).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn mismatched_backend_rejected_at_eval() {
        let ds = small_data();
        let mut out = train_on(&ds.manifest, &ds.sequences, small_detector(), &TrainConfig { epochs: 1, ..small_train() }, None).unwrap();
        out.best.meta.backend_id = "projection:other".into();
        let err = evaluate_checkpoint(&out.best, &ds.manifest, Split::Test, &ds.sequences).unwrap_err();
        assert!(err.to_string().contains("checkpoint was trained on projection:other"), "{err}");
    }
}
