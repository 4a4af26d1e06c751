//! `idseq` — prepare manifests, extract embeddings, train, evaluate,
//! corrupt frames and render reports.
//!
//! Exit codes: 0 success, 2 invalid input or usage, 3 runtime failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use idseq::config::{AlignerKind, RunConfig};
use idseq::corrupt::{self, CorruptionKind, CorruptionSpec, CorruptionTable};
use idseq::detector::load_checkpoint;
use idseq::embedder::{backend_from_id, EmbeddingBackend, EmbeddingCacheDir};
use idseq::evaluation::{self, EvalReport, ReportFormat, Scorer};
use idseq::manifest::{self, load_manifest, Manifest, Split};
use idseq::pipeline::{self, FramePipeline, SequenceSource};
use idseq::preprocess::{decode_frames, CenterCropAligner};
use idseq::seqfeat::{EmbeddingType, SamplingMode};
use idseq::synth::{synth_embeddings, synth_pixels};
use idseq::trainer::{self, DimGuard, TrainOutputs};
use idseq::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "idseq", version, about = "Identity-sequence deepfake detection")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override, e.g. `--set train.loss.margin=0.3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Bound on parallel workers (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

/// Flags shared by the commands that turn frames into embeddings.
#[derive(Args, Debug, Clone, Serialize)]
struct SourceArgs {
    /// Read embeddings from this cache directory instead of frames.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Embedding backend: `projection[:dim]` or a pretrained slot id.
    #[arg(long)]
    backend: Option<String>,
    /// Model file for pretrained backends.
    #[arg(long)]
    model_path: Option<PathBuf>,
    /// Directory relative frame paths resolve against (default: the manifest's).
    #[arg(long)]
    data_root: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ModelArgs {
    /// Sequence variant: tmp (frame differences), aux (offsets from the
    /// registered image) or cat (both).
    #[arg(long, value_parser = parse_embedding_type)]
    embedding_type: Option<EmbeddingType>,
    /// Identity vectors per sequence (>= 2).
    #[arg(long)]
    sequence_length: Option<usize>,
    /// Training windows: sliding or random.
    #[arg(long, value_parser = parse_sampling)]
    sampling: Option<SamplingMode>,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum Command {
    /// Validate raw records, pair auxiliary images and split identities.
    Prepare {
        /// JSON-Lines video records.
        #[arg(long)]
        records: PathBuf,
    },
    /// Extract identity vectors for every manifest video into a cache.
    Embed {
        /// Prepared manifest (JSON Lines).
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        /// Only this split.
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
    },
    /// Train a detector; writes metrics.jsonl, best.ckpt and last.ckpt.
    Train {
        /// Prepared manifest (JSON Lines).
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Overrides `train.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Video-level AUC of a checkpoint, optionally under corruption.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Prepared manifest (JSON Lines).
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Split to score: train, val or test.
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Evaluate under one corruption, e.g. `GAUSSIAN_NOISE:3`.
        #[arg(long)]
        corruption: Option<String>,
        /// Severity sweep over comma-separated kinds, or `all`.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Apply a corruption to an image or frame source; writes PNG frames.
    Corrupt {
        /// Image, frame directory or video file.
        #[arg(long)]
        input: PathBuf,
        /// `KIND:SEVERITY`, e.g. `JPEG:4`.
        #[arg(long)]
        corruption: String,
    },
    /// Render a JSON report as json, csv, md and/or svg.
    Report {
        /// `report.json` written by `eval`.
        #[arg(long)]
        report: PathBuf,
        /// Comma-separated formats, or `all`.
        #[arg(long, default_value = "all")]
        format: String,
    },
    /// Generate the synthetic oracle dataset (embeddings, or frames with --pixels).
    Synth {
        /// Number of identities (>= 3).
        #[arg(long)]
        identities: Option<usize>,
        /// Per-frame jitter of real videos.
        #[arg(long)]
        sigma_real: Option<f64>,
        /// Per-frame jitter of reenactment-like fakes.
        #[arg(long)]
        sigma_fake: Option<f64>,
        /// Frames per video.
        #[arg(long)]
        frames: Option<usize>,
        /// Identity vector dimension.
        #[arg(long)]
        dim: Option<usize>,
        /// Render PNG frames instead of identity vectors.
        #[arg(long)]
        pixels: bool,
    },
}

fn parse_embedding_type(s: &str) -> std::result::Result<EmbeddingType, String> {
    EmbeddingType::parse(s).ok_or_else(|| format!("expected tmp, aux or cat, got {s:?}"))
}

fn parse_sampling(s: &str) -> std::result::Result<SamplingMode, String> {
    SamplingMode::parse(s).ok_or_else(|| format!("expected sliding or random, got {s:?}"))
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("expected train, val or test, got {s:?}"))
}

/// Everything needed to re-run a command.
#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    features: BTreeMap<&'static str, bool>,
    argv: Vec<String>,
    command: &'a Command,
    config: &'a RunConfig,
}

fn resolve_config(global: &GlobalArgs, command: &Command) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(global.config.as_deref(), &global.overrides)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
        cfg.synth.seed = seed;
        cfg.pixel_synth.seed = seed;
    }
    if let Some(w) = global.workers {
        cfg.workers = w;
    }
    let source = match command {
        Command::Embed { source, .. } | Command::Train { source, .. } | Command::Eval { source, .. } => Some(source),
        _ => None,
    };
    if let Some(s) = source {
        if let Some(b) = &s.backend {
            cfg.pipeline.backend = b.clone();
        }
        if let Some(m) = &s.model_path {
            cfg.pipeline.model_path = Some(m.clone());
        }
    }
    match command {
        Command::Train { model, epochs, .. } => {
            apply_model_args(&mut cfg, model);
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
        }
        Command::Eval { model, .. } => apply_model_args(&mut cfg, model),
        _ => {}
    }
    if let Command::Synth {
        identities,
        sigma_real,
        sigma_fake,
        frames,
        dim,
        pixels,
    } = command
    {
        if *pixels {
            let p = &mut cfg.pixel_synth;
            p.identities = identities.unwrap_or(p.identities);
            p.frames = frames.unwrap_or(p.frames);
            if sigma_real.is_some() || sigma_fake.is_some() || dim.is_some() {
                return Err(Error::InvalidArgument(
                    "--sigma-real/--sigma-fake/--dim apply to embedding synthesis, not --pixels".into(),
                ));
            }
        } else {
            let s = &mut cfg.synth;
            s.identities = identities.unwrap_or(s.identities);
            s.sigma_real = sigma_real.unwrap_or(s.sigma_real);
            s.sigma_fake = sigma_fake.unwrap_or(s.sigma_fake);
            s.frames = frames.unwrap_or(s.frames);
            s.dim = dim.unwrap_or(s.dim);
        }
    }
    Ok(cfg)
}

fn apply_model_args(cfg: &mut RunConfig, model: &ModelArgs) {
    if let Some(t) = model.embedding_type {
        cfg.train.embedding_type = t;
    }
    if let Some(l) = model.sequence_length {
        cfg.train.sampler.sequence_length = l;
    }
    if let Some(m) = model.sampling {
        cfg.train.sampler.mode = m;
    }
}

fn features() -> BTreeMap<&'static str, bool> {
    BTreeMap::from([("parallel", cfg!(feature = "parallel"))])
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// The frame path: backend, aligner and corruption table for one run.
struct FrameStack {
    backend: Box<dyn EmbeddingBackend>,
    aligner: CenterCropAligner,
    table: Option<CorruptionTable>,
    root: PathBuf,
    cfg: RunConfig,
}

impl FrameStack {
    fn new(cfg: &RunConfig, root: PathBuf) -> Result<Self> {
        let p = &cfg.pipeline;
        Ok(Self {
            backend: backend_from_id(&p.backend, p.model_path.as_deref(), cfg.seed)?,
            aligner: CenterCropAligner::default(),
            table: p.corruption_table.as_ref().map(CorruptionTable::load).transpose()?,
            root,
            cfg: cfg.clone(),
        })
    }

    fn pipeline(&self) -> FramePipeline<'_> {
        let p = &self.cfg.pipeline;
        let mut fp = FramePipeline::new(self.backend.as_ref(), &self.aligner);
        if let Some(t) = &self.table {
            fp.table = t;
        }
        fp.root = Some(self.root.clone());
        fp.frame_stride = p.frame_stride;
        fp.normalize = p.normalize;
        fp.corrupt_before_align = p.corrupt_before_align;
        fp.landmark_sidecars = p.aligner == AlignerKind::Landmarks;
        fp
    }
}

fn manifest_root(manifest_path: &Path, args: &SourceArgs) -> PathBuf {
    args.data_root.clone().unwrap_or_else(|| {
        manifest_path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    })
}

/// Runs `f` over the cache when `--cache` is given, else over frames.
fn with_source<R>(
    cfg: &RunConfig,
    args: &SourceArgs,
    manifest_path: &Path,
    f: impl FnOnce(&dyn SequenceSource) -> Result<R>,
) -> Result<R> {
    match &args.cache {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(Error::InvalidArgument(format!("cache directory {} does not exist", dir.display())));
            }
            f(&EmbeddingCacheDir::new(dir))
        }
        None => {
            let stack = FrameStack::new(cfg, manifest_root(manifest_path, args))?;
            f(&stack.pipeline())
        }
    }
}

fn cmd_prepare(cfg: &RunConfig, records_path: &Path, out: &Path) -> Result<()> {
    let records = manifest::read_records(records_path)?;
    let with_split = records.iter().filter(|r| r.split.is_some()).count();
    let records = if cfg.prepare.pair_aux && records.iter().any(|r| r.aux_image_path.is_none()) {
        let paired = manifest::pair_aux_images(records.clone(), cfg.seed)?;
        records
            .into_iter()
            .zip(paired)
            .map(|(orig, p)| if orig.aux_image_path.is_some() { orig } else { p })
            .collect()
    } else {
        records
    };
    let manifest = if with_split == records.len() {
        Manifest::from_records(records)?
    } else if with_split == 0 {
        manifest::make_identity_splits(records, cfg.prepare.split_fractions, cfg.seed)?
    } else {
        return Err(Error::InvalidArgument(format!(
            "{with_split} of {} records carry a split; give all or none",
            records.len()
        )));
    };
    let path = out.join("manifest.jsonl");
    manifest.save(&path)?;
    log::info!("wrote {} records to {}", manifest.records.len(), path.display());
    Ok(())
}

fn cmd_embed(cfg: &RunConfig, manifest_path: &Path, args: &SourceArgs, split: Option<Split>, out: &Path) -> Result<()> {
    if args.cache.is_some() {
        return Err(Error::InvalidArgument("embed reads frames; --cache is not accepted".into()));
    }
    let manifest = load_manifest(manifest_path)?;
    let records: Vec<_> = manifest
        .records
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == Some(s)))
        .collect();
    let cache = EmbeddingCacheDir::new(out.join("cache"));
    with_source(cfg, args, manifest_path, |source| {
        let seqs = pipeline::load_all(source, records.iter().copied(), None)?;
        for seq in seqs.values() {
            cache.write(seq)?;
        }
        log::info!("cached {} sequences in {}", seqs.len(), cache.root().display());
        Ok(())
    })
}

fn cmd_train(cfg: &RunConfig, manifest_path: &Path, args: &SourceArgs, out: &Path) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let outcome = with_source(cfg, args, manifest_path, |source| {
        trainer::train(&manifest, source, cfg.detector, &cfg.train, Some(TrainOutputs { dir: out }))
    })?;
    log::info!(
        "best epoch {} (VAL AUC {}); checkpoints in {}",
        outcome.best.meta.epoch,
        outcome.best.meta.val_auc.map_or("n/a".into(), |a| format!("{a:.4}")),
        out.display()
    );
    Ok(())
}

struct EvalTarget<'a> {
    checkpoint: &'a Path,
    manifest: &'a Path,
    source: &'a SourceArgs,
    model: &'a ModelArgs,
    split: Split,
    corruption: Option<&'a str>,
    sweep: Option<&'a str>,
}

fn parse_kinds(list: &str) -> Result<Vec<CorruptionKind>> {
    if list.eq_ignore_ascii_case("all") {
        return Ok(CorruptionKind::ALL.to_vec());
    }
    list.split(',')
        .map(|k| CorruptionKind::parse(k.trim()).ok_or_else(|| Error::InvalidArgument(format!("unknown corruption kind {k:?}"))))
        .collect()
}

fn cmd_eval(cfg: &RunConfig, t: &EvalTarget, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(t.checkpoint)?;
    if let Some(kind) = t.model.embedding_type {
        if kind != ckpt.meta.embedding_type {
            return Err(Error::InvalidArgument(format!(
                "checkpoint was trained on {} differences, not {kind}",
                ckpt.meta.embedding_type
            )));
        }
    }
    if t.corruption.is_some() && t.sweep.is_some() {
        return Err(Error::InvalidArgument("--corruption and --sweep are exclusive".into()));
    }
    let mut scorer = Scorer::from_checkpoint(&ckpt);
    scorer.aggregation = cfg.train.aggregation;
    scorer.sampler.eval_stride = cfg.train.sampler.eval_stride;
    if let Some(l) = t.model.sequence_length {
        scorer.sampler.sequence_length = l;
    }
    scorer.sampler.validate()?;
    let corruption = t.corruption.map(|c| CorruptionSpec::parse(c, cfg.seed)).transpose()?;
    let kinds = t.sweep.map(parse_kinds).transpose()?;
    let manifest = load_manifest(t.manifest)?;
    let report = with_source(cfg, t.source, t.manifest, |source| {
        let guard = DimGuard::for_checkpoint(source, &ckpt);
        match (&kinds, &corruption) {
            (Some(kinds), _) => evaluation::robustness_sweep(&scorer, &manifest, t.split, kinds, &guard, cfg.seed),
            (None, Some(spec)) => {
                let records: Vec<_> = manifest.split(t.split).collect();
                if records.is_empty() {
                    return Err(Error::InvalidArgument(format!("split {} is empty", t.split)));
                }
                EvalReport::from_scores(t.split, scorer.score_records(&records, &guard, Some(spec))?)
            }
            (None, None) => trainer::evaluate_checkpoint_with(&scorer, &ckpt, &manifest, t.split, source),
        }
    })?;
    log::info!("{} AUC {:.4} over {} videos", t.split, report.auc_overall, report.per_video.len());
    evaluation::write_report(&report, ReportFormat::Json, out.join("report.json"))?;
    evaluation::write_report(&report, ReportFormat::Markdown, out.join("report.md"))
}

fn cmd_corrupt(cfg: &RunConfig, input: &Path, corruption: &str, out: &Path) -> Result<()> {
    let spec = CorruptionSpec::parse(corruption, cfg.seed)?;
    let table = match &cfg.pipeline.corruption_table {
        Some(p) => CorruptionTable::load(p)?,
        None => CorruptionTable::builtin().clone(),
    };
    let frames = decode_frames(input, cfg.pipeline.frame_stride)?;
    let frames = corrupt::corrupt_video(&frames, &spec, &table)?;
    let dir = out.join("frames");
    std::fs::create_dir_all(&dir)?;
    for f in &frames {
        f.image.save(dir.join(format!("{:06}.png", f.index)))?;
    }
    log::info!("wrote {} {spec} frames to {}", frames.len(), dir.display());
    Ok(())
}

fn cmd_report(report_path: &Path, formats: &str, out: &Path) -> Result<()> {
    let report = evaluation::read_report(report_path)?;
    let formats: Vec<ReportFormat> = if formats.eq_ignore_ascii_case("all") {
        vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::Svg]
    } else {
        formats.split(',').map(|f| ReportFormat::parse(f.trim())).collect::<Result<_>>()?
    };
    for f in formats {
        let path = out.join(format!("report.{}", f.extension()));
        evaluation::write_report(&report, f, &path)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, pixels: bool, out: &Path) -> Result<()> {
    let manifest = if pixels {
        synth_pixels(&cfg.pixel_synth, out)?
    } else {
        let ds = synth_embeddings(&cfg.synth)?;
        let cache = EmbeddingCacheDir::new(out.join("cache"));
        for seq in ds.sequences.values() {
            cache.write(seq)?;
        }
        ds.manifest
    };
    manifest.save(out.join("manifest.jsonl"))?;
    log::info!("wrote {} synthetic videos to {}", manifest.records.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global, &cli.command)?;
    cfg.validate()?;
    let out = cli.global.out.as_path();
    std::fs::create_dir_all(out)?;
    write_json(
        &out.join("run.json"),
        &RunRecord {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            features: features(),
            argv: std::env::args().collect(),
            command: &cli.command,
            config: &cfg,
        },
    )?;
    idseq::par::with_workers(cfg.workers, || match &cli.command {
        Command::Prepare { records } => cmd_prepare(&cfg, records, out),
        Command::Embed { manifest, source, split } => cmd_embed(&cfg, manifest, source, *split, out),
        Command::Train { manifest, source, .. } => cmd_train(&cfg, manifest, source, out),
        Command::Eval {
            checkpoint,
            manifest,
            source,
            model,
            split,
            corruption,
            sweep,
        } => cmd_eval(
            &cfg,
            &EvalTarget {
                checkpoint,
                manifest,
                source,
                model,
                split: *split,
                corruption: corruption.as_deref(),
                sweep: sweep.as_deref(),
            },
            out,
        ),
        Command::Corrupt { input, corruption } => cmd_corrupt(&cfg, input, corruption, out),
        Command::Report { report, format } => cmd_report(report, format, out),
        Command::Synth { pixels, .. } => cmd_synth(&cfg, *pixels, out),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
