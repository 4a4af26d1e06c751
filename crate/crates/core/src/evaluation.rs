//! Video-level AUC, per-fake-type breakdowns, robustness sweeps and report
//! rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corrupt::{CorruptionKind, CorruptionSpec, MAX_SEVERITY};
use crate::detector::{Aggregation, Checkpoint, DetectorModel};
use crate::embedder::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::manifest::{FakeType, Label, Manifest, Split, VideoRecord};
use crate::pipeline::SequenceSource;
use crate::seqfeat::{difference_sequence, sample_windows, DifferenceSequence, EmbeddingType, Phase, SamplerConfig};

/// Mann–Whitney AUC with FAKE (`pos`) as the positive class: the fraction
/// of (pos, neg) pairs with `pos > neg`, ties counting one half.
pub fn auc(scores_pos: &[f64], scores_neg: &[f64]) -> Result<f64> {
    if scores_pos.is_empty() || scores_neg.is_empty() {
        return Err(Error::UndefinedAuc(format!(
            "need both classes, got {} positive and {} negative scores",
            scores_pos.len(),
            scores_neg.len()
        )));
    }
    if scores_pos.iter().chain(scores_neg).any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let mut neg = scores_neg.to_vec();
    neg.sort_by(f64::total_cmp);
    // counted in half-pairs so the sum stays an exact integer
    let mut halves: u64 = 0;
    for &p in scores_pos {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        halves += 2 * below as u64 + (not_above - below) as u64;
    }
    Ok(halves as f64 / (2.0 * scores_pos.len() as f64 * scores_neg.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub label: Label,
    pub fake_type: Option<FakeType>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub per_video: Vec<VideoScore>,
    pub auc_overall: f64,
    /// Fakes of one type against every real video of the split.
    pub auc_by_fake_type: BTreeMap<String, f64>,
    /// Corruption kind → AUC at severities 0..=5.
    #[serde(default)]
    pub robustness: BTreeMap<String, Vec<f64>>,
    /// Corruption kind → pristine AUC minus AUC at severities 1..=5.
    #[serde(default)]
    pub auc_decline: BTreeMap<String, Vec<f64>>,
}

impl EvalReport {
    pub fn from_scores(split: Split, per_video: Vec<VideoScore>) -> Result<Self> {
        let reals: Vec<f64> = per_video.iter().filter(|v| v.label == Label::Real).map(|v| v.score).collect();
        let fakes: Vec<f64> = per_video.iter().filter(|v| v.label == Label::Fake).map(|v| v.score).collect();
        let auc_overall = auc(&fakes, &reals)?;
        let mut auc_by_fake_type = BTreeMap::new();
        for ft in FakeType::ALL {
            let of_type: Vec<f64> = per_video
                .iter()
                .filter(|v| v.fake_type == Some(ft))
                .map(|v| v.score)
                .collect();
            if !of_type.is_empty() {
                auc_by_fake_type.insert(ft.as_str().to_string(), auc(&of_type, &reals)?);
            }
        }
        Ok(Self {
            split,
            per_video,
            auc_overall,
            auc_by_fake_type,
            robustness: BTreeMap::new(),
            auc_decline: BTreeMap::new(),
        })
    }
}

/// Turns embedding sequences into video scores with a trained model.
#[derive(Debug, Clone, Copy)]
pub struct Scorer<'a> {
    pub model: &'a DetectorModel,
    pub embedding_type: EmbeddingType,
    pub sampler: SamplerConfig,
    pub aggregation: Aggregation,
}

impl<'a> Scorer<'a> {
    pub fn from_checkpoint(ckpt: &'a Checkpoint) -> Self {
        Self {
            model: &ckpt.model,
            embedding_type: ckpt.meta.embedding_type,
            sampler: SamplerConfig {
                sequence_length: ckpt.meta.sequence_length,
                ..Default::default()
            },
            aggregation: Aggregation::Mean,
        }
    }

    /// Evaluation windows: every `eval_stride` frames plus a right-aligned
    /// tail. A video shorter than ℓ (but with ≥ 2 frames) is one window.
    pub fn windows(&self, seq: &EmbeddingSequence) -> Result<Vec<DifferenceSequence>> {
        if seq.len() < self.sampler.sequence_length {
            return Ok(vec![difference_sequence(seq, self.embedding_type)?]);
        }
        sample_windows(seq.len(), &self.sampler, 0, Phase::Eval)?
            .iter()
            .map(|w| difference_sequence(&seq.select(w)?, self.embedding_type))
            .collect()
    }

    pub fn score(&self, seq: &EmbeddingSequence) -> Result<f64> {
        self.model.score_video_with(&self.windows(seq)?, self.aggregation)
    }

    pub fn score_records(
        &self,
        records: &[&VideoRecord],
        source: &dyn SequenceSource,
        corruption: Option<&CorruptionSpec>,
    ) -> Result<Vec<VideoScore>> {
        crate::par::try_map(records, |r| {
            let seq = source.load(r, corruption)?;
            Ok(VideoScore {
                video_id: r.video_id.clone(),
                label: r.label,
                fake_type: r.fake_type,
                score: self.score(&seq)?,
            })
        })
    }
}

fn split_records(manifest: &Manifest, split: Split) -> Result<Vec<&VideoRecord>> {
    let records: Vec<&VideoRecord> = manifest.split(split).collect();
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!("split {split} is empty")));
    }
    Ok(records)
}

/// Scores every video of a split and computes its AUCs.
pub fn evaluate(scorer: &Scorer, manifest: &Manifest, split: Split, source: &dyn SequenceSource) -> Result<EvalReport> {
    let records = split_records(manifest, split)?;
    EvalReport::from_scores(split, scorer.score_records(&records, source, None)?)
}

/// Pristine evaluation plus, for each kind, the AUC at severities 0..=5
/// with the corruption applied to real and fake videos alike.
pub fn robustness_sweep(
    scorer: &Scorer,
    manifest: &Manifest,
    split: Split,
    kinds: &[CorruptionKind],
    source: &dyn SequenceSource,
    seed: u64,
) -> Result<EvalReport> {
    let mut report = evaluate(scorer, manifest, split, source)?;
    let records = split_records(manifest, split)?;
    for &kind in kinds {
        let mut curve = Vec::with_capacity(MAX_SEVERITY as usize + 1);
        for severity in 0..=MAX_SEVERITY {
            let spec = CorruptionSpec::new(kind, severity, seed)?;
            let scores = scorer.score_records(&records, source, Some(&spec))?;
            let auc_s = EvalReport::from_scores(split, scores)?.auc_overall;
            log::info!("{spec}: AUC {auc_s:.4}");
            curve.push(auc_s);
        }
        let decline = curve[1..].iter().map(|a| report.auc_overall - a).collect();
        report.auc_decline.insert(kind.as_str().to_string(), decline);
        report.robustness.insert(kind.as_str().to_string(), curve);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
    Svg,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Markdown),
            "svg" | "plot" => Ok(Self::Svg),
            _ => Err(Error::InvalidArgument(format!(
                "unknown report format {s:?} (expected json, csv, markdown or svg)"
            ))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Json => "json",
            Self::Csv => "csv",
            Self::Markdown => "md",
            Self::Svg => "svg",
        }
    }
}

/// Column order of the per-fake-type table.
pub const TABLE_COLUMNS: [&str; 6] = ["AD", "FOMM", "FS", "DFL", "FSGAN", "all"];

pub fn render_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => Ok(render_markdown(report)),
        ReportFormat::Svg => Ok(render_svg(report)),
    }
}

pub fn write_report(report: &EvalReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_report(report, format)?)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Rows after the per-video rows: overall AUC, one per fake type, and one
/// per robustness cell.
pub fn csv_summary_rows(report: &EvalReport) -> usize {
    1 + report.auc_by_fake_type.len() + report.robustness.values().map(Vec::len).sum::<usize>()
}

fn render_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["row", "video_id", "label", "fake_type", "value"]).map_err(csv_err)?;
    for v in &report.per_video {
        let label = match v.label {
            Label::Real => "REAL",
            Label::Fake => "FAKE",
        };
        let ft = v.fake_type.map(FakeType::as_str).unwrap_or("");
        w.write_record(["video", &v.video_id, label, ft, &v.score.to_string()])
            .map_err(csv_err)?;
    }
    w.write_record(["auc", "", "", "all", &report.auc_overall.to_string()])
        .map_err(csv_err)?;
    for (ft, a) in &report.auc_by_fake_type {
        w.write_record(["auc", "", "", ft, &a.to_string()]).map_err(csv_err)?;
    }
    for (kind, curve) in &report.robustness {
        for (s, a) in curve.iter().enumerate() {
            w.write_record([&format!("robustness:{kind}:{s}"), "", "", "all", &a.to_string()])
                .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn render_markdown(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Video-level AUC (%), split {}\n", report.split);
    let _ = writeln!(s, "| {} |", TABLE_COLUMNS.join(" | "));
    let _ = writeln!(s, "|{}", "---:|".repeat(TABLE_COLUMNS.len()));
    let cells: Vec<String> = TABLE_COLUMNS
        .iter()
        .map(|c| match *c {
            "all" => pct(report.auc_overall),
            ft => report.auc_by_fake_type.get(ft).map_or_else(|| "–".to_string(), |&a| pct(a)),
        })
        .collect();
    let _ = writeln!(s, "| {} |", cells.join(" | "));
    if !report.robustness.is_empty() {
        let _ = writeln!(s, "\nAUC (%) by corruption severity\n");
        let _ = writeln!(s, "| kind | 0 | 1 | 2 | 3 | 4 | 5 |");
        let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|---:|");
        for (kind, curve) in &report.robustness {
            let row: Vec<String> = curve.iter().map(|&a| pct(a)).collect();
            let _ = writeln!(s, "| {kind} | {} |", row.join(" | "));
        }
        let _ = writeln!(s, "\nAUC decline (points) vs. pristine\n");
        let _ = writeln!(s, "| kind | 1 | 2 | 3 | 4 | 5 |");
        let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|");
        for (kind, decline) in &report.auc_decline {
            let row: Vec<String> = decline.iter().map(|&a| pct(a)).collect();
            let _ = writeln!(s, "| {kind} | {} |", row.join(" | "));
        }
    }
    s
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// AUC-vs-severity line plot, one polyline per corruption kind.
fn render_svg(report: &EvalReport) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 170.0, 30.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let x_of = |s: usize| left + pw * s as f64 / f64::from(MAX_SEVERITY);
    let y_of = |a: f64| top + ph * (1.0 - a.clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle">Video-level AUC vs. severity ({})</text>"#,
        left + pw / 2.0,
        report.split
    );
    for i in 0..=5 {
        let a = i as f64 / 5.0;
        let y = y_of(a);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{a:.1}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0
        );
    }
    for sev in 0..=MAX_SEVERITY as usize {
        let x = x_of(sev);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{sev}</text>"#,
            top + ph + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="black"/><line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        top + ph,
        top + ph,
        left + pw,
        top + ph
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">severity</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    for (i, (kind, curve)) in report.robustness.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = curve
            .iter()
            .enumerate()
            .map(|(sev, &a)| format!("{:.1},{:.1}", x_of(sev), y_of(a)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 16.0 * i as f64 + 8.0;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{kind}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
