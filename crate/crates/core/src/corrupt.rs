//! Image degradations at five severity levels, for robustness sweeps.
//!
//! Parameters come from a JSON table keyed `[kind][severity]`; the default
//! table ships in `data/corruptions.json`. Severity 0 is the identity.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Cursor;
use std::path::Path;
use std::sync::OnceLock;

use image::{imageops, ImageFormat, Rgb, RgbImage};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Frame;
use crate::seed::SeedMixer;

pub const MAX_SEVERITY: u8 = 5;

const BUILTIN_TABLE: &str = include_str!("../data/corruptions.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CorruptionKind {
    Saturation,
    Contrast,
    Blockwise,
    GaussianNoise,
    GaussianBlur,
    Jpeg,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 6] = [
        CorruptionKind::Saturation,
        CorruptionKind::Contrast,
        CorruptionKind::Blockwise,
        CorruptionKind::GaussianNoise,
        CorruptionKind::GaussianBlur,
        CorruptionKind::Jpeg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CorruptionKind::Saturation => "SATURATION",
            CorruptionKind::Contrast => "CONTRAST",
            CorruptionKind::Blockwise => "BLOCKWISE",
            CorruptionKind::GaussianNoise => "GAUSSIAN_NOISE",
            CorruptionKind::GaussianBlur => "GAUSSIAN_BLUR",
            CorruptionKind::Jpeg => "JPEG",
        }
    }

    /// Case-insensitive; `-` and `_` are interchangeable.
    pub fn parse(s: &str) -> Option<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Self::ALL.into_iter().find(|k| k.as_str() == norm)
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, CorruptionKind::Blockwise | CorruptionKind::GaussianNoise)
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    /// Only the stochastic kinds read this.
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Result<Self> {
        if severity > MAX_SEVERITY {
            return Err(Error::InvalidArgument(format!(
                "severity must be in 0..={MAX_SEVERITY}, got {severity}"
            )));
        }
        Ok(Self { kind, severity, seed })
    }

    /// Parses `kind:severity`, e.g. `gaussian_noise:3`.
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("expected kind:severity, got {s:?}"));
        let (kind, sev) = s.split_once(':').ok_or_else(bad)?;
        let kind = CorruptionKind::parse(kind).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown corruption kind {kind:?} (expected one of {})",
                CorruptionKind::ALL.map(|k| k.as_str()).join(", ")
            ))
        })?;
        let severity = sev.trim().parse::<u8>().map_err(|_| bad())?;
        Self::new(kind, severity, seed)
    }

    /// The spec used for one frame of a video: seed mixed with the frame index.
    pub fn for_frame(&self, frame_index: usize) -> Self {
        Self {
            seed: self.seed ^ frame_index as u64,
            ..*self
        }
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.severity)
    }
}

pub type ParamMap = BTreeMap<String, f64>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    version: u32,
    #[serde(default)]
    #[allow(dead_code)]
    description: String,
    table: BTreeMap<String, BTreeMap<String, ParamMap>>,
}

/// Validated parameter table: every kind, levels 1..=5.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionTable {
    pub version: u32,
    levels: BTreeMap<CorruptionKind, Vec<ParamMap>>,
}

/// The parameter that orders severities, and whether it grows with severity.
fn strength_key(kind: CorruptionKind, params: &ParamMap) -> (&'static str, bool) {
    match kind {
        CorruptionKind::Saturation => ("chroma_scale", false),
        CorruptionKind::Contrast => ("scale", false),
        CorruptionKind::Blockwise => ("blocks", true),
        CorruptionKind::GaussianNoise => ("sigma", true),
        CorruptionKind::GaussianBlur => ("kernel", true),
        CorruptionKind::Jpeg if params.contains_key("downscale") => ("downscale", true),
        CorruptionKind::Jpeg => ("quality", false),
    }
}

impl CorruptionTable {
    pub fn builtin() -> &'static CorruptionTable {
        static TABLE: OnceLock<CorruptionTable> = OnceLock::new();
        TABLE.get_or_init(|| CorruptionTable::from_json(BUILTIN_TABLE).expect("bundled corruption table is valid"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::input(path, e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(text)?;
        let mut levels = BTreeMap::new();
        for (name, by_level) in file.table {
            let kind = CorruptionKind::parse(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown corruption kind {name:?} in table")))?;
            let mut rows = Vec::with_capacity(MAX_SEVERITY as usize);
            for sev in 1..=MAX_SEVERITY {
                let row = by_level
                    .get(&sev.to_string())
                    .ok_or_else(|| Error::InvalidArgument(format!("{kind}: missing severity {sev}")))?;
                rows.push(row.clone());
            }
            if by_level.len() != MAX_SEVERITY as usize {
                return Err(Error::InvalidArgument(format!("{kind}: expected exactly severities 1..=5")));
            }
            levels.insert(kind, rows);
        }
        let table = Self {
            version: file.version,
            levels,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        for kind in CorruptionKind::ALL {
            let rows = self
                .levels
                .get(&kind)
                .ok_or_else(|| Error::InvalidArgument(format!("table lacks kind {kind}")))?;
            let (key, _) = strength_key(kind, &rows[0]);
            for (i, row) in rows.iter().enumerate() {
                if strength_key(kind, row).0 != key || !row.contains_key(key) {
                    return Err(Error::InvalidArgument(format!("{kind} level {}: missing {key:?}", i + 1)));
                }
            }
            if !self.is_strictly_monotone(kind) {
                return Err(Error::InvalidArgument(format!("{kind}: {key} is not strictly monotone in severity")));
            }
        }
        Ok(())
    }

    /// Whether the ordering parameter strictly increases in strength from
    /// level 1 to level 5.
    pub fn is_strictly_monotone(&self, kind: CorruptionKind) -> bool {
        let Some(rows) = self.levels.get(&kind) else {
            return false;
        };
        let (key, increasing) = strength_key(kind, &rows[0]);
        let values: Vec<f64> = rows.iter().filter_map(|r| r.get(key).copied()).collect();
        values.len() == rows.len()
            && values
                .windows(2)
                .all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] })
    }

    /// Parameters of `kind` at `severity` (1..=5).
    pub fn params(&self, kind: CorruptionKind, severity: u8) -> Result<&ParamMap> {
        if !(1..=MAX_SEVERITY).contains(&severity) {
            return Err(Error::InvalidArgument(format!("no table entry for severity {severity}")));
        }
        self.levels
            .get(&kind)
            .map(|rows| &rows[severity as usize - 1])
            .ok_or_else(|| Error::InvalidArgument(format!("table lacks kind {kind}")))
    }

    fn param(&self, kind: CorruptionKind, severity: u8, key: &str) -> Result<f64> {
        self.params(kind, severity)?
            .get(key)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("{kind} level {severity}: missing {key:?}")))
    }

    /// The ordering parameter per level 1..=5.
    pub fn strengths(&self, kind: CorruptionKind) -> Vec<f64> {
        self.levels
            .get(&kind)
            .map(|rows| {
                let (key, _) = strength_key(kind, &rows[0]);
                rows.iter().map(|r| r[key]).collect()
            })
            .unwrap_or_default()
    }

    /// Additive RGB noise σ (pixel units) at a severity.
    pub fn noise_sigma(&self, severity: u8) -> Result<f64> {
        self.param(CorruptionKind::GaussianNoise, severity, "sigma")
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn map_pixels(img: &RgbImage, f: impl Fn([f64; 3]) -> [f64; 3]) -> RgbImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        let v = f(p.0.map(f64::from));
        *p = Rgb(v.map(to_u8));
    }
    out
}

/// Scales chroma around luma (BT.601 weights); 0 gives grayscale.
fn saturation(img: &RgbImage, s: f64) -> RgbImage {
    map_pixels(img, |[r, g, b]| {
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        [y + s * (r - y), y + s * (g - y), y + s * (b - y)]
    })
}

fn contrast(img: &RgbImage, scale: f64) -> RgbImage {
    map_pixels(img, |px| px.map(|v| v * scale))
}

fn blockwise(img: &RgbImage, params: &ParamMap, seed: u64) -> RgbImage {
    let (w, h) = img.dimensions();
    let size = params.get("block_size").copied().unwrap_or(8.0) as u32;
    let reference = params.get("reference_side").copied().unwrap_or(256.0);
    let scale = (f64::from(w.min(h)) / reference).max(1.0);
    let count = (params["blocks"] * scale).round() as usize;
    let mut rng = SeedMixer::new("blockwise").u64(seed).rng();
    let mut out = img.clone();
    let (bw, bh) = (size.min(w), size.min(h));
    for _ in 0..count {
        let x0 = rng.random_range(0..=w - bw);
        let y0 = rng.random_range(0..=h - bh);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                out.put_pixel(x, y, Rgb([128, 128, 128]));
            }
        }
    }
    out
}

fn gaussian_noise(img: &RgbImage, sigma: f64, seed: u64) -> RgbImage {
    let mut rng = SeedMixer::new("noise").u64(seed).rng();
    let mut out = img.clone();
    for v in out.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v = to_u8(f64::from(*v) + sigma * n);
    }
    out
}

/// Mirror index without repeating the edge (`dcb|abcd|cba`).
fn reflect101(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Separable Gaussian with kernel size `k` and σ = k/6.
fn gaussian_blur(img: &RgbImage, k: usize) -> RgbImage {
    let sigma = k as f64 / 6.0;
    let r = (k / 2) as i64;
    let mut kernel: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= sum);
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src: Vec<f64> = img.iter().map(|&v| f64::from(v)).collect();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                tmp[(y * w + x) * 3 + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * src[(y * w + reflect101(x as i64 + j as i64 - r, w as i64)) * 3 + c])
                    .sum();
            }
        }
    }
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * tmp[(reflect101(y as i64 + j as i64 - r, h as i64) * w + x) * 3 + c])
                    .sum();
                out.get_pixel_mut(x as u32, y as u32).0[c] = to_u8(v);
            }
        }
    }
    out
}

fn jpeg(img: &RgbImage, params: &ParamMap) -> Result<RgbImage> {
    if let Some(&factor) = params.get("downscale") {
        let (w, h) = img.dimensions();
        let small = imageops::resize(
            img,
            ((f64::from(w) / factor) as u32).max(1),
            ((f64::from(h) / factor) as u32).max(1),
            imageops::FilterType::Triangle,
        );
        return Ok(imageops::resize(&small, w, h, imageops::FilterType::Triangle));
    }
    let quality = params["quality"].round().clamp(1.0, 100.0) as u8;
    let mut buf = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality).encode_image(img)?;
    Ok(image::load(Cursor::new(buf), ImageFormat::Jpeg)?.to_rgb8())
}

/// Applies one corruption with the built-in table.
pub fn apply(img: &RgbImage, spec: &CorruptionSpec) -> Result<RgbImage> {
    apply_with(img, spec, CorruptionTable::builtin())
}

pub fn apply_with(img: &RgbImage, spec: &CorruptionSpec, table: &CorruptionTable) -> Result<RgbImage> {
    if spec.severity > MAX_SEVERITY {
        return Err(Error::InvalidArgument(format!(
            "severity must be in 0..={MAX_SEVERITY}, got {}",
            spec.severity
        )));
    }
    if spec.severity == 0 {
        return Ok(img.clone());
    }
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Shape("cannot corrupt an empty image".into()));
    }
    let params = table.params(spec.kind, spec.severity)?;
    let p = |key: &str| table.param(spec.kind, spec.severity, key);
    Ok(match spec.kind {
        CorruptionKind::Saturation => saturation(img, p("chroma_scale")?),
        CorruptionKind::Contrast => contrast(img, p("scale")?),
        CorruptionKind::Blockwise => blockwise(img, params, spec.seed),
        CorruptionKind::GaussianNoise => gaussian_noise(img, p("sigma")?, spec.seed),
        CorruptionKind::GaussianBlur => gaussian_blur(img, p("kernel")? as usize),
        CorruptionKind::Jpeg => jpeg(img, params)?,
    })
}

/// Corrupts every frame, seeding frame `i` with `seed ⊕ i`.
pub fn corrupt_video(frames: &[Frame], spec: &CorruptionSpec, table: &CorruptionTable) -> Result<Vec<Frame>> {
    crate::par::try_map(frames, |f| {
        Ok(Frame {
            index: f.index,
            image: apply_with(&f.image, &spec.for_frame(f.index), table)?,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x + y) * 3 % 256) as u8]))
    }

    #[test]
    fn bundled_table_is_monotone_in_every_kind() {
        let t = CorruptionTable::builtin();
        for kind in CorruptionKind::ALL {
            assert!(t.is_strictly_monotone(kind), "{kind}");
            assert_eq!(t.strengths(kind).len(), 5);
        }
    }

    #[test]
    fn non_monotone_table_rejected() {
        let text = BUILTIN_TABLE.replace("\"quality\": 20", "\"quality\": 35");
        assert!(CorruptionTable::from_json(&text).is_err());
    }

    #[test]
    fn severity_zero_is_bit_identical() {
        let img = textured(40, 30);
        for kind in CorruptionKind::ALL {
            assert_eq!(apply(&img, &CorruptionSpec::new(kind, 0, 9).unwrap()).unwrap(), img);
        }
    }

    #[test]
    fn shape_preserved_and_deterministic() {
        let img = textured(37, 23);
        for kind in CorruptionKind::ALL {
            for sev in 1..=5 {
                let spec = CorruptionSpec::new(kind, sev, 3).unwrap();
                let a = apply(&img, &spec).unwrap();
                assert_eq!(a.dimensions(), img.dimensions());
                assert_eq!(a, apply(&img, &spec).unwrap(), "{spec}");
                assert_ne!(a, img, "{spec} left the image unchanged");
            }
        }
    }

    #[test]
    fn deterministic_kinds_ignore_seed() {
        let img = textured(32, 32);
        for kind in CorruptionKind::ALL.into_iter().filter(|k| !k.is_stochastic()) {
            let a = apply(&img, &CorruptionSpec::new(kind, 3, 1).unwrap()).unwrap();
            let b = apply(&img, &CorruptionSpec::new(kind, 3, 2).unwrap()).unwrap();
            assert_eq!(a, b, "{kind}");
        }
        let a = apply(&img, &CorruptionSpec::new(CorruptionKind::GaussianNoise, 3, 1).unwrap()).unwrap();
        let b = apply(&img, &CorruptionSpec::new(CorruptionKind::GaussianNoise, 3, 2).unwrap()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn severity_out_of_range() {
        assert!(CorruptionSpec::new(CorruptionKind::Jpeg, 6, 0).is_err());
        assert!(CorruptionSpec::parse("jpeg:6", 0).is_err());
        assert!(CorruptionSpec::parse("sharpen:2", 0).is_err());
        let spec = CorruptionSpec::parse("gaussian-noise:3", 0).unwrap();
        assert_eq!(spec.kind, CorruptionKind::GaussianNoise);
        assert_eq!(spec.to_string(), "GAUSSIAN_NOISE:3");
        let forged = CorruptionSpec {
            kind: CorruptionKind::Jpeg,
            severity: 6,
            seed: 0,
        };
        assert!(apply(&textured(8, 8), &forged).is_err());
    }

    #[test]
    fn noise_std_matches_table() {
        let gray = RgbImage::from_pixel(100, 100, Rgb([128, 128, 128]));
        for sev in 1..=5 {
            let out = apply(&gray, &CorruptionSpec::new(CorruptionKind::GaussianNoise, sev, 42).unwrap()).unwrap();
            let diffs: Vec<f64> = out.iter().map(|&v| f64::from(v) - 128.0).collect();
            let n = diffs.len() as f64;
            let mean = diffs.iter().sum::<f64>() / n;
            let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let sigma = CorruptionTable::builtin().noise_sigma(sev).unwrap();
            assert!((sd - sigma).abs() <= 0.1 * sigma, "severity {sev}: sd {sd} vs {sigma}");
        }
    }

    #[test]
    fn saturation_five_is_grayscale_and_contrast_scales() {
        let img = textured(16, 16);
        let g = apply(&img, &CorruptionSpec::new(CorruptionKind::Saturation, 5, 0).unwrap()).unwrap();
        assert!(g.pixels().all(|p| p.0[0] == p.0[1] && p.0[1] == p.0[2]));
        let c = apply(&img, &CorruptionSpec::new(CorruptionKind::Contrast, 1, 0).unwrap()).unwrap();
        assert_eq!(c.get_pixel(5, 5).0[0], to_u8(f64::from(img.get_pixel(5, 5).0[0]) * 0.85));
    }

    #[test]
    fn blur_preserves_constant_and_matches_direct_convolution() {
        let flat = RgbImage::from_pixel(20, 20, Rgb([77, 10, 200]));
        let b = apply(&flat, &CorruptionSpec::new(CorruptionKind::GaussianBlur, 5, 0).unwrap()).unwrap();
        assert_eq!(b, flat);
        // 2-D direct convolution oracle at one interior and one border pixel
        let img = textured(24, 24);
        let out = gaussian_blur(&img, 7);
        let sigma = 7.0 / 6.0;
        let kern: Vec<f64> = (-3..=3i64).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
        let ks: f64 = kern.iter().sum();
        for (x, y) in [(12i64, 12i64), (0, 1)] {
            let mut acc = 0.0;
            for dy in -3..=3i64 {
                for dx in -3..=3i64 {
                    let sx = reflect101(x + dx, 24);
                    let sy = reflect101(y + dy, 24);
                    let wgt = kern[(dx + 3) as usize] * kern[(dy + 3) as usize] / (ks * ks);
                    acc += wgt * f64::from(img.get_pixel(sx as u32, sy as u32).0[1]);
                }
            }
            let got = f64::from(out.get_pixel(x as u32, y as u32).0[1]);
            assert!((got - acc).abs() <= 1.0, "({x},{y}): {got} vs {acc}");
        }
    }

    #[test]
    fn reflect101_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect101(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn blockwise_writes_gray_blocks() {
        let img = RgbImage::from_pixel(64, 64, Rgb([0, 0, 0]));
        let out = apply(&img, &CorruptionSpec::new(CorruptionKind::Blockwise, 1, 5).unwrap()).unwrap();
        let gray = out.pixels().filter(|p| p.0 == [128, 128, 128]).count();
        assert!(gray >= 64 && gray <= 16 * 64);
        assert!(out.pixels().all(|p| p.0 == [0, 0, 0] || p.0 == [128, 128, 128]));
    }

    #[test]
    fn video_seeds_differ_per_frame_and_order_is_kept() {
        let frames: Vec<Frame> = (0..3)
            .map(|index| Frame {
                index,
                image: RgbImage::from_pixel(16, 16, Rgb([128, 128, 128])),
            })
            .collect();
        let table = CorruptionTable::builtin();
        let clean = corrupt_video(&frames, &CorruptionSpec::new(CorruptionKind::Jpeg, 0, 0).unwrap(), table).unwrap();
        assert!(clean.iter().zip(&frames).all(|(a, b)| a.image == b.image && a.index == b.index));
        let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, 2, 10).unwrap();
        let a = corrupt_video(&frames, &spec, table).unwrap();
        assert_eq!(a.iter().map(|f| f.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_ne!(a[0].image, a[1].image);
        let b = corrupt_video(&frames, &spec, table).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.image == y.image));
        assert_eq!(a[1].image, apply(&frames[1].image, &spec.for_frame(1)).unwrap());
    }
}
