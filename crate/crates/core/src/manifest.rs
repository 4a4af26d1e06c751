//! Dataset data model: video records, identity-disjoint splits and
//! auxiliary (registered) image pairing.
//!
//! Manifests are JSON Lines, one [`VideoRecord`] per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedMixer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Binary target with FAKE as the positive class.
    pub fn target(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FakeType {
    Ad,
    Fomm,
    Fs,
    Dfl,
    Fsgan,
    Other,
}

impl FakeType {
    pub const ALL: [FakeType; 6] = [
        FakeType::Ad,
        FakeType::Fomm,
        FakeType::Fs,
        FakeType::Dfl,
        FakeType::Fsgan,
        FakeType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FakeType::Ad => "AD",
            FakeType::Fomm => "FOMM",
            FakeType::Fs => "FS",
            FakeType::Dfl => "DFL",
            FakeType::Fsgan => "FSGAN",
            FakeType::Other => "OTHER",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for FakeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "TRAIN",
            Split::Val => "VAL",
            Split::Test => "TEST",
        })
    }
}

/// One video with its identity, label and registered image.
///
/// `split` and `aux_image_path` may be absent on raw record lists that have
/// not been through [`make_identity_splits`] / [`pair_aux_images`] yet; a
/// loaded [`Manifest`] always has a split on every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub video_id: String,
    pub identity_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fake_type: Option<FakeType>,
    pub frames_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_image_path: Option<String>,
    /// Video the auxiliary image was taken from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_source_video_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl VideoRecord {
    fn check_fields(&self) -> std::result::Result<(), String> {
        match (self.label, self.fake_type) {
            (Label::Fake, None) => return Err("label FAKE requires fake_type".into()),
            (Label::Real, Some(_)) => return Err("fake_type present on a REAL record".into()),
            _ => {}
        }
        if self.video_id.is_empty() || self.identity_id.is_empty() {
            return Err("video_id and identity_id must be non-empty".into());
        }
        if self.aux_source_video_id.as_deref() == Some(self.video_id.as_str()) {
            return Err(format!(
                "auxiliary image for {} is taken from the same video",
                self.video_id
            ));
        }
        Ok(())
    }
}

/// A validated collection of records with identity-disjoint splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<VideoRecord>,
    pub split_identities: BTreeMap<Split, BTreeSet<String>>,
}

impl Manifest {
    /// Validates records and derives the split → identities map.
    pub fn from_records(records: Vec<VideoRecord>) -> Result<Self> {
        let mut owner: BTreeMap<&str, Split> = BTreeMap::new();
        let mut seen_ids = BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            let line = i + 1;
            r.check_fields()
                .map_err(|message| Error::Schema { line, message })?;
            if !seen_ids.insert(r.video_id.as_str()) {
                return Err(Error::Schema {
                    line,
                    message: format!("duplicate video_id {:?}", r.video_id),
                });
            }
            let split = r.split.ok_or_else(|| Error::Schema {
                line,
                message: "missing field `split`".into(),
            })?;
            match owner.get(r.identity_id.as_str()) {
                Some(&prev) if prev != split => {
                    return Err(Error::SplitOverlap {
                        identity: r.identity_id.clone(),
                        first: prev.to_string(),
                        second: split.to_string(),
                    })
                }
                _ => {
                    owner.insert(&r.identity_id, split);
                }
            }
        }
        let by_id: BTreeMap<&str, &VideoRecord> =
            records.iter().map(|r| (r.video_id.as_str(), r)).collect();
        for (i, r) in records.iter().enumerate() {
            if let Some(src) = r.aux_source_video_id.as_deref().and_then(|s| by_id.get(s)) {
                if src.identity_id != r.identity_id || src.label != Label::Real {
                    return Err(Error::Schema {
                        line: i + 1,
                        message: format!(
                            "auxiliary source {} must be a REAL video of identity {}",
                            src.video_id, r.identity_id
                        ),
                    });
                }
            }
        }
        let mut split_identities: BTreeMap<Split, BTreeSet<String>> =
            Split::ALL.iter().map(|&s| (s, BTreeSet::new())).collect();
        for (id, split) in owner {
            split_identities.entry(split).or_default().insert(id.to_string());
        }
        Ok(Self {
            records,
            split_identities,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoRecord> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_records(path, &self.records)
    }
}

/// Parses JSON Lines into records without manifest-level validation.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<VideoRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::input(path, e.to_string()))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VideoRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        rec.check_fields().map_err(|message| Error::Schema {
            line: line_no,
            message,
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_records(path: impl AsRef<Path>, records: &[VideoRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Loads and validates a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    Manifest::from_records(read_records(path)?)
}

/// Partitions identities (not videos) into TRAIN/VAL/TEST.
///
/// Identities are sorted, shuffled with `seed`, and sliced: VAL and TEST get
/// `floor(fraction * n)` identities each (at least one when their fraction is
/// positive), TRAIN takes the remainder.
pub fn make_identity_splits(
    mut records: Vec<VideoRecord>,
    fractions: [f64; 3],
    seed: u64,
) -> Result<Manifest> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be non-negative, got {fractions:?}"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }
    let mut identities: Vec<String> = records
        .iter()
        .map(|r| r.identity_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = identities.len();
    let non_empty = fractions.iter().filter(|&&f| f > 0.0).count();
    if n < non_empty {
        return Err(Error::TooFewIdentities {
            identities: n,
            non_empty,
        });
    }
    let mut rng = SeedMixer::new("identity-splits").u64(seed).rng();
    identities.shuffle(&mut rng);

    let count = |f: f64| {
        let c = (f * n as f64).floor() as usize;
        if f > 0.0 {
            c.max(1)
        } else {
            c
        }
    };
    let n_val = count(fractions[1]);
    let n_test = count(fractions[2]);
    let n_train = n - n_val - n_test;
    if fractions[0] > 0.0 && n_train == 0 {
        return Err(Error::TooFewIdentities {
            identities: n,
            non_empty,
        });
    }
    let mut assignment = BTreeMap::new();
    for (i, id) in identities.into_iter().enumerate() {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        assignment.insert(id, split);
    }
    for r in &mut records {
        r.split = Some(assignment[&r.identity_id]);
    }
    Manifest::from_records(records)
}

/// Locator of frame `index` inside a frame source (`<frames_path>#<index>`).
pub fn frame_locator(frames_path: &str, index: usize) -> String {
    format!("{frames_path}#{index}")
}

/// Assigns every record an auxiliary image taken from a different REAL video
/// of the same (labeled) identity.
pub fn pair_aux_images(mut records: Vec<VideoRecord>, seed: u64) -> Result<Vec<VideoRecord>> {
    let mut reals: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
    for r in &records {
        if r.label == Label::Real {
            reals
                .entry(r.identity_id.as_str())
                .or_default()
                .push((r.video_id.as_str(), r.frames_path.as_str()));
        }
    }
    let mut rng = SeedMixer::new("aux-pairing").u64(seed).rng();
    let mut picks = Vec::with_capacity(records.len());
    let mut missing = BTreeSet::new();
    for r in &records {
        let eligible: Vec<(&str, &str)> = reals
            .get(r.identity_id.as_str())
            .map(|v| {
                v.iter()
                    .copied()
                    .filter(|(vid, _)| *vid != r.video_id)
                    .collect()
            })
            .unwrap_or_default();
        match eligible.choose(&mut rng) {
            Some(&(vid, path)) => picks.push(Some((vid.to_string(), frame_locator(path, 0)))),
            None => {
                missing.insert(r.identity_id.clone());
                picks.push(None);
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::AuxPairing(missing.into_iter().collect()));
    }
    for (r, pick) in records.iter_mut().zip(picks) {
        let (vid, locator) = pick.expect("checked above");
        r.aux_source_video_id = Some(vid);
        r.aux_image_path = Some(locator);
    }
    Ok(records)
}
