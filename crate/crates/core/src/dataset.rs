//! CSV manifests describing labeled recordings and their partitions.
//!
//! Header: `path,label,system_id,synthesis_kind,partition`. Relative paths
//! resolve against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

pub const MANIFEST_HEADER: [&str; 5] = ["path", "label", "system_id", "synthesis_kind", "partition"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SynthesisKind {
    #[serde(rename = "TTS")]
    Tts,
    #[serde(rename = "VC")]
    Vc,
    #[serde(rename = "hybrid")]
    Hybrid,
    #[serde(rename = "none")]
    None,
}

impl SynthesisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthesisKind::Tts => "TTS",
            SynthesisKind::Vc => "VC",
            SynthesisKind::Hybrid => "hybrid",
            SynthesisKind::None => "none",
        }
    }
}

impl fmt::Display for SynthesisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthesisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "TTS" => Ok(SynthesisKind::Tts),
            "VC" => Ok(SynthesisKind::Vc),
            "hybrid" => Ok(SynthesisKind::Hybrid),
            "none" => Ok(SynthesisKind::None),
            other => Err(Error::invalid(format!("unknown synthesis kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Dev,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Dev, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Dev => "dev",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Partition::Train),
            "dev" => Ok(Partition::Dev),
            "test" => Ok(Partition::Test),
            other => Err(Error::invalid(format!("unknown partition `{other}`"))),
        }
    }
}

/// Evaluation scenario selecting which synthetic recordings take part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "ALL")]
    All,
    #[serde(rename = "TTS")]
    Tts,
    #[serde(rename = "VC")]
    Vc,
}

impl Scenario {
    pub fn kinds(self) -> &'static [SynthesisKind] {
        match self {
            Scenario::All => &[SynthesisKind::Tts, SynthesisKind::Vc, SynthesisKind::Hybrid],
            Scenario::Tts => &[SynthesisKind::Tts],
            Scenario::Vc => &[SynthesisKind::Vc],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::All => "ALL",
            Scenario::Tts => "TTS",
            Scenario::Vc => "VC",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ALL" => Ok(Scenario::All),
            "TTS" => Ok(Scenario::Tts),
            "VC" => Ok(Scenario::Vc),
            other => Err(Error::invalid(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub label: Label,
    pub system_id: String,
    pub synthesis_kind: SynthesisKind,
    pub partition: Partition,
}

impl ManifestRecord {
    pub fn validate(&self) -> Result<()> {
        if self.path.trim().is_empty() {
            return Err(Error::invalid("empty path"));
        }
        if self.system_id.trim().is_empty() {
            return Err(Error::invalid("empty system_id"));
        }
        match (self.label, self.synthesis_kind) {
            (Label::Real, SynthesisKind::None) => Ok(()),
            (Label::Df, k) if k != SynthesisKind::None => Ok(()),
            (l, k) => Err(Error::invalid(format!(
                "label {l} is inconsistent with synthesis_kind {k}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub real: usize,
    pub df: usize,
}

/// Validated manifest contents in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<ManifestRecord>,
    base_dir: PathBuf,
}

impl Corpus {
    pub fn new(records: Vec<ManifestRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Corpus("empty corpus".into()));
        }
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            r.validate().map_err(|e| Error::Manifest {
                line: i + 2,
                message: e.to_string(),
            })?;
            if !seen.insert(r.path.as_str()) {
                return Err(Error::Manifest {
                    line: i + 2,
                    message: format!("duplicate path `{}`", r.path),
                });
            }
        }
        Ok(Self {
            records,
            base_dir: base_dir.into(),
        })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Absolute or manifest-relative location of a record's audio.
    pub fn resolve(&self, r: &ManifestRecord) -> PathBuf {
        let p = Path::new(&r.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for r in &self.records {
            match r.label {
                Label::Real => c.real += 1,
                Label::Df => c.df += 1,
            }
        }
        c
    }

    pub fn partition_counts(&self, p: Partition) -> LabelCounts {
        let mut c = LabelCounts::default();
        for r in self.records.iter().filter(|r| r.partition == p) {
            match r.label {
                Label::Real => c.real += 1,
                Label::Df => c.df += 1,
            }
        }
        c
    }

    pub fn partition(&self, p: Partition) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.partition == p)
    }

    /// Records of one partition as their own corpus.
    pub fn subset(&self, p: Partition) -> Result<Corpus> {
        let records: Vec<ManifestRecord> = self.partition(p).cloned().collect();
        if records.is_empty() {
            return Err(Error::Corpus(format!("partition `{p}` has no records")));
        }
        Ok(Self {
            records,
            base_dir: self.base_dir.clone(),
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER)
            .map_err(|e| Error::Serde(e.to_string()))?;
        for r in &self.records {
            w.write_record([
                r.path.as_str(),
                r.label.as_str(),
                r.system_id.as_str(),
                r.synthesis_kind.as_str(),
                r.partition.as_str(),
            ])
            .map_err(|e| Error::Serde(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest_str(&text, base)
}

pub fn parse_manifest_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Manifest {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Manifest {
            line: 1,
            message: format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Manifest {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bad = |e: Error| Error::Manifest {
            line,
            message: e.to_string(),
        };
        if row.len() != MANIFEST_HEADER.len() {
            return Err(Error::Manifest {
                line,
                message: format!("expected 5 fields, got {}", row.len()),
            });
        }
        let rec = ManifestRecord {
            path: row[0].to_string(),
            label: row[1].parse().map_err(bad)?,
            system_id: row[2].to_string(),
            synthesis_kind: row[3].parse().map_err(bad)?,
            partition: row[4].parse().map_err(bad)?,
        };
        rec.validate().map_err(bad)?;
        records.push((line, rec));
    }
    if records.is_empty() {
        return Err(Error::Corpus("empty corpus".into()));
    }
    let mut seen = HashSet::new();
    for (line, r) in &records {
        if !seen.insert(r.path.as_str()) {
            return Err(Error::Manifest {
                line: *line,
                message: format!("duplicate path `{}`", r.path),
            });
        }
    }
    Corpus::new(records.into_iter().map(|(_, r)| r).collect(), base_dir)
}

/// Keeps every real record and the synthetic ones of the given kinds.
pub fn filter_by_kind(c: &Corpus, kinds: &[SynthesisKind]) -> Result<Corpus> {
    let records: Vec<ManifestRecord> = c
        .records
        .iter()
        .filter(|r| r.label == Label::Real || kinds.contains(&r.synthesis_kind))
        .cloned()
        .collect();
    if !records.iter().any(|r| r.label == Label::Df) {
        return Err(Error::Corpus(format!("no synthetic records of kinds {kinds:?}")));
    }
    Ok(Corpus {
        records,
        base_dir: c.base_dir.clone(),
    })
}
