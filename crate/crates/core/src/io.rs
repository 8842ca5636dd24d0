//! On-disk formats.
//!
//! - Score files and feature files: JSON lines, one header object followed
//!   by one record per line.
//! - Calibration artifacts: line-oriented `key value` text followed by the
//!   sorted scores, one per line, in shortest round-trip decimal.
//!
//! Every write goes to a temporary file in the target directory and is
//! renamed into place.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::{CalibrationArtifact, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::models::{ExternalRecord, Split};
use crate::tensor::Tensor;

const ARTIFACT_MAGIC: &str = "conformal-ood-artifact";

pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFileHeader {
    pub format_version: u32,
    pub n: usize,
}

/// One externally computed score vector.
pub type ScoreFileRecord = ExternalRecord;

fn violation(line: usize, reason: impl Into<String>) -> Error {
    Error::SchemaViolation {
        line,
        reason: reason.into(),
    }
}

/// Parses a score file. Line numbers in errors are 1-based with the header
/// on line 1; blank lines are skipped.
pub fn parse_score_file(text: &str) -> Result<(ScoreFileHeader, Vec<ScoreFileRecord>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (line, header_text) = lines.next().ok_or_else(|| violation(1, "missing header"))?;
    let header: ScoreFileHeader = serde_json::from_str(header_text)
        .map_err(|e| violation(line, format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(violation(
            line,
            format!("unsupported format_version {}", header.format_version),
        ));
    }
    if header.n == 0 {
        return Err(violation(line, "n must be >= 1"));
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (line, text) in lines {
        let record: ScoreFileRecord =
            serde_json::from_str(text).map_err(|e| violation(line, e.to_string()))?;
        if record.split == Split::Train {
            return Err(violation(
                line,
                "score records must be cal, test_id or test_ood",
            ));
        }
        if record.scores.len() != header.n {
            return Err(violation(
                line,
                format!(
                    "expected {} scores, found {}",
                    header.n,
                    record.scores.len()
                ),
            ));
        }
        if let Some(bad) = record.scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::NonFiniteScore(*bad));
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok((header, records))
}

pub fn read_score_file(path: &Path) -> Result<(ScoreFileHeader, Vec<ScoreFileRecord>)> {
    parse_score_file(&read_to_string(path)?)
}

pub fn format_score_file(header: &ScoreFileHeader, records: &[ScoreFileRecord]) -> String {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_score_file(
    path: &Path,
    header: &ScoreFileHeader,
    records: &[ScoreFileRecord],
) -> Result<()> {
    atomic_write(path, format_score_file(header, records).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFileHeader {
    pub format_version: u32,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub id: String,
    pub split: Split,
    pub data: Vec<f64>,
}

impl FeatureRecord {
    pub fn tensor(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }
}

pub fn parse_feature_file(text: &str) -> Result<(FeatureFileHeader, Vec<FeatureRecord>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (line, header_text) = lines.next().ok_or_else(|| violation(1, "missing header"))?;
    let header: FeatureFileHeader = serde_json::from_str(header_text)
        .map_err(|e| violation(line, format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(violation(
            line,
            format!("unsupported format_version {}", header.format_version),
        ));
    }
    let expected: usize = header.shape.iter().product();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (line, text) in lines {
        let record: FeatureRecord =
            serde_json::from_str(text).map_err(|e| violation(line, e.to_string()))?;
        if record.data.len() != expected {
            return Err(violation(
                line,
                format!("expected {expected} values, found {}", record.data.len()),
            ));
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok((header, records))
}

pub fn read_feature_file(path: &Path) -> Result<(FeatureFileHeader, Vec<FeatureRecord>)> {
    parse_feature_file(&read_to_string(path)?)
}

pub fn format_feature_file(header: &FeatureFileHeader, records: &[FeatureRecord]) -> String {
    let mut out = serde_json::to_string(header).expect("header serializes");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_feature_file(
    path: &Path,
    header: &FeatureFileHeader,
    records: &[FeatureRecord],
) -> Result<()> {
    atomic_write(path, format_feature_file(header, records).as_bytes())
}

pub fn format_artifact(art: &CalibrationArtifact) -> String {
    let mut out = String::new();
    out.push_str(ARTIFACT_MAGIC);
    out.push('\n');
    out.push_str(&format!("format_version {}\n", art.format_version()));
    out.push_str(&format!("n {}\n", art.n()));
    out.push_str(&format!("seed {}\n", art.seed()));
    out.push_str(&format!("fingerprint {}\n", art.fingerprint()));
    out.push_str(&format!("k {}\n", art.k()));
    for s in art.sorted_scores() {
        out.push_str(&format!("{s:?}\n"));
    }
    out
}

pub fn parse_artifact(text: &str) -> Result<CalibrationArtifact> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| violation(0, format!("artifact truncated before {what}")))
    };
    let (line, magic) = next("magic")?;
    if magic != ARTIFACT_MAGIC {
        return Err(violation(line, "not a calibration artifact"));
    }
    let mut field = |key: &str| -> Result<(usize, String)> {
        let (line, text) = next(key)?;
        match text.split_once(' ') {
            Some((k, v)) if k == key => Ok((line, v.to_string())),
            _ => Err(violation(line, format!("expected `{key} <value>`"))),
        }
    };
    let parse_num = |(line, v): (usize, String)| -> Result<u64> {
        v.parse::<u64>()
            .map_err(|e| violation(line, format!("bad integer `{v}`: {e}")))
    };
    let (line, version) = field("format_version")?;
    let version = parse_num((line, version))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(violation(
            line,
            format!("unsupported format_version {version}"),
        ));
    }
    let n = parse_num(field("n")?)? as usize;
    let seed = parse_num(field("seed")?)?;
    let (_, fingerprint) = field("fingerprint")?;
    let (k_line, k) = field("k")?;
    let k = parse_num((k_line, k))? as usize;
    let mut scores = Vec::with_capacity(k);
    for (line, text) in lines.by_ref() {
        if text.is_empty() {
            continue;
        }
        let v: f64 = text
            .parse()
            .map_err(|e| violation(line, format!("bad score `{text}`: {e}")))?;
        scores.push(v);
    }
    if scores.len() != k {
        return Err(violation(
            k_line,
            format!("declared k = {k}, found {} scores", scores.len()),
        ));
    }
    if scores.windows(2).any(|w| w[0] > w[1]) {
        return Err(violation(k_line, "scores are not sorted ascending"));
    }
    CalibrationArtifact::from_scores(scores, n, seed, fingerprint)
}

pub fn read_artifact(path: &Path) -> Result<CalibrationArtifact> {
    parse_artifact(&read_to_string(path)?)
}

pub fn write_artifact(path: &Path, art: &CalibrationArtifact) -> Result<()> {
    atomic_write(path, format_artifact(art).as_bytes())
}
