//! Record type and the MQM label algebra: sentence scores from weighted error
//! spans, word labels from spans, and span inference from per-token severities.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::Provenance;

/// Error severity with the standard MQM penalty weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    Ok,
    Minor,
    Major,
    Critical,
}

impl Severity {
    /// MQM penalty weight: OK 0, MINOR 1, MAJOR 5, CRITICAL 10.
    pub fn weight(self) -> u32 {
        match self {
            Severity::Ok => 0,
            Severity::Minor => 1,
            Severity::Major => 5,
            Severity::Critical => 10,
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Severity::Ok => "OK",
            Severity::Minor => "MINOR",
            Severity::Major => "MAJOR",
            Severity::Critical => "CRITICAL",
        };
        f.write_str(s)
    }
}

/// Binary word-level label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Ok,
    Bad,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Ok => "OK",
            Label::Bad => "BAD",
        })
    }
}

/// A contiguous error phrase over token indices `start..=end` (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorSpan {
    pub start: usize,
    pub end: usize,
    pub severity: Severity,
}

#[derive(Debug, Error)]
pub enum MqmError {
    #[error("translation length must be at least 1")]
    EmptyTranslation,
    #[error("span {start}..={end} is out of bounds for translation length {n}")]
    SpanOutOfBounds { start: usize, end: usize, n: usize },
    #[error("span {start}..={end} has severity OK; spans must mark errors")]
    OkSpan { start: usize, end: usize },
    #[error("spans must be sorted by start and pairwise disjoint (offending span {start}..={end})")]
    UnsortedOrOverlapping { start: usize, end: usize },
    #[error("labels length {labels} does not match translation length {n}")]
    LabelLength { labels: usize, n: usize },
    #[error("label at token {index} disagrees with the span list")]
    LabelMismatch { index: usize },
    #[error("score {score} does not match the value recomputed from spans ({expected})")]
    ScoreMismatch { score: f64, expected: f64 },
    #[error("{field} length {got} does not match translation length {n}")]
    AuxLength { field: &'static str, got: usize, n: usize },
}

fn validate_spans(spans: &[ErrorSpan], n: usize) -> Result<(), MqmError> {
    let mut prev_end: Option<usize> = None;
    for s in spans {
        if s.severity == Severity::Ok {
            return Err(MqmError::OkSpan { start: s.start, end: s.end });
        }
        if s.start > s.end || s.end >= n {
            return Err(MqmError::SpanOutOfBounds { start: s.start, end: s.end, n });
        }
        if let Some(pe) = prev_end {
            if s.start <= pe {
                return Err(MqmError::UnsortedOrOverlapping { start: s.start, end: s.end });
            }
        }
        prev_end = Some(s.end);
    }
    Ok(())
}

/// Sentence score `1 - (n_minor + 5 n_major + 10 n_critical) / n`, where each
/// counter counts error spans of that severity (a span counts once regardless
/// of its width). Scores are unclamped and may be negative.
pub fn mqm_score(spans: &[ErrorSpan], n: usize) -> Result<f64, MqmError> {
    if n == 0 {
        return Err(MqmError::EmptyTranslation);
    }
    validate_spans(spans, n)?;
    let penalty: u32 = spans.iter().map(|s| s.severity.weight()).sum();
    Ok(1.0 - f64::from(penalty) / n as f64)
}

/// Per-token OK/BAD labels: BAD exactly inside the given spans.
pub fn word_labels_from_spans(spans: &[ErrorSpan], n: usize) -> Result<Vec<Label>, MqmError> {
    validate_spans(spans, n)?;
    let mut labels = vec![Label::Ok; n];
    for s in spans {
        for label in &mut labels[s.start..=s.end] {
            *label = Label::Bad;
        }
    }
    Ok(labels)
}

/// Collapse per-token severities into maximal error spans; each span carries
/// the worst severity found inside its run.
pub fn spans_from_severities(severities: &[Severity]) -> Vec<ErrorSpan> {
    let mut spans = Vec::new();
    let mut run: Option<(usize, Severity)> = None;
    for (i, &sev) in severities.iter().enumerate() {
        match (&mut run, sev) {
            (Some(_), Severity::Ok) => {
                let (start, worst) = run.take().expect("run is some");
                spans.push(ErrorSpan { start, end: i - 1, severity: worst });
            }
            (None, Severity::Ok) => {}
            (Some((_, worst)), sev) => *worst = (*worst).max(sev),
            (None, sev) => run = Some((i, sev)),
        }
    }
    if let Some((start, worst)) = run {
        spans.push(ErrorSpan { start, end: severities.len() - 1, severity: worst });
    }
    spans
}

/// Round to the 6-decimal precision used when serializing scores and
/// probabilities, normalizing negative zero.
pub fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// One synthetic or gold sample. `spans`, `labels`, and `score` always
/// describe the `mt` side; the optional fields carry intermediate pipeline
/// state so stages can compose through files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqmRecord {
    pub src: String,
    pub mt: String,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub spans: Vec<ErrorSpan>,
    pub labels: Vec<Label>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coarse_labels: Option<Vec<Label>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Vec<Provenance>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

impl MqmRecord {
    pub fn mt_tokens(&self) -> Vec<&str> {
        self.mt.split_whitespace().collect()
    }

    /// Check every structural invariant: label length, span bounds and
    /// disjointness, label/span agreement, score consistency within 1e-6, and
    /// the lengths of any optional per-token fields. An empty translation must
    /// carry no spans or labels and score 1.0 (it has no tokens to penalize).
    pub fn validate(&self) -> Result<(), MqmError> {
        let n = self.mt.split_whitespace().count();
        if self.labels.len() != n {
            return Err(MqmError::LabelLength { labels: self.labels.len(), n });
        }
        let expected_labels = word_labels_from_spans(&self.spans, n)?;
        for (i, (got, want)) in self.labels.iter().zip(&expected_labels).enumerate() {
            if got != want {
                return Err(MqmError::LabelMismatch { index: i });
            }
        }
        let expected = if n == 0 { 1.0 } else { mqm_score(&self.spans, n)? };
        if (self.score - expected).abs() > 1e-6 {
            return Err(MqmError::ScoreMismatch { score: self.score, expected });
        }
        for (field, len) in [
            ("coarse_labels", self.coarse_labels.as_ref().map(Vec::len)),
            ("probs", self.probs.as_ref().map(Vec::len)),
            ("provenance", self.provenance.as_ref().map(Vec::len)),
        ] {
            if let Some(got) = len {
                if got != n {
                    return Err(MqmError::AuxLength { field, got, n });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}:{line}: {source}")]
    Invalid {
        path: String,
        line: usize,
        #[source]
        source: MqmError,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> JsonlError {
    JsonlError::Io { path: path.display().to_string(), source }
}

/// Read one record per line, validating each; blank lines are skipped.
pub fn read_jsonl(path: &Path) -> Result<Vec<MqmRecord>, JsonlError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MqmRecord = serde_json::from_str(&line).map_err(|e| JsonlError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        record.validate().map_err(|e| JsonlError::Invalid {
            path: path.display().to_string(),
            line: idx + 1,
            source: e,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Write records as JSONL, validating every record before the file is
/// created so an invalid record never leaves a half-written file behind.
pub fn write_jsonl(path: &Path, records: &[MqmRecord]) -> Result<(), JsonlError> {
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|e| JsonlError::Invalid {
            path: path.display().to_string(),
            line: i + 1,
            source: e,
        })?;
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| JsonlError::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}
