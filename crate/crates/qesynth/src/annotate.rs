//! Severity refinement: coarse OK/BAD word labels plus annotator
//! forced-decoding probabilities become four-way severities through three
//! ordered thresholds. Tokens the aligner matched stay OK; BAD tokens are
//! rejudged by probability, which also corrects false negatives (a BAD token
//! the annotator finds likely flips back to OK). Thresholds can be
//! calibrated on a validation set by coordinate-wise greedy grid search.

use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::span_weighted_f1;
use crate::mqm::{ErrorSpan, Label, Severity};
use crate::spce::{aggregate_spans, DepTree};

/// Ordered severity thresholds. The intervals
/// [0, t_critical) [t_critical, t_major) [t_major, t_minor) [t_minor, 1]
/// map a token probability to CRITICAL, MAJOR, MINOR, OK respectively, so
/// validity requires t_critical < t_major < t_minor, all inside [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub t_critical: f64,
    pub t_major: f64,
    pub t_minor: f64,
}

/// How a token got its severity: kept OK because the aligner matched it, or
/// rejudged from its probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelSource {
    MatchedOk,
    Rejudged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationResult {
    pub severities: Vec<Severity>,
    pub probs: Vec<f64>,
    pub source_of_label: Vec<LabelSource>,
}

/// One validation sentence for threshold calibration: token probabilities,
/// coarse labels, the dependency tree used for phrase expansion, and the
/// gold phrase spans to match.
#[derive(Debug, Clone)]
pub struct CalibrationItem {
    pub probs: Vec<f64>,
    pub coarse: Vec<Label>,
    pub tree: DepTree,
    pub gold_spans: Vec<ErrorSpan>,
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("token probability {value} at index {index} is outside [0, 1]")]
    ProbRange { index: usize, value: f64 },
    #[error("thresholds ({t_critical}, {t_major}, {t_minor}) are not strictly increasing within [0, 1]")]
    InvalidThresholds { t_critical: f64, t_major: f64, t_minor: f64 },
    #[error("got {coarse} coarse labels but {probs} probabilities")]
    LengthMismatch { coarse: usize, probs: usize },
    #[error("thresholds text: {message}")]
    ThresholdsFormat { message: String },
    #[error("calibration requires a non-empty validation set")]
    EmptyValidation,
    #[error("grid_step {value} is outside (0, 1)")]
    GridStep { value: f64 },
    #[error("grid_step admits only {points} candidate values, need at least 3")]
    GridTooCoarse { points: usize },
    #[error("validation item {index}: probs, coarse labels, and tree disagree on length")]
    ItemLength { index: usize },
    #[error("validation item {index}: gold span [{start}, {end}] invalid for {n} tokens")]
    ItemGold { index: usize, start: usize, end: usize, n: usize },
}

impl Thresholds {
    pub fn new(t_critical: f64, t_major: f64, t_minor: f64) -> Result<Thresholds, AnnotateError> {
        let th = Thresholds { t_critical, t_major, t_minor };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<(), AnnotateError> {
        let ordered = self.t_critical < self.t_major && self.t_major < self.t_minor;
        let in_range = self.t_critical >= 0.0 && self.t_minor <= 1.0;
        if !(ordered && in_range) {
            return Err(AnnotateError::InvalidThresholds {
                t_critical: self.t_critical,
                t_major: self.t_major,
                t_minor: self.t_minor,
            });
        }
        Ok(())
    }

    /// Parse the three-line thresholds file: t_critical, t_major, t_minor,
    /// one decimal per line.
    pub fn parse(text: &str) -> Result<Thresholds, AnnotateError> {
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|field| {
                field.parse::<f64>().map_err(|e| AnnotateError::ThresholdsFormat {
                    message: format!("bad value {field:?}: {e}"),
                })
            })
            .collect::<Result<_, _>>()?;
        let [t_critical, t_major, t_minor] = values[..] else {
            return Err(AnnotateError::ThresholdsFormat {
                message: format!("expected exactly 3 values, got {}", values.len()),
            });
        };
        Thresholds::new(t_critical, t_major, t_minor)
    }
}

/// Map one token probability to a severity by the threshold intervals;
/// every boundary value lands in the milder (upper) case.
pub fn assign_severity(p: f64, th: &Thresholds) -> Result<Severity, AnnotateError> {
    th.validate()?;
    if !(0.0..=1.0).contains(&p) {
        return Err(AnnotateError::ProbRange { index: 0, value: p });
    }
    Ok(if p < th.t_critical {
        Severity::Critical
    } else if p < th.t_major {
        Severity::Major
    } else if p < th.t_minor {
        Severity::Minor
    } else {
        Severity::Ok
    })
}

/// Refine coarse labels: matched tokens stay OK, BAD tokens get the severity
/// of their probability, including the flip back to OK when the probability
/// clears t_minor.
pub fn rejudge(coarse: &[Label], probs: &[f64], th: &Thresholds) -> Result<AnnotationResult, AnnotateError> {
    th.validate()?;
    if coarse.len() != probs.len() {
        return Err(AnnotateError::LengthMismatch { coarse: coarse.len(), probs: probs.len() });
    }
    for (index, &value) in probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(AnnotateError::ProbRange { index, value });
        }
    }
    let mut severities = Vec::with_capacity(coarse.len());
    let mut sources = Vec::with_capacity(coarse.len());
    for (&label, &p) in coarse.iter().zip(probs) {
        match label {
            Label::Ok => {
                severities.push(Severity::Ok);
                sources.push(LabelSource::MatchedOk);
            }
            Label::Bad => {
                severities.push(assign_severity(p, th)?);
                sources.push(LabelSource::Rejudged);
            }
        }
    }
    Ok(AnnotationResult { severities, probs: probs.to_vec(), source_of_label: sources })
}

/// Coordinate-wise greedy grid search for the thresholds maximizing
/// severity-weighted span F1 of rejudge plus phrase expansion against gold
/// spans. The grid is {k * grid_step : k >= 1, k * grid_step < 1}; sweeps
/// run t_critical, t_major, t_minor in turn until a full sweep changes
/// nothing; ties prefer the smaller value.
pub fn calibrate_thresholds(
    validation: &[CalibrationItem],
    grid_step: f64,
) -> Result<Thresholds, AnnotateError> {
    if validation.is_empty() {
        return Err(AnnotateError::EmptyValidation);
    }
    if !(grid_step > 0.0 && grid_step < 1.0) {
        return Err(AnnotateError::GridStep { value: grid_step });
    }
    for (index, item) in validation.iter().enumerate() {
        if item.probs.len() != item.coarse.len() || item.probs.len() != item.tree.len() {
            return Err(AnnotateError::ItemLength { index });
        }
        for (i, &value) in item.probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(AnnotateError::ProbRange { index: i, value });
            }
        }
        for span in &item.gold_spans {
            if span.start > span.end || span.end >= item.tree.len() || span.severity == Severity::Ok {
                return Err(AnnotateError::ItemGold {
                    index,
                    start: span.start,
                    end: span.end,
                    n: item.tree.len(),
                });
            }
        }
    }

    let mut grid = Vec::new();
    let mut k = 1u32;
    while f64::from(k) * grid_step < 1.0 - 1e-12 {
        grid.push(f64::from(k) * grid_step);
        k += 1;
    }
    if grid.len() < 3 {
        return Err(AnnotateError::GridTooCoarse { points: grid.len() });
    }

    let gold: Vec<Vec<ErrorSpan>> = validation.iter().map(|item| item.gold_spans.clone()).collect();
    let objective = |th: &Thresholds| -> f64 {
        let pred: Vec<Vec<ErrorSpan>> = validation
            .iter()
            .map(|item| {
                let result = rejudge(&item.coarse, &item.probs, th).expect("validated upfront");
                aggregate_spans(&item.tree, &result.severities).expect("validated upfront")
            })
            .collect();
        span_weighted_f1(&pred, &gold).expect("pred and gold have equal lengths").weighted_f1
    };

    let mut th = [grid[0], grid[1], grid[2]];
    loop {
        let mut changed = false;
        for coord in 0..3 {
            let lower = if coord == 0 { f64::NEG_INFINITY } else { th[coord - 1] };
            let upper = if coord == 2 { f64::INFINITY } else { th[coord + 1] };
            let scored: Vec<(f64, f64)> = grid
                .par_iter()
                .filter(|&&v| v > lower && v < upper)
                .map(|&v| {
                    let mut t = th;
                    t[coord] = v;
                    (v, objective(&Thresholds { t_critical: t[0], t_major: t[1], t_minor: t[2] }))
                })
                .collect();
            let (best, _) = scored
                .iter()
                .copied()
                .reduce(|acc, cand| {
                    if cand.1 > acc.1 || (cand.1 == acc.1 && cand.0 < acc.0) {
                        cand
                    } else {
                        acc
                    }
                })
                .expect("current value is always a candidate");
            if best != th[coord] {
                th[coord] = best;
                changed = true;
            }
        }
        if !changed {
            return Ok(Thresholds { t_critical: th[0], t_major: th[1], t_minor: th[2] });
        }
    }
}
