//! Evaluation metrics: Pearson and Spearman correlations, Matthews
//! correlation, binary F1, severity-weighted span F1 at token granularity,
//! corpus BLEU, corpus error rate, the Williams test for dependent
//! correlations, and error-rate-matched downsampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use thiserror::Error;

use crate::mqm::{ErrorSpan, Label, MqmRecord, Severity};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sequence lengths differ: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least {min} observations, got {len}")]
    TooShort { len: usize, min: usize },
    #[error("value at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("an input sequence has zero variance, correlation is undefined")]
    ZeroVariance,
    #[error("corpus must be non-empty")]
    EmptyCorpus,
    #[error("records contain no tokens")]
    ZeroTokens,
    #[error("correlation {value} is outside [-1, 1]")]
    CorrelationRange { value: f64 },
    #[error("the correlation matrix is not positive definite (determinant {det})")]
    DegenerateCorrelations { det: f64 },
    #[error("need {needed} records but the pool has {available}")]
    PoolExhausted { needed: usize, available: usize },
    #[error("target distribution must be non-empty")]
    EmptyTarget,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 2 {
        return Err(MetricsError::TooShort { len: x.len(), min: 2 });
    }
    for (index, v) in x.iter().chain(y).enumerate() {
        if !v.is_finite() {
            return Err(MetricsError::NonFinite { index: index % x.len() });
        }
    }
    Ok(())
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Average fractional ranks, 1-based; ties share the mean of their block.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank correlation: Pearson over average fractional ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Matthews correlation over label sequences, BAD as the positive class.
/// Any zero factor in the denominator yields 0 by convention.
pub fn mcc(pred: &[Label], gold: &[Label]) -> Result<f64, MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch { x: pred.len(), y: gold.len() });
    }
    if pred.is_empty() {
        return Err(MetricsError::TooShort { len: 0, min: 1 });
    }
    let mut tp = 0f64;
    let mut tn = 0f64;
    let mut fp = 0f64;
    let mut fn_ = 0f64;
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (Label::Bad, Label::Bad) => tp += 1.0,
            (Label::Ok, Label::Ok) => tn += 1.0,
            (Label::Bad, Label::Ok) => fp += 1.0,
            (Label::Ok, Label::Bad) => fn_ += 1.0,
        }
    }
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((tp * tn - fp * fn_) / denom.sqrt())
}

/// F1 of the given positive class; 0 when precision + recall is 0.
pub fn f1_binary(pred: &[Label], gold: &[Label], positive_class: Label) -> Result<f64, MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch { x: pred.len(), y: gold.len() });
    }
    let mut tp = 0f64;
    let mut fp = 0f64;
    let mut fn_ = 0f64;
    for (&p, &g) in pred.iter().zip(gold) {
        match (p == positive_class, g == positive_class) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            (false, false) => {}
        }
    }
    if 2.0 * tp + fp + fn_ == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp / (2.0 * tp + fp + fn_))
}

/// Span comparison result: MQM-weighted per-severity F1 plus severity-blind
/// micro precision/recall over non-OK tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanF1 {
    pub weighted_f1: f64,
    pub precision: f64,
    pub recall: f64,
}

fn token_severity_map(spans: &[Vec<ErrorSpan>]) -> BTreeMap<(usize, usize), Severity> {
    let mut map: BTreeMap<(usize, usize), Severity> = BTreeMap::new();
    for (sentence, sentence_spans) in spans.iter().enumerate() {
        for span in sentence_spans {
            if span.severity == Severity::Ok {
                continue;
            }
            for token in span.start..=span.end {
                map.entry((sentence, token))
                    .and_modify(|sev| *sev = (*sev).max(span.severity))
                    .or_insert(span.severity);
            }
        }
    }
    map
}

/// Token-level severity scoring of predicted spans against gold spans:
/// every token carries its covering span's severity (max on overlap) or OK;
/// per-severity F1 scores are averaged with the MQM weights {1, 5, 10} over
/// the severities present on either side (1.0 when both sides are clean).
pub fn span_weighted_f1(
    pred_spans: &[Vec<ErrorSpan>],
    gold_spans: &[Vec<ErrorSpan>],
) -> Result<SpanF1, MetricsError> {
    if pred_spans.len() != gold_spans.len() {
        return Err(MetricsError::LengthMismatch { x: pred_spans.len(), y: gold_spans.len() });
    }
    let pred = token_severity_map(pred_spans);
    let gold = token_severity_map(gold_spans);

    let by_severity = |map: &BTreeMap<(usize, usize), Severity>, s: Severity| -> BTreeSet<(usize, usize)> {
        map.iter().filter(|&(_, &sev)| sev == s).map(|(&k, _)| k).collect()
    };

    let mut weight_total = 0.0;
    let mut weighted_sum = 0.0;
    for severity in [Severity::Minor, Severity::Major, Severity::Critical] {
        let p_set = by_severity(&pred, severity);
        let g_set = by_severity(&gold, severity);
        if p_set.is_empty() && g_set.is_empty() {
            continue;
        }
        let inter = p_set.intersection(&g_set).count() as f64;
        let f1 = 2.0 * inter / (p_set.len() + g_set.len()) as f64;
        let weight = f64::from(severity.weight());
        weight_total += weight;
        weighted_sum += weight * f1;
    }
    let weighted_f1 = if weight_total == 0.0 { 1.0 } else { weighted_sum / weight_total };

    let inter = pred.keys().filter(|k| gold.contains_key(k)).count() as f64;
    let precision = if pred.is_empty() {
        if gold.is_empty() { 1.0 } else { 0.0 }
    } else {
        inter / pred.len() as f64
    };
    let recall = if gold.is_empty() {
        if pred.is_empty() { 1.0 } else { 0.0 }
    } else {
        inter / gold.len() as f64
    };
    Ok(SpanF1 { weighted_f1, precision, recall })
}

/// Corpus BLEU: 4-gram clipped precisions under a strict geometric mean
/// (orders with no hypothesis n-grams at all are skipped; a zero precision
/// among the remaining orders zeroes the score) times the brevity penalty,
/// scaled to [0, 100].
pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64, MetricsError> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch { x: hyps.len(), y: refs.len() });
    }
    if hyps.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    fn counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
        let mut map: HashMap<&[String], usize> = HashMap::new();
        if tokens.len() >= n {
            for gram in tokens.windows(n) {
                *map.entry(gram).or_insert(0) += 1;
            }
        }
        map
    }

    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    let mut clipped = [0usize; 4];
    let mut totals = [0usize; 4];
    for (hyp, reference) in hyps.iter().zip(refs) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=4 {
            let h = counts(hyp, n);
            let r = counts(reference, n);
            totals[n - 1] += hyp.len().saturating_sub(n - 1);
            clipped[n - 1] += h
                .iter()
                .map(|(gram, &c)| c.min(r.get(gram).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }

    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 0..4 {
        if totals[n] == 0 {
            continue;
        }
        if clipped[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (clipped[n] as f64 / totals[n] as f64).ln();
        orders += 1;
    }
    if orders == 0 {
        return Ok(0.0);
    }
    let precision = (log_sum / orders as f64).exp();
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * precision * bp)
}

/// Percent of BAD word labels over all word labels in the records.
pub fn error_rate(records: &[MqmRecord]) -> Result<f64, MetricsError> {
    error_rate_labels(records.iter().map(|r| r.labels.as_slice()))
}

/// Same as [`error_rate`], over bare label sequences.
pub fn error_rate_labels<'a, I>(labels: I) -> Result<f64, MetricsError>
where
    I: IntoIterator<Item = &'a [Label]>,
{
    let mut bad = 0usize;
    let mut total = 0usize;
    for sentence in labels {
        total += sentence.len();
        bad += sentence.iter().filter(|&&l| l == Label::Bad).count();
    }
    if total == 0 {
        return Err(MetricsError::ZeroTokens);
    }
    Ok(100.0 * bad as f64 / total as f64)
}

/// Natural log of the gamma function (Lanczos approximation, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection for the left half-plane
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.999_999_999_999_809_9;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

/// Two-tailed p-value of a t statistic with `df` degrees of freedom,
/// P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2).
fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

/// Williams test for two dependent correlations sharing variable 1:
/// does X1 correlate more with X2 than with X3, given r23? Returns
/// (t statistic, two-tailed p) with n - 3 degrees of freedom.
pub fn williams_test(r12: f64, r13: f64, r23: f64, n: usize) -> Result<(f64, f64), MetricsError> {
    for r in [r12, r13, r23] {
        if !r.is_finite() || r.abs() > 1.0 {
            return Err(MetricsError::CorrelationRange { value: r });
        }
    }
    if n < 4 {
        return Err(MetricsError::TooShort { len: n, min: 4 });
    }
    let det = 1.0 - r12 * r12 - r13 * r13 - r23 * r23 + 2.0 * r12 * r13 * r23;
    if det <= 0.0 {
        return Err(MetricsError::DegenerateCorrelations { det });
    }
    let nf = n as f64;
    let mean = (r12 + r13) / 2.0;
    let denom = 2.0 * det * (nf - 1.0) / (nf - 3.0) + mean * mean * (1.0 - r23).powi(3);
    let t = (r12 - r13) * ((nf - 1.0) * (1.0 + r23)).sqrt() / denom.sqrt();
    let p = student_t_two_tailed(t, nf - 3.0);
    Ok((t, p))
}

/// Error-rate-matched downsampling: draw `k` rates from the empirical target
/// list (uniformly, with replacement), and for each take the not yet used
/// pool record whose rate is nearest (ties to the lower index). Returns pool
/// indices in selection order; pool records are used at most once.
pub fn downsample_match<R: Rng>(
    pool_rates: &[f64],
    target_rates: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>, MetricsError> {
    if target_rates.is_empty() {
        return Err(MetricsError::EmptyTarget);
    }
    if k > pool_rates.len() {
        return Err(MetricsError::PoolExhausted { needed: k, available: pool_rates.len() });
    }
    let mut used = vec![false; pool_rates.len()];
    let mut picks = Vec::with_capacity(k);
    for _ in 0..k {
        let wanted = target_rates[rng.gen_range(0..target_rates.len())];
        let mut best: Option<(f64, usize)> = None;
        for (i, &rate) in pool_rates.iter().enumerate() {
            if used[i] {
                continue;
            }
            let diff = (rate - wanted).abs();
            if best.is_none_or(|(d, _)| diff < d) {
                best = Some((diff, i));
            }
        }
        let (_, chosen) = best.expect("k <= pool size leaves an unused record");
        used[chosen] = true;
        picks.push(chosen);
    }
    Ok(picks)
}
