//! End-to-end synthesis: wire generator models through constrained beam
//! search, edit-rate alignment, probability rejudging, and phrase expansion
//! into MQM records, plus the analysis experiments (self-annotation bias,
//! generator diversity, error-rate-matched downsampling) and the record-level
//! evaluation used by the command line.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::annotate::{rejudge, CalibrationItem, Thresholds};
use crate::decode::{
    constrained_beam_search, forced_decode_probs, read_parallel_tsv, Provenance, ToyModel,
    ToyModelError,
};
use crate::fnv1a64;
use crate::metrics::{
    bleu, downsample_match, error_rate_labels, f1_binary, mcc, pearson, span_weighted_f1,
    spearman, MetricsError,
};
use crate::mqm::{
    mqm_score, read_jsonl, round6, spans_from_severities, word_labels_from_spans, write_jsonl,
    JsonlError, Label, MqmRecord, Severity,
};
use crate::spce::{aggregate_spans, parse_conllu, DepTree};
use crate::ter::{coarse_labels, ter_align};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code: 1 for validation problems, 2 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Invalid(_) => 1,
            PipelineError::Io { .. } => 2,
        }
    }
}

fn invalid(message: impl std::fmt::Display) -> PipelineError {
    PipelineError::Invalid(message.to_string())
}

impl From<ToyModelError> for PipelineError {
    fn from(err: ToyModelError) -> Self {
        match err {
            ToyModelError::Io { path, source } => PipelineError::Io { path, source },
            other => invalid(other),
        }
    }
}

impl From<JsonlError> for PipelineError {
    fn from(err: JsonlError) -> Self {
        match err {
            JsonlError::Io { path, source } => PipelineError::Io { path, source },
            other => invalid(other),
        }
    }
}

fn from_toy(err: ToyModelError) -> PipelineError {
    err.into()
}

fn from_jsonl(err: JsonlError) -> PipelineError {
    err.into()
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path)
        .map_err(|source| PipelineError::Io { path: path.display().to_string(), source })
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One independent random stream per named stage, derived from the single
/// config seed. Streams depend only on (seed, stage name), so adding a stage
/// never perturbs another stage's draws.
pub fn stage_rng(seed: u64, stage: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(splitmix64(fnv1a64(stage.as_bytes()) ^ seed))
}

fn fmt_metric(x: f64) -> String {
    format!("{}", round6(x))
}

/// Everything one synthesis run needs. Model files double as identities:
/// the `generator` tag on emitted records is the path as configured, and the
/// annotator/generator distinctness check compares paths verbatim.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub pairs: PathBuf,
    /// Dependency trees for the generated translations, one per output record
    /// in emission order; omitted, error spans stay plain label runs.
    pub trees: Option<PathBuf>,
    pub generators: Vec<PathBuf>,
    pub annotator: PathBuf,
    pub output: PathBuf,
    pub thresholds: Thresholds,
    pub cbs_tau: f64,
    pub beam_size: usize,
    /// Decode length cap in tokens; 0 means 2 * reference length + 5.
    pub max_len: usize,
    pub grid_step: f64,
    pub seed: u64,
    /// Allow generation pairs the annotator was not trained on.
    pub amateur: bool,
    /// Allow the annotator to also appear among the generators.
    pub allow_self_annotation: bool,
}

impl PipelineConfig {
    fn validate_decode(&self) -> Result<(), PipelineError> {
        if self.generators.is_empty() {
            return Err(invalid("at least one generator model is required"));
        }
        if self.beam_size == 0 {
            return Err(invalid("beam_size must be at least 1"));
        }
        if self.cbs_tau.is_nan() {
            return Err(invalid("cbs_tau must not be NaN"));
        }
        self.thresholds.validate().map_err(invalid)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.validate_decode()?;
        if !self.allow_self_annotation && self.generators.contains(&self.annotator) {
            return Err(invalid(
                "the annotator model must differ from every generator \
                 (pass --allow-self-annotation to override)",
            ));
        }
        Ok(())
    }

    fn snapshot(&self) -> Vec<(String, String)> {
        let mut lines = vec![
            ("pairs".into(), self.pairs.display().to_string()),
            (
                "trees".into(),
                self.trees.as_ref().map_or_else(|| "-".into(), |p| p.display().to_string()),
            ),
            (
                "generators".into(),
                self.generators
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("annotator".into(), self.annotator.display().to_string()),
            ("output".into(), self.output.display().to_string()),
            ("t_critical".into(), fmt_metric(self.thresholds.t_critical)),
            ("t_major".into(), fmt_metric(self.thresholds.t_major)),
            ("t_minor".into(), fmt_metric(self.thresholds.t_minor)),
            ("cbs_tau".into(), fmt_metric(self.cbs_tau)),
            ("beam_size".into(), self.beam_size.to_string()),
            ("max_len".into(), self.max_len.to_string()),
            ("grid_step".into(), fmt_metric(self.grid_step)),
            ("seed".into(), self.seed.to_string()),
        ];
        if self.amateur {
            lines.push(("amateur".into(), "true".into()));
        }
        if self.allow_self_annotation {
            lines.push(("allow_self_annotation".into(), "true".into()));
        }
        lines
    }

    fn max_len_for(&self, reference_len: usize) -> usize {
        if self.max_len == 0 {
            2 * reference_len + 5
        } else {
            self.max_len
        }
    }
}

/// Wall-clock milliseconds per stage; reported in the summary only, never
/// part of any output artifact.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub generate_ms: u128,
    pub ter_ms: u128,
    pub rejudge_ms: u128,
    pub spce_ms: u128,
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub pairs: usize,
    pub generators: usize,
    pub records: usize,
    /// Decodes cut off at the length cap before emitting an end symbol.
    pub truncated: usize,
    /// Generated tokens outside the annotator vocabulary (floored probability).
    pub oov_tokens: usize,
    /// Generation pairs absent from the annotator's training set.
    pub unsupervised_pairs: usize,
    pub timings: StageTimings,
}

impl PipelineSummary {
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("pairs={}", self.pairs),
            format!("generators={}", self.generators),
            format!("records={}", self.records),
            format!("truncated={}", self.truncated),
            format!("oov_tokens={}", self.oov_tokens),
            format!("unsupervised_pairs={}", self.unsupervised_pairs),
            format!("time_generate_ms={}", self.timings.generate_ms),
            format!("time_ter_ms={}", self.timings.ter_ms),
            format!("time_rejudge_ms={}", self.timings.rejudge_ms),
            format!("time_spce_ms={}", self.timings.spce_ms),
        ]
    }
}

struct Generated {
    pair: usize,
    generator: usize,
    mt: Vec<String>,
    provenance: Vec<Provenance>,
    completed: bool,
}

/// Run the full synthesis: for every parallel pair and every generator,
/// decode a pseudo-translation, align it against the reference for coarse
/// OK/BAD labels, rejudge BAD tokens with the annotator's forced-decoding
/// probabilities, expand the resulting severities into phrase spans, and
/// emit one validated record per (pair, generator) in pair-major order.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineSummary, PipelineError> {
    config.validate()?;

    let pairs = read_parallel_tsv(&config.pairs).map_err(from_toy)?;
    if pairs.is_empty() {
        return Err(invalid(format!("{}: parallel corpus is empty", config.pairs.display())));
    }
    let generators: Vec<(String, ToyModel)> = config
        .generators
        .iter()
        .map(|p| Ok((p.display().to_string(), ToyModel::load(p).map_err(from_toy)?)))
        .collect::<Result<_, PipelineError>>()?;
    let annotator = ToyModel::load(&config.annotator).map_err(from_toy)?;
    let trees = match &config.trees {
        Some(path) => {
            let parsed = parse_conllu(&read_text(path)?)
                .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            let expected = pairs.len() * generators.len();
            if parsed.len() != expected {
                return Err(invalid(format!(
                    "{}: expected {expected} trees (pairs x generators), found {}",
                    path.display(),
                    parsed.len()
                )));
            }
            Some(parsed)
        }
        None => None,
    };

    let unsupervised: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, (src, reference))| !annotator.contains_pair(src, reference))
        .map(|(i, _)| i)
        .collect();
    if !config.amateur {
        if let Some(&first) = unsupervised.first() {
            return Err(invalid(format!(
                "pair {first} is not in the annotator's training set \
                 ({} such pairs; pass --amateur to proceed anyway)",
                unsupervised.len()
            )));
        }
    }

    let mut timings = StageTimings::default();
    let tasks: Vec<(usize, usize)> = (0..pairs.len())
        .flat_map(|p| (0..generators.len()).map(move |g| (p, g)))
        .collect();

    let started = Instant::now();
    let generated: Vec<Generated> = tasks
        .par_iter()
        .map(|&(pair, generator)| {
            let (src, reference) = &pairs[pair];
            let out = constrained_beam_search(
                &generators[generator].1,
                src,
                reference,
                config.cbs_tau,
                config.beam_size,
                config.max_len_for(reference.len()),
            )
            .map_err(|e| invalid(format!("pair {pair}: {e}")))?;
            Ok(Generated {
                pair,
                generator,
                mt: out.tokens,
                provenance: out.provenance,
                completed: out.completed,
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    timings.generate_ms = started.elapsed().as_millis();

    let started = Instant::now();
    let coarse: Vec<Vec<Label>> = generated
        .par_iter()
        .map(|gen| {
            let (_, reference) = &pairs[gen.pair];
            let alignment = ter_align(&gen.mt, reference);
            coarse_labels(&alignment, gen.mt.len())
                .map_err(|e| invalid(format!("pair {}: {e}", gen.pair)))
        })
        .collect::<Result<_, PipelineError>>()?;
    timings.ter_ms = started.elapsed().as_millis();

    let started = Instant::now();
    let judged: Vec<(Vec<Severity>, Vec<f64>, usize)> = generated
        .par_iter()
        .zip(coarse.par_iter())
        .map(|(gen, labels)| {
            let (src, _) = &pairs[gen.pair];
            let forced = forced_decode_probs(&annotator, src, &gen.mt);
            let result = rejudge(labels, &forced.probs, &config.thresholds)
                .map_err(|e| invalid(format!("pair {}: {e}", gen.pair)))?;
            Ok((result.severities, forced.probs, forced.oov.len()))
        })
        .collect::<Result<_, PipelineError>>()?;
    timings.rejudge_ms = started.elapsed().as_millis();

    let started = Instant::now();
    let records: Vec<MqmRecord> = (0..generated.len())
        .into_par_iter()
        .map(|i| {
            let gen = &generated[i];
            let (src, reference) = &pairs[gen.pair];
            let (severities, probs, _) = &judged[i];
            let n = gen.mt.len();
            let spans = if n == 0 {
                Vec::new()
            } else {
                match &trees {
                    Some(trees) => aggregate_spans(&trees[i], severities)
                        .map_err(|e| invalid(format!("record {i}: {e}")))?,
                    None => spans_from_severities(severities),
                }
            };
            let labels = word_labels_from_spans(&spans, n)
                .map_err(|e| invalid(format!("record {i}: {e}")))?;
            let score = if n == 0 {
                1.0
            } else {
                round6(mqm_score(&spans, n).map_err(|e| invalid(format!("record {i}: {e}")))?)
            };
            Ok(MqmRecord {
                src: src.join(" "),
                mt: gen.mt.join(" "),
                reference: Some(reference.join(" ")),
                spans,
                labels,
                score,
                coarse_labels: Some(coarse[i].clone()),
                probs: Some(probs.clone()),
                provenance: Some(gen.provenance.clone()),
                generator: Some(generators[gen.generator].0.clone()),
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    timings.spce_ms = started.elapsed().as_millis();

    write_jsonl(&config.output, &records).map_err(from_jsonl)?;

    Ok(PipelineSummary {
        pairs: pairs.len(),
        generators: generators.len(),
        records: records.len(),
        truncated: generated.iter().filter(|g| !g.completed).count(),
        oov_tokens: judged.iter().map(|(_, _, oov)| oov).sum(),
        unsupervised_pairs: unsupervised.len(),
        timings,
    })
}

/// A finished experiment: a name, the seed, the config snapshot, and an
/// ordered metric table. `to_text` is the canonical serialization; it carries
/// no timestamps or timings, so regenerating with identical inputs and seed
/// reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub config: Vec<(String, String)>,
    pub metrics: Vec<(String, String)>,
}

impl ExperimentReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("experiment={}\n", self.name));
        out.push_str(&format!("seed={}\n", self.seed));
        for (key, value) in &self.config {
            out.push_str(&format!("config.{key}={value}\n"));
        }
        for (key, value) in &self.metrics {
            out.push_str(&format!("{key}={value}\n"));
        }
        out
    }
}

fn generate_outputs(
    model: &ToyModel,
    pairs: &[(Vec<String>, Vec<String>)],
    config: &PipelineConfig,
) -> Result<Vec<Vec<String>>, PipelineError> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, (src, reference))| {
            constrained_beam_search(
                model,
                src,
                reference,
                config.cbs_tau,
                config.beam_size,
                config.max_len_for(reference.len()),
            )
            .map(|out| out.tokens)
            .map_err(|e| invalid(format!("pair {i}: {e}")))
        })
        .collect()
}

/// Post-rejudge OK/BAD labels (no phrase expansion): align each output
/// against its reference, then let the annotator's probabilities flip
/// false-negative BAD tokens back to OK.
fn rejudged_labels(
    outputs: &[Vec<String>],
    pairs: &[(Vec<String>, Vec<String>)],
    annotator: &ToyModel,
    thresholds: &Thresholds,
) -> Result<Vec<Vec<Label>>, PipelineError> {
    outputs
        .par_iter()
        .zip(pairs.par_iter())
        .enumerate()
        .map(|(i, (mt, (src, reference)))| {
            let alignment = ter_align(mt, reference);
            let coarse =
                coarse_labels(&alignment, mt.len()).map_err(|e| invalid(format!("pair {i}: {e}")))?;
            let probs = forced_decode_probs(annotator, src, mt).probs;
            let result = rejudge(&coarse, &probs, thresholds)
                .map_err(|e| invalid(format!("pair {i}: {e}")))?;
            Ok(result
                .severities
                .iter()
                .map(|&s| if s == Severity::Ok { Label::Ok } else { Label::Bad })
                .collect())
        })
        .collect()
}

fn corpus_error_rate(labels: &[Vec<Label>]) -> Result<f64, PipelineError> {
    error_rate_labels(labels.iter().map(Vec::as_slice)).map_err(invalid)
}

/// Do models under-flag their own translations? Generates with a small and a
/// large model (`config.generators[0]` and `[1]`) on the same pairs and
/// reports post-rejudge error rates for generator/annotator conditions
/// (small, small), (large, large), and (small, large), plus each generator's
/// BLEU against the references. Self-annotation is the point here, so the
/// generator/annotator distinctness rule is not applied.
pub fn run_self_annotation_experiment(
    config: &PipelineConfig,
) -> Result<ExperimentReport, PipelineError> {
    config.validate_decode()?;
    if config.generators.len() != 2 {
        return Err(invalid(
            "self-annotation experiment needs exactly two models: the small one first",
        ));
    }
    let pairs = read_parallel_tsv(&config.pairs).map_err(from_toy)?;
    if pairs.is_empty() {
        return Err(invalid(format!("{}: parallel corpus is empty", config.pairs.display())));
    }
    let small = ToyModel::load(&config.generators[0]).map_err(from_toy)?;
    let large = ToyModel::load(&config.generators[1]).map_err(from_toy)?;

    let out_small = generate_outputs(&small, &pairs, config)?;
    let out_large = generate_outputs(&large, &pairs, config)?;

    let rate_small_small =
        corpus_error_rate(&rejudged_labels(&out_small, &pairs, &small, &config.thresholds)?)?;
    let rate_large_large =
        corpus_error_rate(&rejudged_labels(&out_large, &pairs, &large, &config.thresholds)?)?;
    let rate_small_large =
        corpus_error_rate(&rejudged_labels(&out_small, &pairs, &large, &config.thresholds)?)?;

    let refs: Vec<Vec<String>> = pairs.iter().map(|(_, r)| r.clone()).collect();
    let bleu_small = bleu(&out_small, &refs).map_err(invalid)?;
    let bleu_large = bleu(&out_large, &refs).map_err(invalid)?;

    Ok(ExperimentReport {
        name: "self-annotation".into(),
        seed: config.seed,
        config: config.snapshot(),
        metrics: vec![
            ("error_rate_g_small_a_small".into(), fmt_metric(rate_small_small)),
            ("error_rate_g_large_a_large".into(), fmt_metric(rate_large_large)),
            ("error_rate_g_small_a_large".into(), fmt_metric(rate_small_large)),
            ("bleu_small_vs_ref".into(), fmt_metric(bleu_small)),
            ("bleu_large_vs_ref".into(), fmt_metric(bleu_large)),
        ],
    })
}

/// How different are the generators? Decodes every pair with each generator
/// and reports pairwise inter-generator BLEU, per-generator and union
/// distinct-translation counts, and per-generator vs pooled post-rejudge
/// error rates under the configured annotator.
pub fn run_diversity_experiment(config: &PipelineConfig) -> Result<ExperimentReport, PipelineError> {
    config.validate()?;
    if config.generators.len() < 2 {
        return Err(invalid("diversity experiment needs at least two generator models"));
    }
    let pairs = read_parallel_tsv(&config.pairs).map_err(from_toy)?;
    if pairs.is_empty() {
        return Err(invalid(format!("{}: parallel corpus is empty", config.pairs.display())));
    }
    let annotator = ToyModel::load(&config.annotator).map_err(from_toy)?;
    let models: Vec<ToyModel> = config
        .generators
        .iter()
        .map(|p| ToyModel::load(p).map_err(from_toy))
        .collect::<Result<_, _>>()?;

    let outputs: Vec<Vec<Vec<String>>> = models
        .iter()
        .map(|m| generate_outputs(m, &pairs, config))
        .collect::<Result<_, _>>()?;

    let mut metrics = Vec::new();
    for i in 0..outputs.len() {
        for j in i + 1..outputs.len() {
            let score = bleu(&outputs[i], &outputs[j]).map_err(invalid)?;
            metrics.push((format!("bleu_g{}_g{}", i + 1, j + 1), fmt_metric(score)));
        }
    }

    let mut union: BTreeSet<String> = BTreeSet::new();
    for (i, out) in outputs.iter().enumerate() {
        let distinct: BTreeSet<String> = out.iter().map(|mt| mt.join(" ")).collect();
        metrics.push((format!("distinct_g{}", i + 1), distinct.len().to_string()));
        union.extend(distinct);
    }
    metrics.push(("distinct_union".into(), union.len().to_string()));

    let mut pooled: Vec<Vec<Label>> = Vec::new();
    for (i, out) in outputs.iter().enumerate() {
        let labels = rejudged_labels(out, &pairs, &annotator, &config.thresholds)?;
        metrics.push((format!("error_rate_g{}", i + 1), fmt_metric(corpus_error_rate(&labels)?)));
        pooled.extend(labels);
    }
    metrics.push(("error_rate_union".into(), fmt_metric(corpus_error_rate(&pooled)?)));

    Ok(ExperimentReport {
        name: "diversity".into(),
        seed: config.seed,
        config: config.snapshot(),
        metrics,
    })
}

fn record_error_rate(record: &MqmRecord) -> f64 {
    if record.labels.is_empty() {
        0.0
    } else {
        100.0 * record.labels.iter().filter(|&&l| l == Label::Bad).count() as f64
            / record.labels.len() as f64
    }
}

fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut points: Vec<f64> = a.iter().chain(b).copied().collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let ecdf = |v: &[f64], x: f64| v.iter().filter(|&&t| t <= x).count() as f64 / v.len() as f64;
    points.iter().map(|&x| (ecdf(a, x) - ecdf(b, x)).abs()).fold(0.0, f64::max)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Select `k` records from a synthetic pool so their per-record error rates
/// match the empirical distribution of a target set (nearest unused record
/// per uniform target draw). Writes the selection as JSONL and reports means
/// and Kolmogorov-Smirnov distances before and after.
pub fn run_downsample_experiment(
    pool_path: &Path,
    target_path: &Path,
    k: usize,
    seed: u64,
    output: &Path,
) -> Result<ExperimentReport, PipelineError> {
    let pool = read_jsonl(pool_path).map_err(from_jsonl)?;
    let target = read_jsonl(target_path).map_err(from_jsonl)?;
    if pool.is_empty() {
        return Err(invalid(format!("{}: pool is empty", pool_path.display())));
    }
    if target.is_empty() {
        return Err(invalid(format!("{}: target is empty", target_path.display())));
    }
    let pool_rates: Vec<f64> = pool.iter().map(record_error_rate).collect();
    let target_rates: Vec<f64> = target.iter().map(record_error_rate).collect();

    let mut rng = stage_rng(seed, "downsample");
    let picks = downsample_match(&pool_rates, &target_rates, k, &mut rng).map_err(invalid)?;
    let selected: Vec<MqmRecord> = picks.iter().map(|&i| pool[i].clone()).collect();
    let selected_rates: Vec<f64> = picks.iter().map(|&i| pool_rates[i]).collect();
    write_jsonl(output, &selected).map_err(from_jsonl)?;

    Ok(ExperimentReport {
        name: "downsample".into(),
        seed,
        config: vec![
            ("pool".into(), pool_path.display().to_string()),
            ("target".into(), target_path.display().to_string()),
            ("output".into(), output.display().to_string()),
            ("k".into(), k.to_string()),
        ],
        metrics: vec![
            ("pool_size".into(), pool.len().to_string()),
            ("target_size".into(), target.len().to_string()),
            ("selected".into(), selected.len().to_string()),
            ("mean_rate_pool".into(), fmt_metric(mean(&pool_rates))),
            ("mean_rate_target".into(), fmt_metric(mean(&target_rates))),
            ("mean_rate_selected".into(), fmt_metric(mean(&selected_rates))),
            ("ks_pool_target".into(), fmt_metric(ks_distance(&pool_rates, &target_rates))),
            (
                "ks_selected_target".into(),
                fmt_metric(ks_distance(&selected_rates, &target_rates)),
            ),
        ],
    })
}

/// Record-level comparison of a system's records against gold records with
/// identical sources and token counts: correlations over sentence scores
/// (`NA` when degenerate), MCC and BAD-F1 over flattened word labels,
/// severity-weighted span F1, and both corpora's error rates.
pub fn evaluate_records(
    pred: &[MqmRecord],
    gold: &[MqmRecord],
) -> Result<Vec<(String, String)>, PipelineError> {
    if pred.len() != gold.len() {
        return Err(invalid(format!(
            "record count mismatch: {} predicted vs {} gold",
            pred.len(),
            gold.len()
        )));
    }
    if pred.is_empty() {
        return Err(invalid("no records to evaluate"));
    }
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.labels.len() != g.labels.len() {
            return Err(invalid(format!(
                "record {i}: token count mismatch ({} predicted vs {} gold)",
                p.labels.len(),
                g.labels.len()
            )));
        }
    }

    let pred_scores: Vec<f64> = pred.iter().map(|r| r.score).collect();
    let gold_scores: Vec<f64> = gold.iter().map(|r| r.score).collect();
    let correlation = |f: fn(&[f64], &[f64]) -> Result<f64, MetricsError>| {
        match f(&pred_scores, &gold_scores) {
            Result::Ok(v) => Result::<_, PipelineError>::Ok(fmt_metric(v)),
            Err(MetricsError::ZeroVariance) | Err(MetricsError::TooShort { .. }) => {
                Result::Ok("NA".into())
            }
            Err(other) => Err(invalid(other)),
        }
    };
    let pearson_text = correlation(pearson)?;
    let spearman_text = correlation(spearman)?;

    let pred_labels: Vec<Label> = pred.iter().flat_map(|r| r.labels.iter().copied()).collect();
    let gold_labels: Vec<Label> = gold.iter().flat_map(|r| r.labels.iter().copied()).collect();
    let mcc_value = mcc(&pred_labels, &gold_labels).map_err(invalid)?;
    let f1_bad = f1_binary(&pred_labels, &gold_labels, Label::Bad).map_err(invalid)?;

    let pred_spans: Vec<_> = pred.iter().map(|r| r.spans.clone()).collect();
    let gold_spans: Vec<_> = gold.iter().map(|r| r.spans.clone()).collect();
    let span = span_weighted_f1(&pred_spans, &gold_spans).map_err(invalid)?;

    let rate = |records: &[MqmRecord]| -> Result<String, PipelineError> {
        match crate::metrics::error_rate(records) {
            Result::Ok(v) => Result::Ok(fmt_metric(v)),
            Err(MetricsError::ZeroTokens) => Result::Ok("NA".into()),
            Err(other) => Err(invalid(other)),
        }
    };

    Ok(vec![
        ("pearson".into(), pearson_text),
        ("spearman".into(), spearman_text),
        ("mcc".into(), fmt_metric(mcc_value)),
        ("f1_bad".into(), fmt_metric(f1_bad)),
        ("span_f1".into(), fmt_metric(span.weighted_f1)),
        ("span_prec".into(), fmt_metric(span.precision)),
        ("span_recall".into(), fmt_metric(span.recall)),
        ("error_rate_pred".into(), rate(pred)?),
        ("error_rate_gold".into(), rate(gold)?),
    ])
}

/// Build calibration items from annotated records: each record must carry
/// `probs` and `coarse_labels`; gold spans are the record's own spans. Trees,
/// when given, must match record count and per-record token count; without
/// them each record gets a left-to-right chain tree, under which phrase
/// expansion keeps label runs as they are. Records with no tokens are
/// skipped.
pub fn calibration_items_from_records(
    records: &[MqmRecord],
    trees: Option<&[DepTree]>,
) -> Result<Vec<CalibrationItem>, PipelineError> {
    if let Some(trees) = trees {
        if trees.len() != records.len() {
            return Err(invalid(format!(
                "expected {} trees (one per record), found {}",
                records.len(),
                trees.len()
            )));
        }
    }
    let mut items = Vec::new();
    for (i, record) in records.iter().enumerate() {
        let n = record.labels.len();
        if n == 0 {
            continue;
        }
        let probs = record
            .probs
            .clone()
            .ok_or_else(|| invalid(format!("record {i}: missing probs")))?;
        let coarse = record
            .coarse_labels
            .clone()
            .ok_or_else(|| invalid(format!("record {i}: missing coarse_labels")))?;
        let tree = match trees {
            Some(trees) => trees[i].clone(),
            None => chain_tree(n),
        };
        if tree.len() != n {
            return Err(invalid(format!(
                "record {i}: tree has {} nodes but the translation has {n} tokens",
                tree.len()
            )));
        }
        items.push(CalibrationItem { probs, coarse, tree, gold_spans: record.spans.clone() });
    }
    if items.is_empty() {
        return Err(invalid("no usable calibration records (all empty or none given)"));
    }
    Ok(items)
}

fn chain_tree(n: usize) -> DepTree {
    let heads = (0..n).map(|i| if i == 0 { None } else { Some(i - 1) }).collect();
    DepTree::new(heads).expect("chain heads are a valid tree")
}
