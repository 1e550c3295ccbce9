//! Command-line front end: train toy models, run pipeline stages standalone
//! on JSONL files, run the full synthesis pipeline, calibrate thresholds,
//! evaluate record files, and drive the analysis experiments.
//!
//! Exit codes: 0 on success, 1 on validation errors (bad flags, bad config,
//! bad data), 2 on I/O failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use qesynth::annotate::{calibrate_thresholds, rejudge, Thresholds};
use qesynth::decode::{
    constrained_beam_search, forced_decode_probs, read_parallel_tsv, train_toy_model,
    ScoringModel, ToyModel,
};
use qesynth::mqm::{
    mqm_score, read_jsonl, round6, spans_from_severities, word_labels_from_spans, write_jsonl,
    MqmRecord, Severity,
};
use qesynth::pipeline::{
    calibration_items_from_records, evaluate_records, run_diversity_experiment, run_pipeline,
    run_downsample_experiment, run_self_annotation_experiment, ExperimentReport, PipelineConfig,
    PipelineError,
};
use qesynth::spce::{aggregate_spans, parse_conllu, spce_trace, DepTree, Interval};
use qesynth::ter::{coarse_labels, ter_align, Alignment, EditKind};

#[derive(Parser)]
#[command(name = "qesynth", version, about = "Synthetic MQM training data for MT quality estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a toy translation model on parallel TSV and save it
    TrainToy(TrainToyArgs),
    /// Decode pseudo-translations for a parallel corpus with one model
    Generate(GenerateArgs),
    /// Label records: edit-rate alignment, probability rejudging, spans
    Annotate(AnnotateArgs),
    /// Re-expand record spans with dependency trees
    Spce(SpceArgs),
    /// Run the full synthesis pipeline
    Pipeline(PipelineArgs),
    /// Fit severity thresholds on annotated validation records
    Calibrate(CalibrateArgs),
    /// Compare predicted records against gold records
    Evaluate(EvaluateArgs),
    /// Analysis experiments
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Error rates when models annotate their own output vs another's
    SelfAnnotation(ExperimentArgs),
    /// Inter-generator BLEU, distinct outputs, and pooled error rates
    Diversity(ExperimentArgs),
    /// Error-rate-matched downsampling of a record pool
    Downsample(DownsampleArgs),
}

#[derive(Args)]
struct TrainToyArgs {
    /// Parallel corpus, one "source<TAB>target" pair per line
    #[arg(long)]
    pairs: PathBuf,
    /// Where to write the model file
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 5)]
    em_iterations: usize,
    /// Mixture weight of the lexical table against the bigram model
    #[arg(long, default_value_t = 0.7)]
    lambda: f64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Generator model file
    #[arg(long)]
    model: PathBuf,
    /// Output JSONL
    #[arg(long)]
    output: PathBuf,
    /// Forcing threshold: reference tokens with probability above this are
    /// emitted verbatim; -1 copies the reference, 2 decodes freely
    #[arg(long, allow_hyphen_values = true)]
    cbs_tau: f64,
    #[arg(long, default_value_t = 4)]
    beam_size: usize,
    /// Token cap per decode; 0 means 2 * reference length + 5
    #[arg(long, default_value_t = 0)]
    max_len: usize,
}

#[derive(Args)]
struct AnnotateArgs {
    /// Input JSONL (needs mt and ref on every record)
    #[arg(long)]
    input: PathBuf,
    /// Annotator model file
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Thresholds file: three floats (critical, major, minor)
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long)]
    t_critical: Option<f64>,
    #[arg(long)]
    t_major: Option<f64>,
    #[arg(long)]
    t_minor: Option<f64>,
    /// Dependency trees (CoNLL-U), one per record, for span expansion
    #[arg(long)]
    trees: Option<PathBuf>,
    /// Print every edit operation to standard error
    #[arg(long)]
    ter_trace: bool,
}

#[derive(Args)]
struct SpceArgs {
    #[arg(long)]
    input: PathBuf,
    /// Dependency trees (CoNLL-U), one per record
    #[arg(long)]
    trees: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Print each expansion's growing node sets to standard error
    #[arg(long)]
    spce_trace: bool,
}

#[derive(Args, Clone, Default)]
struct PipelineArgs {
    /// Flat "key = value" config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    trees: Option<PathBuf>,
    /// Generator model file (repeat for several)
    #[arg(long = "generator")]
    generators: Vec<PathBuf>,
    #[arg(long)]
    annotator: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long)]
    t_critical: Option<f64>,
    #[arg(long)]
    t_major: Option<f64>,
    #[arg(long)]
    t_minor: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    cbs_tau: Option<f64>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Allow generation pairs the annotator was not trained on
    #[arg(long)]
    amateur: bool,
    /// Allow the annotator to also appear among the generators
    #[arg(long)]
    allow_self_annotation: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Also write the report text to this file
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DownsampleArgs {
    /// Pool of records to select from (JSONL)
    #[arg(long)]
    pool: PathBuf,
    /// Records whose error-rate distribution to match (JSONL)
    #[arg(long)]
    target: PathBuf,
    /// How many records to select
    #[arg(long)]
    k: usize,
    /// Where to write the selected records (JSONL)
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report text to this file
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Annotated validation records (need probs, coarse_labels, gold spans)
    #[arg(long)]
    input: PathBuf,
    /// Dependency trees (CoNLL-U), one per record
    #[arg(long)]
    trees: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    grid_step: f64,
    /// Also write the fitted thresholds as a three-line file
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted records (JSONL)
    #[arg(long)]
    pred: PathBuf,
    /// Gold records (JSONL)
    #[arg(long)]
    gold: PathBuf,
    /// Also write the metric table as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::TrainToy(args) => cmd_train_toy(&args),
        Command::Generate(args) => cmd_generate(&args),
        Command::Annotate(args) => cmd_annotate(&args),
        Command::Spce(args) => cmd_spce(&args),
        Command::Pipeline(args) => cmd_pipeline(&args),
        Command::Calibrate(args) => cmd_calibrate(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Experiment(cmd) => match cmd {
            ExperimentCommand::SelfAnnotation(args) => {
                let config = resolve_config(&args.pipeline, Requirements::self_annotation())?;
                let report = run_self_annotation_experiment(&config)?;
                emit_report(&report, args.report.as_deref())
            }
            ExperimentCommand::Diversity(args) => {
                let config = resolve_config(&args.pipeline, Requirements::diversity())?;
                let report = run_diversity_experiment(&config)?;
                emit_report(&report, args.report.as_deref())
            }
            ExperimentCommand::Downsample(args) => {
                let report = run_downsample_experiment(
                    &args.pool,
                    &args.target,
                    args.k,
                    args.seed,
                    &args.output,
                )?;
                emit_report(&report, args.report.as_deref())
            }
        },
    }
}

fn invalid(message: impl std::fmt::Display) -> PipelineError {
    PipelineError::Invalid(message.to_string())
}

fn io_error(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), source }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn emit_report(report: &ExperimentReport, path: Option<&Path>) -> Result<(), PipelineError> {
    let text = report.to_text();
    print!("{text}");
    if let Some(path) = path {
        write_text(path, &text)?;
    }
    Ok(())
}

/// Which config fields a subcommand insists on beyond pairs + generators +
/// thresholds + cbs-tau.
struct Requirements {
    annotator: bool,
    output: bool,
    min_generators: usize,
}

impl Requirements {
    fn pipeline() -> Requirements {
        Requirements { annotator: true, output: true, min_generators: 1 }
    }
    fn self_annotation() -> Requirements {
        Requirements { annotator: false, output: false, min_generators: 2 }
    }
    fn diversity() -> Requirements {
        Requirements { annotator: true, output: false, min_generators: 2 }
    }
}

/// Merge flags over an optional flat "key = value" config file and fill in
/// defaults. Blank lines and lines starting with '#' are skipped; keys use
/// the flag spellings (kebab-case); `generator` may repeat.
fn resolve_config(
    args: &PipelineArgs,
    requirements: Requirements,
) -> Result<PipelineConfig, PipelineError> {
    let mut file = FileConfig::default();
    if let Some(path) = &args.config {
        file = FileConfig::parse(path)?;
    }

    let pairs = args
        .pairs
        .clone()
        .or_else(|| file.path("pairs"))
        .ok_or_else(|| invalid("pairs is required (flag --pairs or config key pairs)"))?;
    let trees = args.trees.clone().or_else(|| file.path("trees"));
    let generators = if args.generators.is_empty() {
        file.generators.clone()
    } else {
        args.generators.clone()
    };
    if generators.len() < requirements.min_generators {
        return Err(invalid(format!(
            "at least {} generator model(s) required, got {}",
            requirements.min_generators,
            generators.len()
        )));
    }
    let annotator = match args.annotator.clone().or_else(|| file.path("annotator")) {
        Some(path) => path,
        None if requirements.annotator => {
            return Err(invalid("annotator is required (flag --annotator or config key annotator)"))
        }
        // unused by the subcommand; point it at the first generator
        None => generators[0].clone(),
    };
    let output = match args.output.clone().or_else(|| file.path("output")) {
        Some(path) => path,
        None if requirements.output => {
            return Err(invalid("output is required (flag --output or config key output)"))
        }
        None => PathBuf::from("-"),
    };

    let t_critical = merge_num(args.t_critical, &file, "t-critical")?;
    let t_major = merge_num(args.t_major, &file, "t-major")?;
    let t_minor = merge_num(args.t_minor, &file, "t-minor")?;
    let thresholds_path = args.thresholds.clone().or_else(|| file.path("thresholds"));
    let thresholds = resolve_thresholds(t_critical, t_major, t_minor, thresholds_path.as_deref())?;

    let cbs_tau = merge_num(args.cbs_tau, &file, "cbs-tau")?
        .ok_or_else(|| invalid("cbs-tau is required (flag --cbs-tau or config key cbs-tau)"))?;
    let beam_size = merge_num(args.beam_size, &file, "beam-size")?.unwrap_or(4);
    let max_len = merge_num(args.max_len, &file, "max-len")?.unwrap_or(0);
    let grid_step = merge_num(args.grid_step, &file, "grid-step")?.unwrap_or(0.05);
    let seed = merge_num(args.seed, &file, "seed")?.unwrap_or(0);
    let amateur = args.amateur || file.flag("amateur")?;
    let allow_self_annotation = args.allow_self_annotation || file.flag("allow-self-annotation")?;

    Ok(PipelineConfig {
        pairs,
        trees,
        generators,
        annotator,
        output,
        thresholds,
        cbs_tau,
        beam_size,
        max_len,
        grid_step,
        seed,
        amateur,
        allow_self_annotation,
    })
}

fn resolve_thresholds(
    t_critical: Option<f64>,
    t_major: Option<f64>,
    t_minor: Option<f64>,
    path: Option<&Path>,
) -> Result<Thresholds, PipelineError> {
    let inline = [t_critical, t_major, t_minor];
    if inline.iter().any(Option::is_some) {
        if inline.iter().any(Option::is_none) {
            return Err(invalid(
                "give all three of --t-critical, --t-major, --t-minor (or none and a thresholds file)",
            ));
        }
        return Thresholds::new(t_critical.unwrap(), t_major.unwrap(), t_minor.unwrap())
            .map_err(invalid);
    }
    match path {
        Some(path) => Thresholds::parse(&read_text(path)?)
            .map_err(|e| invalid(format!("{}: {e}", path.display()))),
        None => Err(invalid(
            "thresholds are required (--thresholds file, or --t-critical/--t-major/--t-minor)",
        )),
    }
}

#[derive(Default)]
struct FileConfig {
    source: String,
    entries: Vec<(String, String)>,
    generators: Vec<PathBuf>,
}

const CONFIG_KEYS: [&str; 15] = [
    "pairs",
    "trees",
    "generator",
    "annotator",
    "output",
    "thresholds",
    "t-critical",
    "t-major",
    "t-minor",
    "cbs-tau",
    "beam-size",
    "max-len",
    "grid-step",
    "seed",
    "amateur",
];

impl FileConfig {
    fn parse(path: &Path) -> Result<FileConfig, PipelineError> {
        let text = read_text(path)?;
        let mut config = FileConfig {
            source: path.display().to_string(),
            ..FileConfig::default()
        };
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                invalid(format!("{}:{}: expected key = value", config.source, idx + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !CONFIG_KEYS.contains(&key) && key != "allow-self-annotation" {
                return Err(invalid(format!(
                    "{}:{}: unknown config key {key:?}",
                    config.source,
                    idx + 1
                )));
            }
            if key == "generator" {
                config.generators.push(PathBuf::from(value));
            } else {
                config.entries.push((key.to_string(), value.to_string()));
            }
        }
        Ok(config)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    fn flag(&self, key: &str) -> Result<bool, PipelineError> {
        match self.get(key) {
            None => Ok(false),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(other) => Err(invalid(format!(
                "{}: key {key} must be true or false, got {other:?}",
                self.source
            ))),
        }
    }
}

fn merge_num<T: std::str::FromStr>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
) -> Result<Option<T>, PipelineError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file.get(key) {
        None => Ok(None),
        Some(text) => text.parse::<T>().map(Some).map_err(|_| {
            invalid(format!("{}: invalid value for {key}: {text:?}", file.source))
        }),
    }
}

fn cmd_train_toy(args: &TrainToyArgs) -> Result<(), PipelineError> {
    let corpus = read_parallel_tsv(&args.pairs)?;
    let model = train_toy_model(&corpus, args.em_iterations, args.lambda)?;
    model.save(&args.output)?;
    println!("pairs={}", corpus.len());
    println!("vocabulary={}", model.vocabulary().len());
    println!("model={}", args.output.display());
    Ok(())
}

fn mt_tokens_owned(record: &MqmRecord) -> Vec<String> {
    record.mt.split_whitespace().map(str::to_string).collect()
}

fn ref_tokens_owned(record: &MqmRecord, index: usize) -> Result<Vec<String>, PipelineError> {
    let reference = record
        .reference
        .as_ref()
        .ok_or_else(|| invalid(format!("record {index}: missing ref")))?;
    Ok(reference.split_whitespace().map(str::to_string).collect())
}

fn record_score(spans: &[qesynth::mqm::ErrorSpan], n: usize) -> Result<f64, PipelineError> {
    if n == 0 {
        Ok(1.0)
    } else {
        Ok(round6(mqm_score(spans, n).map_err(invalid)?))
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), PipelineError> {
    let pairs = read_parallel_tsv(&args.pairs)?;
    if pairs.is_empty() {
        return Err(invalid(format!("{}: parallel corpus is empty", args.pairs.display())));
    }
    let model = ToyModel::load(&args.model)?;
    let tag = args.model.display().to_string();
    let mut records = Vec::with_capacity(pairs.len());
    let mut truncated = 0usize;
    for (i, (src, reference)) in pairs.iter().enumerate() {
        let max_len = if args.max_len == 0 { 2 * reference.len() + 5 } else { args.max_len };
        let out = constrained_beam_search(
            &model,
            src,
            reference,
            args.cbs_tau,
            args.beam_size,
            max_len,
        )
        .map_err(|e| invalid(format!("pair {i}: {e}")))?;
        if !out.completed {
            truncated += 1;
        }
        let n = out.tokens.len();
        records.push(MqmRecord {
            src: src.join(" "),
            mt: out.tokens.join(" "),
            reference: Some(reference.join(" ")),
            spans: Vec::new(),
            labels: word_labels_from_spans(&[], n).map_err(invalid)?,
            score: 1.0,
            coarse_labels: None,
            probs: None,
            provenance: Some(out.provenance),
            generator: Some(tag.clone()),
        });
    }
    write_jsonl(&args.output, &records)?;
    println!("records={}", records.len());
    println!("truncated={truncated}");
    Ok(())
}

fn trace_alignment(alignment: &Alignment, mt: &[String], reference: &[String]) {
    for op in &alignment.ops {
        let kind = match op.kind {
            EditKind::Match => "MATCH",
            EditKind::Sub => "SUB",
            EditKind::Ins => "INS",
            EditKind::Del => "DEL",
            EditKind::Shift => "SHIFT",
        };
        let hyp = op.hyp_index.map_or("-", |i| mt[i].as_str());
        let reference = op.ref_index.map_or("-", |i| reference[i].as_str());
        eprintln!("{kind}\t{hyp}\t{reference}");
    }
}

fn load_trees_for(
    path: &Path,
    records: &[MqmRecord],
) -> Result<Vec<DepTree>, PipelineError> {
    let trees = parse_conllu(&read_text(path)?)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if trees.len() != records.len() {
        return Err(invalid(format!(
            "{}: expected {} trees (one per record), found {}",
            path.display(),
            records.len(),
            trees.len()
        )));
    }
    Ok(trees)
}

fn cmd_annotate(args: &AnnotateArgs) -> Result<(), PipelineError> {
    let thresholds = resolve_thresholds(
        args.t_critical,
        args.t_major,
        args.t_minor,
        args.thresholds.as_deref(),
    )?;
    let mut records = read_jsonl(&args.input)?;
    let model = ToyModel::load(&args.model)?;
    let trees = match &args.trees {
        Some(path) => Some(load_trees_for(path, &records)?),
        None => None,
    };

    let mut oov_tokens = 0usize;
    for (i, record) in records.iter_mut().enumerate() {
        let mt = mt_tokens_owned(record);
        let reference = ref_tokens_owned(record, i)?;
        let src: Vec<String> = record.src.split_whitespace().map(str::to_string).collect();

        let alignment = ter_align(&mt, &reference);
        if args.ter_trace {
            trace_alignment(&alignment, &mt, &reference);
        }
        let coarse = coarse_labels(&alignment, mt.len())
            .map_err(|e| invalid(format!("record {i}: {e}")))?;
        let forced = forced_decode_probs(&model, &src, &mt);
        oov_tokens += forced.oov.len();
        let judged = rejudge(&coarse, &forced.probs, &thresholds)
            .map_err(|e| invalid(format!("record {i}: {e}")))?;
        let spans = if mt.is_empty() {
            Vec::new()
        } else {
            match &trees {
                Some(trees) => aggregate_spans(&trees[i], &judged.severities)
                    .map_err(|e| invalid(format!("record {i}: {e}")))?,
                None => spans_from_severities(&judged.severities),
            }
        };
        record.labels =
            word_labels_from_spans(&spans, mt.len()).map_err(|e| invalid(format!("record {i}: {e}")))?;
        record.score = record_score(&spans, mt.len())?;
        record.spans = spans;
        record.coarse_labels = Some(coarse);
        record.probs = Some(forced.probs);
    }
    write_jsonl(&args.output, &records)?;
    println!("records={}", records.len());
    println!("oov_tokens={oov_tokens}");
    Ok(())
}

fn cmd_spce(args: &SpceArgs) -> Result<(), PipelineError> {
    let mut records = read_jsonl(&args.input)?;
    let trees = load_trees_for(&args.trees, &records)?;

    for (i, record) in records.iter_mut().enumerate() {
        let n = record.labels.len();
        if n == 0 {
            continue;
        }
        if trees[i].len() != n {
            return Err(invalid(format!(
                "record {i}: tree has {} nodes but the translation has {n} tokens",
                trees[i].len()
            )));
        }
        let mut severities = vec![Severity::Ok; n];
        for span in &record.spans {
            severities[span.start..=span.end].fill(span.severity);
        }
        if args.spce_trace {
            let mut start = 0;
            while start < n {
                if severities[start] == Severity::Ok {
                    start += 1;
                    continue;
                }
                let mut end = start;
                while end + 1 < n && severities[end + 1] != Severity::Ok {
                    end += 1;
                }
                let (_, growth) = spce_trace(&trees[i], Interval { l: start, r: end })
                    .map_err(|e| invalid(format!("record {i}: {e}")))?;
                for set in growth {
                    let joined: Vec<String> = set.iter().map(usize::to_string).collect();
                    eprintln!("record\t{i}\tset\t{}", joined.join(" "));
                }
                start = end + 1;
            }
        }
        let spans = aggregate_spans(&trees[i], &severities)
            .map_err(|e| invalid(format!("record {i}: {e}")))?;
        record.labels =
            word_labels_from_spans(&spans, n).map_err(|e| invalid(format!("record {i}: {e}")))?;
        record.score = record_score(&spans, n)?;
        record.spans = spans;
    }
    write_jsonl(&args.output, &records)?;
    println!("records={}", records.len());
    Ok(())
}

fn cmd_pipeline(args: &PipelineArgs) -> Result<(), PipelineError> {
    let config = resolve_config(args, Requirements::pipeline())?;
    let summary = run_pipeline(&config)?;
    for line in summary.lines() {
        println!("{line}");
    }
    Ok(())
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<(), PipelineError> {
    let records = read_jsonl(&args.input)?;
    let trees = match &args.trees {
        Some(path) => Some(load_trees_for(path, &records)?),
        None => None,
    };
    let items = calibration_items_from_records(&records, trees.as_deref())?;
    let thresholds = calibrate_thresholds(&items, args.grid_step).map_err(invalid)?;
    let text = format!(
        "{}\n{}\n{}\n",
        thresholds.t_critical, thresholds.t_major, thresholds.t_minor
    );
    println!("t_critical={}", thresholds.t_critical);
    println!("t_major={}", thresholds.t_major);
    println!("t_minor={}", thresholds.t_minor);
    if let Some(path) = &args.output {
        write_text(path, &text)?;
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), PipelineError> {
    let pred = read_jsonl(&args.pred)?;
    let gold = read_jsonl(&args.gold)?;
    let table = evaluate_records(&pred, &gold)?;
    for (key, value) in &table {
        println!("{key}={value}");
    }
    if let Some(path) = &args.csv {
        let mut text = String::from("metric,value\n");
        for (key, value) in &table {
            text.push_str(&format!("{key},{value}\n"));
        }
        write_text(path, &text)?;
    }
    Ok(())
}
