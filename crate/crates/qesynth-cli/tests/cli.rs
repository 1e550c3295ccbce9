use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qesynth"))
        .args(args)
        .output()
        .expect("spawn qesynth")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstderr: {}",
        out.status.code(),
        stderr_of(out)
    );
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", stderr_of(out));
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).expect("write fixture");
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).expect("read output")
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> String {
    path.display().to_string()
}

const CORPUS: &str = "a b\tx y\na c\tx z\nb c\ty z\na b c\tx y z\n";
const PAIRS: &str = "a b\tx y\na c\tx z\nb c\ty z\n";

/// One chain tree per sentence: the first token is the root, every other
/// token attaches to its left neighbor.
fn chain_conllu(lens: &[usize]) -> String {
    let mut text = String::new();
    for &n in lens {
        for i in 1..=n {
            let head = i - 1;
            text.push_str(&format!("{i}\tw{i}\t_\t_\t_\t_\t{head}\t_\t_\t_\n"));
        }
        text.push('\n');
    }
    text
}

/// Train generator + annotator models on the shared corpus and return their
/// paths. Distinct files so the annotator is not one of the generators.
fn train_models(dir: &TempDir) -> (PathBuf, PathBuf) {
    let corpus = p(dir, "corpus.tsv");
    write(&corpus, CORPUS);
    let gen = p(dir, "gen.json");
    let ann = p(dir, "ann.json");
    for model in [&gen, &ann] {
        let out = run(&["train-toy", "--pairs", &s(&corpus), "--output", &s(model)]);
        assert_ok(&out);
        assert!(stdout_of(&out).contains("pairs=4"));
    }
    (gen, ann)
}

#[test]
fn help_and_version_exit_zero() {
    assert_code(&run(&["--help"]), 0);
    assert_code(&run(&["--version"]), 0);
    assert_code(&run(&["pipeline", "--help"]), 0);
}

#[test]
fn bad_usage_exits_one() {
    assert_code(&run(&["pipeline", "--bogus"]), 1);
    assert_code(&run(&["no-such-command"]), 1);
}

#[test]
fn missing_input_exits_two() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "train-toy",
        "--pairs",
        &s(&p(&dir, "missing.tsv")),
        "--output",
        &s(&p(&dir, "m.json")),
    ]);
    assert_code(&out, 2);
    assert!(stderr_of(&out).contains("error:"));
}

#[test]
fn stage_composition_matches_pipeline() {
    let dir = TempDir::new().unwrap();
    let (gen, ann) = train_models(&dir);
    let pairs = p(&dir, "pairs.tsv");
    write(&pairs, PAIRS);
    let trees = p(&dir, "trees.conllu");
    write(&trees, &chain_conllu(&[2, 2, 2]));

    let gen_out = p(&dir, "gen.jsonl");
    let out = run(&[
        "generate",
        "--pairs",
        &s(&pairs),
        "--model",
        &s(&gen),
        "--output",
        &s(&gen_out),
        "--cbs-tau=-1",
    ]);
    assert_ok(&out);
    assert!(stdout_of(&out).contains("records=3"));
    assert!(stdout_of(&out).contains("truncated=0"));

    let ann_out = p(&dir, "ann.jsonl");
    let out = run(&[
        "annotate",
        "--input",
        &s(&gen_out),
        "--model",
        &s(&ann),
        "--output",
        &s(&ann_out),
        "--t-critical",
        "0.1",
        "--t-major",
        "0.2",
        "--t-minor",
        "0.3",
        "--ter-trace",
    ]);
    assert_ok(&out);
    // tau = -1 copies the reference, so every aligned token is a match
    assert!(stderr_of(&out).contains("MATCH\tx\tx"));
    assert!(!stderr_of(&out).contains("SUB"));

    let spce_out = p(&dir, "spce.jsonl");
    let out = run(&[
        "spce",
        "--input",
        &s(&ann_out),
        "--trees",
        &s(&trees),
        "--output",
        &s(&spce_out),
    ]);
    assert_ok(&out);

    let pipe_out = p(&dir, "pipe.jsonl");
    let out = run(&[
        "pipeline",
        "--pairs",
        &s(&pairs),
        "--trees",
        &s(&trees),
        "--generator",
        &s(&gen),
        "--annotator",
        &s(&ann),
        "--output",
        &s(&pipe_out),
        "--cbs-tau=-1",
        "--t-critical",
        "0.1",
        "--t-major",
        "0.2",
        "--t-minor",
        "0.3",
    ]);
    assert_ok(&out);
    let summary = stdout_of(&out);
    assert!(summary.contains("records=3"));
    assert!(summary.contains("unsupervised_pairs=0"));
    assert!(summary.contains("time_generate_ms="));

    assert_eq!(read(&spce_out), read(&pipe_out));
}

#[test]
fn config_file_merges_under_flags() {
    let dir = TempDir::new().unwrap();
    let (gen, ann) = train_models(&dir);
    let pairs = p(&dir, "pairs.tsv");
    write(&pairs, PAIRS);
    let thresholds = p(&dir, "th.txt");
    write(&thresholds, "0.1\n0.2\n0.3\n");
    let file_out = p(&dir, "from-file.jsonl");
    let config = p(&dir, "run.cfg");
    write(
        &config,
        &format!(
            "# synthesis run\n\npairs = {}\ngenerator = {}\nannotator = {}\n\
             output = {}\nthresholds = {}\ncbs-tau = -1\nseed = 7\n",
            s(&pairs),
            s(&gen),
            s(&ann),
            s(&file_out),
            s(&thresholds),
        ),
    );

    let flag_out = p(&dir, "from-flag.jsonl");
    let out = run(&["pipeline", "--config", &s(&config), "--output", &s(&flag_out)]);
    assert_ok(&out);
    assert!(flag_out.exists(), "flag must override the config file");
    assert!(!file_out.exists());

    let first = read(&flag_out);
    let out = run(&["pipeline", "--config", &s(&config), "--output", &s(&flag_out)]);
    assert_ok(&out);
    assert_eq!(first, read(&flag_out), "reruns must be byte-identical");

    let out = run(&["pipeline", "--config", &s(&config)]);
    assert_ok(&out);
    assert_eq!(first, read(&file_out), "flag and file runs must agree");
}

#[test]
fn config_file_rejects_unknown_keys() {
    let dir = TempDir::new().unwrap();
    let config = p(&dir, "bad.cfg");
    write(&config, "bogus = 1\n");
    let out = run(&["pipeline", "--config", &s(&config)]);
    assert_code(&out, 1);
    assert!(stderr_of(&out).contains("unknown config key"));

    write(&config, "no equals sign here\n");
    let out = run(&["pipeline", "--config", &s(&config)]);
    assert_code(&out, 1);
    assert!(stderr_of(&out).contains("expected key = value"));
}

#[test]
fn threshold_flags_must_be_complete_and_ordered() {
    let dir = TempDir::new().unwrap();
    let (gen, ann) = train_models(&dir);
    let pairs = p(&dir, "pairs.tsv");
    write(&pairs, PAIRS);
    let gen_out = p(&dir, "gen.jsonl");
    assert_ok(&run(&[
        "generate",
        "--pairs",
        &s(&pairs),
        "--model",
        &s(&gen),
        "--output",
        &s(&gen_out),
        "--cbs-tau=-1",
    ]));

    let ann_out = p(&dir, "ann.jsonl");
    let base = [
        "annotate",
        "--input",
        &s(&gen_out),
        "--model",
        &s(&ann),
        "--output",
        &s(&ann_out),
    ]
    .map(str::to_string);

    let mut partial = base.to_vec();
    partial.extend(["--t-critical".into(), "0.1".into()]);
    let refs: Vec<&str> = partial.iter().map(String::as_str).collect();
    let out = run(&refs);
    assert_code(&out, 1);
    assert!(stderr_of(&out).contains("all three"));

    let mut inverted = base.to_vec();
    inverted.extend([
        "--t-critical".into(),
        "0.9".into(),
        "--t-major".into(),
        "0.5".into(),
        "--t-minor".into(),
        "0.2".into(),
    ]);
    let refs: Vec<&str> = inverted.iter().map(String::as_str).collect();
    assert_code(&run(&refs), 1);

    let refs: Vec<&str> = base.iter().map(String::as_str).collect();
    let out = run(&refs);
    assert_code(&out, 1);
    assert!(stderr_of(&out).contains("thresholds"));
}

#[test]
fn pipeline_requires_cbs_tau() {
    let dir = TempDir::new().unwrap();
    let (gen, ann) = train_models(&dir);
    let pairs = p(&dir, "pairs.tsv");
    write(&pairs, PAIRS);
    let out = run(&[
        "pipeline",
        "--pairs",
        &s(&pairs),
        "--generator",
        &s(&gen),
        "--annotator",
        &s(&ann),
        "--output",
        &s(&p(&dir, "out.jsonl")),
        "--t-critical",
        "0.1",
        "--t-major",
        "0.2",
        "--t-minor",
        "0.3",
    ]);
    assert_code(&out, 1);
    assert!(stderr_of(&out).contains("cbs-tau"));
}

/// Free greedy decoding with a hard length cap: outputs are longer than the
/// references, so alignment always finds edits and records carry mixed
/// labels. Returns the annotated JSONL path.
fn noisy_annotated(dir: &TempDir, gen: &Path, ann: &Path) -> PathBuf {
    let pairs = p(dir, "pairs.tsv");
    write(&pairs, PAIRS);
    let gen_out = p(dir, "noisy-gen.jsonl");
    let out = run(&[
        "generate",
        "--pairs",
        &s(&pairs),
        "--model",
        &s(gen),
        "--output",
        &s(&gen_out),
        "--cbs-tau",
        "2",
        "--beam-size",
        "1",
        "--max-len",
        "3",
    ]);
    assert_ok(&out);
    assert!(stdout_of(&out).contains("truncated=3"));

    let ann_out = p(dir, "noisy-ann.jsonl");
    assert_ok(&run(&[
        "annotate",
        "--input",
        &s(&gen_out),
        "--model",
        &s(ann),
        "--output",
        &s(&ann_out),
        "--t-critical",
        "0.1",
        "--t-major",
        "0.2",
        "--t-minor",
        "0.3",
    ]));
    ann_out
}

#[test]
fn calibrate_fits_thresholds_that_annotate_accepts() {
    let dir = TempDir::new().unwrap();
    let (gen, ann) = train_models(&dir);
    let ann_out = noisy_annotated(&dir, &gen, &ann);

    let fitted = p(&dir, "fitted.txt");
    let out = run(&[
        "calibrate",
        "--input",
        &s(&ann_out),
        "--grid-step",
        "0.25",
        "--output",
        &s(&fitted),
    ]);
    assert_ok(&out);
    let text = stdout_of(&out);
    assert!(text.contains("t_critical="));
    assert!(text.contains("t_major="));
    assert!(text.contains("t_minor="));

    let reann = p(&dir, "reann.jsonl");
    assert_ok(&run(&[
        "annotate",
        "--input",
        &s(&ann_out),
        "--model",
        &s(&ann),
        "--output",
        &s(&reann),
        "--thresholds",
        &s(&fitted),
    ]));
}

#[test]
fn evaluate_prints_the_full_metric_table() {
    let dir = TempDir::new().unwrap();
    let (gen, ann) = train_models(&dir);
    let ann_out = noisy_annotated(&dir, &gen, &ann);

    let csv = p(&dir, "metrics.csv");
    let out = run(&[
        "evaluate",
        "--pred",
        &s(&ann_out),
        "--gold",
        &s(&ann_out),
        "--csv",
        &s(&csv),
    ]);
    assert_ok(&out);
    let text = stdout_of(&out);
    for key in [
        "pearson=", "spearman=", "mcc=", "f1_bad=", "span_f1=", "span_prec=",
        "span_recall=", "error_rate_pred=", "error_rate_gold=",
    ] {
        assert!(text.contains(key), "missing {key} in:\n{text}");
    }
    let csv_text = String::from_utf8(read(&csv)).unwrap();
    assert!(csv_text.starts_with("metric,value\n"));
    assert_eq!(csv_text.lines().count(), 10);
}

#[test]
fn diversity_experiment_reports_pairwise_bleu() {
    let dir = TempDir::new().unwrap();
    let (gen, ann) = train_models(&dir);
    // second generator: same training data under another path
    let corpus = p(&dir, "corpus.tsv");
    let gen2 = p(&dir, "gen2.json");
    assert_ok(&run(&["train-toy", "--pairs", &s(&corpus), "--output", &s(&gen2)]));
    let pairs = p(&dir, "pairs.tsv");
    write(&pairs, PAIRS);

    let report_path = p(&dir, "report.txt");
    let out = run(&[
        "experiment",
        "diversity",
        "--pairs",
        &s(&pairs),
        "--generator",
        &s(&gen),
        "--generator",
        &s(&gen2),
        "--annotator",
        &s(&ann),
        "--cbs-tau=-1",
        "--t-critical",
        "0.1",
        "--t-major",
        "0.2",
        "--t-minor",
        "0.3",
        "--report",
        &s(&report_path),
    ]);
    assert_ok(&out);
    let text = stdout_of(&out);
    assert!(text.contains("experiment=diversity"));
    assert!(text.contains("bleu_g1_g2=100"), "identical models copy the reference:\n{text}");
    assert!(text.contains("error_rate_union="));
    assert_eq!(text.as_bytes(), read(&report_path).as_slice());
}

#[test]
fn downsample_experiment_writes_the_selection() {
    let dir = TempDir::new().unwrap();
    let (gen, ann) = train_models(&dir);
    let ann_out = noisy_annotated(&dir, &gen, &ann);

    let selected = p(&dir, "selected.jsonl");
    let out = run(&[
        "experiment",
        "downsample",
        "--pool",
        &s(&ann_out),
        "--target",
        &s(&ann_out),
        "--k",
        "2",
        "--output",
        &s(&selected),
        "--seed",
        "3",
    ]);
    assert_ok(&out);
    let text = stdout_of(&out);
    assert!(text.contains("experiment=downsample"));
    assert!(text.contains("selected=2"));
    assert!(text.contains("ks_selected_target="));
    let lines = String::from_utf8(read(&selected)).unwrap();
    assert_eq!(lines.lines().count(), 2);
}
