//! Word-level trainable scorer for desk-scale experiments: an
//! expectation-maximization lexical table (source word, plus an always
//! available empty word, to target word) mixed with an add-one-smoothed
//! target bigram model. Small corpora yield imperfect translators on
//! purpose; that is what downstream error labeling feeds on.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use super::{ScoringModel, BOS_TOKEN, EOS_TOKEN, NULL_TOKEN};
use crate::fnv1a64;

const FORMAT_HEADER: &str = "toy-model v1";

/// Lexical-plus-bigram mixture model. `lambda` weights the lexical side;
/// the end-of-sequence probability comes entirely from the bigram side, so
/// every next-token distribution sums to exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    lambda: f64,
    vocab: Vec<String>,
    vocab_index: HashMap<String, usize>,
    /// source word (including the empty word) -> target word -> probability
    lexical: BTreeMap<String, BTreeMap<String, f64>>,
    /// context -> next -> raw count; smoothing is applied at query time
    bigram: BTreeMap<String, BTreeMap<String, u64>>,
    bigram_totals: BTreeMap<String, u64>,
    /// hashes of the training pairs, for supervision-signal membership checks
    train_hashes: BTreeSet<u64>,
}

#[derive(Debug, Error)]
pub enum ToyModelError {
    #[error("training corpus must be non-empty")]
    EmptyCorpus,
    #[error("em_iterations must be at least 1")]
    ZeroIterations,
    #[error("lambda must lie in [0, 1], got {value}")]
    LambdaRange { value: f64 },
    #[error("pair {index} uses reserved token {token:?}")]
    ReservedToken { index: usize, token: String },
    #[error("pair {index} has an empty {side} side")]
    EmptyPair { index: usize, side: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

/// Hash of one parallel pair, as stored in the model's training-pair set.
pub fn pair_hash(src: &[String], tgt: &[String]) -> u64 {
    let text = format!("{}\t{}", src.join(" "), tgt.join(" "));
    fnv1a64(text.as_bytes())
}

/// Tokenized sentence pairs, source side first.
pub type ParallelCorpus = Vec<(Vec<String>, Vec<String>)>;

/// Read a pre-tokenized parallel corpus: one `source<TAB>target` pair per
/// line, tokens separated by spaces. Blank lines are skipped.
pub fn read_parallel_tsv(path: &Path) -> Result<ParallelCorpus, ToyModelError> {
    let text = std::fs::read_to_string(path).map_err(|source| ToyModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((src, tgt)) = line.split_once('\t') else {
            return Err(ToyModelError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: "expected source<TAB>target".into(),
            });
        };
        let src: Vec<String> = src.split_whitespace().map(str::to_string).collect();
        let tgt: Vec<String> = tgt.split_whitespace().map(str::to_string).collect();
        if src.is_empty() || tgt.is_empty() {
            return Err(ToyModelError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: "both sides must contain at least one token".into(),
            });
        }
        pairs.push((src, tgt));
    }
    Ok(pairs)
}

/// Train on a parallel corpus: expectation-maximization for the lexical
/// table (uniform initialization, every source sentence extended with the
/// empty word), bigram counts with sentence-start context and an
/// end-of-sequence transition per target sentence. Deterministic in corpus
/// order.
pub fn train_toy_model(
    corpus: &[(Vec<String>, Vec<String>)],
    em_iterations: usize,
    lambda: f64,
) -> Result<ToyModel, ToyModelError> {
    if corpus.is_empty() {
        return Err(ToyModelError::EmptyCorpus);
    }
    if em_iterations == 0 {
        return Err(ToyModelError::ZeroIterations);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ToyModelError::LambdaRange { value: lambda });
    }
    for (index, (src, tgt)) in corpus.iter().enumerate() {
        if src.is_empty() {
            return Err(ToyModelError::EmptyPair { index, side: "source" });
        }
        if tgt.is_empty() {
            return Err(ToyModelError::EmptyPair { index, side: "target" });
        }
        for token in src.iter().chain(tgt) {
            if token == BOS_TOKEN || token == EOS_TOKEN || token == NULL_TOKEN {
                return Err(ToyModelError::ReservedToken { index, token: token.clone() });
            }
        }
    }

    let mut src_vocab: BTreeSet<&str> = corpus.iter().flat_map(|(s, _)| s.iter().map(String::as_str)).collect();
    src_vocab.insert(NULL_TOKEN);
    let tgt_vocab: BTreeSet<&str> = corpus.iter().flat_map(|(_, t)| t.iter().map(String::as_str)).collect();
    let uniform = 1.0 / tgt_vocab.len() as f64;

    let mut table: BTreeMap<&str, BTreeMap<&str, f64>> = src_vocab
        .iter()
        .map(|&s| (s, tgt_vocab.iter().map(|&t| (t, uniform)).collect()))
        .collect();

    for _ in 0..em_iterations {
        let mut counts: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
        for (src, tgt) in corpus {
            for w in tgt {
                let w = w.as_str();
                let candidates = src.iter().map(String::as_str).chain([NULL_TOKEN]);
                let denom: f64 = candidates.clone().map(|s| table[s][w]).sum();
                for s in candidates {
                    *counts.entry(s).or_default().entry(w).or_insert(0.0) += table[s][w] / denom;
                }
            }
        }
        table = counts
            .into_iter()
            .map(|(s, row)| {
                let total: f64 = row.values().sum();
                (s, row.into_iter().map(|(t, c)| (t, c / total)).collect())
            })
            .collect();
    }

    let mut bigram: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for (_, tgt) in corpus {
        let mut ctx = BOS_TOKEN;
        for w in tgt {
            *bigram.entry(ctx.to_string()).or_default().entry(w.clone()).or_insert(0) += 1;
            ctx = w;
        }
        *bigram.entry(ctx.to_string()).or_default().entry(EOS_TOKEN.to_string()).or_insert(0) += 1;
    }
    let bigram_totals = bigram
        .iter()
        .map(|(ctx, row)| (ctx.clone(), row.values().sum()))
        .collect();

    let vocab: Vec<String> = tgt_vocab.iter().map(|&t| t.to_string()).collect();
    let vocab_index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(ToyModel {
        lambda,
        vocab,
        vocab_index,
        lexical: table
            .into_iter()
            .map(|(s, row)| {
                (s.to_string(), row.into_iter().map(|(t, p)| (t.to_string(), p)).collect())
            })
            .collect(),
        bigram,
        bigram_totals,
        train_hashes: corpus.iter().map(|(s, t)| pair_hash(s, t)).collect(),
    })
}

impl ToyModel {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Whether the exact pair was part of the training corpus.
    pub fn contains_pair(&self, src: &[String], tgt: &[String]) -> bool {
        self.train_hashes.contains(&pair_hash(src, tgt))
    }

    /// P(target word | source word) from the lexical table. A source word
    /// never seen in training backs off to uniform over the vocabulary.
    pub fn lexical_prob(&self, src_word: &str, tgt_word: &str) -> f64 {
        match self.lexical.get(src_word) {
            Some(row) => row.get(tgt_word).copied().unwrap_or(0.0),
            None => {
                if self.vocab_index.contains_key(tgt_word) {
                    1.0 / self.vocab.len() as f64
                } else {
                    0.0
                }
            }
        }
    }

    /// Add-one-smoothed P(next | context) where next ranges over the
    /// vocabulary plus end-of-sequence.
    pub fn bigram_prob(&self, context: &str, next: &str) -> f64 {
        let count = self
            .bigram
            .get(context)
            .and_then(|row| row.get(next))
            .copied()
            .unwrap_or(0);
        let total = self.bigram_totals.get(context).copied().unwrap_or(0);
        (count as f64 + 1.0) / (total as f64 + self.vocab.len() as f64 + 1.0)
    }

    pub fn save(&self, path: &Path) -> Result<(), ToyModelError> {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "lambda\t{}", self.lambda);
        for token in &self.vocab {
            let _ = writeln!(out, "vocab\t{token}");
        }
        for (src, row) in &self.lexical {
            for (tgt, prob) in row {
                let _ = writeln!(out, "lexical\t{src}\t{tgt}\t{prob}");
            }
        }
        for (ctx, row) in &self.bigram {
            for (next, count) in row {
                let _ = writeln!(out, "bigram\t{ctx}\t{next}\t{count}");
            }
        }
        for hash in &self.train_hashes {
            let _ = writeln!(out, "trainhash\t{hash:016x}");
        }
        std::fs::write(path, out).map_err(|source| ToyModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<ToyModel, ToyModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ToyModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let err = |line: usize, message: String| ToyModelError::Parse {
            path: path.display().to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header == FORMAT_HEADER => {}
            other => {
                return Err(err(1, format!("expected header {FORMAT_HEADER:?}, got {:?}", other.map(|(_, h)| h))));
            }
        }
        let mut lambda = None;
        let mut vocab = Vec::new();
        let mut lexical: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        let mut bigram: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        let mut train_hashes = BTreeSet::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["lambda", v] => {
                    lambda = Some(v.parse::<f64>().map_err(|e| err(line_no, format!("bad lambda: {e}")))?);
                }
                ["vocab", token] => vocab.push(token.to_string()),
                ["lexical", src, tgt, prob] => {
                    let prob = prob.parse::<f64>().map_err(|e| err(line_no, format!("bad probability: {e}")))?;
                    lexical.entry(src.to_string()).or_default().insert(tgt.to_string(), prob);
                }
                ["bigram", ctx, next, count] => {
                    let count = count.parse::<u64>().map_err(|e| err(line_no, format!("bad count: {e}")))?;
                    bigram.entry(ctx.to_string()).or_default().insert(next.to_string(), count);
                }
                ["trainhash", hash] => {
                    let hash = u64::from_str_radix(hash, 16).map_err(|e| err(line_no, format!("bad hash: {e}")))?;
                    train_hashes.insert(hash);
                }
                _ => return Err(err(line_no, format!("unrecognized line {line:?}"))),
            }
        }
        let lambda = lambda.ok_or_else(|| err(1, "missing lambda line".into()))?;
        if vocab.is_empty() {
            return Err(err(1, "missing vocab lines".into()));
        }
        if !vocab.windows(2).all(|w| w[0] < w[1]) {
            return Err(err(1, "vocab lines must be sorted and duplicate-free".into()));
        }
        let vocab_index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let bigram_totals = bigram
            .iter()
            .map(|(ctx, row)| (ctx.clone(), row.values().sum()))
            .collect();
        Ok(ToyModel { lambda, vocab, vocab_index, lexical, bigram, bigram_totals, train_hashes })
    }
}

impl ScoringModel for ToyModel {
    fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    fn next_distribution(&self, src: &[String], prefix: &[String]) -> Vec<f64> {
        let n = self.vocab.len();
        let mut dist = vec![0.0; n + 1];

        // lexical side: average the translation rows of the source words and
        // the empty word; rows are sparse, unseen words back off to uniform
        let per_word = self.lambda / (src.len() + 1) as f64;
        let mut uniform_mass = 0.0;
        for word in src.iter().map(String::as_str).chain([NULL_TOKEN]) {
            match self.lexical.get(word) {
                Some(row) => {
                    for (tgt, p) in row {
                        dist[self.vocab_index[tgt]] += per_word * p;
                    }
                }
                None => uniform_mass += per_word / n as f64,
            }
        }
        if uniform_mass > 0.0 {
            for slot in dist.iter_mut().take(n) {
                *slot += uniform_mass;
            }
        }

        // bigram side carries the remaining weight, including all of the
        // end-of-sequence mass
        let ctx = prefix.last().map_or(BOS_TOKEN, String::as_str);
        let row = self.bigram.get(ctx);
        let total = self.bigram_totals.get(ctx).copied().unwrap_or(0) as f64;
        let denom = total + n as f64 + 1.0;
        let smoothed = |token: &str| {
            let count = row.and_then(|r| r.get(token)).copied().unwrap_or(0);
            (count as f64 + 1.0) / denom
        };
        for (i, token) in self.vocab.iter().enumerate() {
            dist[i] += (1.0 - self.lambda) * smoothed(token);
        }
        dist[n] = (1.0 - self.lambda) * smoothed(EOS_TOKEN);
        dist
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{beam_search, forced_decode_probs};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn corpus(pairs: &[(&str, &str)]) -> Vec<(Vec<String>, Vec<String>)> {
        pairs.iter().map(|(s, t)| (toks(s), toks(t))).collect()
    }

    fn fixture() -> ToyModel {
        train_toy_model(&corpus(&[("a b", "x y"), ("a", "x")]), 1, 0.7).unwrap()
    }

    #[test]
    fn single_pair_alignment_is_certain() {
        let model = train_toy_model(&corpus(&[("a", "x")]), 5, 0.7).unwrap();
        assert_eq!(model.lexical_prob("a", "x"), 1.0);
        assert_eq!(model.lexical_prob(NULL_TOKEN, "x"), 1.0);
    }

    #[test]
    fn one_em_iteration_matches_hand_run() {
        // uniform init over {x, y}; pair "a b" -> "x y" splits each target
        // word evenly over {a, b, null}, pair "a" -> "x" over {a, null}:
        //   c(x|a) = 1/3 + 1/2, c(y|a) = 1/3 -> t(x|a) = 5/7
        //   c(x|b) = c(y|b) = 1/3 -> t(y|b) = 1/2
        let model = fixture();
        assert!((model.lexical_prob("a", "x") - 5.0 / 7.0).abs() < 1e-12);
        assert!((model.lexical_prob("a", "y") - 2.0 / 7.0).abs() < 1e-12);
        assert!((model.lexical_prob("b", "x") - 0.5).abs() < 1e-12);
        assert!((model.lexical_prob("b", "y") - 0.5).abs() < 1e-12);
        assert!((model.lexical_prob(NULL_TOKEN, "x") - 5.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn bigram_counts_and_smoothing() {
        let model = fixture();
        // counts: (<s>, x) = 2, (x, y) = 1, (x, </s>) = 1, (y, </s>) = 1
        assert!((model.bigram_prob(BOS_TOKEN, "x") - 3.0 / 5.0).abs() < 1e-12);
        assert!((model.bigram_prob("x", "y") - 2.0 / 5.0).abs() < 1e-12);
        assert!((model.bigram_prob("x", EOS_TOKEN) - 2.0 / 5.0).abs() < 1e-12);
        assert!((model.bigram_prob("x", "x") - 1.0 / 5.0).abs() < 1e-12);
        // unseen context backs off to uniform over vocab plus end-of-sequence
        assert!((model.bigram_prob("q", "x") - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn forced_probs_match_table_lookups() {
        let model = fixture();
        let fd = forced_decode_probs(&model, &toks("a b"), &toks("x y"));
        // 0.7 * (5/7 + 1/2 + 5/7)/3 + 0.3 * 3/5 and 0.7 * 5/14 + 0.3 * 2/5
        assert_eq!(fd.probs.len(), 2);
        assert!((fd.probs[0] - 0.63).abs() < 1e-12);
        assert!((fd.probs[1] - 0.37).abs() < 1e-12);
        assert!(fd.oov.is_empty());
    }

    #[test]
    fn distributions_sum_to_one() {
        let model = fixture();
        for (src, prefix) in [
            ("a b", ""),
            ("a b", "x"),
            ("a", "x y"),
            ("unseen words", ""),
            ("a unseen", "y"),
        ] {
            let dist = model.next_distribution(&toks(src), &toks(prefix));
            let sum: f64 = dist.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "src={src:?} prefix={prefix:?} sum={sum}");
            assert!(dist.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(train_toy_model(&[], 1, 0.7), Err(ToyModelError::EmptyCorpus)));
        let c = corpus(&[("a", "x")]);
        assert!(matches!(train_toy_model(&c, 0, 0.7), Err(ToyModelError::ZeroIterations)));
        assert!(matches!(
            train_toy_model(&c, 1, 1.5),
            Err(ToyModelError::LambdaRange { .. })
        ));
        let reserved = corpus(&[("a", "</s>")]);
        assert!(matches!(
            train_toy_model(&reserved, 1, 0.7),
            Err(ToyModelError::ReservedToken { index: 0, .. })
        ));
        let empty_side = vec![(toks("a"), Vec::new())];
        assert!(matches!(
            train_toy_model(&empty_side, 1, 0.7),
            Err(ToyModelError::EmptyPair { index: 0, side: "target" })
        ));
    }

    #[test]
    fn save_load_round_trips_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let model = train_toy_model(&corpus(&[("a b", "x y"), ("a", "x"), ("c", "z")]), 3, 0.7).unwrap();
        let first = dir.path().join("model.txt");
        let second = dir.path().join("model2.txt");
        model.save(&first).unwrap();
        let reloaded = ToyModel::load(&first).unwrap();
        assert_eq!(reloaded, model);
        reloaded.save(&second).unwrap();
        assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

        let dist_a = model.next_distribution(&toks("a c"), &toks("x"));
        let dist_b = reloaded.next_distribution(&toks("a c"), &toks("x"));
        assert_eq!(dist_a, dist_b);
    }

    #[test]
    fn load_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");

        std::fs::write(&path, "something else\n").unwrap();
        let e = ToyModel::load(&path).unwrap_err();
        assert!(matches!(e, ToyModelError::Parse { line: 1, .. }), "{e}");

        std::fs::write(&path, "toy-model v1\nlambda\t0.7\nvocab\tx\nlexical\ta\tx\tnot-a-number\n").unwrap();
        let e = ToyModel::load(&path).unwrap_err();
        assert!(matches!(e, ToyModelError::Parse { line: 4, .. }), "{e}");

        let missing = dir.path().join("nope.txt");
        assert!(matches!(ToyModel::load(&missing), Err(ToyModelError::Io { .. })));
    }

    #[test]
    fn training_pair_membership() {
        let model = fixture();
        assert!(model.contains_pair(&toks("a b"), &toks("x y")));
        assert!(model.contains_pair(&toks("a"), &toks("x")));
        assert!(!model.contains_pair(&toks("a b"), &toks("x")));
        assert!(!model.contains_pair(&toks("b"), &toks("y")));
    }

    #[test]
    fn training_is_deterministic() {
        let c = corpus(&[("a b", "x y"), ("c d", "z w"), ("a d", "x w")]);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.txt");
        let p2 = dir.path().join("m2.txt");
        train_toy_model(&c, 5, 0.7).unwrap().save(&p1).unwrap();
        train_toy_model(&c, 5, 0.7).unwrap().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn larger_corpus_scores_held_out_text_higher() {
        let template: Vec<(String, String)> = (0..8)
            .map(|i| (format!("s{i}"), format!("t{i}")))
            .collect();
        let all: Vec<(&str, &str)> = template.iter().map(|(s, t)| (s.as_str(), t.as_str())).collect();
        let small = train_toy_model(&corpus(&all[..2]), 3, 0.7).unwrap();
        let large = train_toy_model(&corpus(&all), 3, 0.7).unwrap();
        let held_out_src = toks("s6");
        let held_out_tgt = toks("t6");
        let score = |m: &ToyModel| {
            forced_decode_probs(m, &held_out_src, &held_out_tgt)
                .probs
                .iter()
                .map(|p| p.ln())
                .sum::<f64>()
        };
        assert!(score(&large) > score(&small));
    }

    #[test]
    fn disjoint_splits_decode_differently() {
        let split_a = corpus(&[("s0 s1", "p q"), ("s2", "r")]);
        let split_b = corpus(&[("s0 s1", "u v"), ("s2", "w")]);
        let model_a = train_toy_model(&split_a, 3, 0.7).unwrap();
        let model_b = train_toy_model(&split_b, 3, 0.7).unwrap();
        let src = toks("s0 s1");
        let out_a = beam_search(&model_a, &src, 1, 10).unwrap();
        let out_b = beam_search(&model_b, &src, 1, 10).unwrap();
        assert_ne!(out_a.tokens, out_b.tokens);
    }

    #[test]
    fn tsv_reader_parses_and_reports_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.tsv");
        std::fs::write(&path, "a b\tx y\n\nc\tz\n").unwrap();
        let pairs = read_parallel_tsv(&path).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0], (toks("a b"), toks("x y")));

        std::fs::write(&path, "a b x y\n").unwrap();
        let e = read_parallel_tsv(&path).unwrap_err();
        assert!(matches!(e, ToyModelError::Parse { line: 1, .. }));

        std::fs::write(&path, "a\tx\nb\t \n").unwrap();
        let e = read_parallel_tsv(&path).unwrap_err();
        assert!(matches!(e, ToyModelError::Parse { line: 2, .. }));
    }
}
