//! Beam decoding over a pluggable next-token scorer: plain beam search, a
//! constrained variant that force-emits the next reference token whenever the
//! model assigns it probability above a threshold, and forced-decoding
//! probability extraction for a given target sequence.
//!
//! Everything here is deterministic: expansion ties resolve by probability
//! then vocabulary order, hypothesis ties by log probability then
//! lexicographic token order.

pub mod toy;

pub use toy::{
    pair_hash, read_parallel_tsv, train_toy_model, ParallelCorpus, ToyModel, ToyModelError,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentence-start symbol, the bigram context of the first target token.
pub const BOS_TOKEN: &str = "<s>";
/// End-of-sequence symbol terminating every completed hypothesis.
pub const EOS_TOKEN: &str = "</s>";
/// Empty source word available to every lexical alignment.
pub const NULL_TOKEN: &str = "<null>";

/// Probability assigned to target tokens outside the model vocabulary.
pub const OOV_FLOOR: f64 = 1e-9;

/// Deterministic next-token scorer, shareable read-only across threads.
pub trait ScoringModel: Send + Sync {
    /// Target vocabulary, sorted and duplicate-free.
    fn vocabulary(&self) -> &[String];

    /// Distribution over the next emission given a source sentence and the
    /// target prefix emitted so far. Slot `i < |V|` holds the probability of
    /// `vocabulary()[i]`; the final slot holds the end-of-sequence
    /// probability. Slots sum to 1.
    fn next_distribution(&self, src: &[String], prefix: &[String]) -> Vec<f64>;
}

/// Whether an output token was force-copied from the reference or chosen
/// freely by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Provenance {
    Forced,
    Free,
}

/// A partial decode: the emitted prefix, its accumulated log probability,
/// and (for constrained search) how many reference tokens the prefix has
/// consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    pub log_prob: f64,
    pub ref_cursor: usize,
}

/// Final decode result. `log_prob` is the raw total including the
/// end-of-sequence step; `provenance` is token-aligned (the end-of-sequence
/// emission carries none). `completed` is false when no hypothesis emitted
/// end-of-sequence within `max_len` steps, in which case `tokens` is the best
/// truncated prefix of exactly `max_len` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub tokens: Vec<String>,
    pub log_prob: f64,
    pub provenance: Vec<Provenance>,
    pub completed: bool,
}

/// Search knobs. `max_len` caps emission steps, and the end-of-sequence
/// emission is a step, so completing an n-token output needs max_len > n.
/// `length_normalize` divides by token count when picking the winner among
/// finished hypotheses (never during pruning, which compares equal-length
/// prefixes); accumulated log probabilities are reported unnormalized.
#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    pub beam_size: usize,
    pub max_len: usize,
    pub length_normalize: bool,
}

/// Reference-forcing constraint: force-emit the next unconsumed reference
/// token whenever the model gives it probability strictly above `tau`. Once
/// the whole reference is consumed, end-of-sequence becomes the forceable
/// symbol, so `tau = -1.0` copies the reference exactly under any model and
/// `tau > 1.0` never forces.
#[derive(Debug, Clone, Copy)]
pub struct Constraint<'a> {
    pub reference: &'a [String],
    pub tau: f64,
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("beam_size must be at least 1")]
    ZeroBeam,
    #[error("max_len must be at least 1")]
    ZeroMaxLen,
    #[error("constrained search requires a non-empty reference")]
    EmptyReference,
    #[error("forcing threshold must not be NaN")]
    TauNan,
}

#[derive(Debug, Clone)]
struct BeamItem {
    hyp: Hypothesis,
    provenance: Vec<Provenance>,
}

enum Emit {
    Token(String),
    Eos,
}

fn token_index(vocab: &[String], token: &str) -> Option<usize> {
    vocab.binary_search_by(|v| v.as_str().cmp(token)).ok()
}

/// Indices into the distribution (vocabulary order, end-of-sequence last)
/// ranked by probability descending, vocabulary order ascending on ties.
fn top_k(dist: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = dist.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

fn pick_best(pool: &[BeamItem], length_normalize: bool) -> &BeamItem {
    pool.iter()
        .min_by(|a, b| {
            let score = |item: &BeamItem| {
                if length_normalize {
                    item.hyp.log_prob / item.hyp.tokens.len().max(1) as f64
                } else {
                    item.hyp.log_prob
                }
            };
            score(b)
                .total_cmp(&score(a))
                .then_with(|| a.hyp.tokens.cmp(&b.hyp.tokens))
        })
        .expect("pool is non-empty")
}

/// Shared engine behind [`beam_search`] and [`constrained_beam_search`].
/// Finished hypotheses leave the beam and compete at the end; the beam itself
/// always holds equal-length prefixes.
pub fn decode<M: ScoringModel + ?Sized>(
    model: &M,
    src: &[String],
    constraint: Option<Constraint<'_>>,
    opts: &SearchOptions,
) -> Result<DecodeOutput, DecodeError> {
    if opts.beam_size == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    if opts.max_len == 0 {
        return Err(DecodeError::ZeroMaxLen);
    }
    if let Some(c) = constraint {
        if c.reference.is_empty() {
            return Err(DecodeError::EmptyReference);
        }
        if c.tau.is_nan() {
            return Err(DecodeError::TauNan);
        }
    }

    let vocab = model.vocabulary();
    let eos = vocab.len();
    let mut beam = vec![BeamItem {
        hyp: Hypothesis { tokens: Vec::new(), log_prob: 0.0, ref_cursor: 0 },
        provenance: Vec::new(),
    }];
    let mut finished: Vec<BeamItem> = Vec::new();

    while !beam.is_empty() && beam[0].hyp.tokens.len() < opts.max_len {
        let mut candidates: Vec<BeamItem> = Vec::new();
        for item in &beam {
            let dist = model.next_distribution(src, &item.hyp.tokens);
            debug_assert_eq!(dist.len(), vocab.len() + 1);
            debug_assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-6);

            let forced = constraint.and_then(|c| {
                let (symbol, prob) = if item.hyp.ref_cursor < c.reference.len() {
                    let token = c.reference[item.hyp.ref_cursor].as_str();
                    // an out-of-vocabulary reference token has probability 0;
                    // tau below 0 still forces it
                    let p = token_index(vocab, token).map_or(0.0, |i| dist[i]);
                    (Emit::Token(token.to_string()), p)
                } else {
                    (Emit::Eos, dist[eos])
                };
                (prob > c.tau).then_some((symbol, prob))
            });

            let expansions: Vec<(Emit, f64, Provenance)> = match forced {
                Some((symbol, prob)) => vec![(symbol, prob, Provenance::Forced)],
                None => top_k(&dist, opts.beam_size)
                    .into_iter()
                    .map(|(i, p)| {
                        let symbol = if i == eos { Emit::Eos } else { Emit::Token(vocab[i].clone()) };
                        (symbol, p, Provenance::Free)
                    })
                    .collect(),
            };

            for (symbol, prob, provenance) in expansions {
                let log_prob = item.hyp.log_prob + prob.ln();
                match symbol {
                    Emit::Eos => finished.push(BeamItem {
                        hyp: Hypothesis { log_prob, ..item.hyp.clone() },
                        provenance: item.provenance.clone(),
                    }),
                    Emit::Token(token) => {
                        let mut next = item.clone();
                        next.hyp.log_prob = log_prob;
                        if let Some(c) = constraint {
                            if next.hyp.ref_cursor < c.reference.len()
                                && token == c.reference[next.hyp.ref_cursor]
                            {
                                next.hyp.ref_cursor += 1;
                            }
                        }
                        next.hyp.tokens.push(token);
                        next.provenance.push(provenance);
                        candidates.push(next);
                    }
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.hyp
                .log_prob
                .total_cmp(&a.hyp.log_prob)
                .then_with(|| a.hyp.tokens.cmp(&b.hyp.tokens))
        });
        candidates.truncate(opts.beam_size);
        beam = candidates;
    }

    let (best, completed) = if finished.is_empty() {
        (pick_best(&beam, opts.length_normalize), false)
    } else {
        (pick_best(&finished, opts.length_normalize), true)
    };
    Ok(DecodeOutput {
        tokens: best.hyp.tokens.clone(),
        log_prob: best.hyp.log_prob,
        provenance: best.provenance.clone(),
        completed,
    })
}

/// Standard beam search; returns the best hypothesis that reached
/// end-of-sequence, or the best truncated prefix flagged `completed: false`.
pub fn beam_search<M: ScoringModel + ?Sized>(
    model: &M,
    src: &[String],
    beam_size: usize,
    max_len: usize,
) -> Result<DecodeOutput, DecodeError> {
    decode(model, src, None, &SearchOptions { beam_size, max_len, length_normalize: false })
}

/// Beam search that preserves reference structure: at every step, if the
/// model's probability for the next unconsumed reference token exceeds `tau`,
/// that token is the only expansion (FORCED); otherwise the top `beam_size`
/// emissions expand freely (FREE), and a free emission that happens to equal
/// the next reference token still consumes it.
pub fn constrained_beam_search<M: ScoringModel + ?Sized>(
    model: &M,
    src: &[String],
    reference: &[String],
    tau: f64,
    beam_size: usize,
    max_len: usize,
) -> Result<DecodeOutput, DecodeError> {
    decode(
        model,
        src,
        Some(Constraint { reference, tau }),
        &SearchOptions { beam_size, max_len, length_normalize: false },
    )
}

/// Per-token generation probabilities of `target` under the model,
/// p_i = P(target[i] | src, target[..i]). Out-of-vocabulary tokens get
/// [`OOV_FLOOR`] and their indices are reported in `oov`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedDecode {
    pub probs: Vec<f64>,
    pub oov: Vec<usize>,
}

pub fn forced_decode_probs<M: ScoringModel + ?Sized>(
    model: &M,
    src: &[String],
    target: &[String],
) -> ForcedDecode {
    let vocab = model.vocabulary();
    let mut probs = Vec::with_capacity(target.len());
    let mut oov = Vec::new();
    for i in 0..target.len() {
        let dist = model.next_distribution(src, &target[..i]);
        match token_index(vocab, target[i].as_str()) {
            Some(idx) => probs.push(dist[idx]),
            None => {
                oov.push(i);
                probs.push(OOV_FLOOR);
            }
        }
    }
    ForcedDecode { probs, oov }
}
