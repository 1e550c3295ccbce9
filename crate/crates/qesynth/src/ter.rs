//! Word-level hypothesis/reference alignment in the style of translation edit
//! rate: Levenshtein alignment plus a greedy loop that accepts block moves
//! only when they strictly reduce the remaining edit distance. Matched tokens
//! become OK, substituted or inserted tokens BAD; a block move costs one edit
//! but the tokens it re-seats can still match and count as OK.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

use crate::mqm::Label;

/// Longest block a single shift may move.
pub const MAX_SHIFT_BLOCK: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EditKind {
    Match,
    Sub,
    Ins,
    Del,
    Shift,
}

/// One alignment edit. `hyp_index` always refers to the original hypothesis
/// token order, before any shifts; a SHIFT records the original index of the
/// moved block's first token plus the block length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub kind: EditKind,
    pub hyp_index: Option<usize>,
    pub ref_index: Option<usize>,
    pub shift_len: Option<usize>,
}

impl EditOp {
    fn shift(hyp_index: usize, len: usize) -> Self {
        EditOp { kind: EditKind::Shift, hyp_index: Some(hyp_index), ref_index: None, shift_len: Some(len) }
    }
}

/// Alignment of a hypothesis to a reference: accepted shifts first, then the
/// monotone Match/Sub/Ins/Del ops of the post-shift Levenshtein alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub ops: Vec<EditOp>,
    pub edit_count: usize,
    pub ref_len: usize,
}

#[derive(Debug, Error)]
pub enum TerError {
    #[error("reference length must be at least 1 to score an alignment")]
    EmptyReference,
    #[error("alignment does not cover hypothesis token {index} exactly once")]
    Coverage { index: usize },
    #[error("alignment op of kind {kind:?} is missing a required index")]
    MalformedOp { kind: EditKind },
}

fn intern<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> (Vec<u32>, Vec<u32>) {
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let mut h = Vec::with_capacity(hyp.len());
    for tok in hyp {
        let next = ids.len() as u32;
        h.push(*ids.entry(tok.as_ref()).or_insert(next));
    }
    let mut r = Vec::with_capacity(reference.len());
    for tok in reference {
        let next = ids.len() as u32;
        r.push(*ids.entry(tok.as_ref()).or_insert(next));
    }
    (h, r)
}

fn levenshtein(a: &[u32], b: &[u32], row: &mut Vec<usize>) -> usize {
    row.clear();
    row.extend(0..=b.len());
    for (i, &ai) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &bj) in b.iter().enumerate() {
            let sub = diag + usize::from(ai != bj);
            diag = row[j + 1];
            row[j + 1] = sub.min(diag + 1).min(row[j] + 1);
        }
    }
    row[b.len()]
}

/// Monotone alignment by full-matrix DP with a deterministic backtrace
/// (diagonal, then hypothesis-consuming, then reference-consuming on ties).
/// `work` pairs each token id with its original hypothesis index.
fn align_monotone(work: &[(usize, u32)], reference: &[u32]) -> (Vec<EditOp>, usize) {
    let n = work.len();
    let m = reference.len();
    let mut dp = vec![0usize; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    for i in 0..=n {
        dp[idx(i, 0)] = i;
    }
    for j in 0..=m {
        dp[idx(0, j)] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[idx(i - 1, j - 1)] + usize::from(work[i - 1].1 != reference[j - 1]);
            dp[idx(i, j)] = sub.min(dp[idx(i - 1, j)] + 1).min(dp[idx(i, j - 1)] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let cost = dp[idx(i, j)];
        if i > 0 && j > 0 && cost == dp[idx(i - 1, j - 1)] + usize::from(work[i - 1].1 != reference[j - 1]) {
            let kind = if work[i - 1].1 == reference[j - 1] { EditKind::Match } else { EditKind::Sub };
            ops.push(EditOp { kind, hyp_index: Some(work[i - 1].0), ref_index: Some(j - 1), shift_len: None });
            i -= 1;
            j -= 1;
        } else if i > 0 && cost == dp[idx(i - 1, j)] + 1 {
            ops.push(EditOp { kind: EditKind::Ins, hyp_index: Some(work[i - 1].0), ref_index: None, shift_len: None });
            i -= 1;
        } else {
            ops.push(EditOp { kind: EditKind::Del, hyp_index: None, ref_index: Some(j - 1), shift_len: None });
            j -= 1;
        }
    }
    ops.reverse();
    (ops, dp[idx(n, m)])
}

fn align(hyp_ids: Vec<u32>, ref_ids: Vec<u32>, allow_shifts: bool) -> Alignment {
    let ref_len = ref_ids.len();
    let mut work: Vec<(usize, u32)> = hyp_ids.into_iter().enumerate().collect();
    let mut shifts: Vec<EditOp> = Vec::new();
    let mut row = Vec::new();

    if allow_shifts {
        loop {
            let ids: Vec<u32> = work.iter().map(|&(_, t)| t).collect();
            let base = levenshtein(&ids, &ref_ids, &mut row);
            if base == 0 {
                break;
            }
            // Candidates are scanned in (block length, origin, destination)
            // order, and only a strictly larger gain displaces the incumbent,
            // so ties resolve to the smallest block, then the leftmost origin,
            // then the leftmost destination. Destinations are positions in the
            // sequence after the block is removed.
            let mut best: Option<(usize, usize, usize, usize)> = None; // (gain, len, origin, dest)
            let mut candidate = Vec::with_capacity(ids.len());
            for len in 1..=MAX_SHIFT_BLOCK.min(work.len()) {
                for origin in 0..=(work.len() - len) {
                    for dest in 0..=(work.len() - len) {
                        if dest == origin {
                            continue;
                        }
                        candidate.clear();
                        candidate.extend_from_slice(&ids[..origin]);
                        candidate.extend_from_slice(&ids[origin + len..]);
                        candidate.splice(dest..dest, ids[origin..origin + len].iter().copied());
                        let d = levenshtein(&candidate, &ref_ids, &mut row);
                        if d < base {
                            let gain = base - d;
                            if best.is_none_or(|(g, ..)| gain > g) {
                                best = Some((gain, len, origin, dest));
                            }
                        }
                    }
                }
            }
            let Some((_, len, origin, dest)) = best else { break };
            let block: Vec<(usize, u32)> = work.splice(origin..origin + len, std::iter::empty()).collect();
            shifts.push(EditOp::shift(block[0].0, len));
            work.splice(dest..dest, block);
        }
    }

    let (tail, edits) = align_monotone(&work, &ref_ids);
    let edit_count = edits + shifts.len();
    let mut ops = shifts;
    ops.extend(tail);
    Alignment { ops, edit_count, ref_len }
}

/// Greedy-shift edit alignment: repeatedly apply the block move (length at
/// most [`MAX_SHIFT_BLOCK`], any displacement) with the largest strict
/// decrease in remaining Levenshtein distance, at a cost of one edit each,
/// then align what remains. Token comparison is case-sensitive exact match.
pub fn ter_align<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> Alignment {
    let (h, r) = intern(hyp, reference);
    align(h, r, true)
}

/// Plain Levenshtein alignment with shifts disabled.
pub fn levenshtein_align<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> Alignment {
    let (h, r) = intern(hyp, reference);
    align(h, r, false)
}

/// Per-hypothesis-token labels: MATCH is OK, SUB and INS are BAD. Deletions
/// touch no hypothesis token, and tokens matched after a shift are OK.
pub fn coarse_labels(alignment: &Alignment, hyp_len: usize) -> Result<Vec<Label>, TerError> {
    let mut labels = vec![Label::Ok; hyp_len];
    let mut seen = vec![false; hyp_len];
    for op in &alignment.ops {
        let label = match op.kind {
            EditKind::Match => Label::Ok,
            EditKind::Sub | EditKind::Ins => Label::Bad,
            EditKind::Del | EditKind::Shift => continue,
        };
        let index = op.hyp_index.ok_or(TerError::MalformedOp { kind: op.kind })?;
        if index >= hyp_len || seen[index] {
            return Err(TerError::Coverage { index });
        }
        seen[index] = true;
        labels[index] = label;
    }
    if let Some(index) = seen.iter().position(|&s| !s) {
        return Err(TerError::Coverage { index });
    }
    Ok(labels)
}

/// Edits per reference token.
pub fn ter_score(alignment: &Alignment) -> Result<f64, TerError> {
    if alignment.ref_len == 0 {
        return Err(TerError::EmptyReference);
    }
    Ok(alignment.edit_count as f64 / alignment.ref_len as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds(a: &Alignment) -> Vec<EditKind> {
        a.ops.iter().map(|op| op.kind).collect()
    }

    #[test]
    fn identity_is_all_match() {
        let a = ter_align(&["a", "b", "c"], &["a", "b", "c"]);
        assert_eq!(kinds(&a), vec![EditKind::Match; 3]);
        assert_eq!(a.edit_count, 0);
        assert_eq!(coarse_labels(&a, 3).unwrap(), vec![Label::Ok; 3]);
        assert_eq!(ter_score(&a).unwrap(), 0.0);
    }

    #[test]
    fn substitution_in_place() {
        let a = ter_align(&["a", "x", "c"], &["a", "b", "c"]);
        assert_eq!(kinds(&a), vec![EditKind::Match, EditKind::Sub, EditKind::Match]);
        assert_eq!(a.edit_count, 1);
        assert_eq!(
            coarse_labels(&a, 3).unwrap(),
            vec![Label::Ok, Label::Bad, Label::Ok]
        );
    }

    #[test]
    fn rotation_is_one_shift() {
        let a = ter_align(&["c", "a", "b"], &["a", "b", "c"]);
        assert_eq!(a.edit_count, 1);
        let shift_ops: Vec<&EditOp> = a.ops.iter().filter(|o| o.kind == EditKind::Shift).collect();
        assert_eq!(shift_ops.len(), 1);
        assert_eq!(shift_ops[0].hyp_index, Some(0));
        assert_eq!(shift_ops[0].shift_len, Some(1));
        assert_eq!(a.ops.iter().filter(|o| o.kind == EditKind::Match).count(), 3);
        // the moved token matched after the shift, so every token is OK
        assert_eq!(coarse_labels(&a, 3).unwrap(), vec![Label::Ok; 3]);
        assert!((ter_score(&a).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn deletion_touches_no_hyp_token() {
        let a = ter_align(&["a", "b"], &["a", "b", "c"]);
        assert_eq!(a.edit_count, 1);
        assert_eq!(coarse_labels(&a, 2).unwrap(), vec![Label::Ok, Label::Ok]);
    }

    #[test]
    fn insertion_marks_extra_token() {
        let a = ter_align(&["a", "b", "c"], &["a", "c"]);
        assert_eq!(a.edit_count, 1);
        assert_eq!(
            coarse_labels(&a, 3).unwrap(),
            vec![Label::Ok, Label::Bad, Label::Ok]
        );
    }

    #[test]
    fn shift_of_unmatched_token_is_accepted_when_it_helps() {
        // moving [x] to the end drops the remaining distance from 2 to 1;
        // the gain need not exceed the shift cost, only be strict
        let a = ter_align(&["x", "a", "b"], &["a", "b", "y"]);
        assert_eq!(a.edit_count, 2);
        assert_eq!(a.ops.iter().filter(|o| o.kind == EditKind::Shift).count(), 1);
    }

    #[test]
    fn empty_sequences() {
        let a = ter_align::<&str, &str>(&[], &["a", "b"]);
        assert_eq!(kinds(&a), vec![EditKind::Del, EditKind::Del]);
        assert_eq!(a.edit_count, 2);
        assert_eq!(coarse_labels(&a, 0).unwrap(), vec![]);

        let a = ter_align::<&str, &str>(&["a"], &[]);
        assert_eq!(kinds(&a), vec![EditKind::Ins]);
        assert!(matches!(ter_score(&a), Err(TerError::EmptyReference)));
    }

    #[test]
    fn score_is_edits_over_ref_len() {
        let a = ter_align(&["a", "x", "c", "d"], &["a", "b", "c", "d"]);
        assert_eq!(ter_score(&a).unwrap(), 0.25);
    }

    #[test]
    fn coverage_check_catches_foreign_alignment() {
        let a = ter_align(&["a", "b"], &["a", "b"]);
        assert!(matches!(coarse_labels(&a, 3), Err(TerError::Coverage { index: 2 })));
    }

    fn token_seq() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(
            prop_oneof![Just("a"), Just("b"), Just("c"), Just("d")].prop_map(str::to_string),
            0..10,
        )
    }

    proptest! {
        #[test]
        fn shifts_never_increase_edits(hyp in token_seq(), reference in token_seq()) {
            let with = ter_align(&hyp, &reference);
            let without = levenshtein_align(&hyp, &reference);
            prop_assert!(with.edit_count <= without.edit_count);
        }

        #[test]
        fn every_token_covered_once(hyp in token_seq(), reference in token_seq()) {
            let a = ter_align(&hyp, &reference);
            let labels = coarse_labels(&a, hyp.len()).unwrap();
            prop_assert_eq!(labels.len(), hyp.len());
            let ref_covered = a
                .ops
                .iter()
                .filter(|o| matches!(o.kind, EditKind::Match | EditKind::Sub | EditKind::Del))
                .count();
            prop_assert_eq!(ref_covered, reference.len());
        }

        #[test]
        fn matched_tokens_are_never_bad(hyp in token_seq(), reference in token_seq()) {
            let a = ter_align(&hyp, &reference);
            let labels = coarse_labels(&a, hyp.len()).unwrap();
            for op in &a.ops {
                if op.kind == EditKind::Match {
                    prop_assert_eq!(labels[op.hyp_index.unwrap()], Label::Ok);
                }
            }
        }
    }
}
