//! Shortest phrase covering errors: expand a run of error tokens to the
//! smallest contiguous, dependency-coherent phrase by iterating three steps
//! to a fixpoint: take the lowest common ancestor of the current set, add
//! every node on each member's path to it, then fill the index gap between
//! the leftmost and rightmost member.

use thiserror::Error;

use crate::mqm::{ErrorSpan, Severity};

/// Dependency tree over one sentence: node order equals token order, each
/// node names its head, exactly one node is the root (head `None`). The
/// virtual root above the sentence head is never a node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepTree {
    heads: Vec<Option<usize>>,
    depths: Vec<usize>,
    root: usize,
}

/// Inclusive token-index interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub l: usize,
    pub r: usize,
}

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("tree has no root")]
    MissingRoot,
    #[error("nodes {first} and {second} are both roots")]
    MultipleRoots { first: usize, second: usize },
    #[error("head {head} of node {node} is out of range for {n} nodes")]
    HeadOutOfRange { node: usize, head: usize, n: usize },
    #[error("head cycle through node {node}")]
    Cycle { node: usize },
}

#[derive(Debug, Error)]
pub enum SpceError {
    #[error("lowest common ancestor of an empty node set")]
    EmptyNodeSet,
    #[error("node {node} is out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("interval [{l}, {r}] is out of range for {n} nodes")]
    IntervalOutOfRange { l: usize, r: usize, n: usize },
    #[error("interval start {l} exceeds end {r}")]
    InvalidInterval { l: usize, r: usize },
    #[error("got {got} severities for a {n}-node tree")]
    SeverityLength { got: usize, n: usize },
}

#[derive(Debug, Error)]
pub enum ConlluError {
    #[error("line {line}: expected 10 tab-separated columns, got {got}")]
    Columns { line: usize, got: usize },
    #[error("line {line}: unusable token id {id:?}")]
    Id { line: usize, id: String },
    #[error("line {line}: token id {got} out of order, expected {expected}")]
    Sequence { line: usize, expected: usize, got: usize },
    #[error("line {line}: unusable head {head:?}")]
    Head { line: usize, head: String },
    #[error("line {line}: head {head} exceeds sentence length {n}")]
    HeadRange { line: usize, head: usize, n: usize },
    #[error("sentence at line {line} has no root (head 0)")]
    NoRoot { line: usize },
    #[error("line {line}: second root in one sentence")]
    ExtraRoot { line: usize },
    #[error("line {line}: head cycle through this token")]
    Cycle { line: usize },
}

impl DepTree {
    /// Build a tree from per-node head indices, `None` marking the root.
    pub fn new(heads: Vec<Option<usize>>) -> Result<DepTree, TreeError> {
        let n = heads.len();
        let mut root = None;
        for (node, &head) in heads.iter().enumerate() {
            match head {
                None => match root {
                    None => root = Some(node),
                    Some(first) => return Err(TreeError::MultipleRoots { first, second: node }),
                },
                Some(h) if h >= n => return Err(TreeError::HeadOutOfRange { node, head: h, n }),
                Some(h) if h == node => return Err(TreeError::Cycle { node }),
                Some(_) => {}
            }
        }
        let root = root.ok_or(TreeError::MissingRoot)?;

        let mut depths = vec![usize::MAX; n];
        for start in 0..n {
            if depths[start] != usize::MAX {
                continue;
            }
            let mut path = Vec::new();
            let mut cur = start;
            let base = loop {
                if depths[cur] != usize::MAX {
                    break Some(depths[cur]);
                }
                if path.contains(&cur) {
                    return Err(TreeError::Cycle { node: cur });
                }
                path.push(cur);
                match heads[cur] {
                    Some(h) => cur = h,
                    None => break None,
                }
            };
            // path runs start -> ... -> deepest known point; assign depths
            // from the far end (the root itself when base is None)
            for (k, &node) in path.iter().rev().enumerate() {
                depths[node] = match base {
                    Some(b) => b + 1 + k,
                    None => k,
                };
            }
        }
        Ok(DepTree { heads, depths, root })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn head(&self, node: usize) -> Option<usize> {
        self.heads[node]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depths[node]
    }
}

/// Parse CoNLL-U text into one tree per sentence. Word lines are the
/// 10-column tab-separated lines; comment lines, multiword-token ranges
/// (id like `1-2`), and empty nodes (id like `1.1`) are skipped; sentences
/// are separated by blank lines.
pub fn parse_conllu(text: &str) -> Result<Vec<DepTree>, ConlluError> {
    let mut trees = Vec::new();
    // per word: (line number, 1-based head, 0 meaning root)
    let mut words: Vec<(usize, usize)> = Vec::new();

    let mut flush = |words: &mut Vec<(usize, usize)>| -> Result<(), ConlluError> {
        if words.is_empty() {
            return Ok(());
        }
        let n = words.len();
        let mut heads = Vec::with_capacity(n);
        for &(line, head) in words.iter() {
            if head == 0 {
                heads.push(None);
            } else {
                if head > n {
                    return Err(ConlluError::HeadRange { line, head, n });
                }
                heads.push(Some(head - 1));
            }
        }
        let tree = DepTree::new(heads).map_err(|e| match e {
            TreeError::MissingRoot => ConlluError::NoRoot { line: words[0].0 },
            TreeError::MultipleRoots { second, .. } => ConlluError::ExtraRoot { line: words[second].0 },
            TreeError::Cycle { node } => ConlluError::Cycle { line: words[node].0 },
            // ranges were checked above
            TreeError::HeadOutOfRange { node, head, .. } => {
                ConlluError::HeadRange { line: words[node].0, head: head + 1, n }
            }
        })?;
        trees.push(tree);
        words.clear();
        Ok(())
    };

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            flush(&mut words)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(ConlluError::Columns { line: line_no, got: cols.len() });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id
            .parse()
            .map_err(|_| ConlluError::Id { line: line_no, id: cols[0].to_string() })?;
        if id != words.len() + 1 {
            return Err(ConlluError::Sequence { line: line_no, expected: words.len() + 1, got: id });
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| ConlluError::Head { line: line_no, head: cols[6].to_string() })?;
        words.push((line_no, head));
    }
    flush(&mut words)?;
    Ok(trees)
}

fn lca_pair(tree: &DepTree, mut u: usize, mut v: usize) -> usize {
    while tree.depths[u] > tree.depths[v] {
        u = tree.heads[u].expect("deeper node has a head");
    }
    while tree.depths[v] > tree.depths[u] {
        v = tree.heads[v].expect("deeper node has a head");
    }
    while u != v {
        u = tree.heads[u].expect("non-root at equal depth");
        v = tree.heads[v].expect("non-root at equal depth");
    }
    u
}

/// Deepest node that is an ancestor-or-self of every node in the set.
pub fn lca(tree: &DepTree, nodes: &[usize]) -> Result<usize, SpceError> {
    for &node in nodes {
        if node >= tree.len() {
            return Err(SpceError::NodeOutOfRange { node, n: tree.len() });
        }
    }
    let (&first, rest) = nodes.split_first().ok_or(SpceError::EmptyNodeSet)?;
    Ok(rest.iter().fold(first, |acc, &v| lca_pair(tree, acc, v)))
}

fn close(
    tree: &DepTree,
    errors: Interval,
    mut trace: Option<&mut Vec<Vec<usize>>>,
) -> Result<Interval, SpceError> {
    let n = tree.len();
    if errors.l > errors.r {
        return Err(SpceError::InvalidInterval { l: errors.l, r: errors.r });
    }
    if errors.r >= n {
        return Err(SpceError::IntervalOutOfRange { l: errors.l, r: errors.r, n });
    }

    let mut member = vec![false; n];
    member[errors.l..=errors.r].fill(true);
    let mut count = errors.r - errors.l + 1;
    let members =
        |m: &[bool]| m.iter().enumerate().filter_map(|(i, &x)| x.then_some(i)).collect::<Vec<_>>();
    if let Some(t) = trace.as_deref_mut() {
        t.push(members(&member));
    }

    loop {
        let before = count;
        let nodes = members(&member);
        let a = nodes[1..].iter().fold(nodes[0], |acc, &v| lca_pair(tree, acc, v));
        for &p in &nodes {
            let mut cur = p;
            loop {
                if !member[cur] {
                    member[cur] = true;
                    count += 1;
                }
                if cur == a {
                    break;
                }
                cur = tree.heads[cur].expect("lca is an ancestor of every member");
            }
        }
        let l = member.iter().position(|&x| x).expect("set is non-empty");
        let r = member.iter().rposition(|&x| x).expect("set is non-empty");
        for slot in &mut member[l..=r] {
            if !*slot {
                *slot = true;
                count += 1;
            }
        }
        if count == before {
            return Ok(Interval { l, r });
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(members(&member));
        }
    }
}

/// Shortest contiguous dependency-coherent phrase containing the error
/// interval, as the fixpoint of the LCA/path/gap-fill closure.
pub fn spce(tree: &DepTree, errors: Interval) -> Result<Interval, SpceError> {
    close(tree, errors, None)
}

/// [`spce`] plus the member set recorded before the first iteration and
/// after every growing iteration (the final no-change check is silent).
pub fn spce_trace(tree: &DepTree, errors: Interval) -> Result<(Interval, Vec<Vec<usize>>), SpceError> {
    let mut steps = Vec::new();
    let out = close(tree, errors, Some(&mut steps))?;
    Ok((out, steps))
}

/// Phrase-level spans from per-token severities: run [`spce`] on each
/// maximal non-OK run, merge overlapping or adjacent phrases, and give each
/// final span the maximum severity of the original error tokens inside it.
pub fn aggregate_spans(tree: &DepTree, severities: &[Severity]) -> Result<Vec<ErrorSpan>, SpceError> {
    if severities.len() != tree.len() {
        return Err(SpceError::SeverityLength { got: severities.len(), n: tree.len() });
    }
    let mut intervals = Vec::new();
    let mut i = 0;
    while i < severities.len() {
        if severities[i] == Severity::Ok {
            i += 1;
            continue;
        }
        let start = i;
        while i < severities.len() && severities[i] != Severity::Ok {
            i += 1;
        }
        intervals.push(spce(tree, Interval { l: start, r: i - 1 })?);
    }
    intervals.sort_by_key(|iv| (iv.l, iv.r));
    let mut merged: Vec<Interval> = Vec::new();
    for iv in intervals {
        match merged.last_mut() {
            Some(last) if iv.l <= last.r + 1 => last.r = last.r.max(iv.r),
            _ => merged.push(iv),
        }
    }
    Ok(merged
        .into_iter()
        .map(|iv| ErrorSpan {
            start: iv.l,
            end: iv.r,
            // every merged interval holds at least one non-OK token, and OK
            // never wins a max against one
            severity: (iv.l..=iv.r).map(|i| severities[i]).max().expect("non-empty interval"),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// take(0) some(1) action(2) with(3) his(4) consent(5);
    /// some -> action -> take, with -> consent -> take, his -> consent
    fn phrase_tree() -> DepTree {
        DepTree::new(vec![None, Some(2), Some(0), Some(5), Some(5), Some(0)]).unwrap()
    }

    #[test]
    fn tree_construction_and_validation() {
        let tree = phrase_tree();
        assert_eq!(tree.len(), 6);
        assert_eq!(tree.root(), 0);
        assert_eq!(tree.depth(0), 0);
        assert_eq!(tree.depth(1), 2);
        assert_eq!(tree.depth(4), 2);

        assert!(matches!(DepTree::new(vec![]), Err(TreeError::MissingRoot)));
        assert!(matches!(
            DepTree::new(vec![Some(1), Some(0)]),
            Err(TreeError::MissingRoot) | Err(TreeError::Cycle { .. })
        ));
        assert!(matches!(
            DepTree::new(vec![None, None]),
            Err(TreeError::MultipleRoots { first: 0, second: 1 })
        ));
        assert!(matches!(
            DepTree::new(vec![None, Some(7)]),
            Err(TreeError::HeadOutOfRange { node: 1, head: 7, n: 2 })
        ));
        assert!(matches!(
            DepTree::new(vec![None, Some(2), Some(1)]),
            Err(TreeError::Cycle { .. })
        ));
        assert!(matches!(DepTree::new(vec![None, Some(1)]), Err(TreeError::Cycle { node: 1 })));
    }

    #[test]
    fn lca_cases() {
        let tree = phrase_tree();
        assert_eq!(lca(&tree, &[1]).unwrap(), 1);
        assert_eq!(lca(&tree, &[0, 4]).unwrap(), 0);
        assert_eq!(lca(&tree, &[3, 4]).unwrap(), 5);
        assert_eq!(lca(&tree, &[1, 3]).unwrap(), 0);
        assert_eq!(lca(&tree, &[1, 2]).unwrap(), 2);
        assert!(matches!(lca(&tree, &[]), Err(SpceError::EmptyNodeSet)));
        assert!(matches!(lca(&tree, &[9]), Err(SpceError::NodeOutOfRange { node: 9, n: 6 })));

        // chain a -> b -> c(root) with d a sibling of b under c
        let chain = DepTree::new(vec![Some(1), Some(2), None, Some(2)]).unwrap();
        assert_eq!(lca(&chain, &[0, 3]).unwrap(), 2);
    }

    #[test]
    fn phrase_expansion_matches_hand_walkthrough() {
        // errors "action with his": the LCA is "take", the path from "his"
        // climbs through "consent", and the gap fill pulls in "some"
        let tree = phrase_tree();
        let (out, steps) = spce_trace(&tree, Interval { l: 2, r: 4 }).unwrap();
        assert_eq!(out, Interval { l: 0, r: 5 });
        assert_eq!(steps, vec![vec![2, 3, 4], vec![0, 1, 2, 3, 4, 5]]);
    }

    #[test]
    fn fixpoints_stay_put() {
        let tree = phrase_tree();
        assert_eq!(spce(&tree, Interval { l: 0, r: 5 }).unwrap(), Interval { l: 0, r: 5 });
        // singletons are their own lowest common ancestor
        assert_eq!(spce(&tree, Interval { l: 1, r: 1 }).unwrap(), Interval { l: 1, r: 1 });
        assert_eq!(spce(&tree, Interval { l: 3, r: 3 }).unwrap(), Interval { l: 3, r: 3 });
    }

    #[test]
    fn interval_validation() {
        let tree = phrase_tree();
        assert!(matches!(
            spce(&tree, Interval { l: 3, r: 2 }),
            Err(SpceError::InvalidInterval { l: 3, r: 2 })
        ));
        assert!(matches!(
            spce(&tree, Interval { l: 4, r: 6 }),
            Err(SpceError::IntervalOutOfRange { n: 6, .. })
        ));
    }

    #[test]
    fn aggregate_contiguous_run_becomes_one_phrase() {
        let tree = phrase_tree();
        use Severity::*;
        let spans = aggregate_spans(&tree, &[Ok, Ok, Critical, Minor, Minor, Ok]).unwrap();
        assert_eq!(spans, vec![ErrorSpan { start: 0, end: 5, severity: Critical }]);
    }

    #[test]
    fn aggregate_separate_runs_stay_separate_when_phrases_do() {
        let tree = phrase_tree();
        use Severity::*;
        let spans = aggregate_spans(&tree, &[Ok, Ok, Critical, Ok, Minor, Ok]).unwrap();
        assert_eq!(
            spans,
            vec![
                ErrorSpan { start: 2, end: 2, severity: Critical },
                ErrorSpan { start: 4, end: 4, severity: Minor },
            ]
        );
    }

    #[test]
    fn aggregate_keeps_singleton_runs_apart_on_a_chain() {
        // a single-node run is its own lowest common ancestor, so it never
        // grows; the OK token in between keeps the two phrases separate
        let tree = DepTree::new(vec![None, Some(0), Some(1)]).unwrap();
        use Severity::*;
        let spans = aggregate_spans(&tree, &[Minor, Ok, Major]).unwrap();
        assert_eq!(
            spans,
            vec![
                ErrorSpan { start: 0, end: 0, severity: Minor },
                ErrorSpan { start: 2, end: 2, severity: Major },
            ]
        );
    }

    #[test]
    fn aggregate_merges_phrases_that_grow_into_contact() {
        // tokens 0 and 1 hang off token 2, so the run {0, 1} expands to
        // [0, 2]; that phrase now touches the singleton run at {3}, and the
        // two merge into one span carrying the maximum severity
        let tree = DepTree::new(vec![Some(2), Some(2), None, Some(2)]).unwrap();
        use Severity::*;
        let spans = aggregate_spans(&tree, &[Minor, Minor, Ok, Major]).unwrap();
        assert_eq!(spans, vec![ErrorSpan { start: 0, end: 3, severity: Major }]);
    }

    #[test]
    fn aggregate_all_ok_is_empty() {
        let tree = phrase_tree();
        assert_eq!(aggregate_spans(&tree, &[Severity::Ok; 6]).unwrap(), vec![]);
        assert!(matches!(
            aggregate_spans(&tree, &[Severity::Ok; 4]),
            Err(SpceError::SeverityLength { got: 4, n: 6 })
        ));
    }

    #[test]
    fn conllu_minimal_sentence() {
        let text = "1\tb\t_\t_\t_\t_\t2\t_\t_\t_\n2\ta\t_\t_\t_\t_\t0\t_\t_\t_\n";
        let trees = parse_conllu(text).unwrap();
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0], DepTree::new(vec![Some(1), None]).unwrap());
    }

    #[test]
    fn conllu_skips_ranges_empty_nodes_and_comments() {
        let text = "# sent_id = 1\n\
                    1-2\tab\t_\t_\t_\t_\t_\t_\t_\t_\n\
                    1\ta\t_\t_\t_\t_\t2\t_\t_\t_\n\
                    2\tb\t_\t_\t_\t_\t0\t_\t_\t_\n\
                    2.1\tghost\t_\t_\t_\t_\t_\t_\t_\t_\n\
                    \n\
                    1\tc\t_\t_\t_\t_\t0\t_\t_\t_";
        let trees = parse_conllu(text).unwrap();
        assert_eq!(trees.len(), 2);
        assert_eq!(trees[0].len(), 2);
        assert_eq!(trees[1].len(), 1);
    }

    #[test]
    fn conllu_error_lines() {
        let bad_head = "1\ta\t_\t_\t_\t_\t5\t_\t_\t_\n2\tb\t_\t_\t_\t_\t0\t_\t_\t_\n3\tc\t_\t_\t_\t_\t2\t_\t_\t_\n";
        assert!(matches!(
            parse_conllu(bad_head),
            Err(ConlluError::HeadRange { line: 1, head: 5, n: 3 })
        ));

        let short = "1\ta\t_\t_\t_\t2\t_\t_\t_\n";
        assert!(matches!(parse_conllu(short), Err(ConlluError::Columns { line: 1, got: 9 })));

        let gap = "1\ta\t_\t_\t_\t_\t0\t_\t_\t_\n3\tb\t_\t_\t_\t_\t1\t_\t_\t_\n";
        assert!(matches!(
            parse_conllu(gap),
            Err(ConlluError::Sequence { line: 2, expected: 2, got: 3 })
        ));

        let no_root = "1\ta\t_\t_\t_\t_\t2\t_\t_\t_\n2\tb\t_\t_\t_\t_\t1\t_\t_\t_\n";
        assert!(matches!(parse_conllu(no_root), Err(ConlluError::NoRoot { line: 1 })));

        let two_roots = "1\ta\t_\t_\t_\t_\t0\t_\t_\t_\n2\tb\t_\t_\t_\t_\t0\t_\t_\t_\n";
        assert!(matches!(parse_conllu(two_roots), Err(ConlluError::ExtraRoot { line: 2 })));

        let bad_head_text = "1\ta\t_\t_\t_\t_\t_\t_\t_\t_\n";
        assert!(matches!(parse_conllu(bad_head_text), Err(ConlluError::Head { line: 1, .. })));
    }

    /// Backward-pointing random trees: node 0 is the root, every other node
    /// heads to some earlier node.
    fn tree_strategy() -> impl Strategy<Value = DepTree> {
        (1usize..10)
            .prop_flat_map(|n| {
                proptest::collection::vec(0usize..n.max(1), n.saturating_sub(1))
                    .prop_map(move |raw| {
                        let mut heads = vec![None];
                        for (i, h) in raw.into_iter().enumerate() {
                            heads.push(Some(h % (i + 1)));
                        }
                        DepTree::new(heads).unwrap()
                    })
            })
    }

    proptest! {
        #[test]
        fn output_contains_input(tree in tree_strategy(), seed in any::<u64>()) {
            let n = tree.len();
            let l = (seed as usize) % n;
            let r = l + (seed >> 32) as usize % (n - l);
            let out = spce(&tree, Interval { l, r }).unwrap();
            prop_assert!(out.l <= l && r <= out.r && out.r < n);
        }

        #[test]
        fn expansion_is_idempotent(tree in tree_strategy(), seed in any::<u64>()) {
            let n = tree.len();
            let l = (seed as usize) % n;
            let r = l + (seed >> 32) as usize % (n - l);
            let once = spce(&tree, Interval { l, r }).unwrap();
            let twice = spce(&tree, once).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn trace_grows_strictly_and_terminates(tree in tree_strategy()) {
            let n = tree.len();
            let (_, steps) = spce_trace(&tree, Interval { l: n / 2, r: n / 2 }).unwrap();
            prop_assert!(steps.len() <= n + 1);
            for w in steps.windows(2) {
                prop_assert!(w[0].len() < w[1].len());
            }
        }

        #[test]
        fn aggregate_output_covers_error_tokens(
            tree in tree_strategy(),
            raw in proptest::collection::vec(0u8..4, 1..10),
        ) {
            let n = tree.len();
            let severities: Vec<Severity> = (0..n)
                .map(|i| match raw[i % raw.len()] {
                    0 => Severity::Ok,
                    1 => Severity::Minor,
                    2 => Severity::Major,
                    _ => Severity::Critical,
                })
                .collect();
            let spans = aggregate_spans(&tree, &severities).unwrap();
            for w in spans.windows(2) {
                prop_assert!(w[0].end + 1 < w[1].start);
            }
            for (i, &s) in severities.iter().enumerate() {
                if s != Severity::Ok {
                    let covering = spans.iter().find(|sp| sp.start <= i && i <= sp.end);
                    prop_assert!(covering.is_some());
                    prop_assert!(covering.unwrap().severity >= s);
                }
            }
        }
    }
}
