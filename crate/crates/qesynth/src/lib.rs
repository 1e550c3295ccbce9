//! Synthetic quality-estimation data for machine translation.
//!
//! The toolkit builds MQM-style training records from parallel text in four
//! stages: constrained beam search generates pseudo-translations that keep the
//! reference structure, edit-rate alignment against the reference yields
//! coarse OK/BAD word labels, forced-decoding probabilities from a second
//! model refine the BAD labels into four-way severities, and a dependency-tree
//! closure expands token errors into contiguous phrase spans. A metrics module
//! covers the evaluation suite (correlations, MCC, F1, severity-weighted span
//! F1, BLEU, error rate, the Williams test, and error-rate-matched
//! downsampling), and a pipeline module wires the stages together behind a
//! single config.
//!
//! Every operation is deterministic given its inputs; the pipeline derives
//! one independent random stream per stage from a single seed so adding a
//! stage never perturbs another stage's draws.

pub mod annotate;
pub mod decode;
pub mod metrics;
pub mod mqm;
pub mod pipeline;
pub mod spce;
pub mod ter;

/// FNV-1a 64-bit hash, used for training-pair fingerprints and for deriving
/// per-stage random streams from stage names.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}
