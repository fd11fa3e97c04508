//! Captioning metrics computed from first principles.
//!
//! All scorers operate on pre-tokenized word sequences. Corpus-level entry
//! points take a candidate list aligned index-by-index with a list of
//! reference sets (one set per candidate, each holding one or more
//! references).

mod bleu;
mod cider;
mod meteor;
mod report;
mod rouge;

pub use bleu::{bleu, bleu_up_to, BleuStats};
pub use cider::{cider, cider_per_sample, CIDER_SCALE};
pub use meteor::{align, meteor, meteor_corpus, Alignment, MeteorParams, SynonymTable};
pub use report::{evaluate_corpus, score_corpus, MetricReport, MetricScores, MetricSummary, METRIC_NAMES};
pub use rouge::{lcs_len, rouge_l, rouge_l_corpus, ROUGE_BETA};

use thiserror::Error;

/// A tokenized sentence.
pub type Tokens = Vec<String>;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("score is undefined on an empty candidate corpus")]
    EmptyCorpus,
    #[error("{candidates} candidates but {references} reference sets")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("reference set {0} is empty")]
    EmptyReferenceSet(usize),
    #[error("run {run} has {got} candidates, expected {expected}")]
    RunLengthMismatch { run: usize, got: usize, expected: usize },
    #[error("malformed synonym table line {line}: {reason}")]
    SynonymFormat { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Whitespace tokenization used for scoring.
pub fn tokenize(sentence: &str) -> Tokens {
    sentence.split_whitespace().map(str::to_owned).collect()
}

pub(crate) fn check_aligned(
    candidates: &[Tokens],
    references: &[Vec<Tokens>],
) -> Result<(), MetricError> {
    if candidates.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if let Some(i) = references.iter().position(|r| r.is_empty()) {
        return Err(MetricError::EmptyReferenceSet(i));
    }
    Ok(())
}

/// Counts of every n-gram of order `n` in `tokens`.
pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> std::collections::HashMap<&[String], usize> {
    let mut counts = std::collections::HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}
