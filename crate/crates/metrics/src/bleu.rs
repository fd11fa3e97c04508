use crate::{check_aligned, ngram_counts, MetricError, Tokens};

/// Sufficient statistics for corpus BLEU.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuStats {
    /// Clipped match count per order (index 0 is unigrams).
    pub matches: Vec<usize>,
    /// Candidate n-gram count per order.
    pub totals: Vec<usize>,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn collect(
        candidates: &[Tokens],
        references: &[Vec<Tokens>],
        max_order: usize,
    ) -> Result<Self, MetricError> {
        check_aligned(candidates, references)?;
        let mut stats = BleuStats {
            matches: vec![0; max_order],
            totals: vec![0; max_order],
            candidate_len: 0,
            reference_len: 0,
        };
        for (cand, refs) in candidates.iter().zip(references) {
            stats.candidate_len += cand.len();
            stats.reference_len += closest_ref_len(cand.len(), refs);
            for n in 1..=max_order {
                let cand_counts = ngram_counts(cand, n);
                let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
                for (gram, &count) in &cand_counts {
                    let max_ref = ref_counts
                        .iter()
                        .map(|rc| rc.get(gram).copied().unwrap_or(0))
                        .max()
                        .unwrap_or(0);
                    stats.matches[n - 1] += count.min(max_ref);
                    stats.totals[n - 1] += count;
                }
            }
        }
        Ok(stats)
    }

    pub fn brevity_penalty(&self) -> f64 {
        let c = self.candidate_len as f64;
        let r = self.reference_len as f64;
        if c == 0.0 {
            0.0
        } else if c > r {
            1.0
        } else {
            (1.0 - r / c).exp()
        }
    }

    /// Unsmoothed BLEU over orders `1..=n`.
    pub fn score(&self, n: usize) -> f64 {
        assert!(n >= 1 && n <= self.matches.len(), "order {n} not collected");
        let mut log_sum = 0.0;
        for k in 0..n {
            if self.matches[k] == 0 || self.totals[k] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[k] as f64 / self.totals[k] as f64).ln();
        }
        self.brevity_penalty() * (log_sum / n as f64).exp()
    }
}

// Reference length closest to the candidate length; ties go to the shorter one.
fn closest_ref_len(cand_len: usize, refs: &[Tokens]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(cand_len), len))
        .unwrap_or(0)
}

/// Corpus-level BLEU-`n`.
pub fn bleu(candidates: &[Tokens], references: &[Vec<Tokens>], n: usize) -> Result<f64, MetricError> {
    Ok(BleuStats::collect(candidates, references, n)?.score(n))
}

/// BLEU-1 through BLEU-`max_order` sharing one statistics pass.
pub fn bleu_up_to(
    candidates: &[Tokens],
    references: &[Vec<Tokens>],
    max_order: usize,
) -> Result<Vec<f64>, MetricError> {
    let stats = BleuStats::collect(candidates, references, max_order)?;
    Ok((1..=max_order).map(|n| stats.score(n)).collect())
}
