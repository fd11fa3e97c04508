use crate::{check_aligned, MetricError, Tokens};

/// Recall weight of the LCS F-measure.
pub const ROUGE_BETA: f64 = 1.2;

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn lcs_f(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Sentence ROUGE-L: best LCS F-measure over the reference set.
pub fn rouge_l(candidate: &[String], references: &[Tokens]) -> f64 {
    references
        .iter()
        .map(|r| lcs_f(candidate, r))
        .fold(0.0, f64::max)
}

/// Mean sentence ROUGE-L over a corpus.
pub fn rouge_l_corpus(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<f64, MetricError> {
    check_aligned(candidates, references)?;
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| rouge_l(c, r))
        .sum();
    Ok(total / candidates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize;

    #[test]
    fn identical_is_one() {
        let s = tokenize("go to the shelf");
        assert!((rouge_l(&s, &[s.clone()]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_precision_and_recall() {
        let c = tokenize("a b c d");
        let r = tokenize("a c d e");
        assert_eq!(lcs_len(&c, &r), 3);
        assert!((rouge_l(&c, &[r]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(rouge_l(&tokenize("a b"), &[tokenize("c d")]), 0.0);
        assert_eq!(rouge_l(&[], &[tokenize("c d")]), 0.0);
    }

    #[test]
    fn multi_reference_takes_max() {
        let c = tokenize("a b c");
        let score = rouge_l(&c, &[tokenize("x y z"), tokenize("a b c")]);
        assert!((score - 1.0).abs() < 1e-12);
    }
}
