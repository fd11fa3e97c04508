use std::collections::{HashMap, HashSet};

use crate::{check_aligned, ngram_counts, MetricError, Tokens};

/// Conventional output scale of CIDEr.
pub const CIDER_SCALE: f64 = 10.0;
const MAX_ORDER: usize = 4;

type Vector<'a> = HashMap<&'a [String], f64>;

fn tfidf<'a>(tokens: &'a [String], n: usize, df: &HashMap<&[String], usize>, log_corpus: f64) -> Vector<'a> {
    let counts = ngram_counts(tokens, n);
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(gram, count)| {
            let doc_freq = df.get(gram).copied().unwrap_or(0).max(1) as f64;
            let tf = count as f64 / total as f64;
            (gram, tf * (log_corpus - doc_freq.ln()))
        })
        .collect()
}

fn cosine(a: &Vector<'_>, b: &Vector<'_>) -> f64 {
    let norm = |v: &Vector<'_>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    // iterate in a fixed order so the sum does not depend on hash seeds
    let mut keys: Vec<_> = a.keys().filter(|k| b.contains_key(*k)).collect();
    keys.sort();
    let dot: f64 = keys.iter().map(|k| a[*k] * b[*k]).sum();
    dot / (na * nb)
}

/// Per-sample CIDEr scores (already multiplied by [`CIDER_SCALE`]).
///
/// Document frequencies are taken over the reference sets: an n-gram's
/// frequency is the number of samples whose references contain it.
pub fn cider_per_sample(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<Vec<f64>, MetricError> {
    check_aligned(candidates, references)?;
    let corpus_size = references.len();
    if corpus_size < 2 {
        log::warn!("CIDEr on a corpus of {corpus_size} sample(s): every IDF weight is log({corpus_size})");
    }
    let log_corpus = (corpus_size as f64).ln();

    let mut per_sample = vec![0.0; candidates.len()];
    for n in 1..=MAX_ORDER {
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for refs in references {
            let grams: HashSet<&[String]> = refs
                .iter()
                .flat_map(|r| r.windows(n))
                .collect();
            for g in grams {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        for (score, (cand, refs)) in per_sample.iter_mut().zip(candidates.iter().zip(references)) {
            let c = tfidf(cand, n, &df, log_corpus);
            let sim: f64 = refs
                .iter()
                .map(|r| cosine(&c, &tfidf(r, n, &df, log_corpus)))
                .sum::<f64>()
                / refs.len() as f64;
            *score += sim / MAX_ORDER as f64;
        }
    }
    Ok(per_sample.into_iter().map(|s| s * CIDER_SCALE).collect())
}

/// Corpus CIDEr: mean of the per-sample scores.
pub fn cider(candidates: &[Tokens], references: &[Vec<Tokens>]) -> Result<f64, MetricError> {
    let scores = cider_per_sample(candidates, references)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
