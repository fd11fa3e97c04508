use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{bleu_up_to, cider, meteor_corpus, rouge_l_corpus, MetricError, SynonymTable, Tokens};

/// Column order of the results table.
pub const METRIC_NAMES: [&str; 7] = ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE", "METEOR", "CIDEr"];

/// Raw (unscaled) scores of one generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
}

impl MetricScores {
    /// Values in [`METRIC_NAMES`] order.
    pub fn as_array(&self) -> [f64; 7] {
        [self.bleu[0], self.bleu[1], self.bleu[2], self.bleu[3], self.rouge_l, self.meteor, self.cider]
    }
}

pub fn score_corpus(
    candidates: &[Tokens],
    references: &[Vec<Tokens>],
    synonyms: &SynonymTable,
) -> Result<MetricScores, MetricError> {
    let b = bleu_up_to(candidates, references, 4)?;
    Ok(MetricScores {
        bleu: [b[0], b[1], b[2], b[3]],
        rouge_l: rouge_l_corpus(candidates, references)?,
        meteor: meteor_corpus(candidates, references, synonyms)?,
        cider: cider(candidates, references)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation across runs, scaled by 100.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub runs: Vec<MetricScores>,
    pub summaries: Vec<(&'static str, MetricSummary)>,
}

impl MetricReport {
    pub fn from_runs(runs: Vec<MetricScores>) -> Result<Self, MetricError> {
        if runs.is_empty() {
            return Err(MetricError::EmptyCorpus);
        }
        let k = runs.len() as f64;
        let summaries = METRIC_NAMES
            .iter()
            .enumerate()
            .map(|(i, &name)| {
                let values: Vec<f64> = runs.iter().map(|r| r.as_array()[i] * 100.0).collect();
                let mean = values.iter().sum::<f64>() / k;
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
                (name, MetricSummary { mean, std: var.sqrt() })
            })
            .collect();
        Ok(Self { runs, summaries })
    }

    pub fn get(&self, name: &str) -> Option<MetricSummary> {
        self.summaries.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
    }

    /// `{metric: {mean, std}}` with keys in table order.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (name, s) in &self.summaries {
            map.insert((*name).to_owned(), serde_json::json!({ "mean": s.mean, "std": s.std }));
        }
        serde_json::Value::Object(map)
    }

    /// Fixed-width text table, one header row and one `mean±std` row.
    pub fn to_table(&self, label: &str) -> String {
        let width = label.len().max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<width$}", "Method");
        for name in METRIC_NAMES {
            let _ = write!(out, " | {name:>11}");
        }
        out.push('\n');
        let _ = write!(out, "{:<width$}", label);
        for (_, s) in &self.summaries {
            let cell = format!("{:.1}±{:.1}", s.mean, s.std);
            let _ = write!(out, " | {cell:>11}");
        }
        out.push('\n');
        out
    }
}

/// Scores every run against the shared references and aggregates them.
pub fn evaluate_corpus(
    runs: &[Vec<Tokens>],
    references: &[Vec<Tokens>],
    synonyms: &SynonymTable,
) -> Result<MetricReport, MetricError> {
    if runs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let scores = runs
        .iter()
        .enumerate()
        .map(|(run, cands)| {
            if cands.len() != references.len() {
                return Err(MetricError::RunLengthMismatch {
                    run,
                    got: cands.len(),
                    expected: references.len(),
                });
            }
            score_corpus(cands, references, synonyms)
        })
        .collect::<Result<Vec<_>, _>>()?;
    MetricReport::from_runs(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(v: f64) -> MetricScores {
        MetricScores { bleu: [v; 4], rouge_l: v, meteor: v, cider: v }
    }

    #[test]
    fn single_run_has_zero_std() {
        let r = MetricReport::from_runs(vec![scores(0.5)]).unwrap();
        assert!(r.summaries.iter().all(|(_, s)| s.std == 0.0 && (s.mean - 50.0).abs() < 1e-12));
    }

    #[test]
    fn population_std_across_runs() {
        let r = MetricReport::from_runs(vec![scores(0.2), scores(0.4)]).unwrap();
        let s = r.get("METEOR").unwrap();
        assert!((s.mean - 30.0).abs() < 1e-12);
        assert!((s.std - 10.0).abs() < 1e-12);
    }

    #[test]
    fn json_and_table_follow_column_order() {
        let r = MetricReport::from_runs(vec![scores(0.1)]).unwrap();
        let json = r.to_json();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, METRIC_NAMES);
        let table = r.to_table("ABEN");
        let header = table.lines().next().unwrap();
        let positions: Vec<_> = METRIC_NAMES.iter().map(|n| header.find(n).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn mismatched_run_is_rejected() {
        let refs = vec![vec![vec!["a".to_string()]]];
        let err = evaluate_corpus(&[vec![]], &refs, &SynonymTable::new()).unwrap_err();
        assert_eq!(err, MetricError::RunLengthMismatch { run: 0, got: 0, expected: 1 });
    }
}
