use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::{check_aligned, MetricError, Tokens};

/// Word → synonym set. Lookups are symmetric.
#[derive(Debug, Clone, Default)]
pub struct SynonymTable {
    entries: BTreeMap<String, BTreeSet<String>>,
}

impl SynonymTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, synonym: &str) {
        self.entries
            .entry(word.to_owned())
            .or_default()
            .insert(synonym.to_owned());
    }

    /// Parses lines of the form `word: syn1 syn2 ...`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, MetricError> {
        let mut table = Self::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, syns) = line.split_once(':').ok_or_else(|| MetricError::SynonymFormat {
                line: idx + 1,
                reason: "missing ':'".into(),
            })?;
            let word = word.trim();
            if word.is_empty() || word.contains(char::is_whitespace) {
                return Err(MetricError::SynonymFormat {
                    line: idx + 1,
                    reason: format!("bad headword {word:?}"),
                });
            }
            for syn in syns.split_whitespace() {
                table.insert(word, syn);
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let text = std::fs::read_to_string(path).map_err(|e| MetricError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        let has = |x: &str, y: &str| self.entries.get(x).is_some_and(|s| s.contains(y));
        has(a, b) || has(b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeteorParams {
    /// Weight of recall relative to precision in the harmonic mean.
    pub recall_weight: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self { recall_weight: 9.0, gamma: 0.5, beta: 3.0 }
    }
}

/// Summary of the chosen unigram alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Alignment {
    pub exact: usize,
    pub matches: usize,
    pub chunks: usize,
}

impl Alignment {
    // Fewer exact matches, then fewer total matches, then more chunks is worse.
    fn better_than(&self, other: &Alignment) -> bool {
        (self.exact, self.matches, std::cmp::Reverse(self.chunks))
            > (other.exact, other.matches, std::cmp::Reverse(other.chunks))
    }

    /// Score of an alignment between sentences of the given lengths.
    pub fn score(&self, cand_len: usize, ref_len: usize, params: &MeteorParams) -> f64 {
        if self.matches == 0 {
            return 0.0;
        }
        let m = self.matches as f64;
        let p = m / cand_len as f64;
        let r = m / ref_len as f64;
        let f_mean = (1.0 + params.recall_weight) * p * r / (r + params.recall_weight * p);
        let penalty = params.gamma * (self.chunks as f64 / m).powf(params.beta);
        f_mean * (1.0 - penalty)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Link {
    None,
    Exact,
    Synonym,
}

struct Aligner {
    links: Vec<Vec<Link>>,
    memo: HashMap<(usize, Vec<u64>, Option<usize>), Alignment>,
}

impl Aligner {
    fn best(&mut self, i: usize, used: &mut Vec<u64>, prev: Option<usize>) -> Alignment {
        if i == self.links.len() {
            return Alignment::default();
        }
        let key = (i, used.clone(), prev);
        if let Some(hit) = self.memo.get(&key) {
            return *hit;
        }
        let mut best = self.best(i + 1, used, None);
        for j in 0..self.links[i].len() {
            let link = self.links[i][j];
            if link == Link::None || used[j / 64] & (1 << (j % 64)) != 0 {
                continue;
            }
            used[j / 64] |= 1 << (j % 64);
            let mut rest = self.best(i + 1, used, Some(j));
            used[j / 64] &= !(1 << (j % 64));
            rest.matches += 1;
            rest.exact += usize::from(link == Link::Exact);
            // a pair continues the running chunk only if (i-1, j-1) is aligned
            if !(j > 0 && prev == Some(j - 1)) {
                rest.chunks += 1;
            }
            if rest.better_than(&best) {
                best = rest;
            }
        }
        self.memo.insert(key, best);
        best
    }
}

/// Finds the alignment maximizing exact matches, then total matches, then
/// minimizing the number of chunks. Exact matches take precedence over
/// synonym matches.
pub fn align(candidate: &[String], reference: &[String], synonyms: &SynonymTable) -> Alignment {
    let links: Vec<Vec<Link>> = candidate
        .iter()
        .map(|c| {
            reference
                .iter()
                .map(|r| {
                    if c == r {
                        Link::Exact
                    } else if synonyms.are_synonyms(c, r) {
                        Link::Synonym
                    } else {
                        Link::None
                    }
                })
                .collect()
        })
        .collect();
    let mut aligner = Aligner { links, memo: HashMap::new() };
    let mut used = vec![0u64; reference.len().div_ceil(64).max(1)];
    aligner.best(0, &mut used, None)
}

fn meteor_single(candidate: &[String], reference: &[String], synonyms: &SynonymTable, params: &MeteorParams) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    align(candidate, reference, synonyms).score(candidate.len(), reference.len(), params)
}

/// Sentence METEOR with default parameters: best score over the reference set.
pub fn meteor(candidate: &[String], references: &[Tokens], synonyms: &SynonymTable) -> f64 {
    let params = MeteorParams::default();
    references
        .iter()
        .map(|r| meteor_single(candidate, r, synonyms, &params))
        .fold(0.0, f64::max)
}

/// Mean sentence METEOR over a corpus.
pub fn meteor_corpus(
    candidates: &[Tokens],
    references: &[Vec<Tokens>],
    synonyms: &SynonymTable,
) -> Result<f64, MetricError> {
    check_aligned(candidates, references)?;
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| meteor(c, r, synonyms))
        .sum();
    Ok(total / candidates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize;

    #[test]
    fn no_overlap_is_zero() {
        let s = SynonymTable::new();
        assert_eq!(meteor(&tokenize("a b"), &[tokenize("c d")], &s), 0.0);
    }

    #[test]
    fn identical_sentence_single_chunk() {
        let s = SynonymTable::new();
        for m in 1..8usize {
            let sent: Tokens = (0..m).map(|i| format!("w{i}")).collect();
            let expected = 1.0 - 0.5 * (1.0 / m as f64).powi(3);
            assert!((meteor(&sent, &[sent.clone()], &s) - expected).abs() < 1e-15);
        }
        assert_eq!(meteor(&tokenize("cup"), &[tokenize("cup")], &s), 0.5);
    }

    #[test]
    fn chunks_counted_on_reordering() {
        let a = align(&tokenize("a b c d"), &tokenize("c d a b"), &SynonymTable::new());
        assert_eq!(a, Alignment { exact: 4, matches: 4, chunks: 2 });
    }

    #[test]
    fn repeated_words_prefer_fewer_chunks() {
        let a = align(&tokenize("the cup the table"), &tokenize("the table the cup"), &SynonymTable::new());
        assert_eq!(a.matches, 4);
        assert_eq!(a.chunks, 2);
    }

    #[test]
    fn synonyms_match_after_exact() {
        let table = SynonymTable::parse("mug: cup\n# comment\n\nglass: tumbler").unwrap();
        let a = align(&tokenize("bring the cup"), &tokenize("bring the mug"), &table);
        assert_eq!(a, Alignment { exact: 2, matches: 3, chunks: 1 });
        assert!(table.are_synonyms("cup", "mug"));
        assert!(!table.are_synonyms("cup", "glass"));
    }

    #[test]
    fn synonym_file_errors_report_line() {
        let err = SynonymTable::parse("ok: fine\nbroken line").unwrap_err();
        assert_eq!(err, MetricError::SynonymFormat { line: 2, reason: "missing ':'".into() });
    }
}
