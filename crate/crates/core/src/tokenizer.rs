//! Subword vocabulary, greedy longest-match tokenization and the frozen
//! subword embedding table.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{AbenError, Result};
use crate::nn::Tensor;

pub const CONTINUATION_PREFIX: &str = "##";
pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const BOS_TOKEN: &str = "[BOS]";
pub const EOS_TOKEN: &str = "[EOS]";

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

const SPECIALS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

/// Dense id ↔ subword map. Ids 0..4 are `[PAD] [UNK] [BOS] [EOS]`;
/// non-initial pieces of a word carry the `##` prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Subword ids, optionally framed by BOS/EOS.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        Self { ids }
    }

    /// `[BOS] ids.. [EOS]`.
    pub fn framed(&self) -> Self {
        let mut ids = Vec::with_capacity(self.ids.len() + 2);
        ids.push(BOS);
        ids.extend(&self.ids);
        ids.push(EOS);
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl SubwordVocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..4].iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(AbenError::Vocab(format!("first four tokens must be {SPECIALS:?}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t == CONTINUATION_PREFIX || t.chars().any(char::is_whitespace) {
                return Err(AbenError::Vocab(format!("invalid token {t:?} at line {}", i + 1)));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(AbenError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Builds a toy vocabulary: the `top_k` most frequent words (ties broken
    /// alphabetically) followed by every observed character as a word-initial
    /// piece and as a `##` continuation piece.
    pub fn build_from_corpus<S: AsRef<str>>(sentences: &[S], top_k: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut chars = BTreeSet::new();
        for s in sentences {
            for w in s.as_ref().split_whitespace() {
                *counts.entry(w).or_insert(0) += 1;
                chars.extend(w.chars());
            }
        }
        let mut words: Vec<(&str, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut seen: BTreeSet<String> = tokens.iter().cloned().collect();
        let candidates = words
            .into_iter()
            .take(top_k)
            .map(|(w, _)| w.to_owned())
            .chain(chars.iter().map(|c| c.to_string()))
            .chain(chars.iter().map(|c| format!("{CONTINUATION_PREFIX}{c}")));
        for t in candidates {
            if t.starts_with(CONTINUATION_PREFIX) && t.len() == CONTINUATION_PREFIX.len() {
                continue;
            }
            if seen.insert(t.clone()) {
                tokens.push(t);
            }
        }
        Self::from_tokens(tokens).expect("builder emits a valid vocabulary")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AbenError::io(path, e))?;
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r').to_owned()).filter(|l| !l.is_empty()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| AbenError::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Hex SHA-256 over the newline-joined tokens.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update(b"\n");
        }
        hasher.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Piece text without the continuation prefix.
    pub fn surface(&self, id: u32) -> &str {
        let t = self.token(id);
        t.strip_prefix(CONTINUATION_PREFIX).unwrap_or(t)
    }

    fn tokenize_word(&self, word: &str, out: &mut Vec<u32>) {
        let bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
        let mut start = 0;
        let mut key = String::new();
        while start + 1 < bounds.len() {
            let mut found = None;
            for end in (start + 1..bounds.len()).rev() {
                key.clear();
                if start > 0 {
                    key.push_str(CONTINUATION_PREFIX);
                }
                key.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(&id) = self.index.get(&key) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.push(UNK);
                    return;
                }
            }
        }
    }

    /// Greedy longest-match, left to right within each whitespace-separated
    /// word. An unmatched remainder of a word becomes a single `[UNK]`.
    pub fn tokenize(&self, sentence: &str) -> TokenSequence {
        let mut ids = Vec::new();
        for word in sentence.split_whitespace() {
            self.tokenize_word(word, &mut ids);
        }
        TokenSequence { ids }
    }

    /// Merges continuation pieces into their predecessor and joins words with
    /// single spaces. `[BOS]`, `[EOS]` and `[PAD]` are dropped.
    pub fn detokenize(&self, seq: &TokenSequence) -> String {
        let mut out = String::new();
        for &id in &seq.ids {
            if id == BOS || id == EOS || id == PAD {
                continue;
            }
            let t = self.token(id);
            match t.strip_prefix(CONTINUATION_PREFIX) {
                Some(rest) if !out.is_empty() => out.push_str(rest),
                Some(rest) => out.push_str(rest),
                None => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(t);
                }
            }
        }
        out
    }
}

/// One embedding row per vocabulary entry. The `[PAD]` row is all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: Tensor,
}

impl EmbeddingTable {
    pub fn from_tensor(mut rows: Tensor) -> Result<Self> {
        if rows.shape().len() != 2 || rows.shape()[0] <= PAD as usize {
            return Err(AbenError::Shape(format!("embedding table shape {:?}", rows.shape())));
        }
        if !rows.is_finite() {
            return Err(AbenError::Numeric("embedding table has non-finite entries".into()));
        }
        let d = rows.shape()[1];
        rows.data_mut()[PAD as usize * d..(PAD as usize + 1) * d].fill(0.0);
        Ok(Self { rows })
    }

    /// Gaussian rows for desk-scale runs without pretrained vectors.
    pub fn random(vocab_size: usize, dim: usize, std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..vocab_size * dim).map(|_| dist.sample(&mut rng)).collect();
        Self::from_tensor(Tensor::from_vec(&[vocab_size, dim], data)).expect("finite random table")
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.rows
    }

    pub fn row(&self, id: u32) -> &[f64] {
        self.rows.row(id as usize)
    }

    /// Errors if the table width differs from what the decoder expects.
    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(AbenError::Config(format!(
                "embedding dimension {} does not match decoder input dimension {expected}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// `[K, d]` rows for the given ids.
    pub fn embed(&self, seq: &TokenSequence) -> Result<Tensor> {
        let d = self.dim();
        let mut data = Vec::with_capacity(seq.len() * d);
        for &id in &seq.ids {
            if id as usize >= self.vocab_size() {
                return Err(AbenError::Vocab(format!("id {id} outside table of {}", self.vocab_size())));
            }
            data.extend_from_slice(self.row(id));
        }
        Ok(Tensor::from_vec(&[seq.len(), d], data))
    }

    /// Text form: a `V=<int> d=<int>` header, then one whitespace-separated row per id.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| AbenError::Vocab("empty embedding file".into()))?;
        let mut v = None;
        let mut d = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("V", n)) => v = n.parse::<usize>().ok(),
                Some(("d", n)) => d = n.parse::<usize>().ok(),
                _ => return Err(AbenError::Vocab(format!("bad embedding header {header:?}"))),
            }
        }
        let (Some(v), Some(d)) = (v, d) else {
            return Err(AbenError::Vocab(format!("bad embedding header {header:?}")));
        };
        let mut data = Vec::with_capacity(v * d);
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            let row = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| AbenError::Parse { line: i + 2, message: e.to_string() })?;
            if row.len() != d {
                return Err(AbenError::Vocab(format!("row {} has {} values, expected {d}", i, row.len())));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(AbenError::Numeric(format!("row {i} has non-finite entries")));
            }
            data.extend(row);
            rows += 1;
        }
        if rows != v {
            return Err(AbenError::Vocab(format!("embedding file has {rows} rows but header says V={v}")));
        }
        Self::from_tensor(Tensor::from_vec(&[v, d], data))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AbenError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("V={} d={}\n", self.vocab_size(), self.dim());
        for r in 0..self.vocab_size() {
            let row: Vec<String> = self.rows.row(r).iter().map(|x| format!("{x:e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| AbenError::io(path, e))
    }
}

/// Loads an aligned vocabulary and embedding table.
pub fn load_vocab_and_embeddings(vocab_path: &Path, embedding_path: &Path) -> Result<(SubwordVocabulary, EmbeddingTable)> {
    let vocab = SubwordVocabulary::load(vocab_path)?;
    let table = EmbeddingTable::load(embedding_path)?;
    if table.vocab_size() != vocab.len() {
        return Err(AbenError::Vocab(format!(
            "vocabulary has {} tokens but embedding table has {} rows",
            vocab.len(),
            table.vocab_size()
        )));
    }
    Ok((vocab, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(extra: &[&str]) -> SubwordVocabulary {
        let tokens = SPECIALS.iter().chain(extra).map(|s| s.to_string()).collect();
        SubwordVocabulary::from_tokens(tokens).unwrap()
    }

    fn pieces(v: &SubwordVocabulary, s: &str) -> Vec<String> {
        v.tokenize(s).ids.iter().map(|&i| v.surface(i).to_owned()).collect()
    }

    #[test]
    fn subword_examples() {
        let v = vocab(&["spray", "##er", "gray", "##is", "bottle", "top", "##right", "object"]);
        assert_eq!(pieces(&v, "sprayer"), ["spray", "er"]);
        assert_eq!(pieces(&v, "grayis bottle"), ["gray", "is", "bottle"]);
        assert_eq!(pieces(&v, "topright object"), ["top", "right", "object"]);
    }

    #[test]
    fn unknown_remainder_is_one_unk() {
        let v = vocab(&["spray"]);
        assert_eq!(v.tokenize("sprayxyz").ids, vec![v.id("spray").unwrap(), UNK]);
        assert_eq!(v.tokenize("qq spray").ids, vec![UNK, v.id("spray").unwrap()]);
        assert!(v.tokenize("").is_empty());
        assert_eq!(v.tokenize("").framed().ids, vec![BOS, EOS]);
    }

    #[test]
    fn detokenize_examples() {
        let v = vocab(&["gray", "##is", "bottle", "cup"]);
        let ids = ["gray", "##is", "bottle"].iter().map(|t| v.id(t).unwrap()).collect();
        assert_eq!(v.detokenize(&TokenSequence::new(ids)), "grayis bottle");
        let cup = v.id("cup").unwrap();
        assert_eq!(v.detokenize(&TokenSequence::new(vec![BOS, cup, EOS])), "cup");
    }

    #[test]
    fn vocab_validation() {
        assert!(SubwordVocabulary::from_tokens(vec!["a".into()]).is_err());
        let dup = SPECIALS.iter().chain(&["a", "a"]).map(|s| s.to_string()).collect();
        assert!(SubwordVocabulary::from_tokens(dup).is_err());
    }

    #[test]
    fn built_vocab_covers_corpus() {
        let corpus = ["bring me the cup", "the cup is red", "a zebra"];
        let v = SubwordVocabulary::build_from_corpus(&corpus, 3);
        assert_eq!(&v.tokens()[4..7], ["cup", "the", "a"]);
        for s in corpus {
            assert_eq!(v.detokenize(&v.tokenize(s)), s);
            assert!(!v.tokenize(s).ids.contains(&UNK));
        }
    }

    #[test]
    fn embedding_lookup_and_pad_row() {
        let t = EmbeddingTable::random(6, 4, 1.0, 3);
        assert!(t.row(PAD).iter().all(|&x| x == 0.0));
        let e = t.embed(&TokenSequence::new(vec![4, 5, 4])).unwrap();
        assert_eq!(e.shape(), &[3, 4]);
        assert_eq!(e.row(0), t.row(4));
        assert_eq!(e.row(1), t.row(5));
        assert!(t.check_dim(5).is_err());
        assert!(t.embed(&TokenSequence::new(vec![6])).is_err());
    }

    #[test]
    fn embedding_file_validation() {
        let mut text = String::from("V=8 d=4\n");
        for i in 0..8 {
            text.push_str(&format!("{i} 0.5 -1 2e-3\n"));
        }
        let t = EmbeddingTable::parse(&text).unwrap();
        assert_eq!((t.vocab_size(), t.dim()), (8, 4));
        let short: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(matches!(EmbeddingTable::parse(&short), Err(AbenError::Vocab(_))));
        assert!(EmbeddingTable::parse("V=1 d=2\nnan 1\n").is_err());
    }
}
