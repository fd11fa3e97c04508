mod common;

use aben_metrics::{bleu, cider, lcs_len, meteor, rouge_l, SynonymTable, Tokens};
use common::oracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 7] = ["the", "red", "cup", "on", "table", "bring", "me"];

fn sentence(rng: &mut ChaCha8Rng, max_len: usize) -> Tokens {
    let len = rng.random_range(1..=max_len);
    (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string()).collect()
}

fn corpus(rng: &mut ChaCha8Rng, max_len: usize) -> (Vec<Tokens>, Vec<Vec<Tokens>>) {
    let size = rng.random_range(2..=5);
    let cands = (0..size).map(|_| sentence(rng, max_len)).collect();
    let refs = (0..size)
        .map(|_| (0..rng.random_range(1..=3)).map(|_| sentence(rng, max_len)).collect())
        .collect();
    (cands, refs)
}

#[test]
fn bleu_matches_hand_clipped_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (c, r) = corpus(&mut rng, 8);
        for n in 1..=4 {
            let got = bleu(&c, &r, n).unwrap();
            let want = oracle::bleu(&c, &r, n);
            assert!((got - want).abs() <= 1e-9, "n={n} got {got} want {want}");
        }
    }
}

#[test]
fn rouge_matches_subset_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let c = sentence(&mut rng, 12);
        let refs: Vec<Tokens> = (0..rng.random_range(1..=3)).map(|_| sentence(&mut rng, 12)).collect();
        assert_eq!(lcs_len(&c, &refs[0]), oracle::lcs(&c, &refs[0]));
        let (got, want) = (rouge_l(&c, &refs), oracle::rouge_l(&c, &refs));
        assert!((got - want).abs() <= 1e-9);
    }
}

#[test]
fn meteor_matches_alignment_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let table = SynonymTable::parse("cup: mug\ntable: desk\nbring: fetch").unwrap();
    let extra = ["mug", "desk", "fetch"];
    for case in 0..50 {
        let mut c = sentence(&mut rng, 8);
        if case % 2 == 0 {
            let pos = rng.random_range(0..c.len());
            c[pos] = extra[rng.random_range(0..extra.len())].to_string();
        }
        let refs: Vec<Tokens> = (0..rng.random_range(1..=2)).map(|_| sentence(&mut rng, 8)).collect();
        let syn = |a: &str, b: &str| table.are_synonyms(a, b);
        let (got, want) = (meteor(&c, &refs, &table), oracle::meteor(&c, &refs, &syn));
        assert!((got - want).abs() <= 1e-9, "{c:?} vs {refs:?}: {got} vs {want}");
    }
}

#[test]
fn cider_matches_dense_tfidf() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..50 {
        let (c, r) = corpus(&mut rng, 8);
        let (got, want) = (cider(&c, &r).unwrap(), oracle::cider(&c, &r));
        assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
    }
}

#[test]
fn cider_is_invariant_under_token_renaming() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let rename = |s: &Tokens| -> Tokens { s.iter().map(|w| format!("x_{}", w.chars().rev().collect::<String>())).collect() };
    for _ in 0..25 {
        let (c, r) = corpus(&mut rng, 8);
        let c2: Vec<Tokens> = c.iter().map(rename).collect();
        let r2: Vec<Vec<Tokens>> = r.iter().map(|set| set.iter().map(rename).collect()).collect();
        let (a, b) = (cider(&c, &r).unwrap(), cider(&c2, &r2).unwrap());
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn metrics_are_pure() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (c, r) = corpus(&mut rng, 8);
    let table = SynonymTable::new();
    let first = aben_metrics::score_corpus(&c, &r, &table).unwrap();
    let second = aben_metrics::score_corpus(&c, &r, &table).unwrap();
    assert_eq!(first, second);
}

proptest! {
    // Replacing an unmatched unigram by a reference word keeps the length
    // fixed and can only add clipped matches.
    #[test]
    fn bleu_monotone_in_overlap(
        cand in prop::collection::vec(0usize..WORDS.len(), 4..9),
        reference in prop::collection::vec(0usize..WORDS.len(), 4..9),
        pos in 0usize..8,
    ) {
        let to_tokens = |ids: &[usize]| -> Tokens { ids.iter().map(|&i| WORDS[i].to_string()).collect() };
        let refs = vec![vec![to_tokens(&reference)]];
        let before = to_tokens(&cand);
        let pos = pos % before.len();
        let mut after = before.clone();
        after[pos] = refs[0][0][pos % reference.len()].clone();
        let b1 = bleu(&[before.clone()], &refs, 1).unwrap();
        let a1 = bleu(&[after.clone()], &refs, 1).unwrap();
        let unmatched = !reference.iter().any(|&i| WORDS[i] == before[pos]);
        if unmatched {
            prop_assert!(a1 >= b1);
        }
    }

    #[test]
    fn meteor_identical_closed_form(m in 1usize..20) {
        let s: Tokens = (0..m).map(|i| format!("w{i}")).collect();
        let got = meteor(&s, &[s.clone()], &SynonymTable::new());
        prop_assert_eq!(got, 1.0 - 0.5 * (1.0 / m as f64).powi(3));
    }
}
