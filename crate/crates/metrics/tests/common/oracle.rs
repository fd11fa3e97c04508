//! Brute-force reference implementations of the captioning metrics.
//!
//! Deliberately naive: linear scans instead of hash maps, subset enumeration
//! instead of dynamic programming, exhaustive alignment search, dense TF-IDF
//! vectors. Used only to cross-check the library.

#![allow(dead_code)]

use std::collections::BTreeSet;

pub type Sent = Vec<String>;

fn grams(s: &[String], n: usize) -> Vec<Vec<String>> {
    if s.len() < n {
        return vec![];
    }
    (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
}

fn count(haystack: &[Vec<String>], needle: &[String]) -> usize {
    haystack.iter().filter(|g| g.as_slice() == needle).count()
}

/// Corpus BLEU-n: hand-clipped counts, product form of the geometric mean.
pub fn bleu(cands: &[Sent], refs: &[Vec<Sent>], n: usize) -> f64 {
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, rs) in cands.iter().zip(refs) {
        c_len += c.len();
        let mut best: Option<usize> = None;
        for r in rs {
            let better = match best {
                None => true,
                Some(b) => {
                    let (d, bd) = (r.len().abs_diff(c.len()), b.abs_diff(c.len()));
                    d < bd || (d == bd && r.len() < b)
                }
            };
            if better {
                best = Some(r.len());
            }
        }
        r_len += best.unwrap();
        for k in 1..=n {
            let cg = grams(c, k);
            let mut seen: Vec<Vec<String>> = vec![];
            for g in &cg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g.clone());
                let in_cand = count(&cg, g);
                let max_ref = rs.iter().map(|r| count(&grams(r, k), g)).max().unwrap();
                matched[k - 1] += in_cand.min(max_ref);
                total[k - 1] += in_cand;
            }
        }
    }
    let mut prod = 1.0f64;
    for k in 0..n {
        if total[k] == 0 {
            return 0.0;
        }
        prod *= matched[k] as f64 / total[k] as f64;
    }
    if prod == 0.0 {
        return 0.0;
    }
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len as f64 / c_len as f64).exp() };
    bp * prod.powf(1.0 / n as f64)
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == *x))
}

/// LCS by enumerating every subsequence of `a` (|a| ≤ 16).
pub fn lcs(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16);
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l(c: &[String], refs: &[Sent]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    refs.iter()
        .map(|r| {
            let l = lcs(c, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / c.len() as f64;
            let rc = l / r.len() as f64;
            (1.0 + beta2) * p * rc / (rc + beta2 * p)
        })
        .fold(0.0, f64::max)
}

/// Every one-to-one alignment is enumerated; the best is chosen by
/// (exact matches, total matches) descending then chunks ascending.
pub fn meteor_single(c: &[String], r: &[String], syn: &dyn Fn(&str, &str) -> bool) -> f64 {
    fn rec(
        i: usize,
        c: &[String],
        r: &[String],
        syn: &dyn Fn(&str, &str) -> bool,
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize, bool)>,
        out: &mut Vec<Vec<(usize, usize, bool)>>,
    ) {
        if i == c.len() {
            out.push(pairs.clone());
            return;
        }
        rec(i + 1, c, r, syn, used, pairs, out);
        for j in 0..r.len() {
            if used[j] {
                continue;
            }
            let exact = c[i] == r[j];
            if !exact && !syn(&c[i], &r[j]) {
                continue;
            }
            used[j] = true;
            pairs.push((i, j, exact));
            rec(i + 1, c, r, syn, used, pairs, out);
            pairs.pop();
            used[j] = false;
        }
    }
    let mut all = vec![];
    rec(0, c, r, syn, &mut vec![false; r.len()], &mut vec![], &mut all);
    let mut best_key: Option<(usize, usize, i64)> = None;
    for pairs in &all {
        let exact = pairs.iter().filter(|p| p.2).count();
        let m = pairs.len();
        let mut chunks = 0;
        for (k, p) in pairs.iter().enumerate() {
            let continues = k > 0 && pairs[k - 1].0 + 1 == p.0 && pairs[k - 1].1 + 1 == p.1;
            if !continues {
                chunks += 1;
            }
        }
        let key = (exact, m, -(chunks as i64));
        if best_key.is_none_or(|b| key > b) {
            best_key = Some(key);
        }
    }
    let (_, m, neg_chunks) = best_key.unwrap();
    if m == 0 {
        return 0.0;
    }
    let (m, chunks) = (m as f64, -neg_chunks as f64);
    let p = m / c.len() as f64;
    let rc = m / r.len() as f64;
    let fmean = 10.0 * p * rc / (rc + 9.0 * p);
    fmean * (1.0 - 0.5 * (chunks / m).powi(3))
}

pub fn meteor(c: &[String], refs: &[Sent], syn: &dyn Fn(&str, &str) -> bool) -> f64 {
    refs.iter().map(|r| meteor_single(c, r, syn)).fold(0.0, f64::max)
}

/// CIDEr with dense TF-IDF vectors over the full n-gram vocabulary.
pub fn cider(cands: &[Sent], refs: &[Vec<Sent>]) -> f64 {
    let m = refs.len() as f64;
    let mut total = 0.0;
    for (c, rs) in cands.iter().zip(refs) {
        let mut score = 0.0;
        for n in 1..=4 {
            let mut vocab: BTreeSet<Vec<String>> = BTreeSet::new();
            for s in std::iter::once(c).chain(rs.iter()) {
                vocab.extend(grams(s, n));
            }
            let vocab: Vec<_> = vocab.into_iter().collect();
            let vectorize = |s: &Sent| -> Vec<f64> {
                let g = grams(s, n);
                vocab
                    .iter()
                    .map(|v| {
                        let df = refs.iter().filter(|set| set.iter().any(|r| count(&grams(r, n), v) > 0)).count();
                        let tf = if g.is_empty() { 0.0 } else { count(&g, v) as f64 / g.len() as f64 };
                        tf * (m / (df.max(1) as f64)).ln()
                    })
                    .collect()
            };
            let vc = vectorize(c);
            let mut sim = 0.0;
            for r in rs {
                let vr = vectorize(r);
                let dot: f64 = vc.iter().zip(&vr).map(|(a, b)| a * b).sum();
                let na: f64 = vc.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nb: f64 = vr.iter().map(|b| b * b).sum::<f64>().sqrt();
                if na > 0.0 && nb > 0.0 {
                    sim += dot / (na * nb);
                }
            }
            score += sim / rs.len() as f64 / 4.0;
        }
        total += score * 10.0;
    }
    total / cands.len() as f64
}
