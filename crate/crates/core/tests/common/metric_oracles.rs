//! Independently coded metric oracles (string-keyed n-grams, no shared code
//! with the library).

use std::collections::BTreeMap;

pub fn grams(s: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    if s.len() >= n {
        for i in 0..=s.len() - n {
            *m.entry(s[i..i + n].join(" ")).or_insert(0) += 1;
        }
    }
    m
}

/// Plain corpus BLEU: clipped counts summed over the corpus, uniform weights.
pub fn bleu_oracle(h: &[Vec<String>], r: &[Vec<String>], max_n: usize) -> f64 {
    let (c, rl): (usize, usize) = (h.iter().map(Vec::len).sum(), r.iter().map(Vec::len).sum());
    let mut log_p = 0.0;
    for n in 1..=max_n {
        let (mut hit, mut tot) = (0usize, 0usize);
        for (a, b) in h.iter().zip(r) {
            let rg = grams(b, n);
            for (g, k) in grams(a, n) {
                hit += k.min(*rg.get(&g).unwrap_or(&0));
                tot += k;
            }
        }
        if hit == 0 {
            return 0.0;
        }
        log_p += (hit as f64 / tot as f64).ln() / max_n as f64;
    }
    let bp = if c > rl { 1.0 } else { (1.0 - rl as f64 / c as f64).exp() };
    bp * log_p.exp()
}

pub fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    // memoized recursion over suffixes, unlike the table fill in the library
    fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    go(a, b, 0, 0, &mut vec![vec![None; b.len()]; a.len()])
}

pub fn rouge_oracle(h: &[String], r: &[String]) -> f64 {
    let l = lcs_oracle(h, r) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rc) = (l / h.len() as f64, l / r.len() as f64);
    let b2 = 1.2f64 * 1.2;
    (1.0 + b2) * p * rc / (rc + b2 * p)
}

/// CIDEr-D with idf over the references, clipped numerator, Gaussian length penalty.
pub fn cider_oracle(h: &[Vec<String>], r: &[Vec<String>]) -> f64 {
    let n_docs = r.len() as f64;
    let df = |g: &str, n: usize| r.iter().filter(|d| grams(d, n).contains_key(g)).count() as f64;
    let vec_of = |s: &[String], n: usize| -> BTreeMap<String, f64> {
        grams(s, n)
            .into_iter()
            .map(|(g, tf)| {
                let w = tf as f64 * (n_docs.ln() - df(&g, n).max(1.0).ln());
                (g, w)
            })
            .collect()
    };
    let norm = |v: &BTreeMap<String, f64>| v.values().map(|w| w * w).sum::<f64>().sqrt();
    let mut total = 0.0;
    for (a, b) in h.iter().zip(r) {
        let bigrams = |s: &[String]| s.len().saturating_sub(1) as f64;
        let delta = bigrams(a) - bigrams(b);
        let pen = (-delta * delta / 72.0).exp();
        let mut s = 0.0;
        for n in 1..=4 {
            let (va, vb) = (vec_of(a, n), vec_of(b, n));
            let mut dot: f64 = va.iter().filter_map(|(g, w)| vb.get(g).map(|x| w.min(*x) * x)).sum();
            let (na, nb) = (norm(&va), norm(&vb));
            if na != 0.0 && nb != 0.0 {
                dot /= na * nb;
            }
            s += dot * pen;
        }
        total += 10.0 * s / 4.0;
    }
    total / h.len() as f64
}
