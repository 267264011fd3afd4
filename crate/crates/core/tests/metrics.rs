mod common;

use common::metric_oracles::*;
use common::*;
use proptest::prelude::*;
use vqg_core::metrics::{bleu, bleu_stats, cider, hint_f1, rouge_l, rouge_l_sentence, MetricReport};

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
    lines.iter().map(|l| toks(l)).collect()
}

#[test]
fn bleu_examples() {
    let stats = bleu_stats(&corpus(&["the the the the"]), &corpus(&["the cat"]), 4).unwrap();
    assert_close(stats.precisions[0], 0.25, 1e-12, "clipped unigram precision");
    let same = corpus(&["what color is the cup ?", "how many dogs ?"]);
    assert_eq!(bleu(&same, &same, 4).unwrap(), 1.0);
    assert_eq!(bleu(&corpus(&["a b c d"]), &corpus(&["e f g h"]), 4).unwrap(), 0.0);
    assert!(bleu(&[], &[], 4).is_err());
}

#[test]
fn rouge_examples() {
    let (h, r) = (toks("a b c"), toks("a c"));
    let (p, rc) = (2.0 / 3.0, 1.0);
    let f = (1.0 + 1.44) * p * rc / (rc + 1.44 * p);
    assert_close(rouge_l_sentence(&h, &r), f, 1e-12, "a b c / a c");
    assert_close(rouge_l(&corpus(&["x y", "p q r"]), &corpus(&["x y", "p q r"])).unwrap(), 1.0, 1e-12, "identical");
    assert_eq!(rouge_l(&corpus(&["a b"]), &corpus(&["c d"])).unwrap(), 0.0);
    assert!(rouge_l(&[], &[]).is_err());
}

#[test]
fn cider_three_sentence_oracle_and_edges() {
    let refs = corpus(&["what color is the cup ?", "what is on the table ?", "how many dogs are there ?"]);
    let hyps = corpus(&["what color is the mug ?", "what is the table ?", "how many cats ?"]);
    assert_close(cider(&hyps, &refs).unwrap(), cider_oracle(&hyps, &refs), 1e-9, "toy corpus");
    let self_score = cider(&refs, &refs).unwrap();
    assert_close(self_score, cider_oracle(&refs, &refs), 1e-9, "self-scored");
    assert!(self_score >= cider(&hyps, &refs).unwrap());
    let disjoint = corpus(&["zz yy", "xx", "ww vv uu"]);
    assert_eq!(cider(&disjoint, &refs).unwrap(), 0.0);
    assert!(cider(&refs[..1], &refs[..1]).is_err());
}

#[test]
fn hint_f1_confusion_matrix() {
    // one 10-object sample: tp 3, fp 2, fn 1, tn 4
    let pred = vec![vec![true, true, true, true, true, false, false, false, false, false]];
    let gt = vec![vec![true, true, true, false, false, true, false, false, false, false]];
    let s = hint_f1(&pred, &gt).unwrap();
    assert_eq!((s.tp, s.fp, s.fn_), (3, 2, 1));
    assert_close(s.precision, 0.6, 1e-12, "P");
    assert_close(s.recall, 0.75, 1e-12, "R");
    assert_close(s.f1, 2.0 * 0.6 * 0.75 / 1.35, 1e-12, "F1");
    let same = hint_f1(&gt, &gt).unwrap();
    assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
    let none = hint_f1(&[vec![false; 10]], &gt).unwrap();
    assert_eq!(none.recall, 0.0);
    assert!(hint_f1(&pred, &[]).is_err());
}

#[test]
fn report_on_identical_corpora() {
    let c = corpus(&["what color is the cup ?", "is there a dog ?", "how many cats are there ?"]);
    let r = MetricReport::compute(&c, &c, None).unwrap();
    assert_eq!((r.bleu1, r.bleu4, r.rouge_l), (1.0, 1.0, 1.0));
    assert!(r.cider.unwrap() > 0.0);
    assert_eq!(r.hint_f1, None);
    let table = r.table();
    let keys: Vec<&str> = table.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(keys[..6], ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-L", "CIDEr"]);
}

#[test]
fn removing_matched_tokens_never_raises_bleu() {
    let r = corpus(&["what color is the cup on the left ?"]);
    let mut h = r[0].clone();
    let mut last = bleu(&[h.clone()], &r, 4).unwrap();
    while h.len() > 1 {
        h.pop();
        let b = bleu(&[h.clone()], &r, 4).unwrap();
        assert!(b <= last + 1e-12, "{b} > {last}");
        last = b;
    }
}

const WORDS_SMALL: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(0usize..WORDS_SMALL.len(), 1..9).prop_map(|v| v.into_iter().map(|i| WORDS_SMALL[i].to_string()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_match_oracles(pairs in prop::collection::vec((sentence(), sentence()), 2..6)) {
        let (h, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        for n in 1..=4 {
            prop_assert!((bleu(&h, &r, n).unwrap() - bleu_oracle(&h, &r, n)).abs() < 1e-6);
        }
        let rouge = h.iter().zip(&r).map(|(a, b)| rouge_oracle(a, b)).sum::<f64>() / h.len() as f64;
        prop_assert!((rouge_l(&h, &r).unwrap() - rouge).abs() < 1e-6);
        prop_assert!((cider(&h, &r).unwrap() - cider_oracle(&h, &r)).abs() < 1e-6);
    }

    #[test]
    fn metrics_ignore_sample_order(pairs in prop::collection::vec((sentence(), sentence()), 2..6), shift in 1usize..5) {
        let (h, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let k = shift % h.len();
        let (mut h2, mut r2) = (h.clone(), r.clone());
        h2.rotate_left(k);
        r2.rotate_left(k);
        let a = MetricReport::compute(&h, &r, None).unwrap();
        let b = MetricReport::compute(&h2, &r2, None).unwrap();
        prop_assert!((a.bleu4 - b.bleu4).abs() < 1e-12);
        prop_assert!((a.rouge_l - b.rouge_l).abs() < 1e-12);
        prop_assert!((a.cider.unwrap() - b.cider.unwrap()).abs() < 1e-9);
        for v in [a.bleu1, a.bleu2, a.bleu3, a.bleu4, a.rouge_l] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(a.cider.unwrap() >= 0.0);
    }
}
