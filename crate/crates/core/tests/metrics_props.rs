mod common;

use common::{brute_lcs, toks};
use disk::metrics::{bleu_avg12, bleu_n, distinct_n, lcs_len, number_recall, rouge_l, rouge_l_pair, EvalReport};
use proptest::prelude::*;

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "7", "12", "0.5"]), 1..10)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

fn corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(sentence(), 1..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rouge_lcs_matches_brute_force(a in sentence(), b in sentence()) {
        prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
        let l = brute_lcs(&a, &b) as f64;
        let expect = if l == 0.0 { 0.0 } else {
            let (p, r) = (l / a.len() as f64, l / b.len() as f64);
            2.2 * p * r / (r + 1.2 * p)
        };
        prop_assert!((rouge_l_pair(&a, &b) - expect).abs() < 1e-12);
    }

    #[test]
    fn self_scores_are_one(c in corpus()) {
        prop_assert!((bleu_avg12(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((rouge_l(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        if let Some(nr) = number_recall(&c, &c).unwrap() {
            prop_assert_eq!(nr, 1.0);
        }
    }

    #[test]
    fn permutation_invariant(pairs in prop::collection::vec((sentence(), sentence()), 1..8), rot in 0usize..8) {
        let (h, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let k = rot % pairs.len();
        let (mut h2, mut r2) = (h.clone(), r.clone());
        h2.rotate_left(k);
        r2.rotate_left(k);
        for n in 1..=2 {
            prop_assert!((bleu_n(&h, &r, n).unwrap() - bleu_n(&h2, &r2, n).unwrap()).abs() < 1e-12);
            prop_assert!((distinct_n(&h, n) - distinct_n(&h2, n)).abs() < 1e-12);
        }
        prop_assert!((rouge_l(&h, &r).unwrap() - rouge_l(&h2, &r2).unwrap()).abs() < 1e-12);
        let (a, b) = (number_recall(&h, &r).unwrap(), number_recall(&h2, &r2).unwrap());
        prop_assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scores_in_unit_interval(pairs in prop::collection::vec((sentence(), sentence()), 1..8)) {
        let (h, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let ids: Vec<String> = (0..h.len()).map(|i| i.to_string()).collect();
        let rep = EvalReport::compute(&ids, &h, &r).unwrap();
        for v in [rep.bleu, rep.rouge_l, rep.dist1, rep.dist2, rep.number_recall.unwrap_or(0.0)] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
    }
}

#[test]
fn worked_examples() {
    let b = bleu_avg12(&[toks("a b c")], &[toks("a b d")]).unwrap();
    assert!((b - 0.583333).abs() < 1e-5);
    assert_eq!(distinct_n(&[toks("a b a")], 1), 2.0 / 3.0);
    assert_eq!(distinct_n(&[toks("a")], 1), 1.0);
    let nr = number_recall(&[toks("2 apples and 60")], &[toks("2 10 60")]).unwrap().unwrap();
    assert!((nr - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn distinct_decreases_with_repeated_hypotheses() {
    let mut prev = f64::INFINITY;
    for n in 1..6 {
        let c = vec![toks("a b c"); n];
        let d = distinct_n(&c, 1);
        assert!(d < prev || n == 1);
        prev = d;
    }
}
