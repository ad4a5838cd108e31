use gafvit::metrics::{confusion, report, Report};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-class (tp, fp, fn, tn) by direct counting over samples.
fn brute_force(truth: &[usize], pred: &[usize], k: usize) -> Vec<(u64, u64, u64, u64)> {
    (0..k)
        .map(|c| {
            let mut counts = (0, 0, 0, 0);
            for (&t, &p) in truth.iter().zip(pred) {
                match (t == c, p == c) {
                    (true, true) => counts.0 += 1,
                    (false, true) => counts.1 += 1,
                    (true, false) => counts.2 += 1,
                    (false, false) => counts.3 += 1,
                }
            }
            counts
        })
        .collect()
}

fn div(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn check_against_oracle(truth: &[usize], pred: &[usize], k: usize) -> Report {
    let r = report(&confusion(truth, pred, k).unwrap()).unwrap();
    let oracle = brute_force(truth, pred, k);
    let n = truth.len() as f64;
    for (c, &(tp, fp, fn_, tn)) in r.per_class.iter().zip(&oracle) {
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, tn));
        assert_eq!(c.precision, div(tp, tp + fp));
        assert_eq!(c.recall, div(tp, tp + fn_));
        assert_eq!(c.accuracy, (tp + tn) as f64 / n);
        if c.precision > 0.0 && c.recall > 0.0 {
            let harmonic = 2.0 / (1.0 / c.precision + 1.0 / c.recall);
            assert!((c.f1 - harmonic).abs() <= 1e-15 * harmonic.max(1.0));
        }
    }
    let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    assert_eq!(r.accuracy, hits as f64 / n);
    let mean_f1 = r.per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64;
    assert_eq!(r.macro_avg.f1, mean_f1);
    r
}

#[test]
fn hundred_random_pairs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let k = rng.random_range(2..=6);
        let n = rng.random_range(1..=200);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if rng.random_bool(0.6) { t } else { rng.random_range(0..k) })
            .collect();
        check_against_oracle(&truth, &pred, k);
    }
}

#[test]
fn perfect_labels_give_all_ones() {
    let y: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let r = check_against_oracle(&y, &y, 4);
    assert_eq!(r.accuracy, 1.0);
    assert_eq!((r.macro_avg.precision, r.macro_avg.recall, r.macro_avg.f1), (1.0, 1.0, 1.0));
}

proptest! {
    #[test]
    fn sample_order_does_not_matter(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80), rot in 0usize..80) {
        let (truth, pred): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(rot % pairs.len());
        shuffled.reverse();
        let (t2, p2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        let a = report(&confusion(&truth, &pred, 4).unwrap()).unwrap();
        let b = report(&confusion(&t2, &p2, 4).unwrap()).unwrap();
        prop_assert_eq!(a, b);
        let cm = confusion(&truth, &pred, 4).unwrap();
        prop_assert!(cm.trace() <= cm.total());
    }
}
