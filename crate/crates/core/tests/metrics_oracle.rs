use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinfdd::metrics::{confusion, per_class_metrics, report};

/// Direct count over raw pairs, no confusion matrix.
fn brute_force(preds: &[usize], labels: &[usize], c: usize) -> Vec<[f64; 5]> {
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (0..c)
        .map(|k| {
            let mut tp = 0;
            let mut fp = 0;
            let mut tn = 0;
            let mut fn_ = 0;
            for (&p, &t) in preds.iter().zip(labels) {
                match (p == k, t == k) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
            let precision = div(tp, tp + fp);
            let recall = div(tp, tp + fn_);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            [precision, recall, f1, div(fp, tn + fp), div(fp + fn_, preds.len())]
        })
        .collect()
}

#[test]
fn matches_direct_count_oracle() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = 21;
        let labels: Vec<usize> = (0..1000).map(|_| rng.random_range(0..c)).collect();
        // mostly-correct predictions so every metric is exercised
        let preds: Vec<usize> = labels
            .iter()
            .map(|&l| {
                if rng.random_bool(0.6) {
                    l
                } else {
                    rng.random_range(0..c)
                }
            })
            .collect();
        let got = per_class_metrics(&confusion(&preds, &labels, c).unwrap()).unwrap();
        for (m, want) in got.iter().zip(brute_force(&preds, &labels, c)) {
            let have = [m.precision, m.recall, m.f1, m.far, m.mar];
            for (a, b) in have.iter().zip(want) {
                assert!((a - b).abs() < 1e-12, "seed {seed} class {}", m.class);
            }
        }
    }
}

fn pairs() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..8).prop_flat_map(|c| (Just(c), prop::collection::vec((0..c, 0..c), 1..200)))
}

proptest! {
    #[test]
    fn one_vs_rest_counts_partition_total((c, pairs) in pairs()) {
        let (preds, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let cm = confusion(&preds, &labels, c).unwrap();
        prop_assert_eq!(cm.total, preds.len() as u64);
        let mut fp_fn = 0;
        for k in 0..c {
            let (tp, fp, tn, fn_) = cm.one_vs_rest(k);
            prop_assert_eq!(tp + fp + tn + fn_, cm.total);
            fp_fn += fp + fn_;
        }
        prop_assert_eq!(fp_fn, 2 * (cm.total - cm.trace()));
        let r = report(&cm).unwrap();
        let expected = 2.0 * (1.0 - r.accuracy) / c as f64;
        prop_assert!((r.macro_avg.mar - expected).abs() < 1e-12);
        for m in &r.per_class {
            for v in [m.precision, m.recall, m.f1, m.far, m.mar] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        prop_assert!(r.f1_variance >= 0.0);
    }

    #[test]
    fn relabeling_permutes_rows((c, pairs) in pairs(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..c).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (preds, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let a = report(&confusion(&preds, &labels, c).unwrap()).unwrap();
        let pp: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
        let pl: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let b = report(&confusion(&pp, &pl, c).unwrap()).unwrap();
        for (k, &pk) in perm.iter().enumerate() {
            let (x, y) = (&a.per_class[k], &b.per_class[pk]);
            prop_assert_eq!((x.precision, x.recall, x.f1, x.far, x.mar), (y.precision, y.recall, y.f1, y.far, y.mar));
        }
        prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
        prop_assert!((a.f1_variance - b.f1_variance).abs() < 1e-12);
        prop_assert_eq!(a.accuracy, b.accuracy);
    }
}
