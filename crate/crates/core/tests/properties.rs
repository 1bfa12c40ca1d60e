use proptest::prelude::*;

use sgir::binning::{build_partition, reverse_sampling_rates, BinningMode, IntervalPartition};
use sgir::confidence::percentile;
use sgir::metrics::{average_ranks, gm, mae, sample_margin, spearman, GM_EPS};
use sgir::mixup::{apportion, mix, nearest_by_label, LatentSample};
use sgir::pseudo::selection_quota;

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn reverse_rates_reverse_distinct_ranks(set in proptest::collection::btree_set(1usize..1_000_000, 1..40)) {
        let mut mu: Vec<usize> = set.into_iter().collect();
        mu.reverse();
        let p = reverse_sampling_rates(&mu).unwrap();
        prop_assert!(p.iter().all(|&r| r > 0.0 && r <= 1.0));
        prop_assert_eq!(p.iter().copied().fold(f64::MIN, f64::max), 1.0);
        for i in 0..mu.len() {
            for j in 0..mu.len() {
                if mu[i] > mu[j] {
                    prop_assert!(p[i] < p[j]);
                }
            }
        }
    }

    #[test]
    fn reverse_rates_are_a_permutation(mu in proptest::collection::vec(0usize..50, 1..30)) {
        prop_assume!(mu.iter().any(|&v| v > 0));
        let max = *mu.iter().max().unwrap() as f64;
        let mut got: Vec<u64> = reverse_sampling_rates(&mu).unwrap().iter().map(|r| (r * max).round() as u64).collect();
        let mut want: Vec<u64> = mu.iter().map(|&v| v as u64).collect();
        got.sort();
        want.sort();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn every_label_lands_in_range(labels in proptest::collection::vec(-100.0f64..100.0, 2..60), c in 2usize..30) {
        prop_assume!(labels.iter().any(|&y| y != labels[0]));
        let p = build_partition(&labels, c, &BinningMode::EqualWidth).unwrap();
        prop_assert_eq!(p.frequencies().iter().sum::<usize>(), labels.len());
        for &y in &labels {
            let i = p.assign(y);
            prop_assert!(p.boundaries()[i] <= y && y < p.boundaries()[i + 1]);
        }
    }

    #[test]
    fn mix_stays_on_the_anchor_side(
        z in proptest::collection::vec(-1e3f64..1e3, 1..8),
        h_seed in proptest::collection::vec(-1e3f64..1e3, 8),
        a in -50.0f64..50.0,
        y in -50.0f64..50.0,
        lambda in 0.5f64..=1.0,
    ) {
        let h = &h_seed[..z.len()];
        let (ht, yt) = mix(&z, a, h, y, lambda);
        prop_assert!(yt >= a.min(y) && yt <= a.max(y));
        prop_assert!(distance(&ht, &z) <= (1.0 - lambda) * distance(h, &z));
        if a != y {
            prop_assert!((yt - a).abs() <= (yt - y).abs());
        }
        for ((&v, &zi), &hi) in ht.iter().zip(&z).zip(h) {
            prop_assert!(v >= zi.min(hi) && v <= zi.max(hi));
        }
    }

    #[test]
    fn apportion_meets_budget(total in 0usize..500, weights in proptest::collection::vec(0.0f64..1.0, 1..20)) {
        let n = apportion(total, &weights);
        let live = weights.iter().filter(|&&w| w > 0.0).count();
        let sum: f64 = weights.iter().sum();
        if live == 0 || sum <= 0.0 {
            prop_assert!(n.iter().all(|&k| k == 0));
        } else {
            prop_assert_eq!(n.iter().sum::<usize>(), total);
            for (k, w) in n.iter().zip(&weights) {
                let quota = total as f64 * w / sum;
                prop_assert!((*k as f64 - quota).abs() < 1.0 + 1e-9);
                if *w == 0.0 {
                    prop_assert_eq!(*k, 0);
                }
            }
        }
    }

    #[test]
    fn nearest_labels_are_nearest(ys in proptest::collection::vec(-10.0f64..10.0, 1..40), center in -10.0f64..10.0, n in 0usize..50) {
        let pool: Vec<LatentSample> = ys.iter().enumerate().map(|(i, &y)| LatentSample { id: format!("{i:03}"), h: vec![], y }).collect();
        let chosen = nearest_by_label(&pool, center, n);
        prop_assert_eq!(chosen.len(), n.min(pool.len()));
        let worst_in = chosen.iter().map(|&i| (ys[i] - center).abs()).fold(0.0, f64::max);
        for i in 0..pool.len() {
            if !chosen.contains(&i) {
                prop_assert!((ys[i] - center).abs() >= worst_in);
            }
        }
    }

    #[test]
    fn quota_is_ceiling(rate in 0.0f64..=1.0, n in 0usize..1000) {
        let q = selection_quota(rate, n);
        prop_assert!(q <= n);
        prop_assert!(q as f64 >= rate * n as f64 - 1e-6);
        prop_assert!((q as f64) < rate * n as f64 + 1.0);
    }

    #[test]
    fn percentile_is_monotone(values in proptest::collection::vec(-1e6f64..1e6, 1..50), a in 0.0f64..=100.0, b in 0.0f64..=100.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (pl, ph) = (percentile(&values, lo).unwrap(), percentile(&values, hi).unwrap());
        prop_assert!(pl <= ph);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(pl >= min && ph <= max);
    }

    #[test]
    fn gm_never_exceeds_mae(errors in proptest::collection::vec(1e-6f64..1e3, 1..100)) {
        let truths = vec![0.0; errors.len()];
        let g = gm(&errors, &truths, GM_EPS).unwrap();
        let m = mae(&errors, &truths).unwrap();
        prop_assert!(g <= m);
        prop_assert!(g > 0.0);
    }

    #[test]
    fn positive_margin_means_nearest_center(bounds in proptest::collection::btree_set(-1000i32..1000, 3..20), pred in -1200.0f64..1200.0, t_seed in 0usize..100) {
        let b: Vec<f64> = bounds.into_iter().map(f64::from).collect();
        let p = IntervalPartition::from_boundaries(b, &[]).unwrap();
        let centers = p.centers();
        let t = t_seed % centers.len();
        let g = sample_margin(pred, t, centers);
        let dt = (pred - centers[t]).abs();
        let closest_other = centers.iter().enumerate().filter(|&(j, _)| j != t).map(|(_, a)| (pred - a).abs()).fold(f64::INFINITY, f64::min);
        if dt < closest_other {
            prop_assert!(g > 0.0);
        } else if dt > closest_other {
            prop_assert!(g < 0.0);
        }
    }

    #[test]
    fn spearman_is_bounded_and_symmetric(x in proptest::collection::vec(-10.0f64..10.0, 2..30), shift in -5.0f64..5.0) {
        let y: Vec<f64> = x.iter().map(|v| v * v + shift).collect();
        let r = spearman(&x, &y);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        prop_assert!((r - spearman(&y, &x)).abs() < 1e-12);
        let ranks = average_ranks(&x);
        let n = x.len() as f64;
        prop_assert!((ranks.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        let self_r = spearman(&x, &x);
        if x.iter().any(|&v| v != x[0]) {
            prop_assert!((self_r - 1.0).abs() < 1e-12);
        }
    }
}
