use std::collections::BTreeSet;

use proptest::prelude::*;
use rankscl::data::{apply_norm_stats, batches, fit_norm_stats, BatchPlan, LabelMap, TimeSeriesDataset};
use rankscl::evalkit::metrics;
use rankscl::rankloss::{hard_rank, pairwise_distances, rank_loss, soft_rank, NegativeDomain, RankLossConfig};
use rankscl::tensorkit::l2_normalize_rows;
use rankscl::{Tensor, Tensor64};

/// Unit-norm embeddings with labels drawn from at least two classes.
fn labelled_batch() -> impl Strategy<Value = (Tensor64, Vec<usize>)> {
    (3usize..12, 1usize..6, 2usize..4).prop_flat_map(|(b, d, k)| {
        (
            prop::collection::vec(-1.0f64..1.0, b * d),
            prop::collection::vec(0..k, b).prop_filter("two classes", |y| y.iter().collect::<BTreeSet<_>>().len() >= 2),
        )
            .prop_filter_map("non-degenerate rows", move |(v, y)| {
                let raw = Tensor::new(&[b, d], v).ok()?;
                if (0..b).any(|i| raw.row(i).iter().map(|x| x * x).sum::<f64>() < 1e-6) {
                    return None;
                }
                Some((l2_normalize_rows(&raw, 1e-12).ok()?, y))
            })
    })
}

fn anchor_pairs(y: &[usize]) -> Vec<(usize, usize)> {
    let b = y.len();
    (0..b).flat_map(|a| (0..b).filter(move |&p| p != a && y[p] == y[a]).map(move |p| (a, p))).collect()
}

proptest! {
    #[test]
    fn soft_rank_is_bounded((z, y) in labelled_batch()) {
        let dist = pairwise_distances(&z).unwrap();
        for (a, p) in anchor_pairs(&y) {
            let negatives = y.iter().filter(|&&c| c != y[a]).count() as f64;
            let s = soft_rank(&dist, &y, a, p, NegativeDomain::All).unwrap();
            prop_assert!(s >= 0.0 && s <= negatives);
            prop_assert!(s.atan() < std::f64::consts::FRAC_PI_2);
            prop_assert!(hard_rank(&dist, &y, a, p).unwrap() as f64 <= negatives);
        }
        let loss = rank_loss(&z, &y, &RankLossConfig::default()).unwrap().loss;
        prop_assert!((0.0..std::f64::consts::FRAC_PI_2).contains(&loss));
    }

    #[test]
    fn closer_negative_never_lowers_soft_rank((z, y) in labelled_batch(), pick in any::<prop::sample::Index>(), t in 0.01f64..0.99) {
        let pairs = anchor_pairs(&y);
        prop_assume!(!pairs.is_empty());
        let (a, p) = pairs[pick.index(pairs.len())];
        let negatives: Vec<usize> = (0..y.len()).filter(|&n| y[n] != y[a]).collect();
        let n = negatives[pick.index(negatives.len())];
        let before = soft_rank(&pairwise_distances(&z).unwrap(), &y, a, p, NegativeDomain::All).unwrap();
        let mut moved = z.clone();
        let anchor = z.row(a).to_vec();
        for (v, target) in moved.row_mut(n).iter_mut().zip(&anchor) {
            *v += t * (target - *v);
        }
        let after = soft_rank(&pairwise_distances(&moved).unwrap(), &y, a, p, NegativeDomain::All).unwrap();
        prop_assert!(after >= before);
    }

    #[test]
    fn loss_is_permutation_equivariant((z, y) in labelled_batch(), seed in any::<u64>()) {
        let b = y.len();
        let mut perm: Vec<usize> = (0..b).collect();
        perm.sort_by_key(|&i| (i as u64).wrapping_mul(seed | 1).rotate_left(17) ^ seed);
        let zp = z.select_rows(&perm).unwrap();
        let yp: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
        for domain in [NegativeDomain::All, NegativeDomain::ValidOnly] {
            let cfg = RankLossConfig { negative_domain: domain, ..RankLossConfig::default() };
            let base = rank_loss(&z, &y, &cfg).unwrap();
            let permuted = rank_loss(&zp, &yp, &cfg).unwrap();
            prop_assert!((base.loss - permuted.loss).abs() <= 1e-12);
            for (new_row, &old_row) in perm.iter().enumerate() {
                for (g, h) in permuted.grad_z.row(new_row).iter().zip(base.grad_z.row(old_row)) {
                    prop_assert!((g - h).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn batches_partition_indices(n in 0usize..300, size in 2usize..64, seed in any::<u64>(), epoch in 0u64..10) {
        let plan = BatchPlan::new(size, seed).unwrap();
        let bs = batches(n, &plan, epoch);
        let mut seen: Vec<usize> = bs.iter().flatten().copied().collect();
        prop_assert!(bs.iter().all(|b| !b.is_empty() && b.len() <= size));
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());

        let dropped = batches(n, &BatchPlan { drop_last: true, ..plan }, epoch);
        prop_assert!(dropped.iter().all(|b| b.len() == size));
        prop_assert_eq!(dropped.len(), n / size);
    }

    #[test]
    fn normalization_is_idempotent(
        (n, t, f, values) in (1usize..6, 2usize..10, 1usize..4)
            .prop_flat_map(|(n, t, f)| (Just(n), Just(t), Just(f), prop::collection::vec(-50.0f64..50.0, n * t * f)))
    ) {
        let ds = TimeSeriesDataset {
            x: Tensor::new(&[n, t, f], values).unwrap(),
            labels: vec![0; n],
            label_map: LabelMap::from_tokens(["a"]),
            norm_stats: None,
        };
        let once = apply_norm_stats(&ds, &fit_norm_stats(&ds)).unwrap();
        let twice = apply_norm_stats(&once, &fit_norm_stats(&once)).unwrap();
        for (a, b) in once.x.data().iter().zip(twice.x.data()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn label_map_is_a_bijection(tokens in prop::collection::vec("[a-z0-9]{1,4}", 1..20)) {
        let map = LabelMap::from_tokens(tokens.iter().map(String::as_str));
        // every token lands on a class, every class is hit, names round-trip
        let hit: BTreeSet<usize> = tokens.iter().map(|t| map.index_of(t).unwrap()).collect();
        prop_assert_eq!(hit, (0..map.num_classes()).collect::<BTreeSet<_>>());
        for class in 0..map.num_classes() {
            prop_assert_eq!(map.index_of(map.name(class)), Some(class));
        }
    }

    #[test]
    fn metrics_ignore_class_relabelling(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
        shift in 1usize..4,
    ) {
        let (y_true, y_pred): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let relabel = |c: usize| (c + shift) % 4;
        let base = metrics(&y_true, &y_pred).unwrap();
        let moved = metrics(
            &y_true.iter().map(|&c| relabel(c)).collect::<Vec<_>>(),
            &y_pred.iter().map(|&c| relabel(c)).collect::<Vec<_>>(),
        )
        .unwrap();
        prop_assert!((base.accuracy - moved.accuracy).abs() <= 1e-12);
        prop_assert!((base.macro_precision - moved.macro_precision).abs() <= 1e-12);
        prop_assert!((base.macro_recall - moved.macro_recall).abs() <= 1e-12);
        prop_assert!((base.macro_f1 - moved.macro_f1).abs() <= 1e-12);
    }

    #[test]
    fn accuracy_is_one_minus_hamming(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..80)) {
        let (y_true, y_pred): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let hamming = y_true.iter().zip(&y_pred).filter(|(a, b)| a != b).count() as f64 / y_true.len() as f64;
        prop_assert!((metrics(&y_true, &y_pred).unwrap().accuracy - (1.0 - hamming)).abs() <= 1e-12);
    }
}
