//! Randomized invariants of the search, the rules around it and the metrics.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use proptest::prelude::*;
use qtmt_fast::ddff::dataset::{read_dataset, write_dataset};
use qtmt_fast::ddff::refmap::MAP_LEN;
use qtmt_fast::ddff::{adjust_depth, Sample, K_D};
use qtmt_fast::frame_io::{read_yuv, write_yuv, FramePlane, Rect};
use qtmt_fast::intra::{IntraMode, RdCost};
use qtmt_fast::metrics::{ats, bdbr, classification_metrics, ConfusionMatrix, RdPoint};
use qtmt_fast::ppbe::{mode_probabilities, PartitionRecord};
use qtmt_fast::qtmt::{search, validate_tree, CuNode, CuTree, PartitionMode, SearchHooks, SPLIT_BITS};

const LAMBDA: f64 = 20.0;

/// Pseudo-random but repeatable leaf costs: D an integer, R a multiple of 1/2.
fn hashed_cost(seed: u64, r: Rect) -> (RdCost, IntraMode) {
    let mut h = DefaultHasher::new();
    (seed, r.x, r.y, r.w, r.h).hash(&mut h);
    let v = h.finish();
    let area = (r.w * r.h) as f64;
    let d = ((v & 0xffff) as f64 / 65535.0 * area * 40.0).round();
    let bits = ((v >> 16) & 0xff) as f64 / 2.0 + 4.0;
    (RdCost::new(d, bits, LAMBDA), IntraMode::Planar)
}

fn run(seed: u64, size: usize, bounds: (usize, usize), hooks: SearchHooks) -> (CuTree, RdCost) {
    search(&CuNode::root(0, 0, size), bounds, LAMBDA, hooks, |r: Rect| Ok(hashed_cost(seed, r))).unwrap()
}

fn summed(tree: &CuTree) -> (f64, f64) {
    if tree.is_leaf() {
        let c = tree.cost;
        return (c.distortion, c.rate_bits);
    }
    tree.children.iter().fold((0.0, SPLIT_BITS), |(d, r), c| {
        let (cd, cr) = summed(c);
        (d + cd, r + cr)
    })
}

fn permutation() -> impl Strategy<Value = [PartitionMode; 5]> {
    Just(PartitionMode::SPLITS.to_vec()).prop_shuffle().prop_map(|v| v.try_into().unwrap())
}

fn record(mode: PartitionMode) -> PartitionRecord {
    PartitionRecord {
        cu: CuNode::root(0, 0, 8),
        best_mode: mode,
        from_current_frame: true,
    }
}

fn curve() -> impl Strategy<Value = Vec<RdPoint>> {
    (1000.0..5000.0f64, 30.0..34.0f64, prop::array::uniform3((1.4..2.2f64, 1.5..3.5f64))).prop_map(|(r0, p0, steps)| {
        let mut pts = vec![RdPoint { rate: r0, psnr: p0 }];
        for (k, dp) in steps {
            let last = *pts.last().unwrap();
            pts.push(RdPoint {
                rate: last.rate * k,
                psnr: last.psnr + dp,
            });
        }
        pts
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exhaustive_trees_are_valid_and_cost_what_they_claim(seed in any::<u64>(), bw in 1usize..=4, bh in 1usize..=4) {
        let bounds = (bw * 8, bh * 8);
        let (tree, cost) = run(seed, 32, bounds, SearchHooks::exhaustive());
        validate_tree(&tree, bounds).unwrap();
        prop_assert!(tree.leaves().iter().all(|l| l.cu.depth >= 1));
        let (d, r) = summed(&tree);
        prop_assert_eq!(cost.distortion, d);
        prop_assert_eq!(cost.rate_bits, r);
        prop_assert_eq!(cost.j, d + LAMBDA * r);
    }

    #[test]
    fn pruning_never_beats_exhaustive(seed in any::<u64>(), cap in 1u8..=6, order in permutation(), early_stop in any::<bool>()) {
        let (_, full) = run(seed, 32, (32, 32), SearchHooks::exhaustive());
        let cap_fn = move |_: &CuNode| cap;
        let order_fn = move |_: &CuNode| order;
        let hooks = SearchHooks { depth_cap: Some(&cap_fn), mode_order: Some(&order_fn), early_stop };
        let (tree, pruned) = run(seed, 32, (32, 32), hooks);
        validate_tree(&tree, (32, 32)).unwrap();
        prop_assert!(tree.max_depth() <= cap);
        prop_assert!(pruned.j >= full.j);
    }

    #[test]
    fn mode_order_alone_does_not_change_the_optimum(seed in any::<u64>(), order in permutation()) {
        let (_, full) = run(seed, 32, (32, 32), SearchHooks::exhaustive());
        let order_fn = move |_: &CuNode| order;
        let hooks = SearchHooks { mode_order: Some(&order_fn), ..SearchHooks::exhaustive() };
        let (_, reordered) = run(seed, 32, (32, 32), hooks);
        prop_assert_eq!(reordered.j, full.j);
    }

    #[test]
    fn mode_probabilities_are_a_distribution(modes in prop::collection::vec(0usize..6, 1..40), k in 1usize..5) {
        let refs: Vec<PartitionRecord> = modes.iter().map(|&i| record(PartitionMode::ALL[i])).collect();
        let s = mode_probabilities(&refs);
        prop_assert!((s.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut sorted = s.order.to_vec();
        sorted.sort_by_key(|m| m.index());
        prop_assert_eq!(sorted, PartitionMode::SPLITS.to_vec());
        for w in s.order.windows(2) {
            prop_assert!(s.probability(w[0]) >= s.probability(w[1]));
        }
        let repeated: Vec<PartitionRecord> = refs.iter().cycle().take(refs.len() * k).copied().collect();
        let t = mode_probabilities(&repeated);
        prop_assert_eq!(t.order, s.order);
        for (a, b) in t.probabilities.iter().zip(&s.probabilities) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjusted_depth_stays_in_range_and_never_lowers(pred in 1u8..=6, refs in prop::collection::vec((1u8..=6, prop::option::of(1u8..=6)), 0..=25)) {
        let d = adjust_depth(pred, &refs, K_D);
        prop_assert!((1..=6).contains(&d));
        prop_assert!(d >= pred);
    }

    #[test]
    fn bdbr_is_antisymmetric_in_log_rate(a in curve(), b in curve()) {
        let (Ok(x), Ok(y)) = (bdbr(&a, &b), bdbr(&b, &a)) else { return Ok(()) };
        prop_assert!(((1.0 + x / 100.0) * (1.0 + y / 100.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bdbr_of_a_uniform_rate_scale_is_exact(a in curve(), s in 0.5..2.0f64) {
        let b: Vec<RdPoint> = a.iter().map(|p| RdPoint { rate: p.rate * s, ..*p }).collect();
        prop_assert!((bdbr(&a, &b).unwrap() - (s - 1.0) * 100.0).abs() < 1e-6);
    }

    #[test]
    fn ats_is_scale_invariant(times in prop::collection::vec((0.1..100.0f64, 0.1..100.0f64), 1..6), k in 0.01..100.0f64) {
        let (o, p): (Vec<f64>, Vec<f64>) = times.into_iter().unzip();
        let so: Vec<f64> = o.iter().map(|t| t * k).collect();
        let sp: Vec<f64> = p.iter().map(|t| t * k).collect();
        prop_assert!((ats(&o, &p).unwrap() - ats(&so, &sp).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn classification_ratios_lie_in_the_unit_interval(pairs in prop::collection::vec((1u8..=6, 1u8..=6), 1..200)) {
        let mut cm = ConfusionMatrix::default();
        for &(t, p) in &pairs {
            cm.record(t, p);
        }
        let r = classification_metrics(&cm).unwrap();
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        for c in &r.per_class {
            prop_assert!(unit(c.accuracy));
            for v in [c.precision, c.recall, c.specificity].into_iter().flatten() {
                prop_assert!(unit(v));
            }
        }
        prop_assert!(unit(r.mean_precision) && unit(r.mean_recall) && unit(r.mean_specificity) && unit(r.exact_match_accuracy));
        prop_assert_eq!(r.total, pairs.len() as u64);
    }

    #[test]
    fn datasets_round_trip(raw in prop::collection::vec((prop::array::uniform25(1u8..=6), 1u8..=6), 0..50)) {
        let samples: Vec<Sample> = raw.into_iter().map(|(depths, label)| Sample { depths, label }).collect();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &samples).unwrap();
        prop_assert_eq!(buf.len(), 12 + samples.len() * (MAP_LEN + 1));
        prop_assert_eq!(read_dataset(&buf[..]).unwrap(), samples);
    }

    #[test]
    fn yuv_round_trips(w in 1usize..40, h in 1usize..40, n in 1usize..4, seed in any::<u8>()) {
        let frames: Vec<FramePlane> = (0..n)
            .map(|i| {
                let s = (0..w * h).map(|k| (k as u8).wrapping_mul(31).wrapping_add(seed).wrapping_add(i as u8)).collect();
                FramePlane::new(w, h, i, s).unwrap()
            })
            .collect();
        let mut buf = Vec::new();
        write_yuv(&mut buf, &frames).unwrap();
        let back = read_yuv(&buf[..], w, h, None).unwrap();
        prop_assert_eq!(back.len(), frames.len());
        for (b, f) in back.iter().zip(&frames) {
            prop_assert_eq!(b.visible_samples(), f.visible_samples());
        }
    }
}
