//! Probability-ordered split testing with early termination.
//!
//! Reference CUs are collected from the 3×3 neighbourhood of a CU in the
//! current frame (causal positions only) and the previous frame. Their best
//! modes give an occurrence-count estimate of how likely each split mode is
//! to win; modes seen in the neighbourhood are tried first, most frequent
//! first, and testing stops as soon as a split costs more than the best
//! option found so far.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::qtmt::{CuNode, CuTree, PartitionMode};

/// Coded partition trees of one frame, indexed by CTU in raster order.
#[derive(Clone, Debug)]
pub struct FramePartitions {
    pub ctu_size: usize,
    pub ctus_w: usize,
    pub ctus_h: usize,
    trees: Vec<Option<CuTree>>,
}

impl FramePartitions {
    pub fn new(width: usize, height: usize, ctu_size: usize) -> Self {
        let ctus_w = width.div_ceil(ctu_size);
        let ctus_h = height.div_ceil(ctu_size);
        FramePartitions {
            ctu_size,
            ctus_w,
            ctus_h,
            trees: vec![None; ctus_w * ctus_h],
        }
    }

    pub fn insert(&mut self, tree: CuTree) {
        let idx = (tree.cu.y0 / self.ctu_size) * self.ctus_w + tree.cu.x0 / self.ctu_size;
        self.trees[idx] = Some(tree);
    }

    pub fn trees(&self) -> impl Iterator<Item = &CuTree> {
        self.trees.iter().flatten()
    }

    /// Deepest coded node containing `(x, y)` with depth at most `max_depth`.
    pub fn node_at(&self, x: isize, y: isize, max_depth: u8) -> Option<&CuTree> {
        if x < 0 || y < 0 {
            return None;
        }
        let (x, y) = (x as usize, y as usize);
        let (cx, cy) = (x / self.ctu_size, y / self.ctu_size);
        if cx >= self.ctus_w || cy >= self.ctus_h {
            return None;
        }
        self.trees[cy * self.ctus_w + cx].as_ref()?.node_at(x, y, max_depth)
    }
}

/// One member of the reference set: a coded CU and its best mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartitionRecord {
    pub cu: CuNode,
    pub best_mode: PartitionMode,
    pub from_current_frame: bool,
}

fn probe(origin: usize, extent: usize, delta: i32) -> isize {
    match delta {
        -1 => origin as isize - 1,
        0 => origin as isize,
        _ => (origin + extent) as isize,
    }
}

/// Collects the reference set of `cu`. Each of the eight neighbour offsets
/// probes one sample beyond the CU boundary and resolves to the deepest coded
/// node there whose depth does not exceed the CU's. Causal offsets use both
/// the current and the previous frame; the rest use the previous frame only.
pub fn build_ref_cus(current: &FramePartitions, previous: Option<&FramePartitions>, cu: &CuNode) -> Vec<PartitionRecord> {
    let mut out = Vec::with_capacity(11);
    for dy in -1..=1 {
        for dx in -1..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let px = probe(cu.x0, cu.width, dx);
            let py = probe(cu.y0, cu.height, dy);
            let causal = dx < 0 || (dx == 0 && dy < 0);
            if causal {
                if let Some(n) = current.node_at(px, py, cu.depth) {
                    out.push(PartitionRecord {
                        cu: n.cu,
                        best_mode: n.mode,
                        from_current_frame: true,
                    });
                }
            }
            if let Some(n) = previous.and_then(|p| p.node_at(px, py, cu.depth)) {
                out.push(PartitionRecord {
                    cu: n.cu,
                    best_mode: n.mode,
                    from_current_frame: false,
                });
            }
        }
    }
    out
}

/// Occurrence-based best-mode probabilities and the resulting test order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartitionStats {
    /// Indexed by [`PartitionMode::index`]; zero for modes absent from the
    /// reference set.
    pub probabilities: [f64; 6],
    /// Split modes in testing order.
    pub order: [PartitionMode; 5],
}

impl PartitionStats {
    pub fn probability(&self, mode: PartitionMode) -> f64 {
        self.probabilities[mode.index()]
    }

    /// Split modes paired with their probabilities, in testing order.
    pub fn candidates(&self) -> Vec<(PartitionMode, f64)> {
        self.order.iter().map(|&m| (m, self.probability(m))).collect()
    }
}

/// Orders the split modes from best-mode counts (indexed by mode).
pub fn order_from_counts(counts: &[u64; 6]) -> [PartitionMode; 5] {
    let mut order = PartitionMode::SPLITS;
    // stable sort keeps canonical order among ties and among unseen modes
    order.sort_by(|a, b| counts[b.index()].cmp(&counts[a.index()]));
    order
}

pub fn mode_probabilities(refs: &[PartitionRecord]) -> PartitionStats {
    let mut counts = [0u64; 6];
    for r in refs {
        counts[r.best_mode.index()] += 1;
    }
    let total = refs.len() as f64;
    let mut probabilities = [0.0; 6];
    if !refs.is_empty() {
        for (p, &c) in probabilities.iter_mut().zip(&counts) {
            *p = c as f64 / total;
        }
    }
    PartitionStats {
        probabilities,
        order: order_from_counts(&counts),
    }
}

/// A tested option: its RD cost and caller payload.
#[derive(Clone, Copy, Debug)]
pub struct Tested<T> {
    pub mode: PartitionMode,
    pub j: f64,
    pub payload: T,
}

#[derive(Clone, Debug)]
pub struct LoopOutcome<T> {
    pub best: Option<Tested<T>>,
    pub tested: Vec<PartitionMode>,
    pub terminated_early: bool,
}

/// Tests split modes in `order`. `none` is the already evaluated no-split
/// option (absent when a leaf is not allowed). `test` returns `None` for a
/// split that admits no legal subtree. With `early_stop`, the loop ends right
/// after the first split whose cost exceeds the best cost seen before it.
pub fn ppbe_loop<T, F>(none: Option<(f64, T)>, order: &[PartitionMode], early_stop: bool, mut test: F) -> Result<LoopOutcome<T>>
where
    F: FnMut(PartitionMode) -> Result<Option<(f64, T)>>,
{
    let mut best = none.map(|(j, payload)| Tested {
        mode: PartitionMode::None,
        j,
        payload,
    });
    let mut tested = Vec::with_capacity(order.len());
    for &mode in order {
        tested.push(mode);
        let j_min = best.as_ref().map_or(f64::INFINITY, |b| b.j);
        let j_cur = match test(mode)? {
            Some((j, payload)) => {
                if j < j_min {
                    best = Some(Tested { mode, j, payload });
                }
                j
            }
            None => f64::INFINITY,
        };
        if early_stop && j_cur > j_min {
            return Ok(LoopOutcome {
                best,
                terminated_early: tested.len() < order.len(),
                tested,
            });
        }
    }
    Ok(LoopOutcome {
        best,
        tested,
        terminated_early: false,
    })
}

/// Conditional best-mode frequencies, split by whether the mode appeared in
/// the CU's reference set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeStatistics {
    pub occurrences: [u64; 6],
    pub in_ref_trials: [u64; 6],
    pub in_ref_hits: [u64; 6],
    pub out_ref_trials: [u64; 6],
    pub out_ref_hits: [u64; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeStatisticsRow {
    pub mode: PartitionMode,
    pub occurrences: u64,
    pub p_best_given_in_ref: Option<f64>,
    pub p_best_given_not_in_ref: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeStatisticsSummary {
    pub counts: ModeStatistics,
    pub rows: Vec<ModeStatisticsRow>,
    pub mean_p_best_given_in_ref: f64,
    pub mean_p_best_given_not_in_ref: f64,
}

impl ModeStatistics {
    /// Records one coded CU whose best mode was `best` given its references.
    pub fn record(&mut self, best: PartitionMode, refs: &[PartitionRecord]) {
        let mut in_ref = [false; 6];
        for r in refs {
            in_ref[r.best_mode.index()] = true;
        }
        self.occurrences[best.index()] += 1;
        for m in PartitionMode::ALL {
            let i = m.index();
            let hit = (m == best) as u64;
            if in_ref[i] {
                self.in_ref_trials[i] += 1;
                self.in_ref_hits[i] += hit;
            } else {
                self.out_ref_trials[i] += 1;
                self.out_ref_hits[i] += hit;
            }
        }
    }

    pub fn merge(&mut self, other: &ModeStatistics) {
        for i in 0..6 {
            self.occurrences[i] += other.occurrences[i];
            self.in_ref_trials[i] += other.in_ref_trials[i];
            self.in_ref_hits[i] += other.in_ref_hits[i];
            self.out_ref_trials[i] += other.out_ref_trials[i];
            self.out_ref_hits[i] += other.out_ref_hits[i];
        }
    }

    /// Per-mode conditional frequencies and their means over modes with
    /// at least one trial.
    pub fn summary(&self) -> ModeStatisticsSummary {
        let ratio = |h: u64, t: u64| (t > 0).then(|| h as f64 / t as f64);
        let rows: Vec<ModeStatisticsRow> = PartitionMode::ALL
            .iter()
            .map(|&m| {
                let i = m.index();
                ModeStatisticsRow {
                    mode: m,
                    occurrences: self.occurrences[i],
                    p_best_given_in_ref: ratio(self.in_ref_hits[i], self.in_ref_trials[i]),
                    p_best_given_not_in_ref: ratio(self.out_ref_hits[i], self.out_ref_trials[i]),
                }
            })
            .collect();
        let mean = |vals: Vec<f64>| {
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        ModeStatisticsSummary {
            mean_p_best_given_in_ref: mean(rows.iter().filter_map(|r| r.p_best_given_in_ref).collect()),
            mean_p_best_given_not_in_ref: mean(rows.iter().filter_map(|r| r.p_best_given_not_in_ref).collect()),
            rows,
            counts: self.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intra::RdCost;
    use PartitionMode::*;

    fn rec(mode: PartitionMode) -> PartitionRecord {
        PartitionRecord {
            cu: CuNode::root(0, 0, 8),
            best_mode: mode,
            from_current_frame: false,
        }
    }

    #[test]
    fn counts_two_qt_one_bth() {
        let s = mode_probabilities(&[rec(Qt), rec(Qt), rec(Bth)]);
        assert!((s.probability(Qt) - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.probability(Bth) - 1.0 / 3.0).abs() < 1e-12);
        for m in [Btv, Tth, Ttv, None] {
            assert_eq!(s.probability(m), 0.0);
        }
        assert_eq!(s.order, [Qt, Bth, Btv, Tth, Ttv]);
    }

    #[test]
    fn all_ttv() {
        let s = mode_probabilities(&[rec(Ttv); 4]);
        assert_eq!(s.probability(Ttv), 1.0);
        assert_eq!(s.order, [Ttv, Qt, Bth, Btv, Tth]);
    }

    #[test]
    fn empty_reference_set() {
        let s = mode_probabilities(&[]);
        assert_eq!(s.order, PartitionMode::SPLITS);
        assert!(s.probabilities.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn leaf_neighbours_count_as_none() {
        let s = mode_probabilities(&[rec(None), rec(Btv), rec(Btv), rec(Tth)]);
        assert_eq!(s.order, [Btv, Tth, Qt, Bth, Ttv]);
        assert_eq!(s.probability(None), 0.25);
        assert!((s.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loop_stops_after_first_worse_split() {
        let costs = |m: PartitionMode| match m {
            Qt => 12.0,
            _ => 1.0,
        };
        let out = ppbe_loop(Some((10.0, ())), &PartitionMode::SPLITS, true, |m| Ok(Some((costs(m), ())))).unwrap();
        assert_eq!(out.tested, vec![Qt]);
        assert_eq!(out.best.unwrap().mode, None);
        assert!(out.terminated_early);
    }

    #[test]
    fn loop_runs_through_decreasing_costs() {
        let costs = |m: PartitionMode| 10.0 - m.index() as f64;
        let out = ppbe_loop(Some((10.0, ())), &PartitionMode::SPLITS, true, |m| Ok(Some((costs(m), ())))).unwrap();
        assert_eq!(out.tested.len(), 5);
        assert_eq!(out.best.unwrap().mode, Ttv);
    }

    #[test]
    fn ties_continue_testing() {
        let out = ppbe_loop(Some((5.0, ())), &[Qt, Bth], true, |_| Ok(Some((5.0, ())))).unwrap();
        assert_eq!(out.tested.len(), 2);
        assert_eq!(out.best.unwrap().mode, None);
    }

    #[test]
    fn without_early_stop_tests_everything() {
        let out = ppbe_loop(Some((1.0, ())), &PartitionMode::SPLITS, false, |_| Ok(Some((9.0, ())))).unwrap();
        assert_eq!(out.tested.len(), 5);
    }

    fn leaf_tree(cu: CuNode) -> CuTree {
        CuTree {
            cu,
            mode: None,
            intra_mode: Option::None,
            cost: RdCost::ZERO,
            children: vec![],
        }
    }

    fn split_tree(cu: CuNode, mode: PartitionMode) -> CuTree {
        CuTree {
            cu,
            mode,
            intra_mode: Option::None,
            cost: RdCost::ZERO,
            children: cu.children(mode).into_iter().map(leaf_tree).collect(),
        }
    }

    #[test]
    fn interior_cu_collects_eleven_records() {
        // 3×3 CTUs of 32 coding the centre one: the previous frame is complete,
        // the current frame holds the four CTUs that precede it in raster order.
        let mut cur = FramePartitions::new(96, 96, 32);
        let mut prev = FramePartitions::new(96, 96, 32);
        for cy in 0..3 {
            for cx in 0..3 {
                let root = CuNode::root(cx * 32, cy * 32, 32);
                if cy * 3 + cx < 4 {
                    cur.insert(split_tree(root, Qt));
                }
                prev.insert(split_tree(root, Bth));
            }
        }
        // left half of the centre CTU: its below-left neighbour is not coded yet
        let cu = CuNode::root(32, 32, 32).children(Btv)[0];
        let refs = build_ref_cus(&cur, Some(&prev), &cu);
        assert_eq!(refs.len(), 11);
        assert_eq!(refs.iter().filter(|r| r.from_current_frame).count(), 3);
        assert!(refs.iter().all(|r| r.cu.depth <= cu.depth));

        // the top-left quadrant also sees its coded below-left neighbour
        let cu = CuNode::root(32, 32, 32).children(Qt)[0];
        assert_eq!(build_ref_cus(&cur, Some(&prev), &cu).len(), 12);
    }

    #[test]
    fn first_cu_of_first_frame_has_no_references() {
        let cur = FramePartitions::new(64, 64, 32);
        let cu = CuNode::root(0, 0, 32).children(Qt)[0];
        assert!(build_ref_cus(&cur, Option::None, &cu).is_empty());
    }

    #[test]
    fn left_neighbour_only_in_first_frame() {
        let mut cur = FramePartitions::new(64, 32, 32);
        cur.insert(split_tree(CuNode::root(0, 0, 32), Btv));
        // top-left depth-1 CU of the second CTU: probes (-1,0) and (-1,1) land in
        // the coded left CTU; (-1,-1) is above the frame
        let cu = CuNode::root(32, 0, 32).children(Qt)[0];
        let refs = build_ref_cus(&cur, Option::None, &cu);
        assert_eq!(refs.len(), 2);
        assert!(refs.iter().all(|r| r.from_current_frame && r.cu.x0 == 16 && r.best_mode == None));
    }

    #[test]
    fn statistics_split_by_reference_membership() {
        let mut st = ModeStatistics::default();
        st.record(Qt, &[rec(Qt), rec(Bth)]);
        st.record(Bth, &[rec(Qt)]);
        let s = st.summary();
        let qt = &s.rows[Qt.index()];
        assert_eq!(qt.p_best_given_in_ref, Some(0.5));
        assert_eq!(qt.p_best_given_not_in_ref, Option::None);
        let bth = &s.rows[Bth.index()];
        assert_eq!(bth.p_best_given_in_ref, Some(0.0));
        assert_eq!(bth.p_best_given_not_in_ref, Some(1.0));
    }
}
