//! CNN-based depth capping: reference depth maps, the fusion network, its
//! trainer, and the rules turning per-block predictions into a per-CU
//! maximum depth.

pub mod dataset;
pub mod model;
pub mod refmap;
pub mod train;

pub use dataset::{load_dataset, read_dataset, save_dataset, synthetic_rule_dataset, write_dataset, Sample};
pub use model::DdffModel;
pub use refmap::{build_ref_map, DepthGrid, RefDepthMap};
pub use train::{train, TrainConfig, TrainReport};

use crate::frame_io::BLOCK;
use crate::qtmt::{CuNode, MAX_DEPTH};

/// Number of reference blocks in a map.
pub const K_D: usize = 25;

/// Raises a predicted depth by the rounded mean error `D_k − D̃_k` of the
/// reference blocks when that mean is positive, then clamps to `1..=6`.
/// Pairs without a prediction count as zero error.
pub fn adjust_depth(predicted: u8, refs: &[(u8, Option<u8>)], k_d: usize) -> u8 {
    let k = k_d.max(1) as i64;
    let sum: i64 = refs
        .iter()
        .map(|&(d, p)| p.map_or(0, |p| i64::from(d) - i64::from(p)))
        .sum();
    // floor(sum / k + 1/2) without floating point
    let offset = (2 * sum + k).div_euclid(2 * k).max(0);
    (i64::from(predicted) + offset).clamp(1, i64::from(MAX_DEPTH)) as u8
}

/// Largest adjusted depth over the 8×8 blocks a CU covers inside `bounds`.
pub fn optimal_cu_depth(cu: &CuNode, bounds: (usize, usize), adjusted: impl Fn(usize, usize) -> u8) -> u8 {
    let x1 = (cu.x0 + cu.width).min(bounds.0);
    let y1 = (cu.y0 + cu.height).min(bounds.1);
    let mut d = 0;
    for by in cu.y0 / BLOCK..y1.div_ceil(BLOCK) {
        for bx in cu.x0 / BLOCK..x1.div_ceil(BLOCK) {
            d = d.max(adjusted(bx, by));
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs_with_errors(errors: &[i32]) -> Vec<(u8, Option<u8>)> {
        errors.iter().map(|&e| ((3 + e) as u8, Some(3))).collect()
    }

    #[test]
    fn adjust_examples() {
        let zero = refs_with_errors(&[0; 25]);
        assert_eq!(adjust_depth(3, &zero, K_D), 3);
        // mean error 0.6: 15 blocks off by +1, floor(0.6 + 0.5) = 1
        let mut e = [0; 25];
        e[..15].fill(1);
        assert_eq!(adjust_depth(3, &refs_with_errors(&e), K_D), 4);
        // mean error -0.8: offset clamped to 0
        let mut e = [0; 25];
        e[..20].fill(-1);
        assert_eq!(adjust_depth(3, &refs_with_errors(&e), K_D), 3);
        // the half rounds up
        let mut e = [0; 25];
        e[..12].fill(1);
        assert_eq!(adjust_depth(2, &refs_with_errors(&e), K_D), 2);
        e[12] = 1;
        assert_eq!(adjust_depth(2, &refs_with_errors(&e), K_D), 3);
    }

    #[test]
    fn adjust_clamps_and_ignores_missing_predictions() {
        let big = refs_with_errors(&[3; 25]);
        assert_eq!(adjust_depth(5, &big, K_D), 6);
        let missing = vec![(6, None); 25];
        assert_eq!(adjust_depth(2, &missing, K_D), 2);
    }

    #[test]
    fn optimal_depth_examples() {
        let grid = [[2u8, 2], [2, 2]];
        let cu = CuNode::root(0, 0, 16);
        assert_eq!(optimal_cu_depth(&cu, (16, 16), |x, y| grid[y][x]), 2);
        let grid = [[1u8, 1], [6, 2]];
        assert_eq!(optimal_cu_depth(&cu, (16, 16), |x, y| grid[y][x]), 6);
        let small = CuNode { width: 8, height: 8, ..CuNode::root(8, 8, 8) };
        assert_eq!(optimal_cu_depth(&small, (16, 16), |x, y| grid[y][x]), 2);
        let sliver = CuNode { width: 4, height: 16, ..CuNode::root(4, 0, 4) };
        assert_eq!(optimal_cu_depth(&sliver, (16, 16), |x, y| grid[y][x]), 6);
        // the part of a CU hanging over the plane edge is ignored
        let over = CuNode::root(0, 0, 32);
        assert_eq!(optimal_cu_depth(&over, (16, 16), |x, y| grid[y][x]), 6);
    }
}
