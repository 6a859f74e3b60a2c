//! Per-frame 8×8 depth lattice and the 5×5 spatio-temporal reference map
//! assembled around a block.

use crate::error::{Error, Result};

pub const MAP_SIDE: usize = 5;
pub const MAP_LEN: usize = MAP_SIDE * MAP_SIDE;

/// Final and predicted depths of every 8×8 block of one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepthGrid {
    pub frame_index: usize,
    pub blocks_wide: usize,
    pub blocks_high: usize,
    final_depth: Vec<Option<u8>>,
    predicted: Vec<Option<u8>>,
}

impl DepthGrid {
    pub fn new(frame_index: usize, blocks_wide: usize, blocks_high: usize) -> Self {
        let n = blocks_wide * blocks_high;
        DepthGrid {
            frame_index,
            blocks_wide,
            blocks_high,
            final_depth: vec![None; n],
            predicted: vec![None; n],
        }
    }

    fn index(&self, bx: usize, by: usize) -> usize {
        debug_assert!(bx < self.blocks_wide && by < self.blocks_high);
        by * self.blocks_wide + bx
    }

    pub fn contains(&self, bx: isize, by: isize) -> bool {
        bx >= 0 && by >= 0 && (bx as usize) < self.blocks_wide && (by as usize) < self.blocks_high
    }

    pub fn final_depth(&self, bx: usize, by: usize) -> Option<u8> {
        self.final_depth[self.index(bx, by)]
    }

    pub fn predicted(&self, bx: usize, by: usize) -> Option<u8> {
        self.predicted[self.index(bx, by)]
    }

    /// Records the final depth of a block. Each block is written once.
    pub fn set_final(&mut self, bx: usize, by: usize, depth: u8) -> Result<()> {
        if !(1..=6).contains(&depth) {
            return Err(Error::Argument(format!("final depth {depth} outside 1..=6")));
        }
        let i = self.index(bx, by);
        if self.final_depth[i].is_some() {
            return Err(Error::Argument(format!(
                "block ({bx}, {by}) of frame {} already has a final depth",
                self.frame_index
            )));
        }
        self.final_depth[i] = Some(depth);
        Ok(())
    }

    pub fn set_predicted(&mut self, bx: usize, by: usize, depth: u8) {
        let i = self.index(bx, by);
        self.predicted[i] = Some(depth);
    }

    pub fn is_complete(&self) -> bool {
        self.final_depth.iter().all(Option::is_some)
    }
}

/// The 25 reference depths around a block, row-major over `(Δy, Δx)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RefDepthMap {
    /// Final depths `D_k`.
    pub depths: [u8; MAP_LEN],
    /// Predicted depths `D̃_k` of the same blocks, where one was made.
    pub predicted: [Option<u8>; MAP_LEN],
    /// True where the value comes from the current frame.
    pub from_current: [bool; MAP_LEN],
}

impl RefDepthMap {
    /// `(D_k, D̃_k)` pairs in map order.
    pub fn pairs(&self) -> impl Iterator<Item = (u8, Option<u8>)> + '_ {
        self.depths.iter().copied().zip(self.predicted.iter().copied())
    }
}

/// Position of offset `(dx, dy)` in map order.
pub fn map_index(dx: i32, dy: i32) -> usize {
    ((dy + 2) * MAP_SIDE as i32 + dx + 2) as usize
}

/// Assembles the reference map of block `(bx, by)`. Causal neighbours (to
/// the left, or directly above) take the current frame's final depth when
/// that block has already been coded and the co-located depth of the
/// previous frame otherwise; all other cells come from the previous frame.
/// Returns `None` without a previous frame or when any cell is off-frame
/// or not yet coded.
pub fn build_ref_map(current: &DepthGrid, previous: Option<&DepthGrid>, bx: usize, by: usize) -> Option<RefDepthMap> {
    let previous = previous?;
    let mut map = RefDepthMap {
        depths: [0; MAP_LEN],
        predicted: [None; MAP_LEN],
        from_current: [false; MAP_LEN],
    };
    for dy in -2..=2i32 {
        for dx in -2..=2i32 {
            let (x, y) = (bx as isize + dx as isize, by as isize + dy as isize);
            if !previous.contains(x, y) {
                return None;
            }
            let (x, y) = (x as usize, y as usize);
            let k = map_index(dx, dy);
            let causal = dx < 0 || (dx == 0 && dy < 0);
            let coded_now = if causal { current.final_depth(x, y) } else { None };
            let (grid, depth) = match coded_now {
                Some(d) => (current, d),
                None => (previous, previous.final_depth(x, y)?),
            };
            map.depths[k] = depth;
            map.predicted[k] = grid.predicted(x, y);
            map.from_current[k] = coded_now.is_some();
        }
    }
    Some(map)
}
