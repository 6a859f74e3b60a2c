//! Recursive QTMT partition search over one CTU.
//!
//! The search is a memoised depth-first walk: every node first costs the
//! no-split leaf, then tries split modes in the order supplied by the hooks,
//! summing the best subtree of each child. With no hooks armed it returns the
//! minimum-cost tree over every legal partition of the CTU.
//!
//! Leaf costs are assumed to depend only on the CU rectangle for the duration
//! of one search call, which lets subtree results be shared between split
//! paths that reach the same `(rect, depth, mtt_started)` state.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame_io::{Rect, BLOCK};
use crate::intra::{IntraMode, RdCost};
use crate::ppbe;

/// Deepest split level a CU may reach.
pub const MAX_DEPTH: u8 = 6;
/// Signalling bits added for each internal (split) node.
pub const SPLIT_BITS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartitionMode {
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "QT")]
    Qt,
    #[serde(rename = "BTH")]
    Bth,
    #[serde(rename = "BTV")]
    Btv,
    #[serde(rename = "TTH")]
    Tth,
    #[serde(rename = "TTV")]
    Ttv,
}

impl PartitionMode {
    /// Split modes in canonical tie-break order.
    pub const SPLITS: [PartitionMode; 5] = [
        PartitionMode::Qt,
        PartitionMode::Bth,
        PartitionMode::Btv,
        PartitionMode::Tth,
        PartitionMode::Ttv,
    ];

    pub const ALL: [PartitionMode; 6] = [
        PartitionMode::None,
        PartitionMode::Qt,
        PartitionMode::Bth,
        PartitionMode::Btv,
        PartitionMode::Tth,
        PartitionMode::Ttv,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PartitionMode::None => "NONE",
            PartitionMode::Qt => "QT",
            PartitionMode::Bth => "BTH",
            PartitionMode::Btv => "BTV",
            PartitionMode::Tth => "TTH",
            PartitionMode::Ttv => "TTV",
        }
    }

    pub fn is_mtt(self) -> bool {
        !matches!(self, PartitionMode::None | PartitionMode::Qt)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CuNode {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub depth: u8,
    pub mtt_started: bool,
}

impl CuNode {
    pub fn root(x0: usize, y0: usize, size: usize) -> CuNode {
        CuNode {
            x0,
            y0,
            width: size,
            height: size,
            depth: 0,
            mtt_started: false,
        }
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.x0, self.y0, self.width, self.height)
    }

    /// Child nodes for `mode`, in coding order (top-to-bottom, left-to-right).
    pub fn children(&self, mode: PartitionMode) -> Vec<CuNode> {
        let (x, y, w, h) = (self.x0, self.y0, self.width, self.height);
        let child = |cx, cy, cw, ch| CuNode {
            x0: cx,
            y0: cy,
            width: cw,
            height: ch,
            depth: self.depth + 1,
            mtt_started: self.mtt_started || mode.is_mtt(),
        };
        match mode {
            PartitionMode::None => Vec::new(),
            PartitionMode::Qt => {
                let (hw, hh) = (w / 2, h / 2);
                vec![
                    child(x, y, hw, hh),
                    child(x + hw, y, hw, hh),
                    child(x, y + hh, hw, hh),
                    child(x + hw, y + hh, hw, hh),
                ]
            }
            PartitionMode::Bth => vec![child(x, y, w, h / 2), child(x, y + h / 2, w, h / 2)],
            PartitionMode::Btv => vec![child(x, y, w / 2, h), child(x + w / 2, y, w / 2, h)],
            PartitionMode::Tth => {
                let q = h / 4;
                vec![child(x, y, w, q), child(x, y + q, w, 2 * q), child(x, y + 3 * q, w, q)]
            }
            PartitionMode::Ttv => {
                let q = w / 4;
                vec![child(x, y, q, h), child(x + q, y, 2 * q, h), child(x + 3 * q, y, q, h)]
            }
        }
    }
}

/// Split modes allowed at `cu`, in canonical order.
pub fn legal_splits(cu: &CuNode) -> Vec<PartitionMode> {
    let (w, h) = (cu.width, cu.height);
    if cu.depth >= MAX_DEPTH || (w == 4 && h == 4) {
        return Vec::new();
    }
    PartitionMode::SPLITS
        .into_iter()
        .filter(|m| match m {
            PartitionMode::Qt => w == h && w >= 16 && !cu.mtt_started,
            PartitionMode::Bth => h / 2 >= 4,
            PartitionMode::Btv => w / 2 >= 4,
            PartitionMode::Tth => h >= 16,
            PartitionMode::Ttv => w >= 16,
            PartitionMode::None => false,
        })
        .collect()
}

/// A partition tree. Leaves carry their intra mode; internal nodes their split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuTree {
    pub cu: CuNode,
    pub mode: PartitionMode,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub intra_mode: Option<IntraMode>,
    pub cost: RdCost,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub children: Vec<CuTree>,
}

impl CuTree {
    pub fn is_leaf(&self) -> bool {
        self.mode == PartitionMode::None
    }

    pub fn leaves(&self) -> Vec<&CuTree> {
        let mut out = Vec::new();
        self.visit(&mut |n| {
            if n.is_leaf() {
                out.push(n)
            }
        });
        out
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a CuTree)) {
        f(self);
        for c in &self.children {
            c.visit(f);
        }
    }

    pub fn max_depth(&self) -> u8 {
        let mut d = 0;
        self.visit(&mut |n| d = d.max(n.cu.depth));
        d
    }

    /// Deepest node containing sample `(x, y)` whose depth is at most
    /// `max_depth`.
    pub fn node_at(&self, x: usize, y: usize, max_depth: u8) -> Option<&CuTree> {
        if !self.cu.rect().contains(x, y) || self.cu.depth > max_depth {
            return None;
        }
        let mut node = self;
        'down: loop {
            for c in &node.children {
                if c.cu.depth <= max_depth && c.cu.rect().contains(x, y) {
                    node = c;
                    continue 'down;
                }
            }
            return Some(node);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Supplies the cost of coding a rectangle as one leaf.
pub trait LeafCoster {
    fn leaf_cost(&mut self, rect: Rect) -> Result<(RdCost, IntraMode)>;
}

impl<F> LeafCoster for F
where
    F: FnMut(Rect) -> Result<(RdCost, IntraMode)>,
{
    fn leaf_cost(&mut self, rect: Rect) -> Result<(RdCost, IntraMode)> {
        self(rect)
    }
}

/// Optional pruning hooks. All disabled means exhaustive search.
#[derive(Clone, Copy, Default)]
pub struct SearchHooks<'a> {
    /// Maximum depth `D_o` a CU may be split down to.
    pub depth_cap: Option<&'a dyn Fn(&CuNode) -> u8>,
    /// Preferred testing order of the five split modes.
    pub mode_order: Option<&'a dyn Fn(&CuNode) -> [PartitionMode; 5]>,
    /// Stop testing split modes once one costs more than the best so far.
    pub early_stop: bool,
}

impl SearchHooks<'_> {
    pub fn exhaustive() -> Self {
        SearchHooks::default()
    }
}

#[derive(Clone, Copy, Debug)]
struct Choice {
    cost: RdCost,
    mode: PartitionMode,
    intra: Option<IntraMode>,
}

type StateKey = (usize, usize, usize, usize, u8, bool);

fn key(cu: &CuNode) -> StateKey {
    (cu.x0, cu.y0, cu.width, cu.height, cu.depth, cu.mtt_started)
}

/// Search statistics for one call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SearchCounters {
    pub leaf_evaluations: usize,
    pub nodes: usize,
    pub splits_tested: usize,
}

pub struct Searcher<'h, C> {
    bounds: (usize, usize),
    lambda: f64,
    hooks: SearchHooks<'h>,
    coster: C,
    leaves: HashMap<Rect, (RdCost, IntraMode)>,
    memo: HashMap<StateKey, Option<Choice>>,
    pub counters: SearchCounters,
}

impl<'h, C: LeafCoster> Searcher<'h, C> {
    /// `bounds` is the coded plane size; CUs crossing it must split and
    /// children entirely outside are dropped.
    pub fn new(bounds: (usize, usize), lambda: f64, hooks: SearchHooks<'h>, coster: C) -> Self {
        Searcher {
            bounds,
            lambda,
            hooks,
            coster,
            leaves: HashMap::new(),
            memo: HashMap::new(),
            counters: SearchCounters::default(),
        }
    }

    fn inside(&self, cu: &CuNode) -> bool {
        cu.x0 + cu.width <= self.bounds.0 && cu.y0 + cu.height <= self.bounds.1
    }

    fn present(&self, cu: &CuNode) -> bool {
        cu.x0 < self.bounds.0 && cu.y0 < self.bounds.1
    }

    /// Splits to try at `cu`, already filtered by legality, boundary and the
    /// depth cap, in hook order.
    fn candidates(&self, cu: &CuNode, can_leaf: bool) -> Vec<PartitionMode> {
        let mut legal = legal_splits(cu);
        if !self.inside(cu) {
            let crosses_right = cu.x0 + cu.width > self.bounds.0;
            let crosses_bottom = cu.y0 + cu.height > self.bounds.1;
            legal.retain(|m| match m {
                PartitionMode::Qt => true,
                PartitionMode::Bth => crosses_bottom,
                PartitionMode::Btv => crosses_right,
                _ => false,
            });
        } else if can_leaf {
            if let Some(cap) = self.hooks.depth_cap {
                if cu.depth >= cap(cu) {
                    legal.clear();
                }
            }
        }
        match self.hooks.mode_order {
            Some(order) => order(cu).into_iter().filter(|m| legal.contains(m)).collect(),
            None => legal,
        }
    }

    fn leaf(&mut self, rect: Rect) -> Result<(RdCost, IntraMode)> {
        if let Some(&hit) = self.leaves.get(&rect) {
            return Ok(hit);
        }
        let v = self.coster.leaf_cost(rect)?;
        self.counters.leaf_evaluations += 1;
        self.leaves.insert(rect, v);
        Ok(v)
    }

    fn best(&mut self, cu: &CuNode) -> Result<Option<Choice>> {
        let k = key(cu);
        if let Some(&hit) = self.memo.get(&k) {
            return Ok(hit);
        }
        self.counters.nodes += 1;
        let can_leaf = cu.depth > 0 && self.inside(cu);
        let leaf = if can_leaf {
            let (cost, intra) = self.leaf(cu.rect())?;
            Some(Choice {
                cost,
                mode: PartitionMode::None,
                intra: Some(intra),
            })
        } else {
            None
        };
        let order = self.candidates(cu, can_leaf);
        let lambda = self.lambda;
        let early_stop = self.hooks.early_stop;
        let outcome = ppbe::ppbe_loop(leaf.map(|c| (c.cost.j, c)), &order, early_stop, |mode| {
            self.counters.splits_tested += 1;
            let mut total = RdCost::ZERO;
            for child in cu.children(mode) {
                if !self.present(&child) {
                    continue;
                }
                match self.best(&child)? {
                    Some(c) => total = total.combine(c.cost, 0.0, lambda),
                    None => return Ok(None),
                }
            }
            let cost = total.combine(RdCost::ZERO, SPLIT_BITS, lambda);
            Ok(Some((
                cost.j,
                Choice {
                    cost,
                    mode,
                    intra: None,
                },
            )))
        })?;
        let result = outcome.best.map(|b| b.payload);
        self.memo.insert(k, result);
        Ok(result)
    }

    fn build(&self, cu: &CuNode) -> CuTree {
        let choice = self.memo.get(&key(cu)).copied().flatten();
        match choice {
            Some(c) if c.mode != PartitionMode::None => CuTree {
                cu: *cu,
                mode: c.mode,
                intra_mode: None,
                cost: c.cost,
                children: cu
                    .children(c.mode)
                    .iter()
                    .filter(|ch| self.present(ch))
                    .map(|ch| self.build(ch))
                    .collect(),
            },
            Some(c) => CuTree {
                cu: *cu,
                mode: PartitionMode::None,
                intra_mode: c.intra,
                cost: c.cost,
                children: Vec::new(),
            },
            None => unreachable!("build() on an unsearched node"),
        }
    }

    /// Runs the search from `root` and returns the best tree.
    pub fn search(&mut self, root: &CuNode) -> Result<CuTree> {
        match self.best(root)? {
            Some(_) => Ok(self.build(root)),
            None => Err(Error::Argument(format!("no legal partition for {root:?}"))),
        }
    }

    pub fn into_coster(self) -> C {
        self.coster
    }
}

/// One-shot search of `root` within a plane of size `bounds`.
pub fn search<C: LeafCoster>(
    root: &CuNode,
    bounds: (usize, usize),
    lambda: f64,
    hooks: SearchHooks<'_>,
    coster: C,
) -> Result<(CuTree, RdCost)> {
    let mut s = Searcher::new(bounds, lambda, hooks, coster);
    let tree = s.search(root)?;
    let cost = tree.cost;
    Ok((tree, cost))
}

/// Per-8×8-block depths of a tree, in block units relative to the plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockDepths {
    pub bx0: usize,
    pub by0: usize,
    pub bw: usize,
    pub bh: usize,
    pub depths: Vec<u8>,
}

impl BlockDepths {
    pub fn get(&self, bx: usize, by: usize) -> u8 {
        self.depths[(by - self.by0) * self.bw + (bx - self.bx0)]
    }
}

/// Depth of the covering leaf for each 8×8 block; sub-8×8 leaves sharing a
/// block contribute their maximum depth.
pub fn depth_grid_of(tree: &CuTree) -> BlockDepths {
    let root = tree.cu.rect();
    let (mut x1, mut y1) = (root.x, root.y);
    for l in tree.leaves() {
        x1 = x1.max(l.cu.x0 + l.cu.width);
        y1 = y1.max(l.cu.y0 + l.cu.height);
    }
    let bx0 = root.x / BLOCK;
    let by0 = root.y / BLOCK;
    let bw = x1.div_ceil(BLOCK) - bx0;
    let bh = y1.div_ceil(BLOCK) - by0;
    let mut depths = vec![0u8; bw * bh];
    for l in tree.leaves() {
        let c = &l.cu;
        for by in c.y0 / BLOCK..(c.y0 + c.height).div_ceil(BLOCK) {
            for bx in c.x0 / BLOCK..(c.x0 + c.width).div_ceil(BLOCK) {
                let d = &mut depths[(by - by0) * bw + (bx - bx0)];
                *d = (*d).max(c.depth);
            }
        }
    }
    BlockDepths {
        bx0,
        by0,
        bw,
        bh,
        depths,
    }
}

/// Checks that every internal node's children tile it (clipped to `bounds`)
/// exactly and every split is legal.
pub fn validate_tree(tree: &CuTree, bounds: (usize, usize)) -> Result<()> {
    let bad = |msg: String| Err(Error::Argument(msg));
    let cu = &tree.cu;
    if cu.depth > MAX_DEPTH {
        return bad(format!("{cu:?} deeper than {MAX_DEPTH}"));
    }
    if tree.is_leaf() {
        if !tree.children.is_empty() {
            return bad(format!("leaf {cu:?} has children"));
        }
        if cu.x0 + cu.width > bounds.0 || cu.y0 + cu.height > bounds.1 {
            return bad(format!("leaf {cu:?} crosses the plane boundary"));
        }
        return Ok(());
    }
    if !legal_splits(cu).contains(&tree.mode) {
        return bad(format!("illegal {:?} at {cu:?}", tree.mode));
    }
    let expected: Vec<CuNode> = cu
        .children(tree.mode)
        .into_iter()
        .filter(|c| c.x0 < bounds.0 && c.y0 < bounds.1)
        .collect();
    let got: Vec<CuNode> = tree.children.iter().map(|c| c.cu).collect();
    if expected != got {
        return bad(format!("children of {cu:?} do not tile it"));
    }
    let area: usize = got
        .iter()
        .map(|c| (c.x0 + c.width).min(bounds.0).saturating_sub(c.x0) * (c.y0 + c.height).min(bounds.1).saturating_sub(c.y0))
        .sum();
    let own = (cu.x0 + cu.width).min(bounds.0) - cu.x0;
    let own = own * ((cu.y0 + cu.height).min(bounds.1) - cu.y0);
    if area != own {
        return bad(format!("children of {cu:?} cover {area} of {own} samples"));
    }
    for c in &tree.children {
        validate_tree(c, bounds)?;
    }
    Ok(())
}
