//! Frame and CTU loop tying the search to depth capping and split ordering.
//!
//! Frame 0 is always coded exhaustively. From frame 1 on, each CTU first
//! predicts the depth of all its 8×8 blocks in one batch, adjusts them by
//! the recent prediction error and derives a per-CU depth cap; the search
//! then orders and early-stops split modes from neighbouring decisions.

use std::cell::Cell;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::ddff::dataset::Sample;
use crate::ddff::{adjust_depth, build_ref_map, optimal_cu_depth, DdffModel, DepthGrid, K_D};
use crate::error::{Error, Result};
use crate::frame_io::{psnr, FramePlane, Rect, BLOCK};
use crate::intra::predict::References;
use crate::intra::{IntraCoder, QpLambda, ReconState};
use crate::metrics::ConfusionMatrix;
use crate::ppbe::{build_ref_cus, mode_probabilities, FramePartitions, ModeStatistics, ModeStatisticsSummary};
use crate::qtmt::{depth_grid_of, CuNode, CuTree, PartitionMode, SearchCounters, SearchHooks, Searcher};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// PSNR reported for lossless frames.
pub const PSNR_CAP: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EncodeMode {
    /// Exhaustive search.
    Oracle,
    /// Depth cap only.
    Ddff,
    /// Split ordering and early termination only.
    Ppbe,
    /// Both accelerators.
    Full,
}

impl EncodeMode {
    pub fn uses_ddff(self) -> bool {
        matches!(self, EncodeMode::Ddff | EncodeMode::Full)
    }

    pub fn uses_ppbe(self) -> bool {
        matches!(self, EncodeMode::Ppbe | EncodeMode::Full)
    }
}

/// Where intra prediction takes its neighbouring samples from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceSource {
    /// Reconstructed samples outside the CTU being searched, original
    /// samples inside it.
    #[default]
    Reconstructed,
    /// Original samples everywhere.
    Original,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeConfig {
    pub qp: i32,
    pub ctu_size: usize,
    pub mode: EncodeMode,
    pub model_path: Option<PathBuf>,
    pub seed: u64,
    pub reference: ReferenceSource,
    /// Record wall-clock times in the report.
    pub timing: bool,
}

impl EncodeConfig {
    pub fn new(qp: i32, mode: EncodeMode) -> Self {
        EncodeConfig {
            qp,
            ctu_size: 128,
            mode,
            model_path: None,
            seed: 0,
            reference: ReferenceSource::default(),
            timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![32, 64, 128].contains(&self.ctu_size) {
            return Err(Error::Config(format!("CTU size {} not in {{32, 64, 128}}", self.ctu_size)));
        }
        if !(0..=63).contains(&self.qp) {
            return Err(Error::Config(format!("qp {} outside 0..=63", self.qp)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub distortion: f64,
    pub rate_bits: f64,
    pub j: f64,
    pub psnr: f64,
    pub leaves: usize,
    pub leaf_evaluations: usize,
    pub splits_tested: usize,
    /// Blocks whose depth came from the network rather than the fallback.
    pub predicted_blocks: usize,
    /// Final depth of every 8×8 block, row-major.
    pub depth_map: Vec<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub time_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overhead_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub distortion: f64,
    pub rate_bits: f64,
    pub j: f64,
    /// Mean of the per-frame PSNRs.
    pub psnr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub time_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overhead_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub schema_version: u32,
    pub qp: i32,
    pub lambda: f64,
    pub ctu_size: usize,
    pub mode: EncodeMode,
    pub reference: ReferenceSource,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub blocks_wide: usize,
    pub blocks_high: usize,
    pub frames: Vec<FrameReport>,
    pub totals: Totals,
    /// Final vs predicted depth of blocks where the network ran.
    pub prediction_confusion: ConfusionMatrix,
    /// Internal nodes split below their depth cap; always zero.
    pub depth_cap_violations: u64,
    pub partition_statistics: ModeStatisticsSummary,
}

impl EncodeReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Encodes `frames`, loading the model from `cfg.model_path` when the mode
/// needs one.
pub fn encode_sequence(frames: &[FramePlane], cfg: &EncodeConfig) -> Result<EncodeReport> {
    cfg.validate()?;
    let model = if cfg.mode.uses_ddff() {
        let path = cfg
            .model_path
            .as_ref()
            .ok_or_else(|| Error::Config(format!("mode {:?} needs a model file", cfg.mode)))?;
        Some(DdffModel::load(path).map_err(|e| Error::Config(format!("cannot load model {}: {e}", path.display())))?)
    } else {
        None
    };
    encode_with_model(frames, cfg, model.as_ref())
}

pub fn encode_with_model(frames: &[FramePlane], cfg: &EncodeConfig, model: Option<&DdffModel>) -> Result<EncodeReport> {
    Encoder::new(frames, cfg, model)?.run(None)
}

/// Exhaustively encodes `frames` and appends a training sample for every
/// block of frames ≥ 1 whose reference map is complete.
pub fn encode_collect(frames: &[FramePlane], cfg: &EncodeConfig, samples: &mut Vec<Sample>) -> Result<EncodeReport> {
    let cfg = EncodeConfig {
        mode: EncodeMode::Oracle,
        ..cfg.clone()
    };
    Encoder::new(frames, &cfg, None)?.run(Some(samples))
}

struct Encoder<'a> {
    frames: &'a [FramePlane],
    cfg: &'a EncodeConfig,
    model: Option<&'a DdffModel>,
    qp: QpLambda,
    width: usize,
    height: usize,
}

/// Per-frame state carried into the next frame.
struct History {
    grid: DepthGrid,
    parts: FramePartitions,
}

struct FrameOutcome {
    report: FrameReport,
    history: History,
    confusion: ConfusionMatrix,
    stats: ModeStatistics,
    violations: u64,
}

impl<'a> Encoder<'a> {
    fn new(frames: &'a [FramePlane], cfg: &'a EncodeConfig, model: Option<&'a DdffModel>) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode.uses_ddff() && model.is_none() {
            return Err(Error::Config(format!("mode {:?} needs a model", cfg.mode)));
        }
        let first = frames.first().ok_or_else(|| Error::Argument("no frames to encode".into()))?;
        let (width, height) = (first.width, first.height);
        if let Some(f) = frames.iter().find(|f| (f.width, f.height) != (width, height)) {
            return Err(Error::Argument(format!(
                "frame {} is {}x{}, expected {width}x{height}",
                f.frame_index, f.width, f.height
            )));
        }
        if width % BLOCK != 0 || height % BLOCK != 0 {
            return Err(Error::Argument(format!("plane {width}x{height} is not padded to multiples of {BLOCK}")));
        }
        Ok(Encoder {
            frames,
            cfg,
            model,
            qp: QpLambda::new(cfg.qp),
            width,
            height,
        })
    }

    fn run(&self, mut sink: Option<&mut Vec<Sample>>) -> Result<EncodeReport> {
        let mut history: Option<History> = None;
        let mut frames = Vec::with_capacity(self.frames.len());
        let mut confusion = ConfusionMatrix::default();
        let mut stats = ModeStatistics::default();
        let mut violations = 0;
        for (t, plane) in self.frames.iter().enumerate() {
            let out = self.encode_frame(t, plane, history.as_ref(), sink.as_deref_mut())?;
            confusion.merge(&out.confusion);
            stats.merge(&out.stats);
            violations += out.violations;
            frames.push(out.report);
            history = Some(out.history);
        }
        let sum = |f: fn(&FrameReport) -> f64| frames.iter().map(f).sum::<f64>();
        let opt_sum = |f: fn(&FrameReport) -> Option<f64>| frames.iter().map(f).sum::<Option<f64>>();
        let totals = Totals {
            distortion: sum(|f| f.distortion),
            rate_bits: sum(|f| f.rate_bits),
            j: sum(|f| f.j),
            psnr: sum(|f| f.psnr) / frames.len() as f64,
            time_seconds: opt_sum(|f| f.time_seconds),
            overhead_seconds: opt_sum(|f| f.overhead_seconds),
        };
        Ok(EncodeReport {
            schema_version: REPORT_SCHEMA_VERSION,
            qp: self.cfg.qp,
            lambda: self.qp.lambda,
            ctu_size: self.cfg.ctu_size,
            mode: self.cfg.mode,
            reference: self.cfg.reference,
            seed: self.cfg.seed,
            width: self.width,
            height: self.height,
            blocks_wide: self.width / BLOCK,
            blocks_high: self.height / BLOCK,
            frames,
            totals,
            prediction_confusion: confusion,
            depth_cap_violations: violations,
            partition_statistics: stats.summary(),
        })
    }

    fn encode_frame(
        &self,
        t: usize,
        plane: &FramePlane,
        prev: Option<&History>,
        mut sink: Option<&mut Vec<Sample>>,
    ) -> Result<FrameOutcome> {
        let (w, h) = (self.width, self.height);
        let ctu = self.cfg.ctu_size;
        let bounds = (w, h);
        let (bw, bh) = (w / BLOCK, h / BLOCK);
        let accelerate = t > 0;
        let use_ddff = accelerate && self.cfg.mode.uses_ddff();
        let use_ppbe = accelerate && self.cfg.mode.uses_ppbe();

        let mut recon = ReconState::new(w, h);
        if self.cfg.reference == ReferenceSource::Original {
            recon.copy_from(plane, Rect::new(0, 0, w, h));
        }
        let mut decoded = FramePlane::filled(w, h, 0);
        decoded.frame_index = plane.frame_index;
        decoded.visible_width = plane.visible_width;
        decoded.visible_height = plane.visible_height;

        let mut grid = DepthGrid::new(t, bw, bh);
        let mut parts = FramePartitions::new(w, h, ctu);
        let prev_grid = prev.map(|p| &p.grid);
        let prev_parts = prev.map(|p| &p.parts);
        let mut coder = IntraCoder::new();
        let mut confusion = ConfusionMatrix::default();
        let mut stats = ModeStatistics::default();
        let mut violations = 0;
        let mut counters = SearchCounters::default();
        let mut predicted_blocks = 0;
        let (mut distortion, mut rate, mut j) = (0.0, 0.0, 0.0);
        let mut leaves = 0;

        let mut encode_time = Duration::ZERO;
        let overhead = Cell::new(Duration::ZERO);

        for cy in 0..h.div_ceil(ctu) {
            for cx in 0..w.div_ceil(ctu) {
                let started = Instant::now();
                let root = CuNode::root(cx * ctu, cy * ctu, ctu);
                let (bx0, by0) = (root.x0 / BLOCK, root.y0 / BLOCK);
                let bx1 = ((root.x0 + ctu).min(w)) / BLOCK;
                let by1 = ((root.y0 + ctu).min(h)) / BLOCK;
                let cbw = bx1 - bx0;
                if self.cfg.reference == ReferenceSource::Reconstructed {
                    recon.copy_from(plane, root.rect());
                }

                // batched depth prediction for the blocks of this CTU
                let mut adjusted = vec![0u8; cbw * (by1 - by0)];
                let mut raw_prediction = vec![None; adjusted.len()];
                if use_ddff {
                    let tick = Instant::now();
                    let model = self.model.expect("checked in new()");
                    let prev_grid = prev_grid.expect("frame t > 0 has a predecessor");
                    for by in by0..by1 {
                        for bx in bx0..bx1 {
                            let i = (by - by0) * cbw + (bx - bx0);
                            adjusted[i] = match build_ref_map(&grid, Some(prev_grid), bx, by) {
                                Some(map) => {
                                    let d = model.predict_depth(&map.depths);
                                    raw_prediction[i] = Some(d);
                                    adjust_depth(d, &map.pairs().collect::<Vec<_>>(), K_D)
                                }
                                None => prev_grid.final_depth(bx, by).expect("previous frame fully coded"),
                            };
                        }
                    }
                    overhead.set(overhead.get() + tick.elapsed());
                }
                let pending_samples: Vec<(usize, usize, [u8; 25])> = match (&mut sink, prev_grid) {
                    (Some(_), Some(pg)) => (by0..by1)
                        .flat_map(|by| (bx0..bx1).map(move |bx| (bx, by)))
                        .filter_map(|(bx, by)| build_ref_map(&grid, Some(pg), bx, by).map(|m| (bx, by, m.depths)))
                        .collect(),
                    _ => Vec::new(),
                };

                let cap = |cu: &CuNode| optimal_cu_depth(cu, bounds, |bx, by| adjusted[(by - by0) * cbw + (bx - bx0)]);
                let order = |cu: &CuNode| {
                    let tick = Instant::now();
                    let refs = build_ref_cus(&parts, prev_parts, cu);
                    let order = mode_probabilities(&refs).order;
                    overhead.set(overhead.get() + tick.elapsed());
                    order
                };
                let hooks = SearchHooks {
                    depth_cap: use_ddff.then_some(&cap as &dyn Fn(&CuNode) -> u8),
                    mode_order: use_ppbe.then_some(&order as &dyn Fn(&CuNode) -> [PartitionMode; 5]),
                    early_stop: use_ppbe,
                };
                let qp = self.qp;
                let tree = {
                    let recon = &recon;
                    let coder = &mut coder;
                    let coster = move |r: Rect| coder.cu_rd_cost(plane, recon, r, qp).map(|l| (l.cost, l.mode));
                    let mut searcher = Searcher::new(bounds, qp.lambda, hooks, coster);
                    let tree = searcher.search(&root)?;
                    let c = searcher.counters;
                    counters.leaf_evaluations += c.leaf_evaluations;
                    counters.nodes += c.nodes;
                    counters.splits_tested += c.splits_tested;
                    tree
                };

                // the leaves' reconstructions, from the references the search saw
                let mut leaf_recon = Vec::new();
                for leaf in tree.leaves() {
                    let rect = leaf.cu.rect();
                    let refs = References::gather(&recon, rect);
                    let mode = leaf.intra_mode.expect("leaves carry an intra mode");
                    let (_, samples) = coder.code_mode(plane, &refs, rect, qp, mode);
                    leaf_recon.push((rect, samples));
                }
                for (rect, samples) in &leaf_recon {
                    if self.cfg.reference == ReferenceSource::Reconstructed {
                        recon.write(*rect, samples);
                    }
                    write_block(&mut decoded, *rect, samples);
                }

                let depths = depth_grid_of(&tree);
                for by in by0..by1 {
                    for bx in bx0..bx1 {
                        let d = depths.get(bx, by);
                        grid.set_final(bx, by, d)?;
                        let i = (by - by0) * cbw + (bx - bx0);
                        match raw_prediction[i] {
                            Some(p) => {
                                grid.set_predicted(bx, by, p);
                                confusion.record(d, p);
                                predicted_blocks += 1;
                            }
                            // exhaustively coded frames stand in as their own prediction
                            None if !accelerate => grid.set_predicted(bx, by, d),
                            None => {}
                        }
                    }
                }
                if let Some(sink) = sink.as_deref_mut() {
                    for (bx, by, map) in pending_samples {
                        sink.push(Sample {
                            depths: map,
                            label: grid.final_depth(bx, by).expect("just written"),
                        });
                    }
                }
                if use_ddff {
                    violations += count_cap_violations(&tree, bounds, &cap);
                }
                distortion += tree.cost.distortion;
                rate += tree.cost.rate_bits;
                j += tree.cost.j;
                leaves += leaf_recon.len();
                encode_time += started.elapsed();

                // reporting only, kept out of the timed region
                record_statistics(&tree, &parts, prev_parts, &mut stats);
                parts.insert(tree);
            }
        }

        if !grid.is_complete() {
            return Err(Error::Argument(format!("frame {t} left blocks without a final depth")));
        }
        let depth_map = (0..bh)
            .flat_map(|by| (0..bw).map(move |bx| (bx, by)))
            .map(|(bx, by)| grid.final_depth(bx, by).expect("complete"))
            .collect();
        let report = FrameReport {
            index: t,
            distortion,
            rate_bits: rate,
            j,
            psnr: psnr(plane, &decoded).min(PSNR_CAP),
            leaves,
            leaf_evaluations: counters.leaf_evaluations,
            splits_tested: counters.splits_tested,
            predicted_blocks,
            depth_map,
            time_seconds: self.cfg.timing.then(|| encode_time.as_secs_f64()),
            overhead_seconds: self.cfg.timing.then(|| overhead.get().as_secs_f64()),
        };
        Ok(FrameOutcome {
            report,
            history: History { grid, parts },
            confusion,
            stats,
            violations,
        })
    }
}

fn write_block(plane: &mut FramePlane, rect: Rect, samples: &[u8]) {
    for y in 0..rect.h {
        let d = (rect.y + y) * plane.width + rect.x;
        plane.samples[d..d + rect.w].copy_from_slice(&samples[y * rect.w..(y + 1) * rect.w]);
    }
}

/// Counts internal nodes lying inside the plane that were split at or
/// beyond their cap.
fn count_cap_violations(tree: &CuTree, bounds: (usize, usize), cap: &dyn Fn(&CuNode) -> u8) -> u64 {
    let mut n = 0;
    tree.visit(&mut |node| {
        let c = &node.cu;
        let inside = c.x0 + c.width <= bounds.0 && c.y0 + c.height <= bounds.1;
        if !node.is_leaf() && inside && c.depth > 0 && c.depth >= cap(c) {
            n += 1;
        }
    });
    n
}

fn record_statistics(tree: &CuTree, parts: &FramePartitions, prev: Option<&FramePartitions>, stats: &mut ModeStatistics) {
    tree.visit(&mut |node| {
        let refs = build_ref_cus(parts, prev, &node.cu);
        stats.record(node.mode, &refs);
    });
}
