//! Rate-distortion cost of coding one rectangular CU as a single intra unit.

pub mod predict;
pub mod transform;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::frame_io::{FramePlane, Rect};

pub use predict::{IntraMode, References};

/// Bits spent signalling the intra mode of a leaf.
pub const MODE_BITS: f64 = 4.0;
/// Bits spent signalling the partition choice of a leaf.
pub const LEAF_PARTITION_BITS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdCost {
    pub distortion: f64,
    pub rate_bits: f64,
    pub j: f64,
}

impl RdCost {
    pub const ZERO: RdCost = RdCost {
        distortion: 0.0,
        rate_bits: 0.0,
        j: 0.0,
    };

    pub fn new(distortion: f64, rate_bits: f64, lambda: f64) -> RdCost {
        RdCost {
            distortion,
            rate_bits,
            j: distortion + lambda * rate_bits,
        }
    }

    /// Adds `other` and `extra_bits` of signalling, recomputing `j` from the
    /// summed terms.
    pub fn combine(self, other: RdCost, extra_bits: f64, lambda: f64) -> RdCost {
        RdCost::new(
            self.distortion + other.distortion,
            self.rate_bits + other.rate_bits + extra_bits,
            lambda,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpLambda {
    pub qp: i32,
    pub lambda: f64,
}

impl QpLambda {
    pub fn new(qp: i32) -> QpLambda {
        QpLambda {
            qp,
            lambda: 0.57 * 2f64.powf((qp - 12) as f64 / 3.0),
        }
    }
}

/// Reconstructed samples plus a per-4×4 availability map. Unavailable or
/// off-plane positions read as `None`.
#[derive(Clone, Debug)]
pub struct ReconState {
    pub plane: FramePlane,
    avail: Vec<bool>,
    units_w: usize,
}

impl ReconState {
    pub fn new(width: usize, height: usize) -> ReconState {
        let units_w = width.div_ceil(4);
        ReconState {
            plane: FramePlane::filled(width, height, 0),
            avail: vec![false; units_w * height.div_ceil(4)],
            units_w,
        }
    }

    #[inline]
    pub fn sample(&self, x: isize, y: isize) -> Option<u8> {
        if x < 0 || y < 0 {
            return None;
        }
        let (x, y) = (x as usize, y as usize);
        if x >= self.plane.width || y >= self.plane.height {
            return None;
        }
        self.avail[(y / 4) * self.units_w + x / 4].then(|| self.plane.get(x, y))
    }

    pub fn is_available(&self, x: usize, y: usize) -> bool {
        self.sample(x as isize, y as isize).is_some()
    }

    fn mark(&mut self, rect: Rect) {
        for uy in rect.y / 4..(rect.y + rect.h).div_ceil(4) {
            for ux in rect.x / 4..(rect.x + rect.w).div_ceil(4) {
                self.avail[uy * self.units_w + ux] = true;
            }
        }
    }

    /// Stores `samples` (row-major, `rect.w × rect.h`) and marks them available.
    pub fn write(&mut self, rect: Rect, samples: &[u8]) {
        for y in 0..rect.h {
            let dst = (rect.y + y) * self.plane.width + rect.x;
            self.plane.samples[dst..dst + rect.w].copy_from_slice(&samples[y * rect.w..(y + 1) * rect.w]);
        }
        self.mark(rect);
    }

    /// Copies `rect` of `source` in and marks it available.
    pub fn copy_from(&mut self, source: &FramePlane, rect: Rect) {
        let rect = clip(rect, source);
        for y in rect.y..rect.y + rect.h {
            let s = y * source.width + rect.x;
            let d = y * self.plane.width + rect.x;
            self.plane.samples[d..d + rect.w].copy_from_slice(&source.samples[s..s + rect.w]);
        }
        self.mark(rect);
    }
}

fn clip(rect: Rect, plane: &FramePlane) -> Rect {
    let w = rect.w.min(plane.width.saturating_sub(rect.x));
    let h = rect.h.min(plane.height.saturating_sub(rect.y));
    Rect::new(rect.x, rect.y, w, h)
}

/// Result of coding one leaf with its best intra mode.
#[derive(Clone, Debug)]
pub struct LeafCoding {
    pub cost: RdCost,
    pub mode: IntraMode,
    pub recon: Vec<u8>,
}

/// Reusable scratch buffers for leaf costing.
#[derive(Default)]
pub struct IntraCoder {
    pred: Vec<i32>,
    resid: Vec<f64>,
    coeffs: Vec<f64>,
    scratch: Vec<f64>,
    levels: Vec<i32>,
    spatial: Vec<f64>,
    recon: Vec<u8>,
}

impl IntraCoder {
    pub fn new() -> IntraCoder {
        IntraCoder::default()
    }

    fn reserve(&mut self, n: usize) {
        for v in [&mut self.resid, &mut self.coeffs, &mut self.scratch, &mut self.spatial] {
            v.resize(n, 0.0);
        }
        self.pred.resize(n, 0);
        self.levels.resize(n, 0);
        self.recon.resize(n, 0);
    }

    /// Codes `rect` with one specific mode; returns cost and reconstruction.
    pub fn code_mode(
        &mut self,
        plane: &FramePlane,
        refs: &References,
        rect: Rect,
        qp: QpLambda,
        mode: IntraMode,
    ) -> (RdCost, Vec<u8>) {
        let cost = self.code_into(plane, refs, rect, qp, mode);
        (cost, self.recon[..rect.area()].to_vec())
    }

    fn code_into(&mut self, plane: &FramePlane, refs: &References, rect: Rect, qp: QpLambda, mode: IntraMode) -> RdCost {
        let (w, h) = (rect.w, rect.h);
        let n = w * h;
        self.reserve(n);
        predict::predict(refs, w, h, mode, &mut self.pred);
        for y in 0..h {
            let row = &plane.samples[(rect.y + y) * plane.width + rect.x..][..w];
            for x in 0..w {
                self.resid[y * w + x] = (row[x] as i32 - self.pred[y * w + x]) as f64;
            }
        }
        transform::forward_2d(&self.resid, w, h, &mut self.scratch, &mut self.coeffs);
        let step = transform::quant_step(qp.qp);
        let mut any = false;
        for i in 0..n {
            let l = transform::quantize(self.coeffs[i], step);
            self.levels[i] = l;
            any |= l != 0;
        }
        let mut rate = MODE_BITS + LEAF_PARTITION_BITS;
        if any {
            rate += transform::coefficient_bits(&self.levels, w, h);
            for i in 0..n {
                self.coeffs[i] = self.levels[i] as f64 * step;
            }
            transform::inverse_2d(&self.coeffs, w, h, &mut self.scratch, &mut self.spatial);
            for i in 0..n {
                // round half away from zero, then clip; the cast saturates at 0
                let v = self.pred[i] as f64 + self.spatial[i];
                self.recon[i] = (v + 0.5).min(255.0) as u8;
            }
        } else {
            for i in 0..n {
                self.recon[i] = self.pred[i].clamp(0, 255) as u8;
            }
        }
        let mut sse = 0i64;
        for y in 0..h {
            let row = &plane.samples[(rect.y + y) * plane.width + rect.x..][..w];
            for x in 0..w {
                let d = row[x] as i64 - self.recon[y * w + x] as i64;
                sse += d * d;
            }
        }
        RdCost::new(sse as f64, rate, qp.lambda)
    }

    /// Tries every intra mode and keeps the cheapest (first on ties).
    pub fn cu_rd_cost(&mut self, plane: &FramePlane, recon: &ReconState, rect: Rect, qp: QpLambda) -> Result<LeafCoding> {
        validate(plane, rect)?;
        let refs = References::gather(recon, rect);
        let mut best: Option<LeafCoding> = None;
        for mode in IntraMode::ALL {
            let cost = self.code_into(plane, &refs, rect, qp, mode);
            if best.as_ref().is_none_or(|b| cost.j < b.cost.j) {
                let mut samples = best.take().map(|b| b.recon).unwrap_or_default();
                samples.clear();
                samples.extend_from_slice(&self.recon[..rect.area()]);
                best = Some(LeafCoding {
                    cost,
                    mode,
                    recon: samples,
                });
            }
        }
        Ok(best.expect("at least one mode"))
    }
}

fn validate(plane: &FramePlane, rect: Rect) -> Result<()> {
    if rect.w < 4 || rect.h < 4 || !rect.w.is_power_of_two() || !rect.h.is_power_of_two() || rect.w > 128 || rect.h > 128
    {
        return arg_err(format!("unsupported CU size {}x{}", rect.w, rect.h));
    }
    if rect.x + rect.w > plane.width || rect.y + rect.h > plane.height {
        return arg_err(format!("CU {rect:?} outside {}x{} plane", plane.width, plane.height));
    }
    Ok(())
}

/// Convenience wrapper over [`IntraCoder::cu_rd_cost`].
pub fn cu_rd_cost(plane: &FramePlane, recon: &ReconState, rect: Rect, qp: QpLambda) -> Result<LeafCoding> {
    IntraCoder::new().cu_rd_cost(plane, recon, rect, qp)
}

/// Prediction of `rect` for `mode` from the references in `recon`.
pub fn predict_intra(recon: &ReconState, rect: Rect, mode: IntraMode) -> Vec<u8> {
    let refs = References::gather(recon, rect);
    let mut out = vec![0; rect.area()];
    predict::predict(&refs, rect.w, rect.h, mode, &mut out);
    out.into_iter().map(|v| v.clamp(0, 255) as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(rng: &mut ChaCha8Rng, w: usize, h: usize) -> FramePlane {
        FramePlane::new(w, h, 0, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn lambda_formula() {
        let q = QpLambda::new(12);
        assert!((q.lambda - 0.57).abs() < 1e-12);
        let q = QpLambda::new(27);
        assert!((q.lambda - 0.57 * 32.0).abs() < 1e-9);
    }

    #[test]
    fn corner_cu_predicts_mid_gray() {
        let recon = ReconState::new(64, 64);
        for mode in IntraMode::ALL {
            let p = predict_intra(&recon, Rect::new(0, 0, 8, 8), mode);
            assert!(p.iter().all(|&v| v == 128));
        }
    }

    #[test]
    fn dc_from_uniform_neighbours() {
        let mut recon = ReconState::new(32, 32);
        recon.write(Rect::new(0, 0, 32, 8), &[100; 256]);
        recon.write(Rect::new(0, 8, 8, 24), &[100; 192]);
        let p = predict_intra(&recon, Rect::new(8, 8, 8, 8), IntraMode::Dc);
        assert!(p.iter().all(|&v| v == 100));
    }

    #[test]
    fn horizontal_from_recon_left_column() {
        let mut recon = ReconState::new(16, 8);
        let col: Vec<u8> = (0..8).map(|j| 10 * (j + 1)).collect();
        let mut left = vec![0u8; 4 * 8];
        for j in 0..8 {
            left[j * 4 + 3] = col[j];
        }
        recon.write(Rect::new(0, 0, 4, 8), &left);
        let p = predict_intra(&recon, Rect::new(4, 0, 8, 8), IntraMode::Horizontal);
        for y in 0..8 {
            assert!(p[y * 8..(y + 1) * 8].iter().all(|&v| v == col[y]));
        }
    }

    #[test]
    fn constant_cu_costs_signalling_only() {
        let plane = FramePlane::filled(16, 16, 77);
        let mut recon = ReconState::new(16, 16);
        recon.copy_from(&plane, Rect::new(0, 0, 16, 16));
        for qp in [22, 37] {
            let c = cu_rd_cost(&plane, &recon, Rect::new(8, 8, 8, 8), QpLambda::new(qp)).unwrap();
            assert_eq!(c.cost.distortion, 0.0);
            assert_eq!(c.cost.rate_bits, MODE_BITS + LEAF_PARTITION_BITS);
        }
    }

    #[test]
    fn zero_levels_cost_signalling_bits_exactly() {
        // residual of +-1 around a flat prediction quantizes to zero at qp 37
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<u8> = (0..64).map(|_| 128 + rng.gen_range(0..2)).collect();
        let plane = FramePlane::new(8, 8, 0, samples).unwrap();
        let recon = ReconState::new(8, 8);
        let c = cu_rd_cost(&plane, &recon, Rect::new(0, 0, 8, 8), QpLambda::new(37)).unwrap();
        assert_eq!(c.cost.rate_bits, MODE_BITS + LEAF_PARTITION_BITS);
    }

    #[test]
    fn j_is_stored_consistently_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plane = random_plane(&mut rng, 32, 32);
        let mut recon = ReconState::new(32, 32);
        recon.copy_from(&plane, Rect::new(0, 0, 32, 8));
        let r = Rect::new(8, 8, 16, 8);
        let a = cu_rd_cost(&plane, &recon, r, QpLambda::new(27)).unwrap();
        let b = cu_rd_cost(&plane, &recon, r, QpLambda::new(27)).unwrap();
        assert_eq!(a.cost.j.to_bits(), b.cost.j.to_bits());
        assert_eq!(a.cost.j, a.cost.distortion + QpLambda::new(27).lambda * a.cost.rate_bits);
        assert_eq!(a.recon.len(), 128);
    }

    #[test]
    fn distortion_monotone_in_qp() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let plane = random_plane(&mut rng, 16, 16);
            let recon = ReconState::new(16, 16);
            let w = 4 << rng.gen_range(0..3);
            let h = 4 << rng.gen_range(0..3);
            let r = Rect::new(0, 0, w, h);
            let mut coder = IntraCoder::new();
            let refs = References::gather(&recon, r);
            for mode in IntraMode::ALL {
                let lo = coder.code_mode(&plane, &refs, r, QpLambda::new(22), mode).0;
                let hi = coder.code_mode(&plane, &refs, r, QpLambda::new(37), mode).0;
                assert!(lo.distortion <= hi.distortion, "{mode:?} {w}x{h}");
            }
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        let plane = FramePlane::filled(16, 16, 0);
        let recon = ReconState::new(16, 16);
        assert!(cu_rd_cost(&plane, &recon, Rect::new(0, 0, 2, 4), QpLambda::new(22)).is_err());
        assert!(cu_rd_cost(&plane, &recon, Rect::new(0, 0, 0, 4), QpLambda::new(22)).is_err());
        assert!(cu_rd_cost(&plane, &recon, Rect::new(8, 8, 16, 16), QpLambda::new(22)).is_err());
    }

    #[test]
    fn recon_state_availability() {
        let mut s = ReconState::new(16, 16);
        assert_eq!(s.sample(0, 0), None);
        s.write(Rect::new(4, 4, 4, 4), &[9; 16]);
        assert_eq!(s.sample(5, 5), Some(9));
        assert_eq!(s.sample(3, 5), None);
        assert_eq!(s.sample(-1, 5), None);
        assert_eq!(s.sample(16, 0), None);
    }
}
