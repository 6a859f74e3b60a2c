//! Orthonormal DCT-II over the power-of-two block sizes a CU can take,
//! scalar quantization and the coefficient rate proxy.

use std::cell::RefCell;
use std::sync::{Arc, OnceLock};

use rustdct::{DctPlanner, TransformType2And3};

const SIZES: usize = 6; // 4, 8, 16, 32, 64, 128

fn size_index(n: usize) -> usize {
    match n {
        4 => 0,
        8 => 1,
        16 => 2,
        32 => 3,
        64 => 4,
        128 => 5,
        _ => panic!("unsupported transform size {n}"),
    }
}

/// Row-major `n × n` matrix with `basis[k * n + j] = c_k cos(π (2j + 1) k / 2n)`.
pub fn dct_basis(n: usize) -> &'static [f64] {
    static CACHE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    let all = CACHE.get_or_init(|| {
        (0..SIZES)
            .map(|i| {
                let n = 4usize << i;
                let mut m = vec![0.0; n * n];
                for k in 0..n {
                    let scale = if k == 0 {
                        (1.0 / n as f64).sqrt()
                    } else {
                        (2.0 / n as f64).sqrt()
                    };
                    for j in 0..n {
                        let arg = std::f64::consts::PI * ((2 * j + 1) * k) as f64 / (2 * n) as f64;
                        m[k * n + j] = scale * arg.cos();
                    }
                }
                m
            })
            .collect()
    });
    &all[size_index(n)]
}

/// Lengths from this size up go through a fast DCT instead of the matrix.
const FAST_MIN: usize = 16;

struct Fast {
    plan: Arc<dyn TransformType2And3<f64>>,
    scratch_len: usize,
}

fn fast_plan(n: usize) -> &'static Fast {
    static CACHE: OnceLock<Vec<Fast>> = OnceLock::new();
    let all = CACHE.get_or_init(|| {
        let mut planner = DctPlanner::new();
        (0..SIZES)
            .map(|i| {
                let plan = planner.plan_dct2(4usize << i);
                let scratch_len = plan.get_scratch_len();
                Fast { plan, scratch_len }
            })
            .collect()
    });
    &all[size_index(n)]
}

thread_local! {
    static WORK: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// Orthonormal 1-D transform of every length-`n` line of `data`.
fn transform_lines(data: &mut [f64], n: usize, inverse: bool) {
    if n < FAST_MIN {
        let b = dct_basis(n);
        let mut tmp = [0.0; FAST_MIN];
        for line in data.chunks_exact_mut(n) {
            let tmp = &mut tmp[..n];
            tmp.fill(0.0);
            for (j, &v) in line.iter().enumerate() {
                if inverse {
                    // out[i] += v * b[j][i]
                    for (t, bb) in tmp.iter_mut().zip(&b[j * n..(j + 1) * n]) {
                        *t += v * bb;
                    }
                } else {
                    // out[k] += v * b[k][j]
                    for (k, t) in tmp.iter_mut().enumerate() {
                        *t += v * b[k * n + j];
                    }
                }
            }
            line.copy_from_slice(tmp);
        }
        return;
    }
    let fast = fast_plan(n);
    let s0 = (1.0 / n as f64).sqrt();
    let sk = (2.0 / n as f64).sqrt();
    WORK.with_borrow_mut(|(_, scratch)| {
        scratch.resize(fast.scratch_len, 0.0);
        for line in data.chunks_exact_mut(n) {
            if inverse {
                line[0] *= 2.0 * s0;
                line[1..].iter_mut().for_each(|v| *v *= sk);
                fast.plan.process_dct3_with_scratch(line, scratch);
            } else {
                fast.plan.process_dct2_with_scratch(line, scratch);
                line[0] *= s0;
                line[1..].iter_mut().for_each(|v| *v *= sk);
            }
        }
    });
}

fn transpose(src: &[f64], w: usize, h: usize, dst: &mut [f64]) {
    for (r, row) in src[..w * h].chunks_exact(w).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            dst[c * h + r] = v;
        }
    }
}

fn separable(input: &[f64], w: usize, h: usize, scratch: &mut [f64], out: &mut [f64], inverse: bool) {
    let n = w * h;
    out[..n].copy_from_slice(&input[..n]);
    transform_lines(&mut out[..n], w, inverse);
    transpose(out, w, h, scratch);
    transform_lines(&mut scratch[..n], h, inverse);
    transpose(scratch, h, w, out);
}

/// Forward 2-D transform of a `w × h` row-major block. `scratch` and `out`
/// must hold `w * h` values.
pub fn forward_2d(input: &[f64], w: usize, h: usize, scratch: &mut [f64], out: &mut [f64]) {
    separable(input, w, h, scratch, out, false);
}

/// Inverse of [`forward_2d`].
pub fn inverse_2d(coeffs: &[f64], w: usize, h: usize, scratch: &mut [f64], out: &mut [f64]) {
    separable(coeffs, w, h, scratch, out, true);
}

pub fn quant_step(qp: i32) -> f64 {
    2f64.powf((qp - 4) as f64 / 6.0)
}

/// Round-half-away-from-zero scalar quantizer.
#[inline]
pub fn quantize(c: f64, step: f64) -> i32 {
    // truncation equals floor for the non-negative argument
    let q = (c.abs() / step + 0.5) as i32;
    if c < 0.0 {
        -q
    } else {
        q
    }
}

/// Visits `(x, y)` coefficient positions of a `w × h` block along up-right
/// anti-diagonals, low frequencies first.
pub fn diagonal_scan(w: usize, h: usize, mut visit: impl FnMut(usize, usize)) {
    for s in 0..(w + h - 1) {
        let y_hi = s.min(h - 1);
        let y_lo = s.saturating_sub(w - 1);
        for y in (y_lo..=y_hi).rev() {
            visit(s - y, y);
        }
    }
}

/// Bits for one quantized level: `2·ceil(log2(|level| + 1)) + 1`.
#[inline]
pub fn level_bits(level: i32) -> f64 {
    let mag = level.unsigned_abs();
    let len = 32 - mag.leading_zeros();
    (2 * len + 1) as f64
}

/// Coefficient rate proxy: level bits for every nonzero level plus half a bit
/// for every zero run that precedes a nonzero level in diagonal scan order.
pub fn coefficient_bits(levels: &[i32], w: usize, h: usize) -> f64 {
    let mut bits = 0.0;
    let mut in_run = false;
    diagonal_scan(w, h, |x, y| {
        let l = levels[y * w + x];
        if l == 0 {
            in_run = true;
        } else {
            if in_run {
                bits += 0.5;
                in_run = false;
            }
            bits += level_bits(l);
        }
    });
    bits
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_is_orthonormal() {
        for n in [4, 8, 16, 32, 64, 128] {
            let b = dct_basis(n);
            for a in 0..n {
                for c in 0..n {
                    let dot: f64 = (0..n).map(|j| b[a * n + j] * b[c * n + j]).sum();
                    let want = if a == c { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12, "n={n} rows {a},{c}: {dot}");
                }
            }
        }
    }

    #[test]
    fn forward_inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(w, h) in &[(4, 4), (8, 4), (4, 32), (16, 64), (64, 64), (128, 32)] {
            let x: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-255.0..255.0)).collect();
            let mut s = vec![0.0; w * h];
            let mut c = vec![0.0; w * h];
            let mut back = vec![0.0; w * h];
            forward_2d(&x, w, h, &mut s, &mut c);
            inverse_2d(&c, w, h, &mut s, &mut back);
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9, "{w}x{h}");
            }
        }
    }

    #[test]
    fn matches_direct_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(w, h) in &[(4, 8), (16, 4), (32, 64), (128, 8)] {
            let x: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-255.0..255.0)).collect();
            let (bw, bh) = (dct_basis(w), dct_basis(h));
            let mut s = vec![0.0; w * h];
            let mut c = vec![0.0; w * h];
            forward_2d(&x, w, h, &mut s, &mut c);
            for v in 0..h {
                for u in 0..w {
                    let mut want = 0.0;
                    for i in 0..h {
                        for j in 0..w {
                            want += bh[v * h + i] * bw[u * w + j] * x[i * w + j];
                        }
                    }
                    assert!((c[v * w + u] - want).abs() < 1e-8, "{w}x{h} ({u},{v})");
                }
            }
        }
    }

    #[test]
    fn constant_block_has_only_dc() {
        let (w, h) = (16, 8);
        let x = vec![10.0; w * h];
        let mut s = vec![0.0; w * h];
        let mut c = vec![0.0; w * h];
        forward_2d(&x, w, h, &mut s, &mut c);
        assert!((c[0] - 10.0 * ((w * h) as f64).sqrt()).abs() < 1e-9);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn quantization_error_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for qp in [22, 27, 32, 37] {
            let step = quant_step(qp);
            for _ in 0..1000 {
                let c: f64 = rng.gen_range(-3000.0..3000.0);
                let deq = quantize(c, step) as f64 * step;
                assert!((c - deq).abs() <= step / 2.0 + 1e-9);
            }
        }
        assert_eq!(quantize(-0.5, 1.0), -1);
        assert_eq!(quantize(0.49, 1.0), 0);
    }

    #[test]
    fn scan_covers_every_position_once() {
        for &(w, h) in &[(4, 4), (8, 4), (4, 16), (32, 8)] {
            let mut seen = vec![0; w * h];
            let mut order = Vec::new();
            diagonal_scan(w, h, |x, y| {
                seen[y * w + x] += 1;
                order.push((x, y));
            });
            assert!(seen.iter().all(|&n| n == 1));
            assert_eq!(order[0], (0, 0));
            assert_eq!(order[1], (0, 1));
            assert_eq!(order[2], (1, 0));
        }
    }

    #[test]
    fn rate_proxy_counts() {
        assert_eq!(level_bits(1), 3.0);
        assert_eq!(level_bits(-2), 5.0);
        assert_eq!(level_bits(3), 5.0);
        assert_eq!(level_bits(4), 7.0);
        let mut levels = vec![0; 16];
        assert_eq!(coefficient_bits(&levels, 4, 4), 0.0);
        levels[0] = 1; // (0,0)
        levels[4 * 3] = -1; // (0,3): after a zero run
        // scan: (0,0) (0,1) (1,0) (0,2) (1,1) (2,0) (0,3) ...
        assert_eq!(coefficient_bits(&levels, 4, 4), 3.0 + 0.5 + 3.0);
    }
}
