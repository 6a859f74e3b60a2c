//! Nine-mode intra predictor: DC, planar, pure horizontal/vertical and five
//! angular directions in 1/32-sample precision.

use serde::{Deserialize, Serialize};

use crate::frame_io::Rect;

use super::ReconState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntraMode {
    Dc,
    Planar,
    Horizontal,
    Vertical,
    /// 45° from the top-right.
    DiagUpRight,
    /// Half-slope from the top-right.
    VerticalRight,
    /// 45° from the top-left corner.
    DiagDownRight,
    /// Half-slope from the bottom-left.
    HorizontalDown,
    /// 45° from the bottom-left.
    DiagDownLeft,
}

impl IntraMode {
    pub const ALL: [IntraMode; 9] = [
        IntraMode::Dc,
        IntraMode::Planar,
        IntraMode::Horizontal,
        IntraMode::Vertical,
        IntraMode::DiagUpRight,
        IntraMode::VerticalRight,
        IntraMode::DiagDownRight,
        IntraMode::HorizontalDown,
        IntraMode::DiagDownLeft,
    ];

    pub fn id(self) -> u8 {
        IntraMode::ALL.iter().position(|&m| m == self).unwrap() as u8
    }

    pub fn from_id(id: u8) -> Option<IntraMode> {
        IntraMode::ALL.get(id as usize).copied()
    }

    /// `(vertical_class, angle)` for the angular family.
    fn angular(self) -> Option<(bool, i32)> {
        match self {
            IntraMode::Vertical => Some((true, 0)),
            IntraMode::DiagUpRight => Some((true, 32)),
            IntraMode::VerticalRight => Some((true, 16)),
            IntraMode::DiagDownRight => Some((true, -32)),
            IntraMode::Horizontal => Some((false, 0)),
            IntraMode::HorizontalDown => Some((false, 16)),
            IntraMode::DiagDownLeft => Some((false, 32)),
            IntraMode::Dc | IntraMode::Planar => None,
        }
    }
}

/// Neighbouring reference samples of a block. `top[i]` sits at
/// `(x0 + i, y0 - 1)` and `left[j]` at `(x0 - 1, y0 + j)`; both extend
/// `w + h + 1` samples.
pub struct References {
    pub top: Vec<i32>,
    pub left: Vec<i32>,
    pub corner: i32,
}

const MID: i32 = 128;

impl References {
    pub fn gather(recon: &ReconState, rect: Rect) -> References {
        let len = rect.w + rect.h + 1;
        let (x0, y0) = (rect.x as isize, rect.y as isize);
        let fetch = |x: isize, y: isize| recon.sample(x, y).map_or(MID, i32::from);
        References {
            top: (0..len as isize).map(|i| fetch(x0 + i, y0 - 1)).collect(),
            left: (0..len as isize).map(|j| fetch(x0 - 1, y0 + j)).collect(),
            corner: fetch(x0 - 1, y0 - 1),
        }
    }
}

/// Writes the `w × h` prediction for `mode` into `out` (row-major).
pub fn predict(refs: &References, w: usize, h: usize, mode: IntraMode, out: &mut [i32]) {
    match mode {
        IntraMode::Dc => {
            let sum: i32 = refs.top[..w].iter().sum::<i32>() + refs.left[..h].iter().sum::<i32>();
            let n = (w + h) as i32;
            out[..w * h].fill((sum + n / 2) / n);
        }
        IntraMode::Planar => {
            let (lw, lh) = (w.trailing_zeros(), h.trailing_zeros());
            let top_right = refs.top[w];
            let bottom_left = refs.left[h];
            for y in 0..h {
                for x in 0..w {
                    let pv = (((h - 1 - y) as i32 * refs.top[x]) + (y as i32 + 1) * bottom_left) << lw;
                    let ph = (((w - 1 - x) as i32 * refs.left[y]) + (x as i32 + 1) * top_right) << lh;
                    out[y * w + x] = (pv + ph + (w * h) as i32) >> (lw + lh + 1);
                }
            }
        }
        _ => {
            let (vertical, angle) = mode.angular().expect("angular mode");
            if vertical {
                angular(&refs.top, &refs.left, refs.corner, w, h, angle, out);
            } else {
                let mut t = vec![0; w * h];
                angular(&refs.left, &refs.top, refs.corner, h, w, angle, &mut t);
                for y in 0..h {
                    for x in 0..w {
                        out[y * w + x] = t[x * h + y];
                    }
                }
            }
        }
    }
}

/// Vertical-class angular prediction of a `w × h` block from `main` (the
/// row above) with `side` (the column to the left) projected for negative
/// angles.
fn angular(main: &[i32], side: &[i32], corner: i32, w: usize, h: usize, angle: i32, out: &mut [i32]) {
    // ext[off + k] is the reference at position k, k = -1 being the corner.
    let off = h + 1;
    let mut ext = vec![0i32; off + w + h + 2];
    ext[off - 1] = corner;
    ext[off..off + main.len()].copy_from_slice(main);
    let last = main[main.len() - 1];
    for v in &mut ext[off + main.len()..] {
        *v = last;
    }
    if angle < 0 {
        let inv = (256 * 32) / angle;
        let min_k = (h as i32 * angle) >> 5;
        for k in min_k..0 {
            let m = (k * inv + 128) >> 8; // 1-based index into the side column
            let v = if m <= 0 { corner } else { side[(m - 1) as usize] };
            ext[(off as i32 + k - 1) as usize] = v;
        }
    }
    for y in 0..h {
        let pos = (y as i32 + 1) * angle;
        let idx = pos >> 5;
        let frac = pos & 31;
        for x in 0..w {
            let base = (off as i32 + x as i32 + idx) as usize;
            out[y * w + x] = if frac == 0 {
                ext[base]
            } else {
                ((32 - frac) * ext[base] + frac * ext[base + 1] + 16) >> 5
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs_const(w: usize, h: usize, v: i32) -> References {
        References {
            top: vec![v; w + h + 1],
            left: vec![v; w + h + 1],
            corner: v,
        }
    }

    #[test]
    fn constant_references_predict_constant() {
        for mode in IntraMode::ALL {
            for &(w, h) in &[(4, 4), (8, 16), (32, 8)] {
                let mut out = vec![0; w * h];
                predict(&refs_const(w, h, 100), w, h, mode, &mut out);
                assert!(out.iter().all(|&v| v == 100), "{mode:?} {w}x{h}");
            }
        }
    }

    #[test]
    fn horizontal_copies_left_column() {
        let (w, h) = (8, 4);
        let mut refs = refs_const(w, h, 0);
        for j in 0..h {
            refs.left[j] = 10 * (j as i32 + 1);
        }
        let mut out = vec![0; w * h];
        predict(&refs, w, h, IntraMode::Horizontal, &mut out);
        for y in 0..h {
            assert!(out[y * w..(y + 1) * w].iter().all(|&v| v == 10 * (y as i32 + 1)));
        }
    }

    #[test]
    fn vertical_copies_top_row() {
        let (w, h) = (4, 8);
        let mut refs = refs_const(w, h, 0);
        for i in 0..w {
            refs.top[i] = 3 + i as i32;
        }
        let mut out = vec![0; w * h];
        predict(&refs, w, h, IntraMode::Vertical, &mut out);
        for y in 0..h {
            assert_eq!(&out[y * w..(y + 1) * w], &[3, 4, 5, 6]);
        }
    }

    #[test]
    fn diagonals_follow_their_direction() {
        let (w, h) = (4, 4);
        let mut refs = refs_const(w, h, 0);
        for i in 0..refs.top.len() {
            refs.top[i] = 10 + i as i32;
            refs.left[i] = 100 + i as i32;
        }
        refs.corner = 7;
        let mut out = vec![0; 16];
        // up-right: pred(x, y) = top[x + y + 1]
        predict(&refs, w, h, IntraMode::DiagUpRight, &mut out);
        for y in 0..h {
            for x in 0..w {
                assert_eq!(out[y * w + x], refs.top[x + y + 1]);
            }
        }
        // down-right: pred(x, y) = ref at (x - y - 1) along the main diagonal
        predict(&refs, w, h, IntraMode::DiagDownRight, &mut out);
        for y in 0..h {
            for x in 0..w {
                let d = x as i32 - y as i32;
                let want = match d {
                    d if d > 0 => refs.top[(d - 1) as usize],
                    0 => refs.corner,
                    d => refs.left[(-d - 1) as usize],
                };
                assert_eq!(out[y * w + x], want, "({x},{y})");
            }
        }
        // down-left: pred(x, y) = left[x + y + 1]
        predict(&refs, w, h, IntraMode::DiagDownLeft, &mut out);
        for y in 0..h {
            for x in 0..w {
                assert_eq!(out[y * w + x], refs.left[x + y + 1]);
            }
        }
    }

    #[test]
    fn mode_ids_round_trip() {
        for m in IntraMode::ALL {
            assert_eq!(IntraMode::from_id(m.id()), Some(m));
        }
        assert_eq!(IntraMode::from_id(9), None);
    }
}
