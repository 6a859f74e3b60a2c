#![allow(dead_code)]

use std::path::PathBuf;

use qtmt_fast::frame_io::{load_pgm, FramePlane};

pub const CLIP_W: usize = 416;
pub const CLIP_H: usize = 240;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// The 512×512 grayscale test photograph.
pub fn camera() -> FramePlane {
    load_pgm(data_path("camera.pgm")).expect("camera.pgm")
}

/// `n` frames of a `w × h` window sliding over `img` from `(x0, y0)` by
/// `(dx, dy)` pixels per frame.
pub fn pan(img: &FramePlane, (x0, y0): (isize, isize), (dx, dy): (isize, isize), (w, h): (usize, usize), n: usize) -> Vec<FramePlane> {
    (0..n)
        .map(|t| {
            let (ox, oy) = (x0 + dx * t as isize, y0 + dy * t as isize);
            assert!(ox >= 0 && oy >= 0 && ox as usize + w <= img.width && oy as usize + h <= img.height);
            let mut s = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    s.push(img.get(ox as usize + x, oy as usize + y));
                }
            }
            FramePlane::new(w, h, t, s).unwrap()
        })
        .collect()
}

/// The 10-frame 416×240 evaluation clip.
pub fn eval_clip() -> Vec<FramePlane> {
    pan(&camera(), (0, 0), (3, 2), (CLIP_W, CLIP_H), 10)
}

/// A training clip whose rows do not overlap the evaluation clip.
pub fn training_clip() -> Vec<FramePlane> {
    pan(&camera(), (95, 271), (-3, -2), (CLIP_W, CLIP_H), 6)
}
