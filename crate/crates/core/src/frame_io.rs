//! Raw luma input/output and the 8×8 block lattice.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{arg_err, Error, Result};

/// Side of the square blocks that depth maps are indexed by.
pub const BLOCK: usize = 8;

/// One 8-bit luma plane. `width`/`height` are the padded (8-aligned)
/// dimensions; `visible_width`/`visible_height` keep the source geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramePlane {
    pub width: usize,
    pub height: usize,
    pub visible_width: usize,
    pub visible_height: usize,
    pub frame_index: usize,
    pub samples: Vec<u8>,
}

/// Pixel rectangle inside a plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && py >= self.y && px < self.x + self.w && py < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockCoord {
    pub x: usize,
    pub y: usize,
    pub t: usize,
}

impl FramePlane {
    pub fn new(width: usize, height: usize, frame_index: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return arg_err("plane dimensions must be positive");
        }
        if samples.len() != width * height {
            return arg_err(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height,
                samples.len()
            ));
        }
        Ok(FramePlane {
            width,
            height,
            visible_width: width,
            visible_height: height,
            frame_index,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        FramePlane {
            width,
            height,
            visible_width: width,
            visible_height: height,
            frame_index: 0,
            samples: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.samples[y * self.width + x] = v;
    }

    pub fn blocks_wide(&self) -> usize {
        self.width.div_ceil(BLOCK)
    }

    pub fn blocks_high(&self) -> usize {
        self.height.div_ceil(BLOCK)
    }

    /// Pads right/bottom edges by replication up to the next multiple of 8.
    /// Aligned planes are returned unchanged.
    pub fn padded(&self) -> FramePlane {
        let width = self.width.div_ceil(BLOCK) * BLOCK;
        let height = self.height.div_ceil(BLOCK) * BLOCK;
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = y.min(self.height - 1);
            let row = &self.samples[sy * self.width..(sy + 1) * self.width];
            samples.extend_from_slice(row);
            let last = row[self.width - 1];
            samples.extend(std::iter::repeat_n(last, width - self.width));
        }
        FramePlane {
            width,
            height,
            visible_width: self.visible_width,
            visible_height: self.visible_height,
            frame_index: self.frame_index,
            samples,
        }
    }

    /// Visible (unpadded) samples in row-major order.
    pub fn visible_samples(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.visible_width * self.visible_height);
        for y in 0..self.visible_height {
            let start = y * self.width;
            out.extend_from_slice(&self.samples[start..start + self.visible_width]);
        }
        out
    }

    /// Maps a pixel position inside the padded plane to its 8×8 block.
    pub fn block_of(&self, pixel_x: usize, pixel_y: usize) -> Result<BlockCoord> {
        if pixel_x >= self.width || pixel_y >= self.height {
            return arg_err(format!(
                "pixel ({pixel_x},{pixel_y}) outside {}x{} plane",
                self.width, self.height
            ));
        }
        Ok(BlockCoord {
            x: pixel_x / BLOCK,
            y: pixel_y / BLOCK,
            t: self.frame_index,
        })
    }
}

/// Peak signal-to-noise ratio over the visible region. Identical planes give
/// `f64::INFINITY`.
pub fn psnr(original: &FramePlane, recon: &FramePlane) -> f64 {
    let mut sse = 0u64;
    for y in 0..original.visible_height {
        for x in 0..original.visible_width {
            let d = original.get(x, y) as i64 - recon.get(x, y) as i64;
            sse += (d * d) as u64;
        }
    }
    let n = (original.visible_width * original.visible_height) as f64;
    if sse == 0 {
        return f64::INFINITY;
    }
    10.0 * (255.0f64 * 255.0 * n / sse as f64).log10()
}

fn chroma_bytes(width: usize, height: usize) -> usize {
    2 * width.div_ceil(2) * height.div_ceil(2)
}

/// Reads planar 4:2:0 8-bit frames, keeping luma only.
pub fn read_yuv<R: Read>(
    mut reader: R,
    width: usize,
    height: usize,
    max_frames: Option<usize>,
) -> Result<Vec<FramePlane>> {
    if width == 0 || height == 0 {
        return arg_err("width and height must be positive");
    }
    let luma = width * height;
    let chroma = chroma_bytes(width, height);
    let mut frames = Vec::new();
    let mut chroma_buf = vec![0u8; chroma];
    while max_frames.is_none_or(|m| frames.len() < m) {
        let t = frames.len();
        let mut samples = vec![0u8; luma];
        let got = read_full(&mut reader, &mut samples)?;
        if got == 0 {
            break;
        }
        if got < luma {
            return Err(Error::Truncated { frame: t });
        }
        if read_full(&mut reader, &mut chroma_buf)? < chroma {
            return Err(Error::Truncated { frame: t });
        }
        let plane = FramePlane::new(width, height, t, samples)?;
        frames.push(plane.padded());
    }
    Ok(frames)
}

fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

pub fn load_yuv(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    max_frames: Option<usize>,
) -> Result<Vec<FramePlane>> {
    if width == 0 || height == 0 {
        return arg_err("width and height must be positive");
    }
    let file = File::open(path)?;
    read_yuv(BufReader::new(file), width, height, max_frames)
}

/// Writes the visible luma of each plane followed by neutral (128) chroma.
pub fn write_yuv<W: Write>(mut writer: W, frames: &[FramePlane]) -> Result<()> {
    for f in frames {
        writer.write_all(&f.visible_samples())?;
        let chroma = vec![128u8; chroma_bytes(f.visible_width, f.visible_height)];
        writer.write_all(&chroma)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_yuv(path: impl AsRef<Path>, frames: &[FramePlane]) -> Result<()> {
    write_yuv(BufWriter::new(File::create(path)?), frames)
}

/// Parses a binary (P5) 8-bit PGM image.
pub fn read_pgm(bytes: &[u8]) -> Result<FramePlane> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!("unsupported PGM magic {:?}", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
    };
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format("only 8-bit PGM is supported".into()));
    }
    // single whitespace byte separates header from raster
    pos += 1;
    let data = bytes
        .get(pos..pos + width * height)
        .ok_or(Error::Truncated { frame: 0 })?;
    Ok(FramePlane::new(width, height, 0, data.to_vec())?.padded())
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<FramePlane> {
    read_pgm(&std::fs::read(path)?)
}

pub fn write_pgm<W: Write>(mut writer: W, plane: &FramePlane) -> Result<()> {
    write!(writer, "P5\n{} {}\n255\n", plane.visible_width, plane.visible_height)?;
    writer.write_all(&plane.visible_samples())?;
    Ok(())
}
