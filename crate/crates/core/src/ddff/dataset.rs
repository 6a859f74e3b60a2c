//! Training pairs of reference depth maps and final depths, and their binary
//! file format: `DDS1`, a little-endian `u64` record count, then per record
//! 25 depth bytes (row-major over `(Δy, Δx)`) and one label byte.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::refmap::MAP_LEN;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DDS1";
const RECORD_LEN: usize = MAP_LEN + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Sample {
    pub depths: [u8; MAP_LEN],
    /// Final depth, 1..=6.
    pub label: u8,
}

fn check_depth(v: u8, what: &str) -> Result<u8> {
    if (1..=6).contains(&v) {
        Ok(v)
    } else {
        Err(Error::Format(format!("{what} {v} outside 1..=6")))
    }
}

pub fn write_dataset<W: Write>(mut w: W, samples: &[Sample]) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + samples.len() * RECORD_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        buf.extend_from_slice(&s.depths);
        buf.push(s.label);
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Vec<Sample>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a DDS1 dataset".into()));
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let body = &bytes[12..];
    if (body.len() as u64) != count.saturating_mul(RECORD_LEN as u64) {
        return Err(Error::Format(format!(
            "dataset declares {count} records but holds {} bytes of records",
            body.len()
        )));
    }
    body.chunks_exact(RECORD_LEN)
        .map(|rec| {
            let mut depths = [0u8; MAP_LEN];
            for (d, &v) in depths.iter_mut().zip(&rec[..MAP_LEN]) {
                *d = check_depth(v, "depth")?;
            }
            Ok(Sample {
                depths,
                label: check_depth(rec[MAP_LEN], "label")?,
            })
        })
        .collect()
}

pub fn save_dataset(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    write_dataset(std::io::BufWriter::new(std::fs::File::create(path)?), samples)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    read_dataset(std::fs::File::open(path)?)
}

/// Label given by the rounded mean depth of the map.
pub fn mean_rule_label(depths: &[u8; MAP_LEN]) -> u8 {
    let sum: u32 = depths.iter().map(|&d| u32::from(d)).sum();
    // round half up of sum / 25 in integers
    let rounded = (2 * sum + MAP_LEN as u32) / (2 * MAP_LEN as u32);
    rounded.clamp(1, 6) as u8
}

/// Maps scattered around a random base depth (each cell keeps the base with
/// probability 0.7, else moves one step), labelled by [`mean_rule_label`].
pub fn synthetic_rule_dataset(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let base: i32 = rng.gen_range(1..=6);
            let depths = std::array::from_fn(|_| {
                let r: f64 = rng.gen();
                let d = if r < 0.7 {
                    base
                } else if r < 0.85 {
                    base - 1
                } else {
                    base + 1
                };
                d.clamp(1, 6) as u8
            });
            Sample {
                label: mean_rule_label(&depths),
                depths,
            }
        })
        .collect()
}
