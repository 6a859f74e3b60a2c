//! Two-path fusion network mapping a 5×5 reference depth map to a
//! distribution over depths 1..=6.
//!
//! Path A lifts the map to 8 channels with a 1×1 convolution and applies a
//! same-padded 3×3 convolution with ReLU; path B is a 1×1 convolution to 4
//! channels. The 12×5×5 concatenation (channel, row, column order) feeds two
//! ReLU dense layers of 64 and 32 units and a 6-way softmax.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::refmap::{RefDepthMap, MAP_LEN, MAP_SIDE};
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 6;
/// Depth represented by class index 0.
pub const FIRST_DEPTH: u8 = 1;
pub const FEATURES: usize = 300;

const A_CH: usize = 8;
const B_CH: usize = 4;
const H1: usize = 64;
const H2: usize = 32;

/// `(out, in, kh, kw)` of every layer in declaration order: path-A 1×1,
/// path-A 3×3, path-B 1×1, dense 300→64, dense 64→32, dense 32→6.
pub const LAYER_SHAPES: [(usize, usize, usize, usize); 6] = [
    (A_CH, 1, 1, 1),
    (A_CH, A_CH, 3, 3),
    (B_CH, 1, 1, 1),
    (H1, FEATURES, 1, 1),
    (H2, H1, 1, 1),
    (NUM_CLASSES, H2, 1, 1),
];

const WEIGHTS_MAGIC: &[u8; 4] = b"DDFF";
const WEIGHTS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub out: usize,
    pub inp: usize,
    pub kh: usize,
    pub kw: usize,
    /// `[out][in][kh][kw]`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros((out, inp, kh, kw): (usize, usize, usize, usize)) -> Layer {
        Layer {
            out,
            inp,
            kh,
            kw,
            weights: vec![0.0; out * inp * kh * kw],
            bias: vec![0.0; out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.inp * self.kh * self.kw
    }

    pub fn fan_out(&self) -> usize {
        self.out * self.kh * self.kw
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DdffModel {
    pub layers: Vec<Layer>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct Activations {
    pub input: [f64; MAP_LEN],
    pub a1: [f64; A_CH * MAP_LEN],
    /// Pre-ReLU output of the 3×3 convolution.
    pub z2: [f64; A_CH * MAP_LEN],
    pub features: [f64; FEATURES],
    pub z4: [f64; H1],
    pub h4: [f64; H1],
    pub z5: [f64; H2],
    pub h5: [f64; H2],
    pub logits: [f64; NUM_CLASSES],
    pub probs: [f64; NUM_CLASSES],
}

impl Activations {
    /// Sign pattern of every ReLU input.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.z2.iter().chain(&self.z4).chain(&self.z5).map(|&v| v > 0.0).collect()
    }

    /// Cross-entropy of the class at `label_index`.
    pub fn loss(&self, label_index: usize) -> f64 {
        let m = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + self.logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
        lse - self.logits[label_index]
    }
}

/// Scales depths into `[0, 1]`.
pub fn encode_input(depths: &[u8; MAP_LEN]) -> [f64; MAP_LEN] {
    depths.map(|d| f64::from(d) / 6.0)
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn dense(layer: &Layer, input: &[f64], out: &mut [f64]) {
    for (o, z) in out.iter_mut().enumerate() {
        let row = &layer.weights[o * layer.inp..(o + 1) * layer.inp];
        *z = layer.bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|z| (z - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

impl DdffModel {
    pub fn zeros() -> DdffModel {
        DdffModel {
            layers: LAYER_SHAPES.iter().map(|&s| Layer::zeros(s)).collect(),
        }
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights and zero biases.
    pub fn init<R: Rng>(rng: &mut R) -> DdffModel {
        let mut m = DdffModel::zeros();
        for l in &mut m.layers {
            let a = (6.0 / (l.fan_in() + l.fan_out()) as f64).sqrt();
            for w in &mut l.weights {
                *w = rng.gen_range(-a..a);
            }
        }
        m
    }

    pub fn seeded(seed: u64) -> DdffModel {
        DdffModel::init(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward_input(&self, input: &[f64; MAP_LEN]) -> Activations {
        let [la1, la2, lb1, lh1, lh2, lout] = &self.layers[..] else {
            unreachable!("model has six layers")
        };
        let mut act = Activations {
            input: *input,
            a1: [0.0; A_CH * MAP_LEN],
            z2: [0.0; A_CH * MAP_LEN],
            features: [0.0; FEATURES],
            z4: [0.0; H1],
            h4: [0.0; H1],
            z5: [0.0; H2],
            h5: [0.0; H2],
            logits: [0.0; NUM_CLASSES],
            probs: [0.0; NUM_CLASSES],
        };
        for c in 0..A_CH {
            for p in 0..MAP_LEN {
                act.a1[c * MAP_LEN + p] = la1.weights[c] * input[p] + la1.bias[c];
            }
        }
        for o in 0..A_CH {
            let out = &mut act.z2[o * MAP_LEN..(o + 1) * MAP_LEN];
            out.fill(la2.bias[o]);
            for i in 0..A_CH {
                let src = &act.a1[i * MAP_LEN..(i + 1) * MAP_LEN];
                let k = &la2.weights[(o * A_CH + i) * 9..(o * A_CH + i + 1) * 9];
                conv3x3_accumulate(src, k, out);
            }
        }
        for (f, &z) in act.features.iter_mut().zip(&act.z2) {
            *f = relu(z);
        }
        for c in 0..B_CH {
            for p in 0..MAP_LEN {
                act.features[(A_CH + c) * MAP_LEN + p] = lb1.weights[c] * input[p] + lb1.bias[c];
            }
        }
        dense(lh1, &act.features, &mut act.z4);
        act.h4 = act.z4.map(relu);
        dense(lh2, &act.h4, &mut act.z5);
        act.h5 = act.z5.map(relu);
        dense(lout, &act.h5, &mut act.logits);
        act.probs = softmax(&act.logits);
        act
    }

    /// Depth probabilities, index 0 being depth 1.
    pub fn forward(&self, map: &RefDepthMap) -> [f64; NUM_CLASSES] {
        self.forward_input(&encode_input(&map.depths)).probs
    }

    /// Most likely depth (1..=6).
    pub fn predict_depth(&self, depths: &[u8; MAP_LEN]) -> u8 {
        argmax(&self.forward_input(&encode_input(depths)).probs) as u8 + FIRST_DEPTH
    }

    /// Adds `scale · ∂loss/∂θ` of the cross-entropy at `label_index` into
    /// `grads`, which must have this model's shape.
    pub fn backward(&self, act: &Activations, label_index: usize, scale: f64, grads: &mut DdffModel) {
        let [_, la2, _, lh1, lh2, lout] = &self.layers[..] else {
            unreachable!("model has six layers")
        };
        let [g1, g2, g3, g4, g5, g6] = &mut grads.layers[..] else {
            unreachable!("model has six layers")
        };

        let mut dlogits = act.probs;
        dlogits[label_index] -= 1.0;
        for d in &mut dlogits {
            *d *= scale;
        }
        let mut dh5 = [0.0; H2];
        dense_backward(lout, g6, &act.h5, &dlogits, &mut dh5);
        let dz5: [f64; H2] = std::array::from_fn(|i| if act.z5[i] > 0.0 { dh5[i] } else { 0.0 });
        let mut dh4 = [0.0; H1];
        dense_backward(lh2, g5, &act.h4, &dz5, &mut dh4);
        let dz4: [f64; H1] = std::array::from_fn(|i| if act.z4[i] > 0.0 { dh4[i] } else { 0.0 });
        let mut dfeat = [0.0; FEATURES];
        dense_backward(lh1, g4, &act.features, &dz4, &mut dfeat);

        for c in 0..B_CH {
            let d = &dfeat[(A_CH + c) * MAP_LEN..(A_CH + c + 1) * MAP_LEN];
            g3.weights[c] += d.iter().zip(&act.input).map(|(a, b)| a * b).sum::<f64>();
            g3.bias[c] += d.iter().sum::<f64>();
        }

        let mut dz2 = [0.0; A_CH * MAP_LEN];
        for (i, d) in dz2.iter_mut().enumerate() {
            if act.z2[i] > 0.0 {
                *d = dfeat[i];
            }
        }
        let mut da1 = [0.0; A_CH * MAP_LEN];
        for o in 0..A_CH {
            let dout = &dz2[o * MAP_LEN..(o + 1) * MAP_LEN];
            g2.bias[o] += dout.iter().sum::<f64>();
            for i in 0..A_CH {
                let src = &act.a1[i * MAP_LEN..(i + 1) * MAP_LEN];
                let base = (o * A_CH + i) * 9;
                let k = &la2.weights[base..base + 9];
                let gk = &mut g2.weights[base..base + 9];
                conv3x3_backward(src, k, dout, gk, &mut da1[i * MAP_LEN..(i + 1) * MAP_LEN]);
            }
        }
        for c in 0..A_CH {
            let d = &da1[c * MAP_LEN..(c + 1) * MAP_LEN];
            g1.weights[c] += d.iter().zip(&act.input).map(|(a, b)| a * b).sum::<f64>();
            g1.bias[c] += d.iter().sum::<f64>();
        }
    }

    /// Mean cross-entropy over `batch` and its gradient.
    pub fn loss_and_grad(&self, batch: &[([f64; MAP_LEN], usize)]) -> (f64, DdffModel) {
        let mut grads = DdffModel::zeros();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (x, label) in batch {
            let act = self.forward_input(x);
            loss += act.loss(*label);
            self.backward(&act, *label, scale, &mut grads);
        }
        (loss * scale, grads)
    }

    /// Rounds every parameter to the nearest `f32`, the precision of the
    /// weights file.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = f64::from(*v as f32);
            }
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(20 + 4 * self.param_count() + 16 * self.layers.len());
        buf.extend_from_slice(WEIGHTS_MAGIC);
        for v in [WEIGHTS_VERSION, NUM_CLASSES as u32, u32::from(FIRST_DEPTH), self.layers.len() as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.layers {
            for v in [l.out, l.inp, l.kh, l.kw] {
                buf.extend_from_slice(&(v as u32).to_le_bytes());
            }
            for &v in l.weights.iter().chain(&l.bias) {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<DdffModel> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 4 || &bytes[..4] != WEIGHTS_MAGIC {
            return Err(Error::Format("not a DDFF weights file".into()));
        }
        let mut words = bytes[4..].chunks(4);
        let mut next_u32 = || -> Result<u32> {
            match words.next() {
                Some(w) if w.len() == 4 => Ok(u32::from_le_bytes(w.try_into().unwrap())),
                _ => Err(Error::Format("weights file truncated".into())),
            }
        };
        let header = [next_u32()?, next_u32()?, next_u32()?, next_u32()?];
        let expected = [WEIGHTS_VERSION, NUM_CLASSES as u32, u32::from(FIRST_DEPTH), LAYER_SHAPES.len() as u32];
        if header != expected {
            return Err(Error::Format(format!("unsupported weights header {header:?}, expected {expected:?}")));
        }
        let mut model = DdffModel::zeros();
        for (i, l) in model.layers.iter_mut().enumerate() {
            let dims = [next_u32()?, next_u32()?, next_u32()?, next_u32()?].map(|v| v as usize);
            let (o, n, kh, kw) = LAYER_SHAPES[i];
            if dims != [o, n, kh, kw] {
                return Err(Error::Format(format!("layer {i} has shape {dims:?}, expected {:?}", [o, n, kh, kw])));
            }
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = f64::from(f32::from_bits(next_u32()?));
            }
        }
        if next_u32().is_ok() || (bytes.len() - 4) % 4 != 0 {
            return Err(Error::Format("trailing bytes after weights".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DdffModel> {
        DdffModel::read_from(std::fs::File::open(path)?)
    }
}

fn conv3x3_accumulate(src: &[f64], k: &[f64], out: &mut [f64]) {
    for y in 0..MAP_SIDE {
        for x in 0..MAP_SIDE {
            let mut acc = 0.0;
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if !(0..MAP_SIDE as isize).contains(&sy) {
                    continue;
                }
                for kx in 0..3 {
                    let sx = x as isize + kx as isize - 1;
                    if (0..MAP_SIDE as isize).contains(&sx) {
                        acc += k[ky * 3 + kx] * src[sy as usize * MAP_SIDE + sx as usize];
                    }
                }
            }
            out[y * MAP_SIDE + x] += acc;
        }
    }
}

fn conv3x3_backward(src: &[f64], k: &[f64], dout: &[f64], gk: &mut [f64], dsrc: &mut [f64]) {
    for y in 0..MAP_SIDE {
        for x in 0..MAP_SIDE {
            let d = dout[y * MAP_SIDE + x];
            if d == 0.0 {
                continue;
            }
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if !(0..MAP_SIDE as isize).contains(&sy) {
                    continue;
                }
                for kx in 0..3 {
                    let sx = x as isize + kx as isize - 1;
                    if (0..MAP_SIDE as isize).contains(&sx) {
                        let s = sy as usize * MAP_SIDE + sx as usize;
                        gk[ky * 3 + kx] += d * src[s];
                        dsrc[s] += d * k[ky * 3 + kx];
                    }
                }
            }
        }
    }
}

fn dense_backward(layer: &Layer, grad: &mut Layer, input: &[f64], dout: &[f64], dinput: &mut [f64]) {
    for (o, &d) in dout.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        grad.bias[o] += d;
        let row = &layer.weights[o * layer.inp..(o + 1) * layer.inp];
        let grow = &mut grad.weights[o * layer.inp..(o + 1) * layer.inp];
        for i in 0..layer.inp {
            grow[i] += d * input[i];
            dinput[i] += d * row[i];
        }
    }
}
