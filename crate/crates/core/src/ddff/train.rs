//! Seeded mini-batch Adam training on mean cross-entropy.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Sample;
use super::model::{encode_input, DdffModel, FIRST_DEPTH};
use super::refmap::MAP_LEN;
use crate::error::{arg_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations_per_epoch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Share of samples held out for testing (4:1 split by default).
    pub test_fraction: f64,
    /// Stop after the first epoch whose held-out accuracy exceeds this.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            iterations_per_epoch: 128,
            epochs: 50,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            test_fraction: 0.2,
            target_accuracy: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs_run: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub train_accuracy: f64,
    /// `None` when the dataset is too small to hold out any sample.
    pub test_accuracy: Option<f64>,
    pub history: Vec<EpochStats>,
}

/// Seeded shuffle followed by a split into `(train, test)`.
pub fn split_dataset(samples: &[Sample], test_fraction: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = samples.to_vec();
    all.shuffle(&mut rng);
    let n_test = (all.len() as f64 * test_fraction).floor() as usize;
    let test = all.split_off(all.len() - n_test);
    (all, test)
}

/// Share of samples whose predicted depth equals the label.
pub fn accuracy(model: &DdffModel, samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let hits = samples.iter().filter(|s| model.predict_depth(&s.depths) == s.label).count();
    hits as f64 / samples.len() as f64
}

struct Adam {
    m: DdffModel,
    v: DdffModel,
    t: i32,
}

impl Adam {
    fn new() -> Adam {
        Adam {
            m: DdffModel::zeros(),
            v: DdffModel::zeros(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut DdffModel, grads: &DdffModel, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in model.layers.iter_mut().zip(&grads.layers).zip(&mut self.m.layers).zip(&mut self.v.layers) {
            let params = p.weights.iter_mut().chain(p.bias.iter_mut());
            let gs = g.weights.iter().chain(&g.bias);
            let ms = m.weights.iter_mut().chain(m.bias.iter_mut());
            let vs = v.weights.iter_mut().chain(v.bias.iter_mut());
            for (((p, &g), m), v) in params.zip(gs).zip(ms).zip(vs) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Trains a fresh model. Splitting, initialization and batch order all
/// derive from `seed`, so equal inputs give bit-identical models. The
/// returned parameters are rounded to `f32` so that the saved and in-memory
/// models agree.
pub fn train(samples: &[Sample], cfg: &TrainConfig, seed: u64) -> Result<(DdffModel, TrainReport)> {
    if samples.is_empty() {
        return arg_err("training dataset is empty");
    }
    if cfg.batch_size == 0 || cfg.iterations_per_epoch == 0 {
        return arg_err("batch size and iterations per epoch must be positive");
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return arg_err(format!("test fraction {} outside [0, 1)", cfg.test_fraction));
    }
    if let Some(bad) = samples.iter().find(|s| !(1..=6).contains(&s.label)) {
        return arg_err(format!("label {} outside 1..=6", bad.label));
    }
    let (train_set, test_set) = split_dataset(samples, cfg.test_fraction, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d0ff);
    let mut model = DdffModel::init(&mut rng);
    let mut adam = Adam::new();

    let encoded: Vec<([f64; MAP_LEN], usize)> = train_set
        .iter()
        .map(|s| (encode_input(&s.depths), (s.label - FIRST_DEPTH) as usize))
        .collect();
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let batch_size = cfg.batch_size.min(encoded.len());
    let mut batch = Vec::with_capacity(batch_size);
    let mut history = Vec::new();

    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for _ in 0..cfg.iterations_per_epoch {
            batch.clear();
            while batch.len() < batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(encoded[order[cursor]]);
                cursor += 1;
            }
            let (loss, grads) = model.loss_and_grad(&batch);
            loss_sum += loss;
            adam.step(&mut model, &grads, cfg);
        }
        let test_accuracy = (!test_set.is_empty()).then(|| accuracy(&model, &test_set));
        let train_accuracy = accuracy(&model, &train_set);
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / cfg.iterations_per_epoch as f64,
            train_accuracy,
            test_accuracy,
        });
        let watched = test_accuracy.unwrap_or(train_accuracy);
        if cfg.target_accuracy.is_some_and(|t| watched > t) {
            break;
        }
    }

    model.round_to_f32();
    let report = TrainReport {
        seed,
        epochs_run: history.len(),
        train_samples: train_set.len(),
        test_samples: test_set.len(),
        train_accuracy: accuracy(&model, &train_set),
        test_accuracy: (!test_set.is_empty()).then(|| accuracy(&model, &test_set)),
        history,
    };
    Ok((model, report))
}
