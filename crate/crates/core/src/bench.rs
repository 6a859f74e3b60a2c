//! Dataset collection and the anchor-versus-accelerated benchmark.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ddff::{save_dataset, DdffModel, Sample};
use crate::error::{arg_err, Result};
use crate::frame_io::FramePlane;
use crate::metrics::{ats, bdbr, classification_metrics, ClassificationReport, ConfusionMatrix, RdPoint};
use crate::pipeline::{encode_collect, encode_with_model, EncodeConfig, EncodeMode, EncodeReport, ReferenceSource};
use crate::ppbe::{ModeStatistics, ModeStatisticsSummary};

pub const BENCH_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_QPS: [i32; 4] = [22, 27, 32, 37];
/// Exact-depth accuracy of the original network at full encoder scale.
pub const REFERENCE_PREDICTION_ACCURACY: f64 = 2351539.0 / 2575967.0;

/// Oracle-encodes `frames` at every QP and returns the collected samples.
pub fn collect_samples(frames: &[FramePlane], qps: &[i32], ctu_size: usize) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for &qp in qps {
        let cfg = EncodeConfig {
            ctu_size,
            ..EncodeConfig::new(qp, EncodeMode::Oracle)
        };
        encode_collect(frames, &cfg, &mut samples)?;
    }
    Ok(samples)
}

/// Collects samples and writes them as a dataset file; returns the count.
pub fn collect_dataset(frames: &[FramePlane], qps: &[i32], ctu_size: usize, out: impl AsRef<Path>) -> Result<usize> {
    let samples = collect_samples(frames, qps, ctu_size)?;
    save_dataset(out, &samples)?;
    Ok(samples.len())
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub qps: Vec<i32>,
    pub ctu_size: usize,
    pub seed: u64,
    pub reference: ReferenceSource,
    /// Record wall-clock times; without them ATS and overhead are omitted.
    pub timing: bool,
    /// Encodes per run; the median time is kept.
    pub repeats: usize,
    /// QP encodes run concurrently.
    pub jobs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            qps: DEFAULT_QPS.to_vec(),
            ctu_size: 128,
            seed: 0,
            reference: ReferenceSource::default(),
            timing: true,
            repeats: 1,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: EncodeMode,
    pub rate_bits: f64,
    pub distortion: f64,
    pub j: f64,
    pub psnr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub time_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overhead_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpResult {
    pub qp: i32,
    pub anchor: RunSummary,
    pub test: RunSummary,
    pub j_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub time_saving_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overhead_percent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub ctu_size: usize,
    pub seed: u64,
    pub reference: ReferenceSource,
    pub test_mode: EncodeMode,
    pub qps: Vec<QpResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ats_percent: Option<f64>,
    pub bdbr_percent: f64,
    pub total_j_ratio: f64,
    pub prediction_confusion: ConfusionMatrix,
    /// `None` when the network never ran.
    pub prediction_metrics: Option<ClassificationReport>,
    pub reference_prediction_accuracy: f64,
    pub partition_statistics: ModeStatisticsSummary,
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One plot-ready row per QP and mode.
    pub fn to_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row {
            qp: i32,
            mode: EncodeMode,
            time_seconds: Option<f64>,
            j: f64,
            psnr: f64,
            rate_bits: f64,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for q in &self.qps {
            for r in [&q.anchor, &q.test] {
                w.serialize(Row {
                    qp: q.qp,
                    mode: r.mode,
                    time_seconds: r.time_seconds,
                    j: r.j,
                    psnr: r.psnr,
                    rate_bits: r.rate_bits,
                })
                .map_err(|e| crate::Error::Format(e.to_string()))?;
            }
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Encodes `repeats` times, keeping the first report with median timings.
fn timed_encode(frames: &[FramePlane], cfg: &EncodeConfig, model: Option<&DdffModel>, repeats: usize) -> Result<EncodeReport> {
    let mut times = Vec::with_capacity(repeats);
    let mut overheads = Vec::with_capacity(repeats);
    let mut first = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let r = encode_with_model(frames, cfg, model)?;
        times.push(start.elapsed().as_secs_f64());
        overheads.push(r.totals.overhead_seconds.unwrap_or(0.0));
        first.get_or_insert(r);
    }
    let mut report = first.expect("at least one repeat");
    if cfg.timing {
        report.totals.time_seconds = Some(median(times));
        report.totals.overhead_seconds = Some(median(overheads));
    }
    Ok(report)
}

fn summarize(r: &EncodeReport) -> RunSummary {
    RunSummary {
        mode: r.mode,
        rate_bits: r.totals.rate_bits,
        distortion: r.totals.distortion,
        j: r.totals.j,
        psnr: r.totals.psnr,
        time_seconds: r.totals.time_seconds,
        overhead_seconds: r.totals.overhead_seconds,
    }
}

/// Runs ORACLE and FULL at each QP. Without a model the test run is the
/// anchor itself, so ATS and BDBR come out as exactly zero.
pub fn run_bench(frames: &[FramePlane], model: Option<&DdffModel>, cfg: &BenchConfig) -> Result<BenchReport> {
    if frames.is_empty() {
        return arg_err("benchmark needs at least one frame");
    }
    if cfg.qps.len() < 4 {
        return arg_err(format!("benchmark needs at least 4 QPs, got {}", cfg.qps.len()));
    }
    if cfg.repeats == 0 || cfg.jobs == 0 {
        return arg_err("repeats and jobs must be positive");
    }
    let test_mode = if model.is_some() { EncodeMode::Full } else { EncodeMode::Oracle };
    let make_cfg = |qp: i32, mode: EncodeMode| EncodeConfig {
        ctu_size: cfg.ctu_size,
        seed: cfg.seed,
        reference: cfg.reference,
        timing: cfg.timing,
        ..EncodeConfig::new(qp, mode)
    };
    for &qp in &cfg.qps {
        make_cfg(qp, test_mode).validate()?;
    }

    let run_qp = |qp: i32| -> Result<(EncodeReport, EncodeReport)> {
        let anchor = timed_encode(frames, &make_cfg(qp, EncodeMode::Oracle), None, cfg.repeats)?;
        let test = match model {
            Some(m) => timed_encode(frames, &make_cfg(qp, test_mode), Some(m), cfg.repeats)?,
            None => anchor.clone(),
        };
        Ok((anchor, test))
    };
    let mut runs = Vec::with_capacity(cfg.qps.len());
    for chunk in cfg.qps.chunks(cfg.jobs) {
        let results: Vec<Result<_>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&qp| s.spawn(move || run_qp(qp))).collect();
            handles.into_iter().map(|h| h.join().expect("encode thread panicked")).collect()
        });
        for r in results {
            runs.push(r?);
        }
    }

    let mut qps = Vec::with_capacity(runs.len());
    let mut confusion = ConfusionMatrix::default();
    let mut stats = ModeStatistics::default();
    let (mut anchor_pts, mut test_pts) = (Vec::new(), Vec::new());
    let (mut t_ori, mut t_pro) = (Vec::new(), Vec::new());
    let (mut j_anchor, mut j_test) = (0.0, 0.0);
    for (anchor, test) in &runs {
        let (a, t) = (summarize(anchor), summarize(test));
        confusion.merge(&test.prediction_confusion);
        stats.merge(&test.partition_statistics.counts);
        anchor_pts.push(RdPoint {
            rate: a.rate_bits,
            psnr: a.psnr,
        });
        test_pts.push(RdPoint {
            rate: t.rate_bits,
            psnr: t.psnr,
        });
        j_anchor += a.j;
        j_test += t.j;
        let (saving, overhead) = match (a.time_seconds, t.time_seconds) {
            (Some(ta), Some(tt)) => {
                t_ori.push(ta);
                t_pro.push(tt);
                let oh = t.overhead_seconds.unwrap_or(0.0);
                (Some((ta - tt) / ta * 100.0), Some(crate::metrics::overhead(oh, tt)?))
            }
            _ => (None, None),
        };
        qps.push(QpResult {
            qp: anchor.qp,
            j_ratio: t.j / a.j,
            anchor: a,
            test: t,
            time_saving_percent: saving,
            overhead_percent: overhead,
        });
    }
    let ats_percent = if cfg.timing { Some(ats(&t_ori, &t_pro)?) } else { None };
    anchor_pts.sort_by(|a, b| a.psnr.total_cmp(&b.psnr));
    test_pts.sort_by(|a, b| a.psnr.total_cmp(&b.psnr));
    let bdbr_percent = bdbr(&anchor_pts, &test_pts)?;
    let prediction_metrics = if confusion.total() > 0 {
        Some(classification_metrics(&confusion)?)
    } else {
        None
    };

    Ok(BenchReport {
        schema_version: BENCH_SCHEMA_VERSION,
        width: frames[0].width,
        height: frames[0].height,
        frames: frames.len(),
        ctu_size: cfg.ctu_size,
        seed: cfg.seed,
        reference: cfg.reference,
        test_mode,
        qps,
        ats_percent,
        bdbr_percent,
        total_j_ratio: j_test / j_anchor,
        prediction_confusion: confusion,
        prediction_metrics,
        reference_prediction_accuracy: REFERENCE_PREDICTION_ACCURACY,
        partition_statistics: stats.summary(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddff::load_dataset;

    fn clip(n: usize, w: usize, h: usize) -> Vec<FramePlane> {
        (0..n)
            .map(|t| {
                let s = (0..w * h)
                    .map(|i| {
                        let (x, y) = (i % w + 3 * t, i / w + 2 * t);
                        ((x * 7 + y * 13) % 97 + (x / 16) * 20) as u8
                    })
                    .collect();
                FramePlane::new(w, h, t, s).unwrap()
            })
            .collect()
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn collection_scales_with_qp_count() {
        let frames = clip(2, 64, 64);
        let one = collect_samples(&frames, &[32], 32).unwrap().len();
        let four = collect_samples(&frames, &DEFAULT_QPS, 32).unwrap().len();
        assert_eq!(one, 16);
        assert_eq!(four, 4 * one);
        assert_eq!(collect_samples(&frames[..1], &DEFAULT_QPS, 32).unwrap().len(), 0);
    }

    #[test]
    fn collected_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dds");
        let frames = clip(2, 64, 64);
        let n = collect_dataset(&frames, &[27], 32, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.len(), n);
        let bytes = std::fs::read(&path).unwrap();
        let mut again = Vec::new();
        crate::ddff::write_dataset(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
        assert!(collect_dataset(&frames, &[27], 32, dir.path().join("missing/d.dds")).is_err());
    }

    #[test]
    fn bench_without_model_is_neutral() {
        let frames = clip(2, 64, 32);
        let cfg = BenchConfig {
            ctu_size: 32,
            ..BenchConfig::default()
        };
        let r = run_bench(&frames, None, &cfg).unwrap();
        assert_eq!(r.ats_percent, Some(0.0));
        assert_eq!(r.bdbr_percent, 0.0);
        assert_eq!(r.total_j_ratio, 1.0);
        assert!(r.prediction_metrics.is_none());
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 1 + 8);
        assert!(csv.starts_with("qp,mode,time_seconds,j,psnr,rate_bits"));
    }

    #[test]
    fn bench_with_model_is_deterministic_without_timing() {
        let frames = clip(3, 64, 64);
        let model = DdffModel::seeded(4);
        let cfg = BenchConfig {
            ctu_size: 32,
            timing: false,
            jobs: 2,
            ..BenchConfig::default()
        };
        let a = run_bench(&frames, Some(&model), &cfg).unwrap();
        let b = run_bench(&frames, Some(&model), &BenchConfig { jobs: 1, ..cfg.clone() }).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!(a.ats_percent.is_none());
        assert!(a.qps.iter().all(|q| q.j_ratio >= 1.0 && q.test.mode == EncodeMode::Full));
        assert!(a.prediction_confusion.total() > 0);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let frames = clip(1, 32, 32);
        let bad = |cfg: BenchConfig| run_bench(&frames, None, &cfg).is_err();
        assert!(bad(BenchConfig {
            qps: vec![22, 27, 32],
            ..BenchConfig::default()
        }));
        assert!(bad(BenchConfig {
            repeats: 0,
            ..BenchConfig::default()
        }));
        assert!(bad(BenchConfig {
            ctu_size: 48,
            ..BenchConfig::default()
        }));
        assert!(run_bench(&[], None, &BenchConfig::default()).is_err());
    }
}
