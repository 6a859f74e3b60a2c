//! Evaluation quantities: average time saving, Bjøntegaard delta rate,
//! depth-classification metrics and overhead ratio.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    /// Bits, or any positive rate unit.
    pub rate: f64,
    /// PSNR in dB.
    pub psnr: f64,
}

/// Mean relative time saving over the Qp set, in percent.
pub fn ats(t_ori: &[f64], t_pro: &[f64]) -> Result<f64> {
    if t_ori.is_empty() || t_ori.len() != t_pro.len() {
        return arg_err(format!("need matching non-empty time lists, got {} and {}", t_ori.len(), t_pro.len()));
    }
    if t_ori.iter().chain(t_pro).any(|&t| !(t > 0.0 && t.is_finite())) {
        return arg_err("encoding times must be positive");
    }
    let sum: f64 = t_ori.iter().zip(t_pro).map(|(o, p)| (o - p) / o).sum();
    Ok(sum / t_ori.len() as f64 * 100.0)
}

/// Least-squares polynomial of `degree`, coefficients from the constant term up.
fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    let a = DMatrix::from_fn(x.len(), degree + 1, |r, c| x[r].powi(c as i32));
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    match svd.solve(&b, 1e-12) {
        Ok(c) => Ok(c.iter().copied().collect()),
        Err(e) => arg_err(format!("polynomial fit failed: {e}")),
    }
}

/// Definite integral of the polynomial `c` over `[lo, hi]`.
fn poly_integral(c: &[f64], lo: f64, hi: f64) -> f64 {
    let anti = |x: f64| c.iter().enumerate().map(|(k, &ck)| ck * x.powi(k as i32 + 1) / (k as f64 + 1.0)).sum::<f64>();
    anti(hi) - anti(lo)
}

fn check_curve(points: &[RdPoint], name: &str) -> Result<()> {
    if points.len() < 4 {
        return arg_err(format!("{name} curve needs at least 4 points, got {}", points.len()));
    }
    if points.iter().any(|p| !(p.rate > 0.0) || !p.psnr.is_finite() || !p.rate.is_finite()) {
        return arg_err(format!("{name} curve has a non-positive rate or non-finite value"));
    }
    Ok(())
}

/// Bjøntegaard delta rate of `test` against `anchor`, in percent. Each curve
/// is fitted by a cubic in PSNR for log10(rate); the mean log-rate gap over
/// the common PSNR interval is converted back to a ratio.
pub fn bdbr(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    check_curve(anchor, "anchor")?;
    check_curve(test, "test")?;
    let range = |c: &[RdPoint]| {
        c.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.psnr), hi.max(p.psnr)))
    };
    let (a_lo, a_hi) = range(anchor);
    let (t_lo, t_hi) = range(test);
    let (lo, hi) = (a_lo.max(t_lo), a_hi.min(t_hi));
    if !(hi > lo) {
        return arg_err(format!("no PSNR overlap between [{a_lo}, {a_hi}] and [{t_lo}, {t_hi}]"));
    }
    // Fit in u = (psnr - mid) / half so the Vandermonde matrix stays well
    // conditioned; the fitted curve is the same, and the overlap maps to [-1, 1].
    let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
    let fit = |c: &[RdPoint]| {
        let x: Vec<f64> = c.iter().map(|p| (p.psnr - mid) / half).collect();
        let y: Vec<f64> = c.iter().map(|p| p.rate.log10()).collect();
        polyfit(&x, &y, 3)
    };
    let pa = fit(anchor)?;
    let pt = fit(test)?;
    let avg = (poly_integral(&pt, -1.0, 1.0) - poly_integral(&pa, -1.0, 1.0)) / 2.0;
    Ok((10f64.powf(avg) - 1.0) * 100.0)
}

/// Model time as a percentage of total encoding time.
pub fn overhead(model_time: f64, total_time: f64) -> Result<f64> {
    if !(model_time >= 0.0) || !(total_time > 0.0) {
        return arg_err(format!("invalid overhead times {model_time} / {total_time}"));
    }
    Ok(model_time / total_time * 100.0)
}

/// Depth confusion counts: rows are true depths 1..=6, columns predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 6]; 6],
}

impl ConfusionMatrix {
    pub fn record(&mut self, true_depth: u8, predicted_depth: u8) {
        self.counts[usize::from(true_depth) - 1][usize::from(predicted_depth) - 1] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    /// Share of samples on the diagonal.
    pub fn exact_match_accuracy(&self) -> f64 {
        let diag: u64 = (0..6).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total() as f64
    }
}

/// One-vs-rest metrics of one class. Ratios with an empty denominator are
/// `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub depth: u8,
    pub support: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    /// Macro averages over the classes where each ratio is defined.
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_specificity: f64,
    pub mean_accuracy: f64,
    pub exact_match_accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return arg_err("confusion matrix is empty");
    }
    let per_class: Vec<ClassMetrics> = (0..6)
        .map(|k| {
            let tp = cm.counts[k][k];
            let row: u64 = cm.counts[k].iter().sum();
            let col: u64 = (0..6).map(|r| cm.counts[r][k]).sum();
            let (fn_, fp) = (row - tp, col - tp);
            let tn = total - tp - fn_ - fp;
            ClassMetrics {
                depth: k as u8 + 1,
                support: row,
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                specificity: ratio(tn, tn + fp),
                accuracy: (tp + tn) as f64 / total as f64,
            }
        })
        .collect();
    Ok(ClassificationReport {
        mean_precision: mean_defined(per_class.iter().map(|c| c.precision)),
        mean_recall: mean_defined(per_class.iter().map(|c| c.recall)),
        mean_specificity: mean_defined(per_class.iter().map(|c| c.specificity)),
        mean_accuracy: mean_defined(per_class.iter().map(|c| Some(c.accuracy))),
        exact_match_accuracy: cm.exact_match_accuracy(),
        total,
        per_class,
    })
}
