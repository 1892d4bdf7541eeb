//! Forecast errors, distribution moments, MMD and classification scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use crate::attacks::slope::{general_slope, ls_slope};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Mean absolute percentage error as a fraction.
    pub mape: f64,
}

pub fn error_metrics(pred: &[f64], truth: &[f64]) -> Result<ErrorMetrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::dim("error_metrics", format!("pred {} vs truth {}", pred.len(), truth.len())));
    }
    if let Some(i) = truth.iter().position(|&y| y == 0.0) {
        return Err(Error::domain("mape", format!("truth[{i}] is zero")));
    }
    let n = pred.len() as f64;
    let (mut abs, mut sq, mut pct) = (0.0, 0.0, 0.0);
    for (p, y) in pred.iter().zip(truth) {
        let e = p - y;
        abs += e.abs();
        sq += e * e;
        pct += (e / y).abs();
    }
    Ok(ErrorMetrics { mae: abs / n, rmse: (sq / n).sqrt(), mape: pct / n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub mu: f64,
    pub sigma: f64,
    pub iqr: f64,
    pub skew: f64,
    /// Raw (not excess) kurtosis.
    pub kurtosis: f64,
    pub mmd: Option<f64>,
}

/// Quantile of sorted data by linear interpolation between order statistics
/// at position `(n-1)*q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn moments(sample: &[f64]) -> Result<MomentReport> {
    if sample.len() < 4 {
        return Err(Error::Contract(format!("moments need at least 4 values, got {}", sample.len())));
    }
    let n = sample.len() as f64;
    let mu = sample.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in sample {
        let d = x - mu;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    if m2 == 0.0 {
        return Err(Error::domain("moments", "zero variance: skew and kurtosis are undefined"));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(MomentReport {
        mu,
        sigma: m2.sqrt(),
        iqr: quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
        skew: m3 / m2.powf(1.5),
        kurtosis: m4 / (m2 * m2),
        mmd: None,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum after sorting, so the result does not depend on input order.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Median-heuristic bandwidth `1 / (2 * median^2)` over pairwise Euclidean
/// distances of the pooled sample.
pub fn median_heuristic_gamma(pooled: &[&[f64]]) -> Result<f64> {
    let n = pooled.len();
    let mut d2 = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d2.push(sq_dist(pooled[i], pooled[j]));
        }
    }
    if d2.is_empty() {
        return Err(Error::Contract("median heuristic needs at least two points".into()));
    }
    let m = d2.len();
    let (_, hi, _) = d2.select_nth_unstable_by(m / 2, f64::total_cmp);
    let hi = hi.sqrt();
    let med = if m % 2 == 1 {
        hi
    } else {
        let lo = d2[..m / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max).sqrt();
        (lo + hi) / 2.0
    };
    if med == 0.0 {
        return Err(Error::domain("mmd", "median pairwise distance is zero; bandwidth undefined"));
    }
    Ok(1.0 / (2.0 * med * med))
}

/// Biased MMD² with an RBF kernel, clipped at zero.
pub fn mmd_with_gamma(a: &[Vec<f64>], b: &[Vec<f64>], gamma: f64) -> f64 {
    let block = |x: &[Vec<f64>], y: &[Vec<f64>], same: bool| -> f64 {
        let mut vals = Vec::with_capacity(x.len() * y.len());
        for (i, xi) in x.iter().enumerate() {
            for (j, yj) in y.iter().enumerate() {
                if same && j < i {
                    continue;
                }
                let k = (-gamma * sq_dist(xi, yj)).exp();
                vals.push(k);
                if same && j > i {
                    vals.push(k);
                }
            }
        }
        ordered_sum(vals) / (x.len() * y.len()) as f64
    };
    let v = block(a, a, true) + block(b, b, true) - 2.0 * block(a, b, false);
    v.max(0.0)
}

pub fn mmd(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Contract("mmd needs at least two vectors per sample".into()));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(Error::dim("mmd", "vectors differ in dimension"));
    }
    let pooled: Vec<&[f64]> = a.iter().chain(b).map(Vec::as_slice).collect();
    let gamma = median_heuristic_gamma(&pooled)?;
    Ok(mmd_with_gamma(a, b, gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Percent.
    pub accuracy: f64,
    /// Percent; NaN when there are no negatives.
    pub specificity: f64,
    /// Cohen's kappa in percent.
    pub kappa: f64,
}

/// Positive class is "adversarial" (`true`).
pub fn confusion(labels: &[bool], predictions: &[bool]) -> Result<ConfusionReport> {
    if labels.is_empty() || labels.len() != predictions.len() {
        return Err(Error::Contract(format!(
            "confusion needs equal non-empty inputs, got {} labels and {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
        }
    }
    let n = labels.len() as f64;
    let po = (tp + tn) as f64 / n;
    let pe = ((tp + fn_) as f64 * (tp + fp) as f64 + (tn + fp) as f64 * (tn + fn_) as f64) / (n * n);
    // both raters constant and identical: agreement is perfect by definition
    let kappa = if pe == 1.0 { if po == 1.0 { 1.0 } else { 0.0 } } else { (po - pe) / (1.0 - pe) };
    let specificity = if tn + fp == 0 { f64::NAN } else { tn as f64 / (tn + fp) as f64 * 100.0 };
    Ok(ConfusionReport { tp, tn, fp, fn_, accuracy: po * 100.0, specificity, kappa: kappa * 100.0 })
}
