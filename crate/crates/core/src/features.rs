//! Technical indicators computed inside the autodiff graph, so gradients reach
//! raw prices.
//!
//! Windowed statistics on the first days use whatever history exists
//! (`min(w, t+1)` days), so every day has a value and the series length is
//! unchanged. Rolling std uses the population denominator.

use std::rc::Rc;

use chrono::{Datelike, NaiveDate, Weekday};

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};

pub const N_CONTINUOUS: usize = 12;
pub const N_WEEKDAYS: usize = 5;

pub const CHANNELS: [&str; N_CONTINUOUS] = [
    "adjprc",
    "rolling_mean_5",
    "rolling_mean_10",
    "rolling_mean_20",
    "rolling_std_5",
    "rolling_std_10",
    "rolling_std_20",
    "log_return",
    "roc_5",
    "ema_5",
    "ema_10",
    "ema_20",
];

/// How a channel is normalized relative to the price window before it enters
/// the forecaster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    /// Same units as price: centered and scaled like adjprc.
    Level,
    /// Price-scale dispersion: scaled only.
    Spread,
    /// Already scale-free.
    Ratio,
}

pub fn channel_kind(c: usize) -> ChannelKind {
    match c {
        0..=3 | 9..=11 => ChannelKind::Level,
        4..=6 => ChannelKind::Spread,
        _ => ChannelKind::Ratio,
    }
}

const WINDOWS: [usize; 3] = [5, 10, 20];
const ROC_LAG: usize = 5;

/// Continuous channels plus the categorical day of week.
#[derive(Debug, Clone)]
pub struct FeatureMatrix<'g> {
    /// `[12, T]` in [`CHANNELS`] order.
    pub continuous: Var<'g>,
    /// Monday = 0 .. Friday = 4, one per day.
    pub day_of_week: Vec<u8>,
}

impl FeatureMatrix<'_> {
    pub fn len(&self) -> usize {
        self.day_of_week.len()
    }

    pub fn is_empty(&self) -> bool {
        self.day_of_week.is_empty()
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        let t = self.len();
        self.continuous.value().data()[c * t..(c + 1) * t].to_vec()
    }

    /// `[5, T]` one-hot encoding of the weekday channel.
    pub fn one_hot(&self) -> Tensor {
        one_hot(&self.day_of_week)
    }
}

pub fn one_hot(days: &[u8]) -> Tensor {
    let t = days.len();
    let mut data = vec![0.0; N_WEEKDAYS * t];
    for (i, &d) in days.iter().enumerate() {
        data[d as usize * t + i] = 1.0;
    }
    Tensor::new(vec![N_WEEKDAYS, t], data).expect("shape matches")
}

pub fn day_of_week(dates: &[NaiveDate]) -> Result<Vec<u8>> {
    dates
        .iter()
        .map(|d| match d.weekday() {
            Weekday::Sat | Weekday::Sun => Err(Error::domain("day_of_week", format!("{d} falls on a weekend"))),
            w => Ok(w.num_days_from_monday() as u8),
        })
        .collect()
}

/// Features of one series: `adjprc: [T]`.
pub fn compute_features<'g>(adjprc: Var<'g>, dates: &[NaiveDate]) -> Result<FeatureMatrix<'g>> {
    let shape = adjprc.shape();
    if shape.len() != 1 {
        return Err(Error::dim("compute_features", format!("expected [T], got {shape:?}")));
    }
    if dates.len() != shape[0] {
        return Err(Error::dim("compute_features", format!("{} dates for {} prices", dates.len(), shape[0])));
    }
    let t = shape[0];
    let day_of_week = day_of_week(dates)?;
    let continuous = continuous_features(adjprc.reshape(&[1, t])?)?.reshape(&[N_CONTINUOUS, t])?;
    Ok(FeatureMatrix { continuous, day_of_week })
}

/// Batched continuous channels: `[B, T]` prices to `[B, 12, T]`.
pub fn continuous_features<'g>(x: Var<'g>) -> Result<Var<'g>> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(Error::dim("continuous_features", format!("expected [B, T], got {shape:?}")));
    }
    let (b, t) = (shape[0], shape[1]);
    let min_len = WINDOWS[2] + 1;
    if t < min_len {
        return Err(Error::Contract(format!("feature input needs at least {min_len} days, got {t}")));
    }
    if let Some(i) = x.value().data().iter().position(|p| !(*p > 0.0)) {
        return Err(Error::domain("compute_features", format!("price at flat index {i} is not positive")));
    }
    let g = x.graph();
    let mut means = Vec::with_capacity(WINDOWS.len());
    let mut stds = Vec::with_capacity(WINDOWS.len());
    for w in WINDOWS {
        let (idx, mask, inv_n) = window_tables(b, t, w);
        let gathered = x.gather(idx, &[b, t, w])?;
        let mask = g.constant(mask);
        let inv_n = g.constant(inv_n);
        let mean = gathered.mul(mask)?.sum_last()?.mul(inv_n)?;
        let dev = gathered.sub(mean.expand_last(w))?.mul(mask)?;
        let var = dev.mul(dev)?.sum_last()?.mul(inv_n)?;
        means.push(mean);
        stds.push(var.sqrt()?);
    }
    let ratio = x.slice(1, 1, t - 1)?.div(x.slice(1, 0, t - 1)?)?;
    let log_return = g.concat(&[g.constant(Tensor::zeros(&[b, 1])), ratio.ln()?], 1)?;
    let lagged = x.slice(1, 0, t - ROC_LAG)?;
    let roc = x.slice(1, ROC_LAG, t - ROC_LAG)?.sub(lagged)?.div(lagged)?;
    let roc = g.concat(&[g.constant(Tensor::zeros(&[b, ROC_LAG])), roc], 1)?;
    let emas: Vec<Var<'g>> = WINDOWS
        .iter()
        .map(|&w| x.ema(2.0 / (w as f64 + 1.0)))
        .collect::<Result<_>>()?;

    let mut channels = vec![x];
    channels.extend(means);
    channels.extend(stds);
    channels.push(log_return);
    channels.push(roc);
    channels.extend(emas);
    let rows: Vec<Var<'g>> = channels.into_iter().map(|c| c.reshape(&[b, 1, t])).collect::<Result<_>>()?;
    g.concat(&rows, 1)
}

/// Gather indices `[B, T, w]` for trailing windows, the validity mask `[T, w]`
/// and `1/n_t` for the effective window length `n_t = min(w, t+1)`.
fn window_tables(b: usize, t: usize, w: usize) -> (Rc<[usize]>, Tensor, Tensor) {
    let mut idx = Vec::with_capacity(b * t * w);
    for row in 0..b {
        for day in 0..t {
            for j in 0..w {
                let src = (day + j + 1).saturating_sub(w);
                idx.push(row * t + src);
            }
        }
    }
    let mut mask = Vec::with_capacity(t * w);
    let mut inv = Vec::with_capacity(t);
    for day in 0..t {
        for j in 0..w {
            mask.push(if day + j + 1 >= w { 1.0 } else { 0.0 });
        }
        inv.push(1.0 / (day + 1).min(w) as f64);
    }
    (
        idx.into(),
        Tensor::new(vec![t, w], mask).expect("shape matches"),
        Tensor::vector(inv),
    )
}
