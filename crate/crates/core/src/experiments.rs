//! Desk-scale synthetic fixtures: a GBM universe and a small forecaster that
//! trains on it in seconds. Used by tests, the acceptance suite and the
//! `synth` command.

use serde::{Deserialize, Serialize};

use crate::dataio::{synth_gbm, PriceSeries};
use crate::error::Result;
use crate::forecaster::{self, Nhits, NhitsConfig, OptimizerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskSpec {
    pub n_series: usize,
    pub n_days: usize,
    /// Daily drift.
    pub mu: f64,
    /// Daily volatility of the first series; it grows by `sigma_step` per
    /// series and wraps every ten series.
    pub sigma: f64,
    pub sigma_step: f64,
    /// Start price of the first series; it grows by `s0_step` per series.
    pub s0: f64,
    pub s0_step: f64,
    pub seed: u64,
    pub ticker_prefix: String,
}

impl Default for DeskSpec {
    fn default() -> Self {
        Self {
            n_series: 30,
            n_days: 600,
            mu: 0.0005,
            sigma: 0.01,
            sigma_step: 0.0005,
            s0: 20.0,
            s0_step: 10.0,
            seed: 100,
            ticker_prefix: "DSK".into(),
        }
    }
}

/// One GBM path per series, each with its own start price and volatility.
pub fn desk_universe(spec: &DeskSpec) -> Result<Vec<PriceSeries>> {
    (0..spec.n_series)
        .map(|k| {
            let s0 = spec.s0 + spec.s0_step * k as f64;
            let sigma = spec.sigma + spec.sigma_step * (k % 10) as f64;
            let mut s = synth_gbm(1, spec.n_days, s0, spec.mu, sigma, spec.seed.wrapping_add(k as u64))?.remove(0);
            s.ticker = format!("{}{k:03}", spec.ticker_prefix);
            Ok(s)
        })
        .collect()
}

/// Held-out series for attack experiments, disjoint in seed from the
/// default training universe.
pub fn attack_universe(n_series: usize) -> Result<Vec<PriceSeries>> {
    desk_universe(&DeskSpec { n_series, n_days: 300, seed: 5000, ticker_prefix: "ATK".into(), ..DeskSpec::default() })
}

/// The forecaster architecture with a short Adam schedule over strided
/// windows.
pub fn toy_config(seed: u64) -> NhitsConfig {
    NhitsConfig {
        optimizer: OptimizerKind::Adam,
        epochs: 10,
        early_stop_patience: 5,
        window_stride: 5,
        seed,
        ..NhitsConfig::default()
    }
}

/// Train the toy forecaster on the first 80% of `universe` (validating on
/// the next 10%) and return the best-validation model.
pub fn train_toy(universe: &[PriceSeries], config: NhitsConfig) -> Result<Nhits> {
    let n_train = universe.len() * 8 / 10;
    let n_val = (universe.len() / 10).max(1);
    let (train, rest) = universe.split_at(n_train);
    let trainer = forecaster::train(train, &rest[..n_val.min(rest.len())], config)?;
    Ok(trainer.best_model())
}
