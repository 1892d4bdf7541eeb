//! A compact N-HiTS style quantile forecaster.
//!
//! Each block max-pools its residual input, runs an MLP and emits low-rate
//! coefficients that are linearly interpolated up to the backcast (encoder
//! length) and to one forecast path per quantile. Blocks subtract their
//! backcast from the residual and their forecasts are summed. Inputs are
//! normalized per window by mean and `std + 1e-8`, and outputs mapped back.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Graph, Tensor, Var};
use crate::dataio::{Checkpoint, PriceSeries};
use crate::error::{Error, Result};
use crate::features::{self, channel_kind, ChannelKind, N_CONTINUOUS, N_WEEKDAYS};
use crate::nn::{permutation, Adam, Linear, Optimizer, ParamSet, Sgd};

pub const QUANTILES: [f64; 7] = [0.01, 0.05, 0.1, 0.5, 0.95, 0.99, 0.999];

/// Exogenous channels per encoder day: every continuous feature except adjprc
/// itself, then the weekday one-hot.
pub const EXOG_CHANNELS: usize = N_CONTINUOUS - 1 + N_WEEKDAYS;

const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NhitsConfig {
    pub encoder_length: usize,
    pub horizon: usize,
    pub blocks_per_stack: usize,
    pub pool_kernels: Vec<usize>,
    pub downsample_ratios: Vec<usize>,
    pub hidden_size: usize,
    pub mlp_layers: usize,
    pub quantiles: Vec<f64>,
    pub use_exogenous: bool,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub early_stop_patience: usize,
    /// Step between consecutive training windows of one series.
    pub window_stride: usize,
    pub seed: u64,
}

impl Default for NhitsConfig {
    fn default() -> Self {
        Self {
            encoder_length: 100,
            horizon: 20,
            blocks_per_stack: 1,
            pool_kernels: vec![4, 2, 1],
            downsample_ratios: vec![4, 2, 1],
            hidden_size: 64,
            mlp_layers: 2,
            quantiles: QUANTILES.to_vec(),
            use_exogenous: true,
            optimizer: OptimizerKind::Sgd,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 100,
            early_stop_patience: 15,
            window_stride: 1,
            seed: 0,
        }
    }
}

impl NhitsConfig {
    pub fn n_stacks(&self) -> usize {
        self.pool_kernels.len()
    }

    pub fn n_quantiles(&self) -> usize {
        self.quantiles.len()
    }

    /// Position of the 0.5 quantile (or the one closest to it).
    pub fn median_index(&self) -> usize {
        let mut best = 0;
        for (i, q) in self.quantiles.iter().enumerate() {
            if (q - 0.5).abs() < (self.quantiles[best] - 0.5).abs() {
                best = i;
            }
        }
        best
    }

    /// Shortest series that yields one full training window.
    pub fn min_series_length(&self) -> usize {
        self.encoder_length + self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if self.pool_kernels.is_empty() || self.pool_kernels.len() != self.downsample_ratios.len() {
            return bad(format!(
                "{} pool kernels vs {} downsample ratios",
                self.pool_kernels.len(),
                self.downsample_ratios.len()
            ));
        }
        if self.pool_kernels.iter().any(|&k| k == 0 || k > self.encoder_length) {
            return bad(format!("pool kernels {:?} must lie in 1..=encoder_length", self.pool_kernels));
        }
        if self.downsample_ratios.iter().any(|&r| r == 0 || self.horizon % r != 0 || r > self.encoder_length) {
            return bad(format!(
                "downsample ratios {:?} must divide the horizon {}",
                self.downsample_ratios, self.horizon
            ));
        }
        if self.encoder_length < 21 || self.horizon == 0 {
            return bad("encoder length must be at least 21 and horizon positive".into());
        }
        if self.quantiles.is_empty()
            || self.quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0))
            || self.quantiles.windows(2).any(|w| w[0] >= w[1])
        {
            return bad(format!("quantiles {:?} must be strictly increasing in (0,1)", self.quantiles));
        }
        if self.blocks_per_stack == 0 || self.hidden_size == 0 || self.batch_size == 0 || self.window_stride == 0 {
            return bad("blocks_per_stack, hidden_size, batch_size and window_stride must be positive".into());
        }
        Ok(())
    }
}

/// `[n, len]` matrix mapping `n` coefficients to `len` points by linear
/// interpolation on cell centres; identity when `n == len`.
pub fn interp_matrix(n: usize, len: usize) -> Tensor {
    let mut m = vec![0.0; n * len];
    for j in 0..len {
        let u = ((j as f64 + 0.5) * n as f64 / len as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = u.floor() as usize;
        let frac = u - i0 as f64;
        let i1 = (i0 + 1).min(n - 1);
        m[i0 * len + j] += 1.0 - frac;
        m[i1 * len + j] += frac;
    }
    Tensor::new(vec![n, len], m).expect("shape matches")
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    pool: usize,
    n_back: usize,
    n_fore: usize,
    exog: bool,
    hidden: Vec<Linear>,
    head: Linear,
}

/// Per-day quantile forecasts for one window, quantiles sorted per day.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastOutput {
    /// `horizon` rows of `n_quantiles` non-decreasing values.
    pub quantile_paths: Vec<Vec<f64>>,
    pub median_path: Vec<f64>,
}

/// Graph outputs of a batch of windows.
#[derive(Debug, Clone)]
pub struct WindowForecast<'g> {
    /// `[W, Q*H]`, quantile-major, in normalized units and unsorted.
    pub normalized: Var<'g>,
    /// Same layout in price units.
    pub output: Var<'g>,
    pub mean: Var<'g>,
    pub scale: Var<'g>,
    /// Residual input of each block, starting with the normalized window.
    pub residuals: Vec<Var<'g>>,
    pub backcasts: Vec<Var<'g>>,
}

/// Rolling-window median predictions averaged per day.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingForecast {
    /// Index of the first predicted day (the encoder length).
    pub first_day: usize,
    pub values: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Nhits {
    pub config: NhitsConfig,
    pub params: ParamSet,
    blocks: Vec<Block>,
}

impl Nhits {
    pub fn new(config: NhitsConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let mut blocks = Vec::new();
        let (l, h, q) = (config.encoder_length, config.horizon, config.n_quantiles());
        for s in 0..config.n_stacks() {
            for b in 0..config.blocks_per_stack {
                let pool = config.pool_kernels[s];
                let ratio = config.downsample_ratios[s];
                let exog = config.use_exogenous && blocks.is_empty();
                let pooled = (l - pool) / pool + 1;
                let d_in = pooled + if exog { EXOG_CHANNELS * l } else { 0 };
                let n_back = (l / ratio).max(1);
                let n_fore = h / ratio;
                let mut hidden = Vec::new();
                let mut width = d_in;
                for k in 0..config.mlp_layers {
                    hidden.push(Linear::new(&mut params, &format!("s{s}b{b}.mlp{k}"), width, config.hidden_size, &mut rng));
                    width = config.hidden_size;
                }
                let head = Linear::new(&mut params, &format!("s{s}b{b}.head"), width, n_back + q * n_fore, &mut rng);
                blocks.push(Block { pool, n_back, n_fore, exog, hidden, head });
            }
        }
        Ok(Self { config, params, blocks })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Self::new(config_from(ck)?)?;
        model.params.load_named(&ck.tensors)?;
        Ok(model)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            architecture: json!({ "nhits": self.config }),
            meta: json!({}),
            tensors: self.params.named(),
        }
    }

    /// Names of the final projection tensors of every block.
    pub fn head_tensor_indices(&self) -> Vec<usize> {
        self.blocks.iter().flat_map(|b| [b.head.w, b.head.b]).collect()
    }

    /// Forecast a batch of windows. `prices: [W, L]`; `exog: [W, 16*L]` raw
    /// feature values laid out channel-major (required iff the model uses
    /// exogenous inputs).
    pub fn forward_windows<'g>(
        &self,
        vars: &[Var<'g>],
        prices: Var<'g>,
        exog: Option<Var<'g>>,
    ) -> Result<WindowForecast<'g>> {
        let cfg = &self.config;
        let (l, h, q) = (cfg.encoder_length, cfg.horizon, cfg.n_quantiles());
        let shape = prices.shape();
        if shape.len() != 2 || shape[1] != l {
            return Err(Error::Contract(format!("forecaster expects windows of shape [W, {l}], got {shape:?}")));
        }
        let w = shape[0];
        let g = prices.graph();
        let mean = prices.mean_last()?;
        let dev = prices.sub(mean.expand_last(l))?;
        let scale = dev.mul(dev)?.mean_last()?.sqrt()?.shift(STD_FLOOR);
        let x1 = dev.div(scale.expand_last(l))?;

        let exog = match (cfg.use_exogenous, exog) {
            (true, Some(e)) => {
                if e.shape() != [w, EXOG_CHANNELS * l] {
                    return Err(Error::dim("forecaster", format!("exog {:?}, expected [{w}, {}]", e.shape(), EXOG_CHANNELS * l)));
                }
                Some(self.normalize_exog(e, mean, scale)?)
            }
            (false, _) => None,
            (true, None) => return Err(Error::Contract("model expects exogenous inputs".into())),
        };

        let mut residual = x1;
        let mut residuals = vec![x1];
        let mut backcasts = Vec::new();
        let mut total: Option<Var<'g>> = None;
        for block in &self.blocks {
            let pooled = if block.pool > 1 { residual.maxpool1d(block.pool, block.pool)? } else { residual };
            let mut hdn = match (block.exog, exog) {
                (true, Some(e)) => g.concat(&[pooled, e], 1)?,
                _ => pooled,
            };
            for layer in &block.hidden {
                hdn = layer.forward(vars, hdn)?.relu();
            }
            let theta = block.head.forward(vars, hdn)?;
            let back = theta
                .slice(1, 0, block.n_back)?
                .matmul(g.constant(interp_matrix(block.n_back, l)))?;
            let fore = theta
                .slice(1, block.n_back, q * block.n_fore)?
                .reshape(&[w * q, block.n_fore])?
                .matmul(g.constant(interp_matrix(block.n_fore, h)))?
                .reshape(&[w, q * h])?;
            residual = residual.sub(back)?;
            residuals.push(residual);
            backcasts.push(back);
            total = Some(match total {
                Some(t) => t.add(fore)?,
                None => fore,
            });
        }
        let normalized = total.expect("at least one block");
        let output = normalized.mul(scale.expand_last(q * h))?.add(mean.expand_last(q * h))?;
        Ok(WindowForecast { normalized, output, mean, scale, residuals, backcasts })
    }

    fn normalize_exog<'g>(&self, exog: Var<'g>, mean: Var<'g>, scale: Var<'g>) -> Result<Var<'g>> {
        let l = self.config.encoder_length;
        let width = EXOG_CHANNELS * l;
        let mut shift = vec![0.0; width];
        let mut scaled = vec![0.0; width];
        for c in 0..N_CONTINUOUS - 1 {
            let kind = channel_kind(c + 1);
            for j in 0..l {
                shift[c * l + j] = if kind == ChannelKind::Level { 1.0 } else { 0.0 };
                scaled[c * l + j] = if kind == ChannelKind::Ratio { 0.0 } else { 1.0 };
            }
        }
        let unscaled: Vec<f64> = scaled.iter().map(|s| 1.0 - s).collect();
        let g = exog.graph();
        let offset = mean.expand_last(width).mul(g.constant(Tensor::vector(shift)))?;
        let factor = scale
            .powf(-1.0)
            .expand_last(width)
            .mul(g.constant(Tensor::vector(scaled)))?
            .add(g.constant(Tensor::vector(unscaled)))?;
        exog.sub(offset)?.mul(factor)
    }

    /// Window inputs from a feature matrix (`continuous: [12, T]`) for windows
    /// starting at each of `starts`.
    pub fn window_inputs<'g>(&self, fm: &features::FeatureMatrix<'g>, starts: &[usize]) -> Result<(Var<'g>, Option<Var<'g>>)> {
        let l = self.config.encoder_length;
        let t = fm.len();
        if let Some(&s) = starts.iter().find(|&&s| s + l > t) {
            return Err(Error::Contract(format!("window at day {s} needs {l} days but the series has {t}")));
        }
        let w = starts.len();
        let price_idx: Vec<usize> = starts.iter().flat_map(|&s| s..s + l).collect();
        let prices = fm.continuous.gather(price_idx.into(), &[w, l])?;
        if !self.config.use_exogenous {
            return Ok((prices, None));
        }
        let mut idx = Vec::with_capacity(w * (N_CONTINUOUS - 1) * l);
        for &s in starts {
            for c in 1..N_CONTINUOUS {
                idx.extend((s..s + l).map(|d| c * t + d));
            }
        }
        let cont = fm.continuous.gather(Rc::from(idx), &[w, (N_CONTINUOUS - 1) * l])?;
        let days: Vec<&[u8]> = starts.iter().map(|&s| &fm.day_of_week[s..s + l]).collect();
        let onehot = fm.continuous.graph().constant(one_hot_rows(&days));
        let exog = fm.continuous.graph().concat(&[cont, onehot], 1)?;
        Ok((prices, Some(exog)))
    }

    /// Window inputs for a batch of exactly-encoder-length price paths
    /// `[B, L]`, one window per row (used by the GAN's second critic).
    pub fn batch_inputs<'g>(&self, prices: Var<'g>, days: &[&[u8]]) -> Result<(Var<'g>, Option<Var<'g>>)> {
        let l = self.config.encoder_length;
        let shape = prices.shape();
        if shape.len() != 2 || shape[1] != l || days.len() != shape[0] || days.iter().any(|d| d.len() != l) {
            return Err(Error::Contract(format!("batch inputs must be [B, {l}] with matching weekdays, got {shape:?}")));
        }
        if !self.config.use_exogenous {
            return Ok((prices, None));
        }
        let b = shape[0];
        let cont = features::continuous_features(prices)?
            .slice(1, 1, N_CONTINUOUS - 1)?
            .reshape(&[b, (N_CONTINUOUS - 1) * l])?;
        let onehot = prices.graph().constant(one_hot_rows(days));
        Ok((prices, Some(prices.graph().concat(&[cont, onehot], 1)?)))
    }

    /// Median path `[W, H]`: for every window and day, the quantile output of
    /// median rank after sorting that day's quantiles.
    pub fn median_path<'g>(&self, output: Var<'g>) -> Result<Var<'g>> {
        let (h, q) = (self.config.horizon, self.config.n_quantiles());
        let shape = output.shape();
        if shape.len() != 2 || shape[1] != q * h {
            return Err(Error::dim("median_path", format!("expected [W, {}], got {shape:?}", q * h)));
        }
        let w = shape[0];
        let rank = self.config.median_index();
        let idx = {
            let v = output.value();
            let data = v.data();
            let mut idx = Vec::with_capacity(w * h);
            let mut order: Vec<usize> = (0..q).collect();
            for win in 0..w {
                let row = &data[win * q * h..(win + 1) * q * h];
                for day in 0..h {
                    order.sort_by(|&a, &b| row[a * h + day].total_cmp(&row[b * h + day]).then(a.cmp(&b)));
                    idx.push(win * q * h + order[rank] * h + day);
                }
            }
            idx
        };
        output.gather(idx.into(), &[w, h])
    }

    /// Rolling forecast over a whole series inside a graph. `vars` are the
    /// bound parameters; `adjprc: [T]`. Returns the averaged median path for
    /// days `L..T`, shape `[T - L]`.
    pub fn rolling_median<'g>(&self, vars: &[Var<'g>], adjprc: Var<'g>, dates: &[chrono::NaiveDate]) -> Result<Var<'g>> {
        let (l, h) = (self.config.encoder_length, self.config.horizon);
        let t = adjprc.numel();
        if t < l + h {
            return Err(Error::Contract(format!("rolling forecast needs at least {} days, got {t}", l + h)));
        }
        let fm = features::compute_features(adjprc, dates)?;
        let n_windows = t - l - h + 1;
        let starts: Vec<usize> = (0..n_windows).collect();
        let (prices, exog) = self.window_inputs(&fm, &starts)?;
        let fc = self.forward_windows(vars, prices, exog)?;
        let med = self.median_path(fc.output)?;
        let idx: Vec<usize> = (0..n_windows).flat_map(|i| i..i + h).collect();
        let summed = med.reshape(&[n_windows * h])?.scatter_add(idx.into(), &[t - l])?;
        let inv: Vec<f64> = overlap_counts(t, l, h).iter().map(|&c| 1.0 / c as f64).collect();
        summed.mul(adjprc.graph().constant(Tensor::vector(inv)))
    }

    pub fn rolling_forecast(&self, series: &PriceSeries) -> Result<RollingForecast> {
        let g = Graph::new();
        let vars = self.params.bind_frozen(&g);
        let x = g.constant(Tensor::vector(series.adjprc.clone()));
        let values = self.rolling_median(&vars, x, &series.dates)?.data();
        let (l, h) = (self.config.encoder_length, self.config.horizon);
        Ok(RollingForecast { first_day: l, values, counts: overlap_counts(series.len(), l, h) })
    }

    /// Forecast the days following the window that starts at `start`.
    pub fn forecast_at(&self, series: &PriceSeries, start: usize) -> Result<ForecastOutput> {
        let g = Graph::new();
        let vars = self.params.bind_frozen(&g);
        let x = g.constant(Tensor::vector(series.adjprc.clone()));
        let fm = features::compute_features(x, &series.dates)?;
        let (prices, exog) = self.window_inputs(&fm, &[start])?;
        let out = self.forward_windows(&vars, prices, exog)?.output.data();
        Ok(self.to_output(&out))
    }

    /// Forecast beyond the last `encoder_length` days of `series`.
    pub fn forecast(&self, series: &PriceSeries) -> Result<ForecastOutput> {
        let l = self.config.encoder_length;
        if series.len() < l {
            return Err(Error::Contract(format!("forecast needs {l} days, series has {}", series.len())));
        }
        self.forecast_at(series, series.len() - l)
    }

    /// Sort one window's `[Q*H]` output into per-day quantile rows.
    pub fn to_output(&self, out: &[f64]) -> ForecastOutput {
        let (h, q) = (self.config.horizon, self.config.n_quantiles());
        let rank = self.config.median_index();
        let quantile_paths: Vec<Vec<f64>> = (0..h)
            .map(|d| {
                let mut row: Vec<f64> = (0..q).map(|k| out[k * h + d]).collect();
                row.sort_by(f64::total_cmp);
                row
            })
            .collect();
        let median_path = quantile_paths.iter().map(|r| r[rank]).collect();
        ForecastOutput { quantile_paths, median_path }
    }
}

fn config_from(ck: &Checkpoint) -> Result<NhitsConfig> {
    let v = ck.architecture.get("nhits").cloned().ok_or_else(|| Error::Corrupt("checkpoint is not a forecaster".into()))?;
    serde_json::from_value(v).map_err(|e| Error::Corrupt(format!("forecaster config: {e}")))
}

/// Number of rolling windows covering each forecast day `L..T`.
pub fn overlap_counts(t: usize, l: usize, h: usize) -> Vec<usize> {
    let n_windows = t + 1 - l - h;
    (0..t - l)
        .map(|d| {
            let hi = d.min(n_windows - 1);
            let lo = d.saturating_sub(h - 1);
            hi + 1 - lo
        })
        .collect()
}

/// `[W, 5*L]` one-hot weekday rows.
fn one_hot_rows(days: &[&[u8]]) -> Tensor {
    let l = days.first().map_or(0, |d| d.len());
    let mut data = Vec::with_capacity(days.len() * N_WEEKDAYS * l);
    for d in days {
        data.extend_from_slice(features::one_hot(d).data());
    }
    Tensor::new(vec![days.len(), N_WEEKDAYS * l], data).expect("shape matches")
}

/// Mean pinball loss over all entries; `pred: [W, Q*H]`, `truth: [W, H]`.
pub fn quantile_loss_graph<'g>(pred: Var<'g>, truth: Var<'g>, quantiles: &[f64]) -> Result<Var<'g>> {
    let ts = truth.shape();
    let q = quantiles.len();
    if ts.len() != 2 || pred.shape() != [ts[0], q * ts[1]] {
        return Err(Error::dim("quantile_loss", format!("pred {:?} vs truth {:?}", pred.shape(), ts)));
    }
    let h = ts[1];
    let g = pred.graph();
    let tiled = g.concat(&vec![truth; q], 1)?;
    let weights: Vec<f64> = quantiles.iter().flat_map(|&qq| std::iter::repeat_n(qq, h)).collect();
    let under: Vec<f64> = weights.iter().map(|w| 1.0 - w).collect();
    let diff = tiled.sub(pred)?;
    let loss = diff
        .relu()
        .mul(g.constant(Tensor::vector(weights)))?
        .add(diff.neg().relu().mul(g.constant(Tensor::vector(under)))?)?;
    Ok(loss.mean())
}

/// Mean pinball loss of one forecast against the realized path.
pub fn quantile_loss(pred: &ForecastOutput, truth: &[f64], quantiles: &[f64]) -> Result<f64> {
    if pred.quantile_paths.len() != truth.len() || pred.quantile_paths.iter().any(|r| r.len() != quantiles.len()) {
        return Err(Error::dim(
            "quantile_loss",
            format!("{} forecast days vs {} truth days", pred.quantile_paths.len(), truth.len()),
        ));
    }
    let mut total = 0.0;
    for (row, y) in pred.quantile_paths.iter().zip(truth) {
        for (yhat, q) in row.iter().zip(quantiles) {
            let r = y - yhat;
            total += if r > 0.0 { q * r } else { (q - 1.0) * r };
        }
    }
    Ok(total / (truth.len() * quantiles.len()) as f64)
}

/// Per-series feature values cached for building training batches.
#[derive(Debug, Clone)]
struct SeriesCache {
    adjprc: Vec<f64>,
    /// `[12 * T]` channel-major.
    continuous: Vec<f64>,
    days: Vec<u8>,
}

/// Training windows: (series, start) pairs over cached features.
#[derive(Debug, Clone)]
pub struct WindowSet {
    series: Vec<SeriesCache>,
    windows: Vec<(usize, usize)>,
}

impl WindowSet {
    pub fn new(series: &[PriceSeries], config: &NhitsConfig) -> Result<Self> {
        let (l, h) = (config.encoder_length, config.horizon);
        let mut caches = Vec::with_capacity(series.len());
        let mut windows = Vec::new();
        for (k, s) in series.iter().enumerate() {
            if s.len() < l + h {
                return Err(Error::Contract(format!("{}: {} days is below {}", s.ticker, s.len(), l + h)));
            }
            let g = Graph::new();
            let fm = features::compute_features(g.constant(Tensor::vector(s.adjprc.clone())), &s.dates)?;
            caches.push(SeriesCache { adjprc: s.adjprc.clone(), continuous: fm.continuous.data(), days: fm.day_of_week });
            windows.extend((0..=s.len() - l - h).step_by(config.window_stride).map(|i| (k, i)));
        }
        Ok(Self { series: caches, windows })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// `(prices [B,L], exog [B,16L], targets [B,H])` for the given window ids.
    fn batch(&self, ids: &[usize], config: &NhitsConfig) -> (Tensor, Tensor, Tensor) {
        let (l, h) = (config.encoder_length, config.horizon);
        let b = ids.len();
        let mut prices = Vec::with_capacity(b * l);
        let mut exog = Vec::with_capacity(b * EXOG_CHANNELS * l);
        let mut targets = Vec::with_capacity(b * h);
        for &id in ids {
            let (k, s) = self.windows[id];
            let c = &self.series[k];
            let t = c.adjprc.len();
            prices.extend_from_slice(&c.adjprc[s..s + l]);
            for ch in 1..N_CONTINUOUS {
                exog.extend_from_slice(&c.continuous[ch * t + s..ch * t + s + l]);
            }
            exog.extend_from_slice(features::one_hot(&c.days[s..s + l]).data());
            targets.extend_from_slice(&c.adjprc[s + l..s + l + h]);
        }
        (
            Tensor::new(vec![b, l], prices).expect("shape"),
            Tensor::new(vec![b, EXOG_CHANNELS * l], exog).expect("shape"),
            Tensor::new(vec![b, h], targets).expect("shape"),
        )
    }
}

/// Training loss on one batch, in normalized units.
fn batch_loss<'g>(model: &Nhits, vars: &[Var<'g>], set: &WindowSet, ids: &[usize]) -> Result<Var<'g>> {
    let cfg = &model.config;
    let g = vars[0].graph();
    let (prices, exog, targets) = set.batch(ids, cfg);
    let prices = g.constant(prices);
    let exog = cfg.use_exogenous.then(|| g.constant(exog));
    let fc = model.forward_windows(vars, prices, exog)?;
    let h = cfg.horizon;
    let truth = g.constant(targets).sub(fc.mean.expand_last(h))?.div(fc.scale.expand_last(h))?;
    quantile_loss_graph(fc.normalized, truth, &cfg.quantiles)
}

/// Mean training-objective loss over every window of `set`.
pub fn evaluate_loss(model: &Nhits, set: &WindowSet) -> Result<f64> {
    const CHUNK: usize = 256;
    let mut total = 0.0;
    let ids: Vec<usize> = (0..set.len()).collect();
    for chunk in ids.chunks(CHUNK) {
        let g = Graph::new();
        let vars = model.params.bind_frozen(&g);
        total += batch_loss(model, &vars, set, chunk)?.item() * chunk.len() as f64;
    }
    Ok(total / set.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Patience counter over validation losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, bad_epochs: 0 }
    }

    /// Record one validation loss. Returns (improved, stop).
    pub fn update(&mut self, val: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|b| val < b);
        if improved {
            self.best = Some(val);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        (improved, self.patience > 0 && self.bad_epochs >= self.patience)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum OptState {
    Sgd(Sgd),
    Adam(Adam),
}

impl OptState {
    fn new(cfg: &NhitsConfig) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd => OptState::Sgd(Sgd { lr: cfg.lr, weight_decay: cfg.weight_decay }),
            OptimizerKind::Adam => OptState::Adam(Adam::new(cfg.lr, 0.9, 0.999, cfg.weight_decay)),
        }
    }

    fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        match self {
            OptState::Sgd(o) => o.step(params, grads),
            OptState::Adam(o) => o.step(params, grads),
        }
    }
}

/// Resumable training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: Nhits,
    pub best: ParamSet,
    pub stopping: EarlyStopping,
    /// Number of completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochLog>,
    pub stopped: bool,
    opt: OptState,
}

impl Trainer {
    pub fn new(config: NhitsConfig) -> Result<Self> {
        let model = Nhits::new(config)?;
        let opt = OptState::new(&model.config);
        Ok(Self {
            best: model.params.clone(),
            stopping: EarlyStopping::new(model.config.early_stop_patience),
            epoch: 0,
            log: Vec::new(),
            stopped: false,
            opt,
            model,
        })
    }

    pub fn run_epoch(&mut self, train: &WindowSet, val: &WindowSet) -> Result<EpochLog> {
        if train.is_empty() {
            return Err(Error::Contract("no training windows".into()));
        }
        let cfg = self.model.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(self.epoch as u64 + 1);
        let order = permutation(train.len(), &mut rng);
        let mut total = 0.0;
        for (bi, ids) in order.chunks(cfg.batch_size).enumerate() {
            let g = Graph::new();
            let vars = self.model.params.bind(&g);
            let loss = batch_loss(&self.model, &vars, train, ids)?;
            let lv = loss.item();
            if !lv.is_finite() {
                return Err(Error::Numerical(format!(
                    "training loss {lv} at epoch {}, batch {bi}",
                    self.epoch + 1
                )));
            }
            g.backward(loss)?;
            let grads = ParamSet::grads(&vars)?;
            self.opt.step(&mut self.model.params, &grads)?;
            total += lv * ids.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = if val.is_empty() { train_loss } else { evaluate_loss(&self.model, val)? };
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!("validation loss {val_loss} at epoch {}", self.epoch + 1)));
        }
        self.epoch += 1;
        let (improved, stop) = self.stopping.update(val_loss);
        if improved {
            self.best = self.model.params.clone();
        }
        self.stopped = stop;
        let entry = EpochLog { epoch: self.epoch, train_loss, val_loss };
        log::info!("epoch {} train {:.6} val {:.6}", entry.epoch, train_loss, val_loss);
        self.log.push(entry);
        Ok(entry)
    }

    /// Train until the configured epoch count or early stop.
    pub fn fit(&mut self, train: &WindowSet, val: &WindowSet) -> Result<()> {
        while !self.stopped && self.epoch < self.model.config.epochs {
            self.run_epoch(train, val)?;
        }
        Ok(())
    }

    /// Model carrying the best-validation parameters.
    pub fn best_model(&self) -> Nhits {
        let mut m = self.model.clone();
        m.params = self.best.clone();
        m
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors: Vec<(String, Tensor)> = self.best.named();
        tensors.extend(self.model.params.named().into_iter().map(|(n, t)| (format!("current/{n}"), t)));
        let mut adam_step = 0;
        if let OptState::Adam(a) = &self.opt {
            let (t, m, v) = a.state();
            adam_step = t;
            for (i, (mi, vi)) in m.iter().zip(v).enumerate() {
                tensors.push((format!("adam/m{i}"), Tensor::vector(mi.clone())));
                tensors.push((format!("adam/v{i}"), Tensor::vector(vi.clone())));
            }
        }
        Checkpoint {
            architecture: json!({ "nhits": self.model.config }),
            meta: json!({
                "epoch": self.epoch,
                "stopping": self.stopping,
                "stopped": self.stopped,
                "adam_step": adam_step,
                "log": self.log,
            }),
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut trainer = Trainer::new(config_from(ck)?)?;
        let n = trainer.model.params.len();
        if ck.tensors.len() < 2 * n {
            return Err(Error::Corrupt("checkpoint lacks training state".into()));
        }
        trainer.best.load_named(&ck.tensors[..n])?;
        let current: Vec<(String, Tensor)> = ck.tensors[n..2 * n]
            .iter()
            .map(|(name, t)| (name.trim_start_matches("current/").to_string(), t.clone()))
            .collect();
        trainer.model.params.load_named(&current)?;
        let meta = &ck.meta;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Corrupt(format!("checkpoint meta lacks {k}")));
        let parse = |e: serde_json::Error| Error::Corrupt(format!("checkpoint meta: {e}"));
        trainer.epoch = serde_json::from_value(field("epoch")?).map_err(parse)?;
        trainer.stopping = serde_json::from_value(field("stopping")?).map_err(parse)?;
        trainer.stopped = serde_json::from_value(field("stopped")?).map_err(parse)?;
        trainer.log = serde_json::from_value(field("log")?).map_err(parse)?;
        if let OptState::Adam(a) = &mut trainer.opt {
            let step: u64 = serde_json::from_value(field("adam_step")?).map_err(parse)?;
            let rest = &ck.tensors[2 * n..];
            if step > 0 {
                if rest.len() != 2 * n {
                    return Err(Error::Corrupt("optimizer state incomplete".into()));
                }
                let m = rest.iter().step_by(2).map(|(_, t)| t.data().to_vec()).collect();
                let v = rest.iter().skip(1).step_by(2).map(|(_, t)| t.data().to_vec()).collect();
                a.set_state(step, m, v);
            }
        }
        Ok(trainer)
    }
}

/// Train from scratch and return the trainer (best parameters in `best`).
pub fn train(train: &[PriceSeries], val: &[PriceSeries], config: NhitsConfig) -> Result<Trainer> {
    let train_set = WindowSet::new(train, &config)?;
    let val_set = WindowSet::new(val, &config)?;
    let mut trainer = Trainer::new(config)?;
    trainer.fit(&train_set, &val_set)?;
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_identity_and_constant() {
        let m = interp_matrix(5, 5);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(m.data()[i * 5 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
        // columns sum to one: constant coefficients stay constant
        let m = interp_matrix(5, 20);
        for j in 0..20 {
            let s: f64 = (0..5).map(|i| m.data()[i * 20 + j]).sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn overlap_counts_single_and_double() {
        assert_eq!(overlap_counts(120, 100, 20), vec![1; 20]);
        let c = overlap_counts(121, 100, 20);
        assert_eq!(c[0], 1);
        assert!(c[1..20].iter().all(|&v| v == 2));
        assert_eq!(c[20], 1);
    }

    #[test]
    fn pinball_weights() {
        let out = ForecastOutput { quantile_paths: vec![vec![0.0]], median_path: vec![0.0] };
        assert!((quantile_loss(&out, &[1.0], &[0.99]).unwrap() - 0.99).abs() < 1e-15);
        assert!((quantile_loss(&out, &[-1.0], &[0.99]).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn early_stopping_counts_consecutive_non_improvements() {
        let mut es = EarlyStopping::new(3);
        assert_eq!(es.update(1.0), (true, false));
        assert_eq!(es.update(1.1), (false, false));
        assert_eq!(es.update(0.9), (true, false));
        assert_eq!(es.update(1.0), (false, false));
        assert_eq!(es.update(1.0), (false, false));
        assert_eq!(es.update(2.0), (false, true));
    }

    #[test]
    fn config_rejects_bad_ratio() {
        let cfg = NhitsConfig { downsample_ratios: vec![3, 2, 1], ..NhitsConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = NhitsConfig { quantiles: vec![0.5, 0.1], ..NhitsConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
