//! Conditional WGAN-GP over 99-day log-return intervals whose generator is
//! also trained to raise the least-squares slope of a frozen forecaster's
//! prediction on the generated prices.

use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attacks::slope::{ls_weights, slope_loss_var};
use crate::autodiff::{Graph, Tensor, Var};
use crate::dataio::{Checkpoint, PriceSeries};
use crate::error::{Error, Result};
use crate::features::day_of_week;
use crate::forecaster::Nhits;
use crate::metrics::{mmd, moments, MomentReport};
use crate::nn::{Adam, CausalConv, Linear, Optimizer, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub interval_length: usize,
    pub batch_size: usize,
    pub samples_per_epoch: usize,
    pub critic_iters: usize,
    pub lambda_gp: f64,
    pub gp_apply_prob: f64,
    pub lr_g: f64,
    pub lr_c: f64,
    pub betas: (f64, f64),
    /// Weight of the forecaster slope loss, one entry per training block.
    pub alpha_schedule: Vec<f64>,
    pub epochs_per_block: Vec<usize>,
    pub c: f64,
    pub d: f64,
    /// Slope direction pushed by the generator.
    pub target: i8,
    pub gen_channels: Vec<usize>,
    pub gen_kernels: Vec<usize>,
    pub gen_dilations: Vec<usize>,
    pub leaky_slope: f64,
    pub critic_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            interval_length: 99,
            batch_size: 32,
            samples_per_epoch: 512,
            critic_iters: 5,
            lambda_gp: 1.0,
            gp_apply_prob: 0.6,
            lr_g: 1e-4,
            lr_c: 1e-4,
            betas: (0.0, 0.9),
            alpha_schedule: vec![0.25, 0.25, 0.3, 0.35, 0.35],
            epochs_per_block: vec![50; 5],
            c: 5.0,
            d: 2.0,
            target: 1,
            gen_channels: vec![64, 128, 64, 32],
            gen_kernels: vec![3, 5, 5, 3],
            gen_dilations: vec![1, 2, 4, 8],
            leaky_slope: 0.2,
            critic_hidden: vec![128, 64],
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(m));
        if self.alpha_schedule.len() != self.epochs_per_block.len() {
            return fail(format!(
                "alpha schedule has {} blocks but epochs_per_block has {}",
                self.alpha_schedule.len(),
                self.epochs_per_block.len()
            ));
        }
        if self.alpha_schedule.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return fail(format!("alpha values must be finite and non-negative, got {:?}", self.alpha_schedule));
        }
        if !(0.0..=1.0).contains(&self.gp_apply_prob) {
            return fail(format!("gp_apply_prob must lie in [0, 1], got {}", self.gp_apply_prob));
        }
        let n = self.gen_channels.len();
        if n == 0 || self.gen_kernels.len() != n || self.gen_dilations.len() != n {
            return fail("generator channel, kernel and dilation lists must have equal non-zero length".into());
        }
        if self.interval_length == 0 || self.batch_size == 0 || self.critic_iters == 0 || self.samples_per_epoch == 0 {
            return fail("interval length, batch size, critic iterations and samples per epoch must be positive".into());
        }
        if !(-1..=1).contains(&self.target) {
            return fail(format!("target must be -1, 0 or 1, got {}", self.target));
        }
        Ok(())
    }
}

/// Min-max scaling with bounds taken from one training series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: f64,
    pub max: f64,
}

impl MinMaxScaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(Error::domain("min_max_scaler", "values have no spread"));
        }
        Ok(Self { min, max })
    }

    pub fn scale(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn unscale(&self, s: f64) -> f64 {
        s * (self.max - self.min) + self.min
    }

    pub fn scale_all(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.scale(v)).collect()
    }

    pub fn unscale_all(&self, s: &[f64]) -> Vec<f64> {
        s.iter().map(|&v| self.unscale(v)).collect()
    }
}

pub fn log_returns(prices: &[f64]) -> Vec<f64> {
    prices.windows(2).map(|w| (w[1] / w[0]).ln()).collect()
}

/// `p_0 = p0`, `p_t = p0 · exp(r_1 + … + r_t)`.
pub fn to_prices(log_returns: &[f64], p0: f64) -> Result<Vec<f64>> {
    if !(p0 > 0.0) {
        return Err(Error::domain("to_prices", format!("p0 = {p0} must be positive")));
    }
    let mut out = Vec::with_capacity(log_returns.len() + 1);
    out.push(p0);
    let mut cum = 0.0;
    for (i, r) in log_returns.iter().enumerate() {
        cum += r;
        let p = p0 * cum.exp();
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::domain("to_prices", format!("price overflows at day {}", i + 1)));
        }
        out.push(p);
    }
    Ok(out)
}

/// One real interval of scaled log returns that also serves as the
/// generator's condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledInterval {
    pub log_returns: Vec<f64>,
    pub condition: Vec<f64>,
    pub scale_bounds: MinMaxScaler,
    /// First price of the interval.
    pub p0: f64,
    /// Dates of the `len + 1` prices the interval spans.
    pub dates: Vec<NaiveDate>,
}

/// Seeded uniform draws of contiguous `interval_length`-return windows.
pub fn sample_intervals(
    series: &PriceSeries,
    scaler: &MinMaxScaler,
    interval_length: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<ScaledInterval>> {
    let span = interval_length + 1;
    if series.len() < span {
        return Err(Error::Contract(format!(
            "{}: {} prices cannot hold a {interval_length}-return interval",
            series.ticker,
            series.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last_start = series.len() - span;
    Ok((0..n)
        .map(|_| {
            let s = rng.random_range(0..=last_start);
            let scaled = scaler.scale_all(&log_returns(&series.adjprc[s..s + span]));
            ScaledInterval {
                log_returns: scaled.clone(),
                condition: scaled,
                scale_bounds: *scaler,
                p0: series.adjprc[s],
                dates: series.dates[s..s + span].to_vec(),
            }
        })
        .collect())
}

/// Temporal convolution generator: `[B, 2, L]` (noise ‖ condition) to `[B, L]`
/// scaled log returns in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    layers: Vec<CausalConv>,
    out: CausalConv,
    leaky: f64,
}

impl Generator {
    pub fn new(ps: &mut ParamSet, cfg: &GanConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut c_in = 2;
        let mut layers = Vec::new();
        for (i, ((&c, &k), &d)) in cfg.gen_channels.iter().zip(&cfg.gen_kernels).zip(&cfg.gen_dilations).enumerate() {
            layers.push(CausalConv::new(ps, &format!("gen.tcn{i}"), c_in, c, k, d, rng));
            c_in = c;
        }
        let out = CausalConv::new(ps, "gen.out", c_in, 1, 1, 1, rng);
        Self { layers, out, leaky: cfg.leaky_slope }
    }

    pub fn forward<'g>(&self, vars: &[Var<'g>], noise: Var<'g>, condition: Var<'g>) -> Result<Var<'g>> {
        let shape = noise.shape();
        let (b, l) = (shape[0], shape[1]);
        let g = noise.graph();
        let mut h = g.concat(&[noise.reshape(&[b, 1, l])?, condition.reshape(&[b, 1, l])?], 1)?;
        for layer in &self.layers {
            h = layer.forward(vars, h)?.leaky_relu(self.leaky);
        }
        self.out.forward(vars, h)?.sigmoid().reshape(&[b, l])
    }
}

/// Tanh MLP over the flattened (interval ‖ condition) pair, one score per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    layers: Vec<Linear>,
}

impl Critic {
    pub fn new(ps: &mut ParamSet, cfg: &GanConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut width = 2 * cfg.interval_length;
        let mut layers = Vec::new();
        for (i, &h) in cfg.critic_hidden.iter().enumerate() {
            layers.push(Linear::new(ps, &format!("critic.fc{i}"), width, h, rng));
            width = h;
        }
        layers.push(Linear::new(ps, "critic.out", width, 1, rng));
        Self { layers }
    }

    /// `x: [B, 2L]` to `[B]`.
    pub fn forward<'g>(&self, vars: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        let b = x.shape()[0];
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(vars, h)?;
            if i + 1 < self.layers.len() {
                h = h.tanh();
            }
        }
        h.reshape(&[b])
    }
}

/// `mean((‖∇D(x̂)‖₂ − 1)²)` over rows of `x_hat`, kept differentiable with
/// respect to the critic parameters.
pub fn gradient_penalty<'g, F>(critic: F, x_hat: Var<'g>) -> Result<Var<'g>>
where
    F: Fn(Var<'g>) -> Result<Var<'g>>,
{
    let g = x_hat.graph();
    let scores = critic(x_hat)?.sum();
    let grad = g.grad(scores, &[x_hat])?.remove(0);
    let norm = grad.mul(grad)?.sum_last()?.shift(1e-12).sqrt()?;
    Ok(norm.shift(-1.0).powf(2.0).mean())
}

/// Per-sample convex combination `u·real + (1−u)·fake`.
pub fn interpolate(real: &Tensor, fake: &Tensor, u: &[f64]) -> Result<Tensor> {
    let shape = real.shape().to_vec();
    if fake.shape() != shape.as_slice() || shape.len() != 2 || u.len() != shape[0] {
        return Err(Error::dim("interpolate", format!("real {shape:?}, fake {:?}, {} weights", fake.shape(), u.len())));
    }
    let w = shape[1];
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(i, (r, f))| u[i / w] * r + (1.0 - u[i / w]) * f)
        .collect();
    Tensor::new(shape, data)
}

/// Prices `[B, L+1]` from scaled log returns `[B, L]` inside the graph.
pub fn to_prices_var<'g>(scaled: Var<'g>, scaler: &MinMaxScaler, p0: &[f64]) -> Result<Var<'g>> {
    let shape = scaled.shape();
    let (b, l) = (shape[0], shape[1]);
    if p0.len() != b {
        return Err(Error::dim("to_prices", format!("{} start prices for {b} rows", p0.len())));
    }
    let g = scaled.graph();
    let returns = scaled.scale(scaler.max - scaler.min).shift(scaler.min);
    let mut upper = vec![0.0; l * l];
    for i in 0..l {
        for t in i..l {
            upper[i * l + t] = 1.0;
        }
    }
    let cum = returns.matmul(g.constant(Tensor::new(vec![l, l], upper)?))?;
    let start = g.constant(Tensor::new(vec![b, 1], p0.to_vec())?);
    let path = cum.exp().mul(g.constant(Tensor::new(vec![b, l], p0.iter().flat_map(|&p| vec![p; l]).collect())?))?;
    g.concat(&[start, path], 1)
}

/// Mean slope loss of the forecaster's median path over generated prices.
fn adversarial_loss<'g>(
    forecaster: &Nhits,
    fvars: &[Var<'g>],
    prices: Var<'g>,
    days: &[Vec<u8>],
    cfg: &GanConfig,
) -> Result<(Var<'g>, Var<'g>)> {
    let l = forecaster.config.encoder_length;
    let b = prices.shape()[0];
    let window = prices.slice(1, prices.shape()[1] - l, l)?;
    let day_refs: Vec<&[u8]> = days.iter().map(|d| &d[d.len() - l..]).collect();
    let (p, exog) = forecaster.batch_inputs(window, &day_refs)?;
    let fc = forecaster.forward_windows(fvars, p, exog)?;
    let med = forecaster.median_path(fc.output)?;
    let h = med.shape()[1];
    let w = prices.graph().constant(Tensor::vector(ls_weights(h)));
    let slopes = med.mul(w)?.sum_last()?.reshape(&[b])?;
    Ok((slope_loss_var(slopes, cfg.target, cfg.c, cfg.d).mean(), slopes))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanEpochLog {
    pub block: usize,
    pub epoch: usize,
    pub alpha: f64,
    pub critic_loss: f64,
    pub gradient_penalty: f64,
    pub wasserstein: f64,
    pub generator_loss: f64,
    pub adversarial_loss: f64,
    pub mean_ls_slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanBundle {
    pub config: GanConfig,
    pub scaler: MinMaxScaler,
    pub generator_params: ParamSet,
    pub critic_params: ParamSet,
    generator: Generator,
    critic: Critic,
}

impl GanBundle {
    pub fn new(config: GanConfig, scaler: MinMaxScaler) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut generator_params = ParamSet::new();
        let generator = Generator::new(&mut generator_params, &config, &mut rng);
        let mut critic_params = ParamSet::new();
        let critic = Critic::new(&mut critic_params, &config, &mut rng);
        Ok(Self { config, scaler, generator_params, critic_params, generator, critic })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = self.generator_params.named();
        tensors.extend(self.critic_params.named());
        Checkpoint {
            architecture: json!({ "agan": self.config, "scaler": self.scaler }),
            meta: json!({ "generator_tensors": self.generator_params.len() }),
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let get = |k: &str| ck.architecture.get(k).cloned().ok_or_else(|| Error::Corrupt(format!("bundle lacks {k}")));
        let parse = |e: serde_json::Error| Error::Corrupt(format!("bundle descriptor: {e}"));
        let config: GanConfig = serde_json::from_value(get("agan")?).map_err(parse)?;
        let scaler: MinMaxScaler = serde_json::from_value(get("scaler")?).map_err(parse)?;
        let mut bundle = Self::new(config, scaler)?;
        let n = bundle.generator_params.len();
        if ck.tensors.len() != n + bundle.critic_params.len() {
            return Err(Error::Corrupt(format!("bundle holds {} tensors", ck.tensors.len())));
        }
        bundle.generator_params.load_named(&ck.tensors[..n])?;
        bundle.critic_params.load_named(&ck.tensors[n..])?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::dataio::save_checkpoint(&self.to_checkpoint(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&crate::dataio::load_checkpoint(path)?)
    }

    fn noise(&self, rows: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let l = self.config.interval_length;
        Tensor::new(vec![rows, l], (0..rows * l).map(|_| rng.sample(StandardNormal)).collect())
    }

    fn conditions(&self, batch: &[&ScaledInterval]) -> Result<Tensor> {
        let l = self.config.interval_length;
        let mut data = Vec::with_capacity(batch.len() * l);
        for s in batch {
            if s.condition.len() != l {
                return Err(Error::Contract(format!("condition has {} values, expected {l}", s.condition.len())));
            }
            data.extend_from_slice(&s.condition);
        }
        Tensor::new(vec![batch.len(), l], data)
    }

    /// Generate one interval per condition with seeded noise.
    pub fn generate(&self, conditions: &[ScaledInterval], seed: u64) -> Result<Vec<Vec<f64>>> {
        let l = self.config.interval_length;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(conditions.len());
        for chunk in conditions.chunks(self.config.batch_size.max(1)) {
            let refs: Vec<&ScaledInterval> = chunk.iter().collect();
            let cond = self.conditions(&refs)?;
            let g = Graph::new();
            let vars = self.generator_params.bind_frozen(&g);
            let z = g.constant(self.noise(chunk.len(), &mut rng)?);
            let x = self.generator.forward(&vars, z, g.constant(cond))?.data();
            out.extend(x.chunks(l).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Least-squares slopes of the forecaster's median path over the prices
    /// implied by `scaled` returns and each interval's start price.
    pub fn forecast_slopes(&self, forecaster: &Nhits, intervals: &[ScaledInterval], scaled: &[Vec<f64>]) -> Result<Vec<f64>> {
        let l = self.config.interval_length;
        let mut out = Vec::with_capacity(intervals.len());
        for (chunk_i, chunk) in intervals.chunks(64).enumerate() {
            let rows = &scaled[chunk_i * 64..chunk_i * 64 + chunk.len()];
            let g = Graph::new();
            let fvars = forecaster.params.bind_frozen(&g);
            let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
            let x = g.constant(Tensor::new(vec![chunk.len(), l], data)?);
            let p0: Vec<f64> = chunk.iter().map(|s| s.p0).collect();
            let prices = to_prices_var(x, &self.scaler, &p0)?;
            let days = chunk.iter().map(|s| day_of_week(&s.dates)).collect::<Result<Vec<_>>>()?;
            let (_, slopes) = adversarial_loss(forecaster, &fvars, prices, &days, &self.config)?;
            out.extend(slopes.data());
        }
        Ok(out)
    }
}

fn batch_refs<'a>(pool: &'a [ScaledInterval], ids: &[usize]) -> Vec<&'a ScaledInterval> {
    ids.iter().map(|&i| &pool[i]).collect()
}

fn pair(interval: Var<'_>, cond: Tensor) -> Result<Var<'_>> {
    let g = interval.graph();
    g.concat(&[interval, g.constant(cond)], 1)
}

/// Train the conditional GAN on intervals of `series`. The forecaster is
/// only read.
pub fn train_agan(series: &PriceSeries, forecaster: &Nhits, config: GanConfig) -> Result<(GanBundle, Vec<GanEpochLog>)> {
    config.validate()?;
    let l = config.interval_length;
    if l + 1 < forecaster.config.encoder_length {
        return Err(Error::Contract(format!(
            "intervals of {} prices are shorter than the forecaster window {}",
            l + 1,
            forecaster.config.encoder_length
        )));
    }
    let scaler = MinMaxScaler::fit(&log_returns(&series.adjprc))?;
    let mut bundle = GanBundle::new(config, scaler)?;
    let cfg = bundle.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut log = Vec::new();
    for (block, (&alpha, &epochs)) in cfg.alpha_schedule.iter().zip(&cfg.epochs_per_block).enumerate() {
        let mut opt_g = Adam::new(cfg.lr_g, cfg.betas.0, cfg.betas.1, 0.0);
        let mut opt_c = Adam::new(cfg.lr_c, cfg.betas.0, cfg.betas.1, 0.0);
        for epoch in 0..epochs {
            let pool = sample_intervals(series, &scaler, l, cfg.samples_per_epoch, rng.random())?;
            let days: Vec<Vec<u8>> = pool.iter().map(|s| day_of_week(&s.dates)).collect::<Result<_>>()?;
            let mut sums = [0.0; 6];
            let (mut n_critic, mut n_gen, mut n_gp) = (0usize, 0usize, 0usize);
            let ids: Vec<usize> = (0..pool.len()).collect();
            for chunk in ids.chunks(cfg.batch_size) {
                let refs = batch_refs(&pool, chunk);
                let cond = bundle.conditions(&refs)?;
                let b = chunk.len();
                for _ in 0..cfg.critic_iters {
                    let g = Graph::new();
                    let gvars = bundle.generator_params.bind_frozen(&g);
                    let cvars = bundle.critic_params.bind(&g);
                    let z = g.constant(bundle.noise(b, &mut rng)?);
                    let fake = bundle.generator.forward(&gvars, z, g.constant(cond.clone()))?;
                    let real_in = pair(g.constant(cond.clone()), cond.clone())?;
                    let fake_in = pair(fake, cond.clone())?;
                    let d_real = bundle.critic.forward(&cvars, real_in)?.mean();
                    let d_fake = bundle.critic.forward(&cvars, fake_in)?.mean();
                    let mut loss = d_fake.sub(d_real)?;
                    if rng.random_bool(cfg.gp_apply_prob) {
                        let u: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
                        let x_hat = g.param(interpolate(&real_in.to_tensor(), &fake_in.to_tensor(), &u)?);
                        let gp = gradient_penalty(|x| bundle.critic.forward(&cvars, x), x_hat)?;
                        sums[1] += gp.item();
                        n_gp += 1;
                        loss = loss.add(gp.scale(cfg.lambda_gp))?;
                    }
                    let lv = loss.item();
                    if !lv.is_finite() {
                        return Err(Error::Numerical(format!("critic loss {lv} in block {block}, epoch {epoch}")));
                    }
                    sums[0] += lv;
                    sums[2] += d_real.item() - d_fake.item();
                    n_critic += 1;
                    g.backward(loss)?;
                    opt_c.step(&mut bundle.critic_params, &ParamSet::grads(&cvars)?)?;
                }

                let g = Graph::new();
                let gvars = bundle.generator_params.bind(&g);
                let cvars = bundle.critic_params.bind_frozen(&g);
                let fvars = forecaster.params.bind_frozen(&g);
                let z = g.constant(bundle.noise(b, &mut rng)?);
                let fake = bundle.generator.forward(&gvars, z, g.constant(cond.clone()))?;
                let d_fake = bundle.critic.forward(&cvars, pair(fake, cond)?)?.mean();
                let p0: Vec<f64> = refs.iter().map(|s| s.p0).collect();
                let prices = to_prices_var(fake, &scaler, &p0)?;
                let batch_days: Vec<Vec<u8>> = chunk.iter().map(|&i| days[i].clone()).collect();
                let (adv, slopes) = adversarial_loss(forecaster, &fvars, prices, &batch_days, &cfg)
                    .map_err(|e| Error::Numerical(format!("forecaster critic failed in block {block}, epoch {epoch}: {e}")))?;
                let loss = d_fake.neg().add(adv.scale(alpha))?;
                let lv = loss.item();
                if !lv.is_finite() {
                    return Err(Error::Numerical(format!("generator loss {lv} in block {block}, epoch {epoch}")));
                }
                sums[3] += lv;
                sums[4] += adv.item();
                sums[5] += slopes.data().iter().sum::<f64>() / b as f64;
                n_gen += 1;
                g.backward(loss)?;
                opt_g.step(&mut bundle.generator_params, &ParamSet::grads(&gvars)?)?;
            }
            let entry = GanEpochLog {
                block,
                epoch,
                alpha,
                critic_loss: sums[0] / n_critic as f64,
                gradient_penalty: if n_gp > 0 { sums[1] / n_gp as f64 } else { 0.0 },
                wasserstein: sums[2] / n_critic as f64,
                generator_loss: sums[3] / n_gen as f64,
                adversarial_loss: sums[4] / n_gen as f64,
                mean_ls_slope: sums[5] / n_gen as f64,
            };
            log::info!(
                "gan block {block} epoch {epoch}: critic {:.5} gen {:.5} adv {:.5}",
                entry.critic_loss,
                entry.generator_loss,
                entry.adversarial_loss
            );
            log.push(entry);
        }
    }
    Ok((bundle, log))
}

/// Moments of real and synthetic log returns (unscaled, pooled over days)
/// plus MMD between the interval vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanEvaluation {
    pub real: MomentReport,
    pub synthetic: MomentReport,
}

pub fn evaluate_generated(scaler: &MinMaxScaler, real: &[Vec<f64>], synthetic: &[Vec<f64>]) -> Result<GanEvaluation> {
    let unscale = |rows: &[Vec<f64>]| rows.iter().map(|r| scaler.unscale_all(r)).collect::<Vec<_>>();
    let (r, s) = (unscale(real), unscale(synthetic));
    let flat = |rows: &[Vec<f64>]| rows.iter().flatten().copied().collect::<Vec<_>>();
    let real_m = moments(&flat(&r))?;
    let mut syn_m = moments(&flat(&s))?;
    syn_m.mmd = Some(mmd(&r, &s)?);
    Ok(GanEvaluation { real: real_m, synthetic: syn_m })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRow {
    pub interval_id: usize,
    pub day: usize,
    pub scaled_log_return: f64,
}

pub fn generated_rows(samples: &[Vec<f64>]) -> Vec<GeneratedRow> {
    samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.iter().enumerate().map(move |(d, &v)| GeneratedRow { interval_id: i, day: d, scaled_log_return: v })
        })
        .collect()
}
