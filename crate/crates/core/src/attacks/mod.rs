//! White-box attacks on the forecaster's input price series.
//!
//! Every attack works on the rolling median forecast of the first
//! [`AttackConfig::window`] days. Sign-gradient methods move `x_adv` by a
//! fixed step per iteration and clamp it to the ε-ball around the original
//! prices; the C&W family optimizes an unconstrained perturbation instead.

pub mod slope;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::dataio::{AttackReportRow, PriceSeries};
use crate::error::{Error, Result};
use crate::forecaster::Nhits;
use crate::metrics::error_metrics;

pub use slope::{general_slope, ls_slope, slope_loss, SlopeKind, SlopeMeasure};

pub const ATTACK_WINDOW: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fgsm")]
    Fgsm,
    #[serde(rename = "bim")]
    Bim,
    #[serde(rename = "mifgsm")]
    MiFgsm,
    #[serde(rename = "sim")]
    Sim,
    #[serde(rename = "tim")]
    Tim,
    #[serde(rename = "cw")]
    Cw,
    #[serde(rename = "gsa")]
    Gsa,
    #[serde(rename = "lssa")]
    Lssa,
    #[serde(rename = "cw_gsa")]
    CwGsa,
    #[serde(rename = "cw_lssa")]
    CwLssa,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Fgsm,
        Method::Bim,
        Method::MiFgsm,
        Method::Sim,
        Method::Tim,
        Method::Cw,
        Method::Gsa,
        Method::Lssa,
        Method::CwGsa,
        Method::CwLssa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fgsm => "fgsm",
            Method::Bim => "bim",
            Method::MiFgsm => "mifgsm",
            Method::Sim => "sim",
            Method::Tim => "tim",
            Method::Cw => "cw",
            Method::Gsa => "gsa",
            Method::Lssa => "lssa",
            Method::CwGsa => "cw_gsa",
            Method::CwLssa => "cw_lssa",
        }
    }

    /// Methods that keep `x_adv` inside the ε-ball.
    pub fn is_clamped(self) -> bool {
        !matches!(self, Method::Cw | Method::CwGsa | Method::CwLssa)
    }

    /// The slope measure recorded in the loss trace.
    pub fn slope_kind(self) -> SlopeKind {
        match self {
            Method::Lssa | Method::CwLssa => SlopeKind::LeastSquares,
            _ => SlopeKind::General,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::Contract(format!("unknown attack method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub method: Method,
    /// Budget as a percentage of the median price.
    pub eps_pct: f64,
    pub iter: usize,
    /// Target direction: +1 up, -1 down, 0 flat.
    pub target: i8,
    pub c: f64,
    pub d: f64,
    pub mu: f64,
    /// TIM / C&W target margin; defaults to ε.
    pub gamma: Option<f64>,
    pub lambda_cw: f64,
    pub cw_iters: usize,
    /// C&W step as a fraction of the median price.
    pub cw_step_frac: f64,
    /// Step size is `step_mult · ε / iter`.
    pub step_mult: f64,
    /// Days from the start of the series that are attacked.
    pub window: usize,
    /// Recorded with results; the attacks themselves draw no randomness.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: Method::Gsa,
            eps_pct: 2.0,
            iter: 30,
            target: 1,
            c: 5.0,
            d: 2.0,
            mu: 0.35,
            gamma: None,
            lambda_cw: 10.0,
            cw_iters: 200,
            cw_step_frac: 0.01,
            step_mult: 1.5,
            window: ATTACK_WINDOW,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn new(method: Method, eps_pct: f64) -> Self {
        Self { method, eps_pct, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(m));
        if !(self.eps_pct >= 0.0 && self.eps_pct.is_finite()) {
            return fail(format!("eps_pct must be finite and >= 0, got {}", self.eps_pct));
        }
        if self.iter == 0 || self.cw_iters == 0 {
            return fail("iteration counts must be >= 1".into());
        }
        if !(-1..=1).contains(&self.target) {
            return fail(format!("target direction must be -1, 0 or 1, got {}", self.target));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return fail(format!("mu must lie in [0, 1), got {}", self.mu));
        }
        if self.gamma.is_some_and(|g| !g.is_finite()) || !self.lambda_cw.is_finite() || !self.step_mult.is_finite() {
            return fail("gamma, lambda_cw and step_mult must be finite".into());
        }
        Ok(())
    }
}

/// `median(adjprc) · eps_pct / 100`.
pub fn eps_abs(series: &PriceSeries, eps_pct: f64) -> f64 {
    series.median_price() * eps_pct / 100.0
}

/// Attack step `1.5 · ε / iter`.
pub fn step_size(eps: f64, iter: usize) -> f64 {
    1.5 * eps / iter as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub gen_slope: f64,
    pub ls_slope: f64,
    pub mean_pred: f64,
}

impl AttackMetrics {
    /// Metrics of a rolling median path against the original prices it covers.
    pub fn of(pred: &[f64], truth: &[f64]) -> Result<Self> {
        let e = error_metrics(pred, truth)?;
        Ok(Self {
            mae: e.mae,
            rmse: e.rmse,
            mape: e.mape,
            gen_slope: general_slope(pred)?,
            ls_slope: ls_slope(pred)?,
            mean_pred: pred.iter().sum::<f64>() / pred.len() as f64,
        })
    }

    pub fn slope(&self, kind: SlopeKind) -> f64 {
        match kind {
            SlopeKind::General => self.gen_slope,
            SlopeKind::LeastSquares => self.ls_slope,
        }
    }

    pub fn report_row(&self, ticker: &str, method: &str, eps_pct: f64) -> AttackReportRow {
        AttackReportRow {
            ticker: ticker.to_string(),
            method: method.to_string(),
            eps_pct,
            mae: self.mae,
            rmse: self.rmse,
            mape: self.mape,
            gen_slope: self.gen_slope,
            ls_slope: self.ls_slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub method: Method,
    /// The attacked window of the original series.
    pub original: PriceSeries,
    pub x_adv: PriceSeries,
    pub eps_abs: f64,
    pub step: f64,
    /// One row per iteration plus a final row for the returned `x_adv`.
    pub trace: Vec<TraceRow>,
    pub normal_pred: Vec<f64>,
    pub adv_pred: Vec<f64>,
    pub before: AttackMetrics,
    pub after: AttackMetrics,
    /// `‖x_adv − adjprc‖₂`, reported by the C&W family.
    pub eta_norm: Option<f64>,
}

impl AttackResult {
    pub fn max_abs_perturbation(&self) -> f64 {
        self.x_adv.adjprc.iter().zip(&self.original.adjprc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

enum Objective {
    /// Mean absolute error to a fixed target over the predicted days.
    L1(Vec<f64>),
    Slope { kind: SlopeKind, t: i8, c: f64, d: f64 },
}

struct Eval {
    loss: f64,
    slope: f64,
    grad: Vec<f64>,
    pred: Vec<f64>,
}

struct Problem<'a> {
    model: &'a Nhits,
    dates: &'a [NaiveDate],
    objective: Objective,
    trace_kind: SlopeKind,
    loss_scale: f64,
}

impl Problem<'_> {
    /// Loss and gradient with respect to `delta` at prices `base + delta`.
    /// With `norm_weight = Some(λ)` the loss is `‖delta‖₂ + λ·f`.
    fn eval(&self, base: &[f64], delta: &[f64], norm_weight: Option<f64>) -> Result<Eval> {
        let g = Graph::new();
        let vars = self.model.params.bind_frozen(&g);
        let d = g.param(Tensor::vector(delta.to_vec()));
        let x = g.constant(Tensor::vector(base.to_vec())).add(d)?;
        let pred = self.model.rolling_median(&vars, x, self.dates)?;
        let f = match &self.objective {
            Objective::L1(target) => pred.sub(g.constant(Tensor::vector(target.clone())))?.abs().mean(),
            Objective::Slope { kind, t, c, d } => slope::slope_loss_var(slope::slope_var(*kind, pred)?, *t, *c, *d),
        };
        let loss = match norm_weight {
            Some(lambda) => d.mul(d)?.sum().sqrt()?.add(f.scale(lambda))?,
            None => f.scale(self.loss_scale),
        };
        g.backward(loss)?;
        let pred = pred.data();
        Ok(Eval {
            loss: loss.item(),
            slope: SlopeMeasure::of(self.trace_kind, &pred)?.m,
            grad: d.grad().map(Tensor::into_data).unwrap_or_else(|| vec![0.0; delta.len()]),
            pred,
        })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Cosine similarity between two series.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b)
}

fn check_finite(method: Method, it: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("{method} loss became {loss} at iteration {it}")));
    }
    Ok(())
}

/// Run the attack named by `config.method` on the first `config.window` days
/// of `series`.
pub fn run_attack(model: &Nhits, series: &PriceSeries, config: &AttackConfig) -> Result<AttackResult> {
    run_scaled(model, series, config, 1.0)
}

/// Same as [`run_attack`], for the slope methods only.
pub fn run_slope_attack(model: &Nhits, series: &PriceSeries, config: &AttackConfig) -> Result<AttackResult> {
    if !matches!(config.method, Method::Gsa | Method::Lssa) {
        return Err(Error::Contract(format!("{} is not a slope attack", config.method)));
    }
    run_attack(model, series, config)
}

pub fn fgsm(model: &Nhits, series: &PriceSeries, config: &AttackConfig) -> Result<AttackResult> {
    run_attack(model, series, &AttackConfig { method: Method::Fgsm, ..config.clone() })
}

pub fn bim(model: &Nhits, series: &PriceSeries, config: &AttackConfig) -> Result<AttackResult> {
    run_attack(model, series, &AttackConfig { method: Method::Bim, ..config.clone() })
}

pub fn mifgsm(model: &Nhits, series: &PriceSeries, config: &AttackConfig) -> Result<AttackResult> {
    run_attack(model, series, &AttackConfig { method: Method::MiFgsm, ..config.clone() })
}

pub fn sim(model: &Nhits, series: &PriceSeries, config: &AttackConfig) -> Result<AttackResult> {
    run_attack(model, series, &AttackConfig { method: Method::Sim, ..config.clone() })
}

pub fn tim(model: &Nhits, series: &PriceSeries, config: &AttackConfig) -> Result<AttackResult> {
    run_attack(model, series, &AttackConfig { method: Method::Tim, ..config.clone() })
}

/// C&W with the objective chosen by `config.method` (`cw`, `cw_gsa` or
/// `cw_lssa`).
pub fn cw(model: &Nhits, series: &PriceSeries, config: &AttackConfig) -> Result<AttackResult> {
    if config.method.is_clamped() {
        return Err(Error::Contract(format!("{} is not a C&W method", config.method)));
    }
    run_attack(model, series, config)
}

/// Attack several series, spreading them over the available cores.
pub fn attack_many(model: &Nhits, series: &[PriceSeries], config: &AttackConfig) -> Vec<Result<AttackResult>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(series.len().max(1));
    if workers <= 1 {
        return series.iter().map(|s| run_attack(model, s, config)).collect();
    }
    let chunk = series.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = series
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|s| run_attack(model, s, config)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("attack worker panicked")).collect()
    })
}

fn run_scaled(model: &Nhits, series: &PriceSeries, config: &AttackConfig, loss_scale: f64) -> Result<AttackResult> {
    config.validate()?;
    let cfg = &model.config;
    let (l, h) = (cfg.encoder_length, cfg.horizon);
    let original = series.head(config.window);
    let n = original.len();
    if n < l + h {
        return Err(Error::Contract(format!(
            "{}: attack window has {n} days, the forecaster needs at least {}",
            original.ticker,
            l + h
        )));
    }
    let adj = original.adjprc.clone();
    let median = original.median_price();
    let eps = median * config.eps_pct / 100.0;
    let gamma = config.gamma.unwrap_or(eps);
    let method = config.method;
    let t = config.target;
    let shifted = |offset: f64| adj[l..].iter().map(|p| p + offset).collect::<Vec<_>>();
    let objective = match method {
        Method::Fgsm | Method::Bim | Method::MiFgsm | Method::Sim => Objective::L1(shifted(0.0)),
        Method::Tim => Objective::L1(shifted(t as f64 * gamma)),
        Method::Cw => Objective::L1(shifted(-gamma)),
        Method::Gsa | Method::CwGsa => Objective::Slope { kind: SlopeKind::General, t, c: config.c, d: config.d },
        Method::Lssa | Method::CwLssa => {
            Objective::Slope { kind: SlopeKind::LeastSquares, t, c: config.c, d: config.d }
        }
    };
    let problem = Problem { model, dates: &original.dates, objective, trace_kind: method.slope_kind(), loss_scale };
    let truth = &adj[l..];
    let mut trace = Vec::new();

    let (x_adv, step, first, last, eta_norm) = if method.is_clamped() {
        let ascent = matches!(method, Method::Fgsm | Method::Bim | Method::MiFgsm | Method::Sim);
        let (iters, step) = match method {
            Method::Fgsm => (1, eps),
            _ => (config.iter, config.step_mult * eps / config.iter as f64),
        };
        let dir = if ascent { 1.0 } else { -1.0 };
        let zeros = vec![0.0; n];
        let mut x = adj.clone();
        let mut acc = vec![0.0; n];
        let mut first = None;
        for it in 0..iters {
            let ev = problem.eval(&x, &zeros, None)?;
            check_finite(method, it, ev.loss)?;
            trace.push(TraceRow { iter: it, loss: ev.loss, slope: ev.slope });
            let grad = if method == Method::MiFgsm {
                let l1: f64 = ev.grad.iter().map(|v| v.abs()).sum();
                for (a, g) in acc.iter_mut().zip(&ev.grad) {
                    *a = config.mu * *a + if l1 > 0.0 { g / l1 } else { 0.0 };
                }
                &acc
            } else {
                &ev.grad
            };
            for i in 0..n {
                x[i] = (x[i] + dir * step * sign(grad[i])).clamp(adj[i] - eps, adj[i] + eps);
            }
            if method == Method::Sim {
                sim_guards(&adj, &mut x, eps);
            }
            first.get_or_insert(ev.pred);
        }
        let last = problem.eval(&x, &zeros, None)?;
        check_finite(method, iters, last.loss)?;
        (x, step, first.expect("at least one iteration"), last, None)
    } else {
        let step = config.cw_step_frac * median;
        let mut eta = vec![0.0; n];
        let mut first = None;
        for it in 0..config.cw_iters {
            let ev = problem.eval(&adj, &eta, Some(config.lambda_cw))?;
            check_finite(method, it, ev.loss)?;
            trace.push(TraceRow { iter: it, loss: ev.loss, slope: ev.slope });
            for (e, g) in eta.iter_mut().zip(&ev.grad) {
                *e -= step * g;
            }
            first.get_or_insert(ev.pred);
        }
        let last = problem.eval(&adj, &eta, Some(config.lambda_cw))?;
        check_finite(method, config.cw_iters, last.loss)?;
        let norm = eta.iter().map(|e| e * e).sum::<f64>().sqrt();
        let x: Vec<f64> = adj.iter().zip(&eta).map(|(a, e)| a + e).collect();
        (x, step, first.expect("at least one iteration"), last, Some(norm))
    };
    trace.push(TraceRow { iter: trace.len(), loss: last.loss, slope: last.slope });
    let before = AttackMetrics::of(&first, truth)?;
    let after = AttackMetrics::of(&last.pred, truth)?;
    let x_adv = PriceSeries::new(original.ticker.clone(), original.dates.clone(), x_adv)?;
    Ok(AttackResult {
        method,
        original,
        x_adv,
        eps_abs: eps,
        step,
        trace,
        normal_pred: first,
        adv_pred: last.pred,
        before,
        after,
        eta_norm,
    })
}

/// Replace `x` by `adjprc ± ε` when it is less cosine-similar to `adjprc` than
/// that uniform shift is. The two guards run in sequence.
fn sim_guards(adj: &[f64], x: &mut Vec<f64>, eps: f64) {
    for offset in [eps, -eps] {
        let shifted: Vec<f64> = adj.iter().map(|a| a + offset).collect();
        if cosine(adj, x) < cosine(adj, &shifted) {
            *x = shifted;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth_gbm;
    use crate::forecaster::NhitsConfig;

    fn small_model() -> Nhits {
        let cfg = NhitsConfig { encoder_length: 32, horizon: 12, hidden_size: 16, seed: 3, ..NhitsConfig::default() };
        Nhits::new(cfg).unwrap()
    }

    fn series() -> PriceSeries {
        synth_gbm(1, 160, 50.0, 0.0005, 0.01, 11).unwrap().remove(0)
    }

    #[test]
    fn eps_and_step_arithmetic() {
        let s = PriceSeries::new("A", crate::dataio::business_days(NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(), 4), vec![
            90.0, 110.0, 100.0, 120.0,
        ])
        .unwrap();
        assert_eq!(eps_abs(&s, 2.0), 2.1);
        assert!((step_size(2.0, 30) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("pgd".parse::<Method>().is_err());
    }

    #[test]
    fn zero_budget_is_identity() {
        let (model, s) = (small_model(), series());
        for m in [Method::Fgsm, Method::Bim, Method::Sim, Method::Gsa, Method::Lssa, Method::Tim] {
            let cfg = AttackConfig { iter: 3, ..AttackConfig::new(m, 0.0) };
            let r = run_attack(&model, &s, &cfg).unwrap();
            assert_eq!(r.x_adv.adjprc, s.adjprc, "{m}");
            assert_eq!(r.before, r.after, "{m}");
        }
    }

    #[test]
    fn fgsm_moves_by_eps_where_gradient_is_nonzero() {
        let (model, s) = (small_model(), series());
        let r = fgsm(&model, &s, &AttackConfig::new(Method::Fgsm, 2.0)).unwrap();
        let max = r.max_abs_perturbation();
        assert!((max - r.eps_abs).abs() < 1e-9);
        for (a, b) in r.x_adv.adjprc.iter().zip(&s.adjprc) {
            let d = (a - b).abs();
            assert!(d == 0.0 || (d - r.eps_abs).abs() < 1e-9);
        }
    }

    #[test]
    fn bim_with_one_full_step_is_fgsm() {
        let (model, s) = (small_model(), series());
        let f = fgsm(&model, &s, &AttackConfig::new(Method::Fgsm, 2.0)).unwrap();
        let cfg = AttackConfig { iter: 1, step_mult: 1.0, ..AttackConfig::new(Method::Bim, 2.0) };
        let b = bim(&model, &s, &cfg).unwrap();
        assert_eq!(f.x_adv.adjprc, b.x_adv.adjprc);
    }

    #[test]
    fn zero_momentum_is_bim() {
        let (model, s) = (small_model(), series());
        let cfg = AttackConfig { iter: 4, mu: 0.0, ..AttackConfig::new(Method::Bim, 2.0) };
        let b = bim(&model, &s, &cfg).unwrap();
        let m = mifgsm(&model, &s, &cfg).unwrap();
        assert_eq!(b.x_adv.adjprc, m.x_adv.adjprc);
    }

    #[test]
    fn mifgsm_ignores_loss_scale() {
        let (model, s) = (small_model(), series());
        let cfg = AttackConfig { iter: 4, ..AttackConfig::new(Method::MiFgsm, 2.0) };
        let a = run_scaled(&model, &s, &cfg, 1.0).unwrap();
        let b = run_scaled(&model, &s, &cfg, 10.0).unwrap();
        assert_eq!(a.x_adv.adjprc, b.x_adv.adjprc);
    }

    #[test]
    fn sim_guards_leave_original_alone() {
        let adj = vec![3.0, 4.0, 5.0, 4.5];
        let mut x = adj.clone();
        sim_guards(&adj, &mut x, 0.2);
        assert_eq!(x, adj);
        assert!((cosine(&adj, &adj.iter().map(|v| v * 7.0).collect::<Vec<_>>()) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cw_without_pressure_stays_at_zero() {
        let (model, s) = (small_model(), series());
        let cfg = AttackConfig { lambda_cw: 0.0, cw_iters: 5, ..AttackConfig::new(Method::CwGsa, 2.0) };
        let r = cw(&model, &s, &cfg).unwrap();
        assert_eq!(r.eta_norm, Some(0.0));
        assert_eq!(r.x_adv.adjprc, s.adjprc);
    }

    #[test]
    fn trace_has_final_row() {
        let (model, s) = (small_model(), series());
        let cfg = AttackConfig { iter: 3, ..AttackConfig::new(Method::Lssa, 1.0) };
        let r = run_attack(&model, &s, &cfg).unwrap();
        assert_eq!(r.trace.len(), 4);
        assert_eq!(r.trace[3].slope, r.after.ls_slope);
    }

    #[test]
    fn short_window_is_rejected() {
        let model = small_model();
        let s = series().head(35);
        assert!(matches!(run_attack(&model, &s, &AttackConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = [
            AttackConfig { eps_pct: -1.0, ..AttackConfig::default() },
            AttackConfig { iter: 0, ..AttackConfig::default() },
            AttackConfig { target: 2, ..AttackConfig::default() },
            AttackConfig { mu: 1.0, ..AttackConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }
}
