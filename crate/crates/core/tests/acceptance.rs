//! End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
//! if any criterion fails. Built with `harness = false`.

mod common;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slopestrike::agan::{evaluate_generated, log_returns, sample_intervals, to_prices, train_agan, GanConfig};
use slopestrike::attacks::slope::{general_slope_var, slope_loss_var};
use slopestrike::attacks::{ls_slope, run_attack, AttackConfig, AttackResult, Method};
use slopestrike::autodiff::{Graph, Tensor};
use slopestrike::dataio::{synth_gbm, PriceSeries};
use slopestrike::defense::{build_manifest, train_discriminator, verify_manifest, DiscriminatorConfig};
use slopestrike::forecaster::{overlap_counts, quantile_loss_graph};
use slopestrike::metrics::{confusion, error_metrics, mmd, moments};

use common::{attack_series, desk, gp_fd_error, mean, random_graph_fd_error, toy_model};

const EPS_GRID: [f64; 8] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
const ATTACK_ITER: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Attack results over the 20-series universe, computed once per setting.
struct AttackCache {
    series: Vec<PriceSeries>,
    runs: HashMap<(Method, i8, u64), Vec<AttackResult>>,
}

impl AttackCache {
    fn new() -> Self {
        Self { series: attack_series(20), runs: HashMap::new() }
    }

    fn get(&mut self, method: Method, target: i8, eps_pct: f64) -> &[AttackResult] {
        let series = &self.series;
        self.runs.entry((method, target, eps_pct.to_bits())).or_insert_with(|| {
            let cfg = AttackConfig { method, eps_pct, target, iter: ATTACK_ITER, ..AttackConfig::default() };
            series.iter().map(|s| run_attack(toy_model(), s, &cfg).unwrap()).collect()
        })
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let graphs = (0..100).map(random_graph_fd_error).fold(0.0, f64::max);
    let gp = (0..5).map(gp_fd_error).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        graphs < 1e-4 && gp < 1e-4 && elapsed < Duration::from_secs(60),
        format!("max rel err: 100 graphs {graphs:.2e}, penalty {gp:.2e}; {:.1}s", elapsed.as_secs_f64()),
    )
}

fn criterion_2(cache: &mut AttackCache) -> Outcome {
    let methods = [Method::Fgsm, Method::Bim, Method::MiFgsm, Method::Sim, Method::Tim, Method::Gsa, Method::Lssa];
    let (mut checked, mut violations, mut worst) = (0, 0, f64::NEG_INFINITY);
    for method in methods {
        for eps in [0.5, 2.0, 4.0] {
            for r in cache.get(method, 1, eps) {
                let excess = r.max_abs_perturbation() - r.eps_abs;
                worst = worst.max(excess);
                checked += 1;
                if excess > 1e-9 {
                    violations += 1;
                }
            }
        }
    }
    outcome(violations == 0, format!("{checked} attacks, {violations} violations, max(|δ|-ε) {worst:.3e}"))
}

fn criterion_3(cache: &mut AttackCache) -> Outcome {
    let start = Instant::now();
    let gen = |rs: &[AttackResult], after: bool| mean(&rs.iter().map(|r| if after { r.after.gen_slope } else { r.before.gen_slope }).collect::<Vec<_>>());
    let ls = |rs: &[AttackResult], after: bool| mean(&rs.iter().map(|r| if after { r.after.ls_slope } else { r.before.ls_slope }).collect::<Vec<_>>());
    let gsa_up = cache.get(Method::Gsa, 1, 2.0);
    let (normal_gen, gsa_up_gen) = (gen(gsa_up, false), gen(gsa_up, true));
    let lssa_up = cache.get(Method::Lssa, 1, 2.0);
    let (normal_ls, lssa_up_ls) = (ls(lssa_up, false), ls(lssa_up, true));
    let gsa_down_gen = gen(cache.get(Method::Gsa, -1, 2.0), true);
    let lssa_down_ls = ls(cache.get(Method::Lssa, -1, 2.0), true);
    let elapsed = start.elapsed();

    let (f_gen, f_ls) = (gsa_up_gen / normal_gen, lssa_up_ls / normal_ls);
    let in_band = |f: f64| normal_gen > 0.0 && normal_ls > 0.0 && (1.5..=3.5).contains(&f);
    let pass = in_band(f_gen)
        && in_band(f_ls)
        && gsa_down_gen < normal_gen
        && lssa_down_ls < normal_ls
        && elapsed < Duration::from_secs(15 * 60);
    outcome(
        pass,
        format!(
            "general slope normal {normal_gen:.4e} up {gsa_up_gen:.4e} (x{f_gen:.2}) down {gsa_down_gen:.4e}; \
             LS slope normal {normal_ls:.4e} up {lssa_up_ls:.4e} (x{f_ls:.2}) down {lssa_down_ls:.4e}; {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4(cache: &mut AttackCache) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (method, pick) in [(Method::Gsa, (|r: &AttackResult| r.after.gen_slope) as fn(&AttackResult) -> f64), (Method::Lssa, |r| r.after.ls_slope)] {
        let curves: Vec<Vec<f64>> = EPS_GRID.iter().map(|&e| cache.get(method, 1, e).iter().map(pick).collect()).collect();
        let n = curves[0].len();
        let inversions: Vec<usize> = (0..n).map(|s| (1..EPS_GRID.len()).filter(|&k| curves[k][s] < curves[k - 1][s]).count()).collect();
        let worst = inversions.iter().copied().max().unwrap_or(0);
        let with_one = inversions.iter().filter(|&&k| k == 1).count();
        let means: Vec<String> = curves.iter().map(|c| format!("{:.3e}", mean(c))).collect();
        pass &= worst <= 1;
        parts.push(format!("{method}: max inversions {worst}, series with one {with_one}/{n}, means [{}]", means.join(", ")));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_5() -> Outcome {
    let cfg = AttackConfig::default();
    let g = Graph::new();

    // a free prediction vector
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = g.param(Tensor::vector((0..200).map(|_| rng.random_range(10.0..60.0)).collect()));
    let loss = slope_loss_var(general_slope_var(p).unwrap(), 1, cfg.c, cfg.d);
    g.backward(loss).unwrap();
    let free = p.grad().unwrap().into_data();
    let free_ok = free[1..199].iter().all(|&v| v == 0.0) && free[0] != 0.0 && free[199] != 0.0;

    // the rolling median path recorded from real prices
    let s = &attack_series(1)[0];
    let model = toy_model();
    let g = Graph::new();
    let vars = model.params.bind_frozen(&g);
    let x = g.param(Tensor::vector(s.adjprc.clone()));
    let pred = model.rolling_median(&vars, x, &s.dates).unwrap();
    let loss = slope_loss_var(general_slope_var(pred).unwrap(), 1, cfg.c, cfg.d);
    let dp = g.grad(loss, &[pred]).unwrap()[0].data();
    let n = dp.len();
    let interior_zero = dp[1..n - 1].iter().filter(|&&v| v == 0.0).count();
    g.backward(loss).unwrap();
    let dx_norm = x.grad().unwrap().data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let recorded_ok = interior_zero == n - 2 && dp[0] != 0.0 && dp[n - 1] != 0.0 && dx_norm > 0.0;
    outcome(
        free_ok && recorded_ok,
        format!(
            "free vector interior exact zeros: {free_ok}; recorded path {interior_zero}/{} interior zeros, endpoints ({:.3e}, {:.3e}), |∂/∂x| {dx_norm:.3e}",
            n - 2,
            dp[0],
            dp[n - 1]
        ),
    )
}

fn mmd_double_sum(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let mut d = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(dist(pooled[i], pooled[j]));
        }
    }
    d.sort_by(f64::total_cmp);
    let med = if d.len() % 2 == 1 { d[d.len() / 2] } else { (d[d.len() / 2 - 1] + d[d.len() / 2]) / 2.0 };
    let gamma = 1.0 / (2.0 * med * med);
    let k_mean = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        let mut s = 0.0;
        for xi in x {
            for yj in y {
                s += (-gamma * dist(xi, yj).powi(2)).exp();
            }
        }
        s / (x.len() * y.len()) as f64
    };
    (k_mean(a, a) + k_mean(b, b) - 2.0 * k_mean(a, b)).max(0.0)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut fails = Vec::new();

    // regression slope through the normal equations on x = 0..n
    let mut slope_err: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..250);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..150.0)).collect();
        let nf = n as f64;
        let (sx, sy) = ((0..n).map(|i| i as f64).sum::<f64>(), y.iter().sum::<f64>());
        let sxy: f64 = y.iter().enumerate().map(|(i, v)| i as f64 * v).sum();
        let sxx: f64 = (0..n).map(|i| (i * i) as f64).sum();
        let oracle = (nf * sxy - sx * sy) / (nf * sxx - sx * sx);
        let got = ls_slope(&y).unwrap();
        slope_err = slope_err.max((got - oracle).abs() / oracle.abs().max(1.0));
    }
    if slope_err > 1e-10 {
        fails.push("ls_slope");
    }

    let mut mmd_err: f64 = 0.0;
    for trial in 0..5 {
        let vecs = |rng: &mut ChaCha8Rng, n: usize, shift: f64| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0) + shift).collect()).collect()
        };
        let a = vecs(&mut rng, 25 + trial, 0.0);
        let b = vecs(&mut rng, 30, 0.2 * trial as f64);
        mmd_err = mmd_err.max((mmd(&a, &b).unwrap() - mmd_double_sum(&a, &b)).abs());
    }
    if mmd_err > 1e-10 {
        fails.push("mmd");
    }

    let mut brute_err: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(4..200);
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..100.0)).collect();
        let pred: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-5.0..5.0)).collect();
        let m = error_metrics(&pred, &truth).unwrap();
        let mut mae = 0.0;
        let mut mse = 0.0;
        let mut mape = 0.0;
        for i in 0..n {
            mae += (pred[i] - truth[i]).abs() / n as f64;
            mse += (pred[i] - truth[i]).powi(2) / n as f64;
            mape += ((pred[i] - truth[i]) / truth[i]).abs() / n as f64;
        }
        for (a, b) in [(m.mae, mae), (m.rmse, mse.sqrt()), (m.mape, mape)] {
            brute_err = brute_err.max((a - b).abs() / a.abs().max(1.0));
        }

        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0f64..3.0).powi(3)).collect();
        let r = moments(&x).unwrap();
        let mu = x.iter().sum::<f64>() / n as f64;
        let sigma = (x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
        let skew = x.iter().map(|v| ((v - mu) / sigma).powi(3)).sum::<f64>() / n as f64;
        let kurt = x.iter().map(|v| ((v - mu) / sigma).powi(4)).sum::<f64>() / n as f64;
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (n - 1) as f64 * p;
            let i = h as usize;
            if i + 1 < n { sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i]) } else { sorted[i] }
        };
        for (a, b) in [(r.mu, mu), (r.sigma, sigma), (r.iqr, q(0.75) - q(0.25)), (r.skew, skew), (r.kurtosis, kurt)] {
            brute_err = brute_err.max((a - b).abs() / a.abs().max(1.0));
        }

        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let preds: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let c = confusion(&labels, &preds).unwrap();
        let count = |l: bool, p: bool| labels.iter().zip(&preds).filter(|(a, b)| **a == l && **b == p).count() as f64;
        let (tp, tn, fp, fn_) = (count(true, true), count(false, false), count(false, true), count(true, false));
        let kappa = 2.0 * (tp * tn - fn_ * fp) / ((tp + fp) * (fp + tn) + (tp + fn_) * (fn_ + tn));
        let counts_ok = (c.tp, c.tn, c.fp, c.fn_) == (tp as usize, tn as usize, fp as usize, fn_ as usize);
        if !counts_ok {
            brute_err = f64::INFINITY;
        }
        let mut pairs = vec![(c.accuracy, 100.0 * (tp + tn) / n as f64), (c.kappa, 100.0 * kappa)];
        if tn + fp > 0.0 {
            pairs.push((c.specificity, 100.0 * tn / (tn + fp)));
        }
        for (a, b) in pairs {
            brute_err = brute_err.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    if brute_err > 1e-12 {
        fails.push("error/moment/confusion");
    }
    outcome(
        fails.is_empty(),
        format!("ls_slope {slope_err:.1e}, mmd {mmd_err:.1e}, brute-force metrics {brute_err:.1e}{}", if fails.is_empty() { String::new() } else { format!("; failed: {}", fails.join(", ")) }),
    )
}

fn criterion_7() -> Outcome {
    let model = toy_model();
    let mapes: Vec<f64> = desk()[27..]
        .iter()
        .map(|s| {
            let r = model.rolling_forecast(s).unwrap();
            error_metrics(&r.values, &s.adjprc[r.first_day..]).unwrap().mape
        })
        .collect();
    let worst_mape = mapes.iter().copied().fold(0.0, f64::max);

    // pinball at the median against half the L1 error, bit for bit
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut exact = true;
    for _ in 0..50 {
        let (w, h) = (rng.random_range(1..6), rng.random_range(1..25));
        let pred: Vec<f64> = (0..w * h).map(|_| rng.random_range(-50.0..50.0)).collect();
        let truth: Vec<f64> = (0..w * h).map(|_| rng.random_range(-50.0..50.0)).collect();
        let g = Graph::new();
        let l = quantile_loss_graph(
            g.constant(Tensor::new(vec![w, h], pred.clone()).unwrap()),
            g.constant(Tensor::new(vec![w, h], truth.clone()).unwrap()),
            &[0.5],
        )
        .unwrap()
        .item();
        let l1 = pred.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / (w * h) as f64;
        exact &= l.to_bits() == (0.5 * l1).to_bits();
    }

    // overlap counts by enumeration, and the averaged path against single windows
    let mut counts_ok = true;
    for (t, l, h) in [(120, 100, 20), (121, 100, 20), (137, 100, 20), (300, 100, 20), (50, 30, 7)] {
        let windows = t - l - h + 1;
        let brute: Vec<usize> = (0..t - l).map(|d| (0..windows).filter(|&w| w <= d && d < w + h).count()).collect();
        counts_ok &= overlap_counts(t, l, h) == brute;
    }
    let s = synth_gbm(1, 127, 30.0, 0.0002, 0.015, 77).unwrap().remove(0);
    let rolled = model.rolling_forecast(&s).unwrap();
    let paths: Vec<Vec<f64>> = (0..8).map(|w| model.forecast_at(&s, w).unwrap().median_path).collect();
    let mut avg_err: f64 = 0.0;
    for d in 0..rolled.values.len() {
        let covering: Vec<f64> = (0..8usize).filter(|&w| w <= d && d < w + 20).map(|w| paths[w][d - w]).collect();
        counts_ok &= rolled.counts[d] == covering.len();
        avg_err = avg_err.max((rolled.values[d] - covering.iter().sum::<f64>() / covering.len() as f64).abs());
    }
    outcome(
        worst_mape < 0.15 && exact && counts_ok && avg_err < 1e-10,
        format!(
            "held-out MAPE max {:.2}% over {} series; median pinball == L1/2 bitwise: {exact}; overlap counts: {counts_ok}; rolling average err {avg_err:.1e}",
            100.0 * worst_mape,
            mapes.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let model = toy_model();
    let before = model.params.clone();
    let series = &desk()[0];
    let cfg = GanConfig { samples_per_epoch: 64, epochs_per_block: vec![5; 5], seed: 0, ..GanConfig::default() };
    let (bundle, log) = train_agan(series, model, cfg).unwrap();
    let finite = log.iter().all(|e| {
        [e.critic_loss, e.gradient_penalty, e.wasserstein, e.generator_loss, e.adversarial_loss, e.mean_ls_slope]
            .iter()
            .all(|v| v.is_finite())
    });
    let frozen = model.params.tensors().iter().zip(before.tensors()).all(|(a, b)| {
        a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });

    let conds = sample_intervals(series, &bundle.scaler, 99, 500, 11).unwrap();
    let gen = bundle.generate(&conds, 12).unwrap();
    let real: Vec<Vec<f64>> = conds.iter().map(|c| c.log_returns.clone()).collect();
    let real_slope = mean(&bundle.forecast_slopes(model, &conds, &real).unwrap());
    let gen_slope = mean(&bundle.forecast_slopes(model, &conds, &gen).unwrap());
    let gen_finite = gen.iter().flatten().all(|v| v.is_finite());

    let conds = sample_intervals(series, &bundle.scaler, 99, 2000, 13).unwrap();
    let gen = bundle.generate(&conds, 14).unwrap();
    let real: Vec<Vec<f64>> = conds.iter().map(|c| c.log_returns.clone()).collect();
    let mmd = evaluate_generated(&bundle.scaler, &real, &gen).unwrap().synthetic.mmd.unwrap_or(f64::NAN);

    // scaling and price reconstruction round trips
    let r = log_returns(&series.adjprc);
    let scaled = bundle.scaler.scale_all(&r);
    let mut round: f64 = r.iter().zip(bundle.scaler.unscale_all(&scaled)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let prices = to_prices(&r, series.adjprc[0]).unwrap();
    round = round.max(prices.iter().zip(&series.adjprc).map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max));
    for row in gen.iter().take(50) {
        let lr = bundle.scaler.unscale_all(row);
        let back = log_returns(&to_prices(&lr, 25.0).unwrap());
        round = round.max(lr.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }

    outcome(
        finite && gen_finite && frozen && gen_slope > real_slope && mmd.is_finite() && mmd >= 0.0 && round < 1e-12,
        format!(
            "{} epochs finite: {}; forecaster bit-identical: {frozen}; mean LS slope real {real_slope:.4e} generated {gen_slope:.4e}; \
             MMD² (2000 vs 2000) {mmd:.4e}; round trip {round:.1e}",
            log.len(),
            finite && gen_finite
        ),
    )
}

/// Flat series with noise (negative) and steep ramps (positive).
fn toy_classes(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut flat, mut ramp) = (Vec::new(), Vec::new());
    for _ in 0..n {
        let level = rng.random_range(10.0..100.0);
        flat.push((0..300).map(|_| level + rng.random_range(-0.5..0.5)).collect());
        let slope = rng.random_range(0.5..2.0);
        ramp.push((0..300).map(|t| level + slope * t as f64 + rng.random_range(-0.5..0.5)).collect());
    }
    (flat, ramp)
}

fn tamper_detection() -> (usize, usize) {
    let dir = tempfile::tempdir().unwrap();
    let mut names = Vec::new();
    for i in 0..20usize {
        let rel = if i % 2 == 0 { format!("f{i:02}.bin") } else { format!("sub/m{i:02}.ckpt") };
        let path = dir.path().join(&rel);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, (0..100 + i * 11).map(|k| (k * 29 + i) as u8).collect::<Vec<u8>>()).unwrap();
        names.push(rel);
    }
    let manifest = build_manifest(dir.path()).unwrap();
    let (mut trials, mut detected) = (0, 0);
    for name in &names {
        let path = dir.path().join(name);
        let original = std::fs::read(&path).unwrap();
        let mut flipped = original.clone();
        flipped[original.len() / 2] ^= 0x10;
        std::fs::write(&path, &flipped).unwrap();
        trials += 1;
        detected += usize::from(verify_manifest(dir.path(), &manifest).unwrap().modified == vec![name.clone()]);
        std::fs::remove_file(&path).unwrap();
        trials += 1;
        detected += usize::from(verify_manifest(dir.path(), &manifest).unwrap().removed == vec![name.clone()]);
        std::fs::write(&path, &original).unwrap();
        let extra = format!("{name}.new");
        std::fs::write(dir.path().join(&extra), b"x").unwrap();
        trials += 1;
        detected += usize::from(verify_manifest(dir.path(), &manifest).unwrap().added == vec![extra.clone()]);
        std::fs::remove_file(dir.path().join(&extra)).unwrap();
    }
    (detected, trials)
}

fn criterion_9(cache: &mut AttackCache) -> Outcome {
    let (flat, ramp) = toy_classes(48, 1);
    let cfg = DiscriminatorConfig { epochs: 50, seed: 3, ..DiscriminatorConfig::default() };
    let (toy, _) = train_discriminator(&flat, &ramp, cfg).unwrap();
    let (vf, vr) = toy_classes(50, 2);
    let toy_acc = toy.evaluate(&vf, &vr).unwrap().accuracy;

    // desk data: clean windows against GSA(up) and LSSA(up) at 2%, split by series
    let clean: Vec<Vec<f64>> = cache.series.iter().map(|s| s.adjprc.clone()).collect();
    let mut attacked: Vec<(usize, Vec<f64>)> = Vec::new();
    for method in [Method::Gsa, Method::Lssa] {
        attacked.extend(cache.get(method, 1, 2.0).iter().enumerate().map(|(i, r)| (i, r.x_adv.adjprc.clone())));
    }
    let cut = 14;
    let pick = |train: bool| -> Vec<Vec<f64>> {
        attacked.iter().filter(|(i, _)| (*i < cut) == train).map(|(_, x)| x.clone()).collect()
    };
    let (model, _) = train_discriminator(&clean[..cut], &pick(true), DiscriminatorConfig::default()).unwrap();
    let desk = model.evaluate(&clean[cut..], &pick(false)).unwrap();

    let (detected, trials) = tamper_detection();
    outcome(
        toy_acc >= 90.0 && detected == trials,
        format!(
            "toy held-out accuracy {toy_acc:.2}%; GSA/LSSA desk data accuracy {:.2}% specificity {:.2}% kappa {:.2} \
             (reference accuracy 52.08, specificity 27.78; recorded only); tamper detection {detected}/{trials}",
            desk.accuracy, desk.specificity, desk.kappa
        ),
    )
}

const TINY_CONFIG: &str = r#"
seed = 3

[synth]
out = "runs/data"

[synth.desk]
n_series = 12
n_days = 600

[train]
data = "runs/data/prices.csv"
out = "runs/train"

[train.model]
optimizer = "adam"
epochs = 2
hidden_size = 16
window_stride = 10

[attack]
data = "runs/train/test.csv"
checkpoint = "runs/train/model.ckpt"
out = "runs/attack"
methods = ["gsa", "lssa", "bim"]
eps_pct = [0.0, 2.0]
limit = 2

[attack.params]
iter = 3

[defend.train]
real = "runs/data/prices.csv"
attacked = "runs/attack/adversarial.csv"
out = "runs/defend"

[defend.train.discriminator]
epochs = 3

[defend.classify]
checkpoint = "runs/defend/discriminator.ckpt"
data = "runs/attack/adversarial.csv"
out = "runs/classify"

[gan.train]
data = "runs/data/prices.csv"
checkpoint = "runs/train/model.ckpt"
out = "runs/gan"

[gan.train.params]
samples_per_epoch = 16
alpha_schedule = [0.25, 0.3]
epochs_per_block = [1, 1]
gen_channels = [8, 8]
gen_kernels = [3, 3]
gen_dilations = [1, 2]
critic_hidden = [16]

[gan.generate]
bundle = "runs/gan/gan.ckpt"
data = "runs/data/prices.csv"
checkpoint = "runs/train/model.ckpt"
out = "runs/generate"
n = 40

[eval]
real = "runs/generate/real.csv"
generated = "runs/generate/generated.csv"
bundle = "runs/gan/gan.ckpt"
discriminator = "runs/defend/discriminator.ckpt"
clean = "runs/data/prices.csv"
attacked = "runs/attack/adversarial.csv"
out = "runs/eval"
"#;

const COMMANDS: [&[&str]; 10] = [
    &["synth"],
    &["train"],
    &["attack"],
    &["defend", "train"],
    &["defend", "classify"],
    &["gan", "train"],
    &["gan", "generate"],
    &["eval"],
    &["defend", "build-manifest", "runs/data", "--out", "runs/manifest"],
    &["defend", "verify", "runs/data", "runs/manifest/MANIFEST"],
];

/// Runs every command in `dir`; returns the exit codes.
fn run_workflow(dir: &Path) -> Vec<i32> {
    std::fs::write(dir.join("config.toml"), TINY_CONFIG).unwrap();
    let home = std::env::current_dir().unwrap();
    std::env::set_current_dir(dir).unwrap();
    let codes = COMMANDS
        .iter()
        .map(|args| {
            let argv = ["slopestrike", "--config", "config.toml"].iter().chain(args.iter()).copied();
            slopestrike::cli::main_with(argv)
        })
        .collect();
    std::env::set_current_dir(home).unwrap();
    codes
}

fn criterion_10() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (codes_a, codes_b) = (run_workflow(a.path()), run_workflow(b.path()));
    let all_ok = codes_a.iter().chain(&codes_b).all(|&c| c == 0);
    let (ma, mb) = (build_manifest(&a.path().join("runs")).unwrap(), build_manifest(&b.path().join("runs")).unwrap());
    let differing: Vec<&String> = ma
        .entries
        .iter()
        .zip(&mb.entries)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| &x.0)
        .collect();
    let identical = ma.entries.len() == mb.entries.len() && differing.is_empty();
    outcome(
        all_ok && identical,
        format!(
            "{} commands, exit codes {codes_a:?} / {codes_b:?}; {} output files, {} differ{}",
            COMMANDS.len(),
            ma.entries.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {differing:?}") }
        ),
    )
}

/// Criterion numbers given as arguments restrict the run, e.g.
/// `cargo test --test acceptance -- 5 10`.
fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut cache = AttackCache::new();
    let total = Instant::now();
    let mut failed = Vec::new();
    let criteria: [(&str, &mut dyn FnMut(&mut AttackCache) -> Outcome); 10] = [
        ("autodiff gradients", &mut |_| criterion_1()),
        ("epsilon-ball invariant", &mut criterion_2),
        ("slope attack efficacy", &mut criterion_3),
        ("budget monotonicity", &mut criterion_4),
        ("general slope gradient structure", &mut |_| criterion_5()),
        ("metric oracles", &mut |_| criterion_6()),
        ("forecaster sanity", &mut |_| criterion_7()),
        ("GAN smoke run", &mut |_| criterion_8()),
        ("defense", &mut criterion_9),
        ("determinism", &mut |_| criterion_10()),
    ];
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| run(&mut cache)))
            .unwrap_or_else(|e| {
                let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
                outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
            });
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {tag} [{name}] ({:.1}s) {}", i + 1, start.elapsed().as_secs_f64(), result.detail);
        if !result.pass {
            failed.push(i + 1);
        }
    }
    let ran = if only.is_empty() { 10 } else { only.iter().filter(|n| (1..=10).contains(*n)).count() };
    println!("acceptance: {}/{ran} passed in {:.0}s", ran - failed.len(), total.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
