//! Command bodies. Each resolves its own settings struct, writes its outputs
//! under `out` and records the settings in `run_manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::svg::{confusion_chart, line_chart, Line};
use super::{write_run_manifest, CliError, CliResult};
use crate::agan::{self, evaluate_generated, generated_rows, sample_intervals, GanBundle, GanConfig, GeneratedRow, MinMaxScaler};
use crate::attacks::{attack_many, AttackConfig, AttackResult, Method};
use crate::dataio::{
    load_checkpoint, load_csv, read_rows, save_checkpoint, stratified_split, write_attack_report, write_csv, write_rows,
    AttackReportRow, PriceSeries, SplitSpec,
};
use crate::defense::{self, Discriminator, DiscriminatorConfig};
use crate::error::Error;
use crate::experiments::{desk_universe, DeskSpec};
use crate::forecaster::{self, Nhits, NhitsConfig};
use crate::metrics::{error_metrics, MomentReport};

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} `{}` does not exist", path.display())))
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn pick_series(series: Vec<PriceSeries>, ticker: Option<&str>, path: &Path) -> CliResult<PriceSeries> {
    match ticker {
        Some(t) => series
            .into_iter()
            .find(|s| s.ticker == t)
            .ok_or_else(|| CliError::Usage(format!("ticker `{t}` is not in {}", path.display()))),
        None => series.into_iter().next().ok_or_else(|| CliError::Usage(format!("{} holds no series", path.display()))),
    }
}

fn windows(series: &[PriceSeries], len: usize) -> CliResult<Vec<Vec<f64>>> {
    series
        .iter()
        .map(|s| {
            if s.len() < len {
                return Err(CliError::Core(Error::Contract(format!("{} has {} days, need {len}", s.ticker, s.len()))));
            }
            Ok(s.adjprc[..len].to_vec())
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSettings {
    pub out: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub desk: DeskSpec,
}

pub fn synth(s: &SynthSettings) -> CliResult<()> {
    ensure_dir(&s.out)?;
    let spec = DeskSpec { seed: s.seed, ..s.desk.clone() };
    let universe = desk_universe(&spec)?;
    write_csv(&s.out.join("prices.csv"), &universe)?;
    write_run_manifest(&s.out, "synth", s)?;
    println!("wrote {} series of {} days", universe.len(), spec.n_days);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: NhitsConfig,
}

#[derive(Debug, Serialize)]
struct SplitRow<'a> {
    ticker: &'a str,
    set: &'static str,
}

#[derive(Debug, Serialize)]
struct TestMetricRow<'a> {
    ticker: &'a str,
    mae: f64,
    rmse: f64,
    mape: f64,
}

pub fn train(s: &TrainSettings) -> CliResult<()> {
    require(&s.data, "data file")?;
    ensure_dir(&s.out)?;
    let series = load_csv(&s.data)?;
    let split = stratified_split(&series, &s.split, s.seed)?;
    let config = NhitsConfig { seed: s.seed, ..s.model.clone() };
    let trainer = forecaster::train(&split.train, &split.val, config)?;
    let model = trainer.best_model();
    save_checkpoint(&model.to_checkpoint(), &s.out.join("model.ckpt"))?;
    write_rows(&s.out.join("train_log.csv"), &trainer.log)?;

    let mut rows = Vec::new();
    for (set, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        rows.extend(part.iter().map(|x| SplitRow { ticker: &x.ticker, set }));
    }
    write_rows(&s.out.join("split.csv"), &rows)?;
    write_csv(&s.out.join("test.csv"), &split.test)?;

    let mut metrics = Vec::new();
    for series in &split.test {
        let f = model.rolling_forecast(series)?;
        let truth = &series.adjprc[f.first_day..f.first_day + f.values.len()];
        let e = error_metrics(&f.values, truth)?;
        metrics.push(TestMetricRow { ticker: &series.ticker, mae: e.mae, rmse: e.rmse, mape: e.mape });
    }
    write_rows(&s.out.join("test_metrics.csv"), &metrics)?;

    let epochs: Vec<f64> = trainer.log.iter().map(|e| e.epoch as f64).collect();
    let curve = |f: fn(&forecaster::EpochLog) -> f64| epochs.iter().copied().zip(trainer.log.iter().map(f)).collect();
    let svg = line_chart(
        "Forecaster training",
        "epoch",
        "quantile loss",
        &[Line::new("train", curve(|e| e.train_loss)), Line::new("validation", curve(|e| e.val_loss))],
    );
    write_text(&s.out.join("train_loss.svg"), &svg)?;
    write_run_manifest(&s.out, "train", s)?;
    let best = trainer.stopping.best.unwrap_or(f64::NAN);
    println!("trained {} epochs, best validation loss {best:.6}", trainer.epoch);
    Ok(())
}

fn default_methods() -> Vec<String> {
    vec!["gsa".into(), "lssa".into()]
}

fn default_eps() -> Vec<f64> {
    vec![2.0]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSettings {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_eps")]
    pub eps_pct: Vec<f64>,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default = "yes")]
    pub plots: bool,
    /// Shared attack parameters; `method` and `eps_pct` are taken from the
    /// lists above.
    #[serde(default)]
    pub params: AttackConfig,
}

/// Per-(method, ε%) means over series, in the layout of the report rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub eps_pct: f64,
    pub n_series: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub gen_slope: f64,
    pub ls_slope: f64,
}

/// Group report rows by (method, ε%) in first-seen order and average them.
pub fn summarize(rows: &[AttackReportRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, u64)> = Vec::new();
    let mut groups: BTreeMap<(String, u64), Vec<&AttackReportRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.eps_pct.to_bits());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let n = g.len() as f64;
            let mean = |f: fn(&AttackReportRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
            SummaryRow {
                method: key.0.clone(),
                eps_pct: f64::from_bits(key.1),
                n_series: g.len(),
                mae: mean(|r| r.mae),
                rmse: mean(|r| r.rmse),
                mape: mean(|r| r.mape),
                gen_slope: mean(|r| r.gen_slope),
                ls_slope: mean(|r| r.ls_slope),
            }
        })
        .collect()
}

fn parse_methods(names: &[String]) -> CliResult<Vec<Method>> {
    if names.is_empty() {
        return Err(CliError::Usage("no attack methods given".into()));
    }
    names
        .iter()
        .map(|n| {
            n.parse::<Method>().map_err(|_| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                CliError::Usage(format!("unknown attack method `{n}`; valid methods: {}", valid.join(", ")))
            })
        })
        .collect()
}

fn overlay(r: &AttackResult) -> String {
    let offset = (r.original.len() - r.normal_pred.len()) as f64;
    let truth = &r.original.adjprc[r.original.len() - r.normal_pred.len()..];
    line_chart(
        &format!("{} {} at {}%", r.original.ticker, r.method, eps_label(r)),
        "day",
        "adjprc",
        &[
            Line::indexed("truth", offset, truth),
            Line::indexed("normal forecast", offset, &r.normal_pred),
            Line::indexed("attacked forecast", offset, &r.adv_pred),
        ],
    )
}

fn eps_label(r: &AttackResult) -> String {
    // ε% is not stored on the result; recover it from the absolute budget
    let m = r.original.median_price();
    let pct = if m > 0.0 { r.eps_abs / m * 100.0 } else { 0.0 };
    format!("{}", (pct * 1e6).round() / 1e6)
}

pub fn attack(s: &AttackSettings) -> CliResult<()> {
    let methods = parse_methods(&s.methods)?;
    if s.eps_pct.is_empty() {
        return Err(CliError::Usage("no budgets given".into()));
    }
    require(&s.data, "data file")?;
    require(&s.checkpoint, "checkpoint")?;
    let model = Nhits::from_checkpoint(&load_checkpoint(&s.checkpoint)?)?;
    let mut series = load_csv(&s.data)?;
    if let Some(n) = s.limit {
        series.truncate(n);
    }
    ensure_dir(&s.out)?;
    let traces = s.out.join("traces");
    let plots = s.out.join("plots");
    ensure_dir(&traces)?;
    if s.plots {
        ensure_dir(&plots)?;
    }

    let mut normal: Vec<Option<AttackReportRow>> = vec![None; series.len()];
    let mut rows = Vec::new();
    let mut adversarial = Vec::new();
    for &method in &methods {
        for &eps in &s.eps_pct {
            let cfg = AttackConfig { method, eps_pct: eps, seed: s.seed, ..s.params.clone() };
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            for (i, r) in attack_many(&model, &series, &cfg).into_iter().enumerate() {
                let r = r?;
                let ticker = &r.original.ticker;
                normal[i].get_or_insert_with(|| r.before.report_row(ticker, "normal", 0.0));
                rows.push(r.after.report_row(ticker, method.name(), eps));
                let stem = format!("{ticker}_{}_eps{eps}", method.name());
                write_rows(&traces.join(format!("{stem}.csv")), &r.trace)?;
                if s.plots {
                    write_text(&plots.join(format!("{stem}.svg")), &overlay(&r))?;
                }
                let mut adv = r.x_adv.clone();
                adv.ticker = stem;
                adversarial.push(adv);
            }
        }
    }
    let mut report: Vec<AttackReportRow> = normal.into_iter().flatten().collect();
    report.extend(rows);
    write_attack_report(&s.out.join("report.csv"), &report)?;
    let summary = summarize(&report);
    write_rows(&s.out.join("summary.csv"), &summary)?;
    write_csv(&s.out.join("adversarial.csv"), &adversarial)?;
    write_run_manifest(&s.out, "attack", s)?;
    for row in &summary {
        println!(
            "{:>8} eps {:>4}%: MAE {:.4}  general slope {:.5}  LS slope {:.5}",
            row.method, row.eps_pct, row.mae, row.gen_slope, row.ls_slope
        );
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefendTrainSettings {
    pub real: PathBuf,
    pub attacked: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub discriminator: DiscriminatorConfig,
}

pub fn defend_train(s: &DefendTrainSettings) -> CliResult<()> {
    require(&s.real, "real series file")?;
    require(&s.attacked, "attacked series file")?;
    let cfg = DiscriminatorConfig { seed: s.seed, ..s.discriminator.clone() };
    let real = windows(&load_csv(&s.real)?, cfg.input_length)?;
    let attacked = windows(&load_csv(&s.attacked)?, cfg.input_length)?;
    ensure_dir(&s.out)?;
    let (model, curve) = defense::train_discriminator(&real, &attacked, cfg)?;
    save_checkpoint(&model.to_checkpoint(), &s.out.join("discriminator.ckpt"))?;
    write_rows(&s.out.join("defense_log.csv"), &curve)?;
    let svg = line_chart(
        "Discriminator training",
        "epoch",
        "binary cross-entropy",
        &[Line::new("loss", curve.iter().map(|e| (e.epoch as f64, e.loss)).collect())],
    );
    write_text(&s.out.join("defense_loss.svg"), &svg)?;
    write_run_manifest(&s.out, "defend train", s)?;
    if let Some(last) = curve.last() {
        println!("epoch {}: loss {:.5}, train accuracy {:.2}%", last.epoch, last.loss, last.train_accuracy);
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifySettings {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct ClassifyRow<'a> {
    ticker: &'a str,
    probability: f64,
    attacked: bool,
}

pub fn defend_classify(s: &ClassifySettings) -> CliResult<()> {
    require(&s.checkpoint, "discriminator checkpoint")?;
    require(&s.data, "data file")?;
    let model = Discriminator::from_checkpoint(&load_checkpoint(&s.checkpoint)?)?;
    let series = load_csv(&s.data)?;
    let p = model.predict_proba(&windows(&series, model.config.input_length)?)?;
    let rows: Vec<ClassifyRow> =
        series.iter().zip(&p).map(|(x, &p)| ClassifyRow { ticker: &x.ticker, probability: p, attacked: p >= 0.5 }).collect();
    ensure_dir(&s.out)?;
    write_rows(&s.out.join("classify.csv"), &rows)?;
    write_run_manifest(&s.out, "defend classify", s)?;
    let flagged = rows.iter().filter(|r| r.attacked).count();
    println!("{flagged}/{} series flagged as attacked", rows.len());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSettings {
    pub dir: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
}

pub fn build_manifest(s: &ManifestSettings) -> CliResult<()> {
    if !s.dir.is_dir() {
        return Err(CliError::Usage(format!("`{}` is not a directory", s.dir.display())));
    }
    let m = defense::build_manifest(&s.dir)?;
    ensure_dir(&s.out)?;
    m.save(&s.out.join("MANIFEST"))?;
    write_run_manifest(&s.out, "defend build-manifest", s)?;
    println!("{} files, root {}", m.entries.len(), m.root_digest);
    Ok(())
}

pub fn verify(dir: &Path, manifest: &Path) -> CliResult<()> {
    require(manifest, "manifest")?;
    let m = defense::IntegrityManifest::load(manifest)?;
    let v = defense::verify_manifest(dir, &m)?;
    if v.is_pass() {
        println!("PASS: {} files match", m.entries.len());
        return Ok(());
    }
    let mut lines = Vec::new();
    for (tag, paths) in [("added", &v.added), ("removed", &v.removed), ("modified", &v.modified)] {
        for p in paths {
            println!("{tag}\t{p}");
            lines.push(format!("{tag} {p}"));
        }
    }
    println!("FAIL");
    Err(CliError::Tampered(lines.join(", ")))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanTrainSettings {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub ticker: Option<String>,
    #[serde(default)]
    pub params: GanConfig,
}

pub fn gan_train(s: &GanTrainSettings) -> CliResult<()> {
    require(&s.data, "data file")?;
    require(&s.checkpoint, "forecaster checkpoint")?;
    let forecaster = Nhits::from_checkpoint(&load_checkpoint(&s.checkpoint)?)?;
    let series = pick_series(load_csv(&s.data)?, s.ticker.as_deref(), &s.data)?;
    let cfg = GanConfig { seed: s.seed, ..s.params.clone() };
    ensure_dir(&s.out)?;
    let (bundle, log) = agan::train_agan(&series, &forecaster, cfg)?;
    bundle.save(&s.out.join("gan.ckpt"))?;
    write_rows(&s.out.join("gan_log.csv"), &log)?;
    let step = |f: fn(&agan::GanEpochLog) -> f64| log.iter().enumerate().map(|(i, e)| (i as f64, f(e))).collect();
    let svg = line_chart(
        "GAN training",
        "epoch (all blocks)",
        "loss",
        &[
            Line::new("critic", step(|e| e.critic_loss)),
            Line::new("generator", step(|e| e.generator_loss)),
            Line::new("adversarial", step(|e| e.adversarial_loss)),
        ],
    );
    write_text(&s.out.join("gan_loss.svg"), &svg)?;
    write_run_manifest(&s.out, "gan train", s)?;
    if let Some(last) = log.last() {
        println!(
            "block {} epoch {}: critic {:.5}, generator {:.5}, mean LS slope {:.5}",
            last.block, last.epoch, last.critic_loss, last.generator_loss, last.mean_ls_slope
        );
    }
    Ok(())
}

fn default_n() -> usize {
    2000
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanGenerateSettings {
    pub bundle: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub ticker: Option<String>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct SlopeRow {
    interval_id: usize,
    real_ls_slope: f64,
    generated_ls_slope: f64,
}

pub fn gan_generate(s: &GanGenerateSettings) -> CliResult<()> {
    require(&s.bundle, "GAN bundle")?;
    require(&s.data, "data file")?;
    let bundle = GanBundle::load(&s.bundle)?;
    let series = pick_series(load_csv(&s.data)?, s.ticker.as_deref(), &s.data)?;
    let conditions = sample_intervals(&series, &bundle.scaler, bundle.config.interval_length, s.n, s.seed)?;
    let generated = bundle.generate(&conditions, s.seed.wrapping_add(1))?;
    let real: Vec<Vec<f64>> = conditions.iter().map(|c| c.log_returns.clone()).collect();
    ensure_dir(&s.out)?;
    write_rows(&s.out.join("generated.csv"), &generated_rows(&generated))?;
    write_rows(&s.out.join("real.csv"), &generated_rows(&real))?;

    if let Some(ck) = &s.checkpoint {
        require(ck, "forecaster checkpoint")?;
        let forecaster = Nhits::from_checkpoint(&load_checkpoint(ck)?)?;
        let r = bundle.forecast_slopes(&forecaster, &conditions, &real)?;
        let g = bundle.forecast_slopes(&forecaster, &conditions, &generated)?;
        let rows: Vec<SlopeRow> = r
            .iter()
            .zip(&g)
            .enumerate()
            .map(|(i, (&a, &b))| SlopeRow { interval_id: i, real_ls_slope: a, generated_ls_slope: b })
            .collect();
        write_rows(&s.out.join("slopes.csv"), &rows)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        println!("mean forecast LS slope: real {:.5}, generated {:.5}", mean(&r), mean(&g));
    }

    let mut lines = Vec::new();
    for (i, c) in conditions.iter().take(3).enumerate() {
        let prices = |scaled: &[f64]| agan::to_prices(&bundle.scaler.unscale_all(scaled), c.p0);
        lines.push(Line::indexed(format!("real {i}"), 0.0, &prices(&real[i])?));
        lines.push(Line::indexed(format!("generated {i}"), 0.0, &prices(&generated[i])?));
    }
    write_text(&s.out.join("samples.svg"), &line_chart("Generated price paths", "day", "adjprc", &lines))?;
    write_run_manifest(&s.out, "gan generate", s)?;
    println!("generated {} intervals of {} days", generated.len(), bundle.config.interval_length);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub real: PathBuf,
    pub generated: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    /// GAN bundle whose scaler maps the interval values back to log returns;
    /// without it values are taken as log returns already.
    #[serde(default)]
    pub bundle: Option<PathBuf>,
    #[serde(default)]
    pub discriminator: Option<PathBuf>,
    #[serde(default)]
    pub clean: Option<PathBuf>,
    #[serde(default)]
    pub attacked: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub sample: String,
    pub mu: f64,
    pub sigma: f64,
    pub iqr: f64,
    pub skew: f64,
    pub kurtosis: f64,
    pub mmd: Option<f64>,
}

impl MomentRow {
    fn new(sample: &str, m: &MomentReport) -> Self {
        Self { sample: sample.into(), mu: m.mu, sigma: m.sigma, iqr: m.iqr, skew: m.skew, kurtosis: m.kurtosis, mmd: m.mmd }
    }
}

/// Intervals grouped by `interval_id` in ascending order, days in file order.
pub fn read_intervals(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let rows: Vec<GeneratedRow> = read_rows(path)?;
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.interval_id).or_default().push(r.scaled_log_return);
    }
    Ok(groups.into_values().collect())
}

fn histogram(label: &str, values: &[f64], lo: f64, hi: f64, bins: usize) -> Line {
    let mut counts = vec![0usize; bins];
    let w = (hi - lo) / bins as f64;
    for &v in values {
        let i = if w > 0.0 { (((v - lo) / w) as usize).min(bins - 1) } else { 0 };
        counts[i] += 1;
    }
    let n = values.len().max(1) as f64;
    Line::new(label, counts.iter().enumerate().map(|(i, &c)| (lo + (i as f64 + 0.5) * w, c as f64 / n)).collect())
}

pub fn eval(s: &EvalSettings) -> CliResult<()> {
    require(&s.real, "real interval file")?;
    require(&s.generated, "generated interval file")?;
    let scaler = match &s.bundle {
        Some(b) => {
            require(b, "GAN bundle")?;
            GanBundle::load(b)?.scaler
        }
        None => MinMaxScaler { min: 0.0, max: 1.0 },
    };
    let real = read_intervals(&s.real)?;
    let generated = read_intervals(&s.generated)?;
    let report = evaluate_generated(&scaler, &real, &generated)?;
    ensure_dir(&s.out)?;
    write_rows(&s.out.join("moments.csv"), &[MomentRow::new("real", &report.real), MomentRow::new("generated", &report.synthetic)])?;

    let flat = |rows: &[Vec<f64>]| rows.iter().flat_map(|r| scaler.unscale_all(r)).collect::<Vec<f64>>();
    let (fr, fg) = (flat(&real), flat(&generated));
    let lo = fr.iter().chain(&fg).copied().fold(f64::INFINITY, f64::min);
    let hi = fr.iter().chain(&fg).copied().fold(f64::NEG_INFINITY, f64::max);
    let svg = line_chart(
        "Log-return distribution",
        "log return",
        "share of days",
        &[histogram("real", &fr, lo, hi, 40), histogram("generated", &fg, lo, hi, 40)],
    );
    write_text(&s.out.join("moments.svg"), &svg)?;

    if let Some(d) = &s.discriminator {
        let (clean, attacked) = match (&s.clean, &s.attacked) {
            (Some(c), Some(a)) => (c, a),
            _ => return Err(CliError::Usage("a discriminator needs both `clean` and `attacked` series".into())),
        };
        require(d, "discriminator checkpoint")?;
        require(clean, "clean series file")?;
        require(attacked, "attacked series file")?;
        let model = Discriminator::from_checkpoint(&load_checkpoint(d)?)?;
        let l = model.config.input_length;
        let c = model.evaluate(&windows(&load_csv(clean)?, l)?, &windows(&load_csv(attacked)?, l)?)?;
        write_rows(&s.out.join("confusion.csv"), &[c.clone()])?;
        write_text(&s.out.join("confusion.svg"), &confusion_chart("Discriminator", &c))?;
        println!("discriminator: accuracy {:.2}%, specificity {:.2}%, kappa {:.2}", c.accuracy, c.specificity, c.kappa);
    }
    write_run_manifest(&s.out, "eval", s)?;
    println!("MMD {:.6}", report.synthetic.mmd.unwrap_or(f64::NAN));
    Ok(())
}
