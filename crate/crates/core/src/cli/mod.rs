//! The `slopestrike` command line: argument parsing, config resolution and
//! exit codes. Command bodies live in [`commands`].
//!
//! Settings come from a TOML file (`--config`), one table per command
//! (`[train]`, `[attack]`, `[defend.train]`, `[gan.generate]`, ...), then
//! `--set key=value` overrides relative to that table, then dedicated flags.
//! The seed falls back to the top-level `seed` key, then `SLOPESTRIKE_SEED`,
//! then 0.

pub mod commands;
pub mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Error;

pub const SEED_ENV: &str = "SLOPESTRIKE_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("integrity check failed: {0}")]
    Tampered(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 0 success, 2 usage, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Tampered(_) => 3,
            CliError::Core(e) if e.is_data_error() => 3,
            CliError::Core(Error::Contract(_)) => 2,
            CliError::Core(_) => 4,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "slopestrike", version, about = "Slope attacks on stock forecasters, defenses and an adversarial GAN")]
pub struct Cli {
    /// TOML settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override one setting of the command's table, e.g. `model.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic GBM price universe.
    Synth(SynthArgs),
    /// Train the forecaster on a price CSV.
    Train(TrainArgs),
    /// Attack a trained forecaster and report metrics, traces and plots.
    Attack(AttackArgs),
    /// Adversarial-input discriminator and integrity manifest.
    #[command(subcommand)]
    Defend(DefendCommand),
    /// Conditional GAN with the forecaster as a second critic.
    #[command(subcommand)]
    Gan(GanCommand),
    /// Moments, MMD and confusion reports.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_series: Option<usize>,
    #[arg(long)]
    pub n_days: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated method names.
    #[arg(long)]
    pub methods: Option<String>,
    /// Comma-separated budgets in percent of the median price.
    #[arg(long)]
    pub eps: Option<String>,
    /// Attack only the first N series.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum DefendCommand {
    /// Train the discriminator on real and attacked series.
    Train {
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        attacked: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score series with a trained discriminator.
    Classify {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hash every file under a directory.
    BuildManifest {
        dir: PathBuf,
        /// Directory receiving `MANIFEST`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a directory against a manifest; exit 3 on any difference.
    Verify { dir: PathBuf, manifest: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum GanCommand {
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        ticker: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Generate {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        ticker: Option<String>,
        /// Number of intervals to generate.
        #[arg(long)]
        n: Option<usize>,
        /// Forecaster checkpoint; when given, slopes of real and generated
        /// intervals are reported.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub real: Option<PathBuf>,
    #[arg(long)]
    pub generated: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub discriminator: Option<PathBuf>,
    #[arg(long)]
    pub clean: Option<PathBuf>,
    #[arg(long)]
    pub attacked: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => Some(load_config(p)?),
        None => None,
    };
    let ctx = Resolver { file, sets: &cli.set, seed: cli.seed };
    match cli.command {
        Command::Synth(a) => {
            let flags = vec![path_flag("out", a.out), usize_flag("desk.n_series", a.n_series), usize_flag("desk.n_days", a.n_days)];
            commands::synth(&ctx.resolve("synth", flags)?)
        }
        Command::Train(a) => commands::train(&ctx.resolve("train", vec![path_flag("data", a.data), path_flag("out", a.out)])?),
        Command::Attack(a) => {
            let flags = vec![
                path_flag("data", a.data),
                path_flag("checkpoint", a.checkpoint),
                path_flag("out", a.out),
                a.methods.map(|m| ("methods".into(), toml::Value::Array(split_list(&m).map(toml::Value::from).collect()))),
                match a.eps {
                    Some(e) => Some(("eps_pct".into(), parse_eps(&e)?)),
                    None => None,
                },
                usize_flag("limit", a.limit),
            ];
            commands::attack(&ctx.resolve("attack", flags)?)
        }
        Command::Defend(DefendCommand::Train { real, attacked, out }) => {
            let flags = vec![path_flag("real", real), path_flag("attacked", attacked), path_flag("out", out)];
            commands::defend_train(&ctx.resolve("defend.train", flags)?)
        }
        Command::Defend(DefendCommand::Classify { checkpoint, data, out }) => {
            let flags = vec![path_flag("checkpoint", checkpoint), path_flag("data", data), path_flag("out", out)];
            commands::defend_classify(&ctx.resolve("defend.classify", flags)?)
        }
        Command::Defend(DefendCommand::BuildManifest { dir, out }) => {
            let flags = vec![path_flag("dir", Some(dir)), path_flag("out", out)];
            commands::build_manifest(&ctx.resolve("defend.build_manifest", flags)?)
        }
        Command::Defend(DefendCommand::Verify { dir, manifest }) => commands::verify(&dir, &manifest),
        Command::Gan(GanCommand::Train { data, checkpoint, ticker, out }) => {
            let flags = vec![
                path_flag("data", data),
                path_flag("checkpoint", checkpoint),
                ticker.map(|t| ("ticker".into(), toml::Value::String(t))),
                path_flag("out", out),
            ];
            commands::gan_train(&ctx.resolve("gan.train", flags)?)
        }
        Command::Gan(GanCommand::Generate { bundle, data, ticker, n, checkpoint, out }) => {
            let flags = vec![
                path_flag("bundle", bundle),
                path_flag("data", data),
                ticker.map(|t| ("ticker".into(), toml::Value::String(t))),
                usize_flag("n", n),
                path_flag("checkpoint", checkpoint),
                path_flag("out", out),
            ];
            commands::gan_generate(&ctx.resolve("gan.generate", flags)?)
        }
        Command::Eval(a) => {
            let flags = vec![
                path_flag("real", a.real),
                path_flag("generated", a.generated),
                path_flag("bundle", a.bundle),
                path_flag("discriminator", a.discriminator),
                path_flag("clean", a.clean),
                path_flag("attacked", a.attacked),
                path_flag("out", a.out),
            ];
            commands::eval(&ctx.resolve("eval", flags)?)
        }
    }
}

type Flag = Option<(String, toml::Value)>;

fn path_flag(key: &str, p: Option<PathBuf>) -> Flag {
    p.map(|p| (key.to_string(), toml::Value::String(p.to_string_lossy().into_owned())))
}

fn usize_flag(key: &str, v: Option<usize>) -> Flag {
    v.map(|v| (key.to_string(), toml::Value::Integer(v as i64)))
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

fn parse_eps(s: &str) -> CliResult<toml::Value> {
    split_list(s)
        .map(|x| x.parse::<f64>().map(toml::Value::Float).map_err(|_| CliError::Usage(format!("bad budget `{x}` in --eps"))))
        .collect::<CliResult<Vec<_>>>()
        .map(toml::Value::Array)
}

fn load_config(path: &Path) -> CliResult<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<toml::Table>().map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Parse a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn insert_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| CliError::Usage(format!("empty setting key `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Usage(format!("setting `{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

struct Resolver<'a> {
    file: Option<toml::Table>,
    sets: &'a [String],
    seed: Option<u64>,
}

impl Resolver<'_> {
    fn section(&self, path: &str) -> CliResult<toml::Table> {
        let mut cur = match &self.file {
            Some(t) => t,
            None => return Ok(toml::Table::new()),
        };
        for p in path.split('.') {
            match cur.get(p) {
                Some(toml::Value::Table(t)) => cur = t,
                Some(_) => return Err(CliError::Usage(format!("config key `{p}` of `{path}` must be a table"))),
                None => return Ok(toml::Table::new()),
            }
        }
        Ok(cur.clone())
    }

    fn seed(&self, section: &toml::Table) -> CliResult<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        let from_file = section.get("seed").or_else(|| self.file.as_ref().and_then(|f| f.get("seed")));
        if let Some(v) = from_file {
            return v
                .as_integer()
                .and_then(|i| u64::try_from(i).ok())
                .ok_or_else(|| CliError::Usage(format!("seed must be a non-negative integer, got {v}")));
        }
        match std::env::var(SEED_ENV) {
            Ok(s) => s.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{s}` is not an integer"))),
            Err(_) => Ok(0),
        }
    }

    fn resolve<T: DeserializeOwned>(&self, path: &str, flags: Vec<Flag>) -> CliResult<T> {
        let mut table = self.section(path)?;
        for s in self.sets {
            let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
            insert_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        for (k, v) in flags.into_iter().flatten() {
            insert_dotted(&mut table, &k, v)?;
        }
        let seed = self.seed(&table)?;
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
        T::deserialize(toml::Value::Table(table)).map_err(|e| CliError::Usage(format!("[{path}] {}", e.message())))
    }
}

/// Record the resolved settings of a run next to its outputs.
pub(crate) fn write_run_manifest<S: Serialize>(out: &Path, command: &str, settings: &S) -> CliResult<()> {
    let doc = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "settings": settings,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Usage(format!("settings are not serializable: {e}")))?;
    let path = out.join("run_manifest.json");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}
