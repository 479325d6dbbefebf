//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data or fitting
//! errors.

pub mod pipeline;
pub mod plot;

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::distfit::{DistributionFamily, RssMode};
use crate::econsim::read_dataset_csv;
use crate::eoe::{EoeOptions, FoldMode, R2Domain};
use crate::ingest::{write_series_csv, AssetClass, AssetId};
use crate::regress::{fit_velocity_zoo, SelectionRule, ZooReport};
use pipeline::{
    choose_curve, eoe_stage, load_inputs, lookahead_stage, predictions_csv, preprocessing_stage,
    rank_column, run_pipeline, simulation_stage, write_outputs, InputSpec, PipelineReport, RunConfig,
    VelocityModelChoice,
};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "eoe-lab", version, about = "Token velocity, holding time and equation-of-exchange price models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean raw daily exports and write normalised series CSVs.
    Ingest {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank distribution families for one column of one asset.
    FitDist {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long, value_enum, default_value_t = Column::V)]
        column: Column,
        #[command(flatten)]
        dist: DistArgs,
        /// Write JSON here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate token economies and build the velocity regression dataset.
    Simulate {
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        seed: SeedArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the ten velocity-vs-holding-time models to a simulated dataset.
    FitVelocity {
        /// CSV with columns asset,mean_V,mean_H.
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        rule: RuleArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the pooled price model.
    FitEoe {
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        eoe: EoeArgs,
        /// Velocity-model JSON from fit-velocity, needed with --velocity-model selected.
        #[arg(long)]
        zoo: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the lookahead model and cross-validate it.
    Forecast {
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        seed: SeedArgs,
        #[command(flatten)]
        cv: CvArgs,
        /// Directory for forecast.json and predictions.csv; JSON goes to standard output otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage and write report.json, CSVs and plots.
    Pipeline {
        #[command(flatten)]
        inputs: InputArgs,
        #[command(flatten)]
        seed: SeedArgs,
        #[command(flatten)]
        dist: DistArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        rule: RuleArgs,
        #[command(flatten)]
        eoe: EoeArgs,
        #[command(flatten)]
        cv: CvArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG plots from a report.json.
    Plot {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Input CSV as TICKER=PATH, or PATH with the ticker taken from the file name.
    #[arg(long = "in", value_name = "[TICKER=]PATH", required = true)]
    inputs: Vec<String>,
    /// Override an asset's class, e.g. XYZ=stablecoin.
    #[arg(long = "asset-class", value_name = "TICKER=CLASS")]
    classes: Vec<String>,
}

#[derive(Debug, Args)]
struct SeedArgs {
    #[arg(long, env = "EOE_LAB_SEED", default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DistArgs {
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(5..))]
    bins: u64,
    #[arg(long, value_enum, default_value_t = RssArg::BinAverage)]
    rss_mode: RssArg,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(2..))]
    tokens: u64,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    economies: u64,
    /// Family fitted to each asset's velocity to drive the simulation.
    #[arg(long, default_value = "lognormal")]
    family: DistributionFamily,
}

#[derive(Debug, Args)]
struct RuleArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Do not require significant coefficients.
    #[arg(long)]
    allow_insignificant: bool,
    /// Also require a significant intercept.
    #[arg(long)]
    require_significant_intercept: bool,
    #[arg(long)]
    allow_non_monotonic: bool,
    /// Accept models that are not positive for every H > 0.
    #[arg(long)]
    allow_partial_range: bool,
}

#[derive(Debug, Args)]
struct EoeArgs {
    #[arg(long)]
    no_intercept: bool,
    #[arg(long)]
    use_derived_velocity: bool,
    /// Also fit each asset on its own.
    #[arg(long)]
    per_asset: bool,
    #[arg(long, value_enum, default_value_t = VelocityModelArg::Published)]
    velocity_model: VelocityModelArg,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(2..))]
    k_folds: u64,
    /// Contiguous folds instead of shuffled ones.
    #[arg(long)]
    block_cv: bool,
    #[arg(long, value_enum, default_value_t = R2DomainArg::Price)]
    r2_domain: R2DomainArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Column {
    #[value(name = "V", alias = "v")]
    V,
    #[value(name = "H", alias = "h")]
    H,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RssArg {
    BinAverage,
    BinCenter,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VelocityModelArg {
    Published,
    Selected,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum R2DomainArg {
    Price,
    LogPrice,
}

/// Errors in argument values that clap cannot check on its own.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl InputArgs {
    fn resolve(&self) -> Result<Vec<InputSpec>> {
        let mut classes: BTreeMap<String, AssetClass> = BTreeMap::new();
        for c in &self.classes {
            let (t, class) = c
                .split_once('=')
                .ok_or_else(|| usage(format!("--asset-class expects TICKER=CLASS, got {c:?}")))?;
            let class = class.parse::<AssetClass>().map_err(|e| usage(e.to_string()))?;
            classes.insert(t.trim().to_ascii_uppercase(), class);
        }
        let mut specs = Vec::new();
        let mut tickers = BTreeSet::new();
        let mut paths = BTreeSet::new();
        for raw in &self.inputs {
            let (ticker, path) = match raw.split_once('=') {
                Some((t, p)) => (t.to_string(), PathBuf::from(p)),
                None => {
                    let p = PathBuf::from(raw);
                    let stem = p
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .ok_or_else(|| usage(format!("cannot infer a ticker from {raw:?}")))?
                        .to_string();
                    (stem, p)
                }
            };
            let asset = match classes.get(&ticker.trim().to_ascii_uppercase()) {
                Some(class) => AssetId::new(&ticker, *class),
                None => AssetId::from_ticker(&ticker),
            }
            .map_err(|e| usage(e.to_string()))?;
            if !tickers.insert(asset.ticker.clone()) {
                return Err(usage(format!("ticker {} given more than once", asset.ticker)));
            }
            if !paths.insert(path.clone()) {
                return Err(usage(format!("path {} given more than once", path.display())));
            }
            specs.push(InputSpec { asset, path });
        }
        Ok(specs)
    }
}

impl RuleArgs {
    fn rule(&self) -> SelectionRule {
        SelectionRule {
            alpha: self.alpha,
            require_significant: !self.allow_insignificant,
            include_intercept: self.require_significant_intercept,
            require_monotonic: !self.allow_non_monotonic,
            require_full_positivity: !self.allow_partial_range,
            ..SelectionRule::default()
        }
    }
}

impl EoeArgs {
    fn options(&self) -> EoeOptions {
        EoeOptions {
            intercept: !self.no_intercept,
            use_derived: self.use_derived_velocity,
        }
    }

    fn choice(&self) -> VelocityModelChoice {
        match self.velocity_model {
            VelocityModelArg::Published => VelocityModelChoice::Published,
            VelocityModelArg::Selected => VelocityModelChoice::Selected,
        }
    }
}

impl CvArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        cfg.k_folds = self.k_folds as usize;
        cfg.cv_mode = if self.block_cv { FoldMode::Block } else { FoldMode::Shuffled };
        cfg.r2_domain = match self.r2_domain {
            R2DomainArg::Price => R2Domain::Price,
            R2DomainArg::LogPrice => R2Domain::LogPrice,
        };
    }
}

impl DistArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        cfg.bins = self.bins as usize;
        cfg.rss_mode = match self.rss_mode {
            RssArg::BinAverage => RssMode::BinAverage,
            RssArg::BinCenter => RssMode::BinCenter,
        };
    }
}

impl SimArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        cfg.tokens_per_economy = self.tokens as usize;
        cfg.economies_per_distribution = self.economies as usize;
        cfg.simulation_family = self.family;
    }
}

fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => write_file(path, &text),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest { inputs, out } => {
            let specs = inputs.resolve()?;
            let series = load_inputs(&specs)?;
            for s in &series {
                write_file(&out.join(format!("{}.csv", s.asset.ticker)), &write_series_csv(s))?;
            }
            emit_json(&preprocessing_stage(&specs, &series), None)
        }
        Command::FitDist { inputs, column, dist, out } => {
            let specs = inputs.resolve()?;
            if specs.len() != 1 {
                return Err(usage("fit-dist takes exactly one --in"));
            }
            let mut cfg = RunConfig::new(specs, 0);
            dist.apply(&mut cfg);
            let series = load_inputs(&cfg.inputs)?;
            let s = &series[0];
            let (name, values) = match column {
                Column::V => ("V", s.velocities()),
                Column::H => ("H", s.holding_times()),
            };
            let ranking = rank_column(&values, name, cfg.bins, cfg.rss_mode)?;
            emit_json(&ranking, out.as_deref())
        }
        Command::Simulate { inputs, seed, sim, out } => {
            let mut cfg = RunConfig::new(inputs.resolve()?, seed.seed);
            sim.apply(&mut cfg);
            let series = load_inputs(&cfg.inputs)?;
            let mut dists = BTreeMap::new();
            for s in &series {
                let d = crate::distfit::fit_mle(&s.velocities(), cfg.simulation_family)
                    .with_context(|| format!("fitting {} velocity for {}", cfg.simulation_family, s.asset))?;
                dists.insert(s.asset.clone(), d);
            }
            let result = simulation_stage(&dists, &cfg.simulation())?;
            write_file(&out.join("dataset.csv"), &crate::econsim::write_dataset_csv(&result.dataset))?;
            emit_json(&result.stage, Some(&out.join("dataset.json")))?;
            emit_json(&result.stage, None)
        }
        Command::FitVelocity { dataset, rule, out } => {
            let file = std::fs::File::open(&dataset).with_context(|| format!("opening {}", dataset.display()))?;
            let points = read_dataset_csv(file)?;
            let h: Vec<f64> = points.iter().map(|p| p.mean_holding_time).collect();
            let v: Vec<f64> = points.iter().map(|p| p.mean_velocity).collect();
            let zoo = fit_velocity_zoo(&h, &v, &rule.rule())?;
            emit_json(&zoo, out.as_deref())
        }
        Command::FitEoe { inputs, eoe, zoo, out } => {
            let series = load_inputs(&inputs.resolve()?)?;
            let zoo: Option<ZooReport> = match &zoo {
                Some(p) => Some(serde_json::from_str(
                    &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                )?),
                None => None,
            };
            if matches!(eoe.velocity_model, VelocityModelArg::Selected) && zoo.is_none() {
                return Err(usage("--velocity-model selected needs --zoo"));
            }
            let (curve, source) = choose_curve(eoe.choice(), zoo.as_ref())?;
            let stage = eoe_stage(&series, &eoe.options(), eoe.per_asset, curve, source)?;
            emit_json(&stage, out.as_deref())
        }
        Command::Forecast { inputs, seed, cv, out } => {
            let mut cfg = RunConfig::new(inputs.resolve()?, seed.seed);
            cv.apply(&mut cfg);
            let series = load_inputs(&cfg.inputs)?;
            let stage = lookahead_stage(&series, &cfg.cv())?;
            match out {
                Some(dir) => {
                    write_file(&dir.join("predictions.csv"), &predictions_csv(&stage.predictions))?;
                    emit_json(&stage, Some(&dir.join("forecast.json")))
                }
                None => emit_json(&stage, None),
            }
        }
        Command::Pipeline {
            inputs,
            seed,
            dist,
            sim,
            rule,
            eoe,
            cv,
            out,
        } => {
            let mut cfg = RunConfig::new(inputs.resolve()?, seed.seed);
            dist.apply(&mut cfg);
            sim.apply(&mut cfg);
            cv.apply(&mut cfg);
            cfg.selection = rule.rule();
            cfg.eoe = eoe.options();
            cfg.per_asset = eoe.per_asset;
            cfg.velocity_model = eoe.choice();
            let output = run_pipeline(&cfg)?;
            let written = write_outputs(&output, &out)?;
            eprintln!("wrote {} files to {}", written.len(), out.display());
            Ok(())
        }
        Command::Plot { report, out } => {
            let text = std::fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let report: PipelineReport = serde_json::from_str(&text).context("parsing report")?;
            let written = plot::emit_plots(&report, &out)?;
            eprintln!("wrote {} plots to {}", written.len(), out.display());
            Ok(())
        }
    }
}

/// Parse `args` (program name first), run the subcommand and return the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}
