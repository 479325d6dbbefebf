//! Stage orchestration and the JSON report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::distfit::{
    fit_mle, qq_pairs, rank_fits_with, DistributionFamily, FitRanking, FittedDistribution, Histogram, RssMode,
};
use crate::econsim::{
    build_regression_dataset, derive_seed, simulate_batch, summarize_batch, BatchSummary, DatasetSidecar,
    EconomySample, RegressionDataset, SimulationConfig,
};
use crate::eoe::{
    cross_validate, fit_eoe, fit_lookahead, lookahead_spec, published_velocity_curve, CVReport, CvOptions, EoEModel,
    EoeOptions, FoldMode, LookaheadModel, PooledTable, R2Domain,
};
use crate::ingest::{parse_asset_csv, preprocess, read_series_csv, AssetId, AssetSeries, PreprocessSummary};
use crate::regress::{fit_velocity_zoo, SelectionRule, VelocityCurve, ZooReport};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSpec {
    pub asset: AssetId,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityModelChoice {
    /// `V = 0.03358 + 1.20329 / H`.
    Published,
    /// Whatever the zoo selection picked on this run's data.
    Selected,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub inputs: Vec<InputSpec>,
    pub seed: u64,
    pub bins: usize,
    pub rss_mode: RssMode,
    pub tokens_per_economy: usize,
    pub economies_per_distribution: usize,
    pub simulation_family: DistributionFamily,
    pub k_folds: usize,
    pub cv_mode: FoldMode,
    pub r2_domain: R2Domain,
    pub eoe: EoeOptions,
    pub per_asset: bool,
    pub velocity_model: VelocityModelChoice,
    pub selection: SelectionRule,
}

impl RunConfig {
    pub fn new(inputs: Vec<InputSpec>, seed: u64) -> Self {
        RunConfig {
            inputs,
            seed,
            bins: crate::distfit::DEFAULT_BINS,
            rss_mode: RssMode::default(),
            tokens_per_economy: crate::econsim::DEFAULT_TOKENS_PER_ECONOMY,
            economies_per_distribution: crate::econsim::DEFAULT_ECONOMIES,
            simulation_family: DistributionFamily::Lognormal,
            k_folds: crate::eoe::DEFAULT_FOLDS,
            cv_mode: FoldMode::Shuffled,
            r2_domain: R2Domain::Price,
            eoe: EoeOptions::default(),
            per_asset: false,
            velocity_model: VelocityModelChoice::Published,
            selection: SelectionRule::default(),
        }
    }

    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            tokens_per_economy: self.tokens_per_economy,
            economies_per_distribution: self.economies_per_distribution,
            seed: self.seed,
        }
    }

    pub fn cv(&self) -> CvOptions {
        CvOptions {
            k: self.k_folds,
            seed: self.seed,
            mode: self.cv_mode,
            domain: self.r2_domain,
        }
    }
}

/// The run configuration as recorded in the report. Output locations are
/// left out so that runs into different directories compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub inputs: BTreeMap<String, InputEcho>,
    pub seed: u64,
    pub bins: usize,
    pub rss_mode: RssMode,
    pub tokens_per_economy: usize,
    pub economies_per_distribution: usize,
    pub simulation_family: DistributionFamily,
    pub k_folds: usize,
    pub cv_mode: FoldMode,
    pub r2_domain: R2Domain,
    pub eoe_intercept: bool,
    pub use_derived_velocity: bool,
    pub per_asset: bool,
    pub velocity_model: VelocityModelChoice,
    pub selection: SelectionRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEcho {
    pub path: String,
    pub asset: AssetId,
}

impl ConfigEcho {
    pub fn from_config(c: &RunConfig) -> Self {
        ConfigEcho {
            inputs: c
                .inputs
                .iter()
                .map(|i| {
                    (
                        i.asset.ticker.clone(),
                        InputEcho {
                            path: i.path.display().to_string(),
                            asset: i.asset.clone(),
                        },
                    )
                })
                .collect(),
            seed: c.seed,
            bins: c.bins,
            rss_mode: c.rss_mode,
            tokens_per_economy: c.tokens_per_economy,
            economies_per_distribution: c.economies_per_distribution,
            simulation_family: c.simulation_family,
            k_folds: c.k_folds,
            cv_mode: c.cv_mode,
            r2_domain: c.r2_domain,
            eoe_intercept: c.eoe.intercept,
            use_derived_velocity: c.eoe.use_derived,
            per_asset: c.per_asset,
            velocity_model: c.velocity_model,
            selection: c.selection,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetPreprocess {
    pub asset: AssetId,
    pub source: String,
    pub summary: PreprocessSummary,
    pub first_date: Option<NaiveDate>,
    pub last_date: Option<NaiveDate>,
}

/// Data behind the per-asset velocity plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityPlotData {
    pub histogram: Histogram,
    pub log_histogram: Histogram,
    /// `(fitted quantile, empirical quantile)` for the top-ranked family.
    pub qq: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetDistributions {
    pub velocity: FitRanking,
    pub holding_time: Option<FitRanking>,
    /// Velocity distribution that drives the simulated economies.
    pub simulation_distribution: FittedDistribution,
    pub plot: VelocityPlotData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationStage {
    pub config: SimulationConfig,
    pub asset_seeds: BTreeMap<String, u64>,
    pub batches: BTreeMap<String, BatchSummary>,
    pub dataset: DatasetSidecar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub asset: String,
    pub date: NaiveDate,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerAssetEoe {
    pub model: Option<EoEModel>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EoeStage {
    pub options: EoeOptions,
    pub velocity_curve: VelocityCurve,
    pub velocity_curve_source: String,
    pub excluded_assets: Vec<String>,
    pub derived_flag_count: usize,
    pub model: EoEModel,
    pub per_asset: Option<BTreeMap<String, PerAssetEoe>>,
    pub predictions: Vec<PricePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookaheadStage {
    pub model: LookaheadModel,
    pub cv: CVReport,
    /// Out-of-fold predictions.
    pub predictions: Vec<PricePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub tool: ToolInfo,
    pub config: Option<ConfigEcho>,
    pub preprocessing: Option<BTreeMap<String, AssetPreprocess>>,
    pub distributions: Option<BTreeMap<String, AssetDistributions>>,
    pub simulation: Option<SimulationStage>,
    pub velocity_models: Option<ZooReport>,
    pub eoe: Option<EoeStage>,
    pub lookahead: Option<LookaheadStage>,
}

impl PipelineReport {
    pub fn empty() -> Self {
        PipelineReport {
            schema_version: SCHEMA_VERSION,
            tool: ToolInfo {
                name: TOOL_NAME.into(),
                version: TOOL_VERSION.into(),
            },
            config: None,
            preprocessing: None,
            distributions: None,
            simulation: None,
            velocity_models: None,
            eoe: None,
            lookahead: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Everything a pipeline run produced, for writing to disk.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub series: Vec<AssetSeries>,
    pub dataset: RegressionDataset,
}

/// Read one input, accepting either a raw export or an already normalised
/// `date,price,MC,T,M,V,H` file.
pub fn load_input(input: &InputSpec) -> Result<AssetSeries> {
    let path = &input.path;
    let context = || format!("ingest {} ({})", input.asset.ticker, path.display());
    let text = std::fs::read_to_string(path).with_context(context)?;
    let first = text.lines().next().unwrap_or("").trim();
    let series = if first.starts_with("date,price,MC,") {
        read_series_csv(text.as_bytes(), &input.asset)
    } else {
        parse_asset_csv(text.as_bytes(), &input.asset).and_then(|raw| preprocess(&raw, &input.asset))
    };
    series.with_context(context)
}

/// Load every input, ordered by ticker.
pub fn load_inputs(inputs: &[InputSpec]) -> Result<Vec<AssetSeries>> {
    let mut series = inputs.iter().map(load_input).collect::<Result<Vec<_>>>()?;
    series.sort_by(|a, b| a.asset.ticker.cmp(&b.asset.ticker));
    Ok(series)
}

pub fn preprocessing_stage(inputs: &[InputSpec], series: &[AssetSeries]) -> BTreeMap<String, AssetPreprocess> {
    series
        .iter()
        .map(|s| {
            let source = inputs
                .iter()
                .find(|i| i.asset == s.asset)
                .map(|i| i.path.display().to_string())
                .unwrap_or_default();
            (
                s.asset.ticker.clone(),
                AssetPreprocess {
                    asset: s.asset.clone(),
                    source,
                    summary: s.summary,
                    first_date: s.rows.first().map(|r| r.date),
                    last_date: s.rows.last().map(|r| r.date),
                },
            )
        })
        .collect()
}

pub fn rank_column(samples: &[f64], column: &str, bins: usize, mode: RssMode) -> Result<FitRanking> {
    let mut ranking = rank_fits_with(samples, &DistributionFamily::ALL, bins, mode)
        .with_context(|| format!("ranking distributions for {column}"))?;
    ranking.column = column.to_string();
    Ok(ranking)
}

pub fn distribution_stage(series: &AssetSeries, config: &RunConfig) -> Result<AssetDistributions> {
    let v = series.velocities();
    let velocity = rank_column(&v, "V", config.bins, config.rss_mode)?;
    let holding_time = rank_column(&series.holding_times(), "H", config.bins, config.rss_mode).ok();
    let simulation_distribution = fit_mle(&v, config.simulation_family)
        .with_context(|| format!("fitting {} to velocity", config.simulation_family))?;
    let top = &velocity.best().ok_or_else(|| anyhow!("empty ranking"))?.dist;
    let logs: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let plot = VelocityPlotData {
        histogram: Histogram::new(&v, config.bins)?,
        log_histogram: Histogram::new(&logs, config.bins)?,
        qq: qq_pairs(top, &v),
    };
    Ok(AssetDistributions {
        velocity,
        holding_time,
        simulation_distribution,
        plot,
    })
}

pub struct SimulationResult {
    pub stage: SimulationStage,
    pub dataset: RegressionDataset,
}

/// Simulate one batch per asset; asset `i` in ticker order uses sub-seed
/// `derive_seed(seed, i)`.
pub fn simulation_stage(
    distributions: &BTreeMap<AssetId, FittedDistribution>,
    config: &SimulationConfig,
) -> Result<SimulationResult> {
    let mut batches: BTreeMap<AssetId, Vec<EconomySample>> = BTreeMap::new();
    let mut asset_seeds = BTreeMap::new();
    let mut summaries = BTreeMap::new();
    for (i, (asset, dist)) in distributions.iter().enumerate() {
        let seed = derive_seed(config.seed, i as u64);
        let cfg = SimulationConfig { seed, ..*config };
        let batch = simulate_batch(dist, &cfg, asset).with_context(|| format!("simulating {asset}"))?;
        asset_seeds.insert(asset.ticker.clone(), seed);
        if let Some(s) = summarize_batch(&batch) {
            summaries.insert(asset.ticker.clone(), s);
        }
        batches.insert(asset.clone(), batch);
    }
    let dataset = build_regression_dataset(&batches)?;
    let sidecar = DatasetSidecar::new(
        *config,
        distributions.iter().map(|(a, d)| (a.ticker.clone(), *d)).collect(),
        &dataset,
    );
    Ok(SimulationResult {
        stage: SimulationStage {
            config: *config,
            asset_seeds,
            batches: summaries,
            dataset: sidecar,
        },
        dataset,
    })
}

/// The velocity curve used for derived columns, with a label for the report.
pub fn choose_curve(choice: VelocityModelChoice, zoo: Option<&ZooReport>) -> Result<(VelocityCurve, String)> {
    match choice {
        VelocityModelChoice::Published => Ok((published_velocity_curve(), "published".into())),
        VelocityModelChoice::Selected => {
            let zoo = zoo.ok_or_else(|| anyhow!("selected velocity model requested but no model zoo is available"))?;
            let entry = zoo.selected_entry();
            let curve = VelocityCurve::from_model(&entry.model)?;
            Ok((curve, format!("selected:{}", entry.id)))
        }
    }
}

fn price_points(pooled: &PooledTable, rows: impl Iterator<Item = (usize, f64)>) -> Result<Vec<PricePoint>> {
    let price = pooled.table.column("price")?;
    Ok(rows
        .map(|(row, predicted)| PricePoint {
            asset: pooled.ticker_of(row).to_string(),
            date: pooled.dates[row],
            actual: price[row],
            predicted,
        })
        .collect())
}

pub fn eoe_stage(
    series: &[AssetSeries],
    options: &EoeOptions,
    per_asset: bool,
    curve: VelocityCurve,
    curve_source: String,
) -> Result<EoeStage> {
    let mut pooled = PooledTable::new(series)?;
    pooled.add_derived(series, &curve)?;
    let model = fit_eoe(&pooled, options).context("fitting the pooled model")?;
    let fit = model.fit.as_ref().expect("fitted models carry their regression");
    let predicted = fit.predict(&pooled.table)?;
    let predictions = price_points(
        &pooled,
        predicted.iter().enumerate().filter_map(|(i, p)| p.map(|lp| (i, lp.exp()))),
    )?;

    let per_asset = per_asset.then(|| {
        series
            .iter()
            .filter(|s| s.asset.is_medium_of_exchange)
            .map(|s| {
                let one = std::slice::from_ref(s);
                let result = PooledTable::new(one)
                    .and_then(|mut p| {
                        p.add_derived(one, &curve)?;
                        Ok(p)
                    })
                    .and_then(|p| fit_eoe(&p, options));
                let entry = match result {
                    Ok(m) => PerAssetEoe { model: Some(m), error: None },
                    Err(e) => PerAssetEoe { model: None, error: Some(e.to_string()) },
                };
                (s.asset.ticker.clone(), entry)
            })
            .collect()
    });

    Ok(EoeStage {
        options: *options,
        velocity_curve: curve,
        velocity_curve_source: curve_source,
        excluded_assets: pooled.excluded.iter().map(|a| a.ticker.clone()).collect(),
        derived_flag_count: pooled.derived_flags.as_ref().map_or(0, Vec::len),
        model,
        per_asset,
        predictions,
    })
}

pub fn lookahead_stage(series: &[AssetSeries], cv: &CvOptions) -> Result<LookaheadStage> {
    let pooled = PooledTable::new(series)?;
    let model = fit_lookahead(&pooled).context("fitting the lookahead model")?;
    let report = cross_validate(&lookahead_spec(), &pooled, cv).context("cross-validating the lookahead model")?;
    let predictions = price_points(&pooled, report.predictions().iter().map(|p| (p.row, p.predicted)))?;
    Ok(LookaheadStage {
        model,
        cv: report,
        predictions,
    })
}

/// Run every stage in order: preprocess, distribution ranking, simulation,
/// velocity models, price model, lookahead cross-validation.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutput> {
    let series = load_inputs(&config.inputs).context("preprocess")?;
    let mut report = PipelineReport::empty();
    report.config = Some(ConfigEcho::from_config(config));
    report.preprocessing = Some(preprocessing_stage(&config.inputs, &series));

    let mut dists = BTreeMap::new();
    let mut sim_dists = BTreeMap::new();
    for s in &series {
        let d = distribution_stage(s, config).with_context(|| format!("distributions: {}", s.asset))?;
        sim_dists.insert(s.asset.clone(), d.simulation_distribution);
        dists.insert(s.asset.ticker.clone(), d);
    }
    report.distributions = Some(dists);

    let sim = simulation_stage(&sim_dists, &config.simulation()).context("simulate")?;
    report.simulation = Some(sim.stage);

    let zoo = fit_velocity_zoo(
        &sim.dataset.holding_times(),
        &sim.dataset.velocities(),
        &config.selection,
    )
    .context("velocity models")?;
    let (curve, source) = choose_curve(config.velocity_model, Some(&zoo))?;
    report.velocity_models = Some(zoo);

    report.eoe = Some(eoe_stage(&series, &config.eoe, config.per_asset, curve, source).context("price model")?);
    report.lookahead = Some(lookahead_stage(&series, &config.cv()).context("lookahead")?);

    Ok(PipelineOutput {
        report,
        series,
        dataset: sim.dataset,
    })
}

pub fn predictions_csv(points: &[PricePoint]) -> String {
    let mut out = String::from("asset,date,actual,predicted\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.asset, p.date, p.actual, p.predicted));
    }
    out
}

/// Table of the velocity models in the report's order.
pub fn zoo_csv(zoo: &ZooReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "equation", "adj_r2", "remarks", "valid_range", "admissible", "selected"])?;
    for e in &zoo.entries {
        w.write_record([
            e.id.as_str(),
            e.equation.as_str(),
            &format!("{:.5}", e.adj_r2),
            &e.remarks.join("; "),
            e.valid_range.as_str(),
            &e.admissible.to_string(),
            &(e.id == zoo.selected).to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Write the report, per-stage CSVs and plots under `out`.
pub fn write_outputs(output: &PipelineOutput, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |rel: &str, body: &str| -> Result<()> {
        let path = out.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        Ok(())
    };
    let r = &output.report;
    put("report.json", &r.to_json()?)?;
    for s in &output.series {
        put(&format!("series/{}.csv", s.asset.ticker), &crate::ingest::write_series_csv(s))?;
    }
    put("dataset.csv", &crate::econsim::write_dataset_csv(&output.dataset))?;
    if let Some(sim) = &r.simulation {
        put("dataset.json", &serde_json::to_string_pretty(&sim.dataset)?)?;
    }
    if let Some(zoo) = &r.velocity_models {
        put("velocity_models.csv", &zoo_csv(zoo)?)?;
    }
    if let Some(e) = &r.eoe {
        put("eoe_predictions.csv", &predictions_csv(&e.predictions))?;
    }
    if let Some(l) = &r.lookahead {
        put("lookahead_cv_predictions.csv", &predictions_csv(&l.predictions))?;
    }
    written.extend(super::plot::emit_plots(r, &out.join("plots"))?);
    Ok(written)
}
