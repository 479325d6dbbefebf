//! Equation-of-exchange price models on pooled asset data.
//!
//! The base model regresses `ln price` on `ln T`, `ln M` and `ln(1/V)`; the
//! lookahead model adds the asset's previous-day log price. Both are
//! evaluated with k-fold cross-validation.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AssetId, AssetSeries};
use crate::regress::{
    build_design, fit_design, Feature, FeatureTransform, FittedLinearModel, ModelSpec, RegressError, Table,
    VelocityCurve,
};

pub const MIN_EOE_ROWS: usize = 100;
pub const DEFAULT_FOLDS: usize = 20;
/// Published inverse velocity model `V = a + b / H`.
pub const PUBLISHED_VELOCITY_INTERCEPT: f64 = 0.03358;
pub const PUBLISHED_VELOCITY_SLOPE: f64 = 1.20329;
/// Published coefficients on `ln T`, `ln M`, `ln(1/V)` (no intercept).
pub const PUBLISHED_EOE: [f64; 3] = [0.88, 0.84, 1.15];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EoeError {
    #[error("need at least {needed} usable rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("no medium-of-exchange assets to pool")]
    NoAssets,
    #[error("derived velocity requested but no derived columns were computed")]
    MissingDerived,
    #[error(transparent)]
    Regress(#[from] RegressError),
}

pub fn published_velocity_curve() -> VelocityCurve {
    VelocityCurve {
        intercept: PUBLISHED_VELOCITY_INTERCEPT,
        terms: vec![(FeatureTransform::InversePower { k: 1 }, PUBLISHED_VELOCITY_SLOPE)],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    /// The curve is not positive at this row's holding time.
    VelocityOutsideValidRange,
    /// No holding time maps to this row's observed velocity.
    HoldingTimeOutsideValidRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFlag {
    pub asset: String,
    pub date: NaiveDate,
    pub reason: FlagReason,
}

/// Velocity from `H` through the curve, and the holding time that maps back
/// to the observed velocity. `None` marks a flagged row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedColumns {
    pub v_derived: Vec<Option<f64>>,
    pub h_derived: Vec<Option<f64>>,
    pub flags: Vec<RowFlag>,
}

fn invert_curve(curve: &VelocityCurve, v: f64) -> Option<f64> {
    if let [(FeatureTransform::InversePower { k: 1 }, b)] = curve.terms.as_slice() {
        let h = b / (v - curve.intercept);
        return (h > 0.0 && h.is_finite()).then_some(h);
    }
    curve.solve_for(v)
}

pub fn derive_columns(series: &AssetSeries, curve: &VelocityCurve) -> DerivedColumns {
    let mut flags = Vec::new();
    let mut v_derived = Vec::with_capacity(series.rows.len());
    let mut h_derived = Vec::with_capacity(series.rows.len());
    for r in &series.rows {
        let v = curve.value(r.h);
        let v = (v > 0.0 && v.is_finite()).then_some(v);
        if v.is_none() {
            flags.push(RowFlag {
                asset: series.asset.ticker.clone(),
                date: r.date,
                reason: FlagReason::VelocityOutsideValidRange,
            });
        }
        let h = invert_curve(curve, r.v);
        if h.is_none() {
            flags.push(RowFlag {
                asset: series.asset.ticker.clone(),
                date: r.date,
                reason: FlagReason::HoldingTimeOutsideValidRange,
            });
        }
        v_derived.push(v);
        h_derived.push(h);
    }
    DerivedColumns {
        v_derived,
        h_derived,
        flags,
    }
}

/// Medium-of-exchange series stacked in input order, each asset a lag group.
#[derive(Debug, Clone)]
pub struct PooledTable {
    pub table: Table,
    pub assets: Vec<AssetId>,
    pub excluded: Vec<AssetId>,
    /// Index into `assets` for each row.
    pub asset_index: Vec<u32>,
    pub dates: Vec<NaiveDate>,
    pub derived_flags: Option<Vec<RowFlag>>,
}

const PRICE: &str = "price";
const VOLUME: &str = "T";
const SUPPLY: &str = "M";
const VELOCITY: &str = "V";
const INV_VELOCITY: &str = "1/V";
const INV_VELOCITY_DERIVED: &str = "1/V_derived";

impl PooledTable {
    pub fn new(series: &[AssetSeries]) -> Result<Self, EoeError> {
        let (used, excluded): (Vec<&AssetSeries>, Vec<&AssetSeries>) =
            series.iter().partition(|s| s.asset.is_medium_of_exchange);
        if used.is_empty() {
            return Err(EoeError::NoAssets);
        }
        let n: usize = used.iter().map(|s| s.rows.len()).sum();
        let col = |f: fn(&crate::ingest::SeriesRow) -> f64| -> Vec<f64> {
            used.iter().flat_map(|s| s.rows.iter().map(f)).collect()
        };
        let mut table = Table::new(n);
        table.insert(PRICE, col(|r| r.price))?;
        table.insert(VOLUME, col(|r| r.t))?;
        table.insert(SUPPLY, col(|r| r.m))?;
        table.insert(VELOCITY, col(|r| r.v))?;
        table.insert(INV_VELOCITY, col(|r| 1.0 / r.v))?;
        table.insert("H", col(|r| r.h))?;
        let asset_index: Vec<u32> = used
            .iter()
            .enumerate()
            .flat_map(|(i, s)| std::iter::repeat_n(i as u32, s.rows.len()))
            .collect();
        table.set_groups(asset_index.clone())?;
        Ok(PooledTable {
            table,
            assets: used.iter().map(|s| s.asset.clone()).collect(),
            excluded: excluded.iter().map(|s| s.asset.clone()).collect(),
            asset_index,
            dates: used.iter().flat_map(|s| s.rows.iter().map(|r| r.date)).collect(),
            derived_flags: None,
        })
    }

    /// Add `V_derived`, `1/V_derived` and `H_derived` from `curve`. Flagged
    /// rows get NaN and drop out of any regression that uses them.
    pub fn add_derived(&mut self, series: &[AssetSeries], curve: &VelocityCurve) -> Result<(), EoeError> {
        let mut v = Vec::with_capacity(self.table.len());
        let mut h = Vec::with_capacity(self.table.len());
        let mut flags = Vec::new();
        for asset in &self.assets {
            let s = series
                .iter()
                .find(|s| &s.asset == asset)
                .ok_or(EoeError::MissingDerived)?;
            let d = derive_columns(s, curve);
            v.extend(d.v_derived.iter().map(|x| x.unwrap_or(f64::NAN)));
            h.extend(d.h_derived.iter().map(|x| x.unwrap_or(f64::NAN)));
            flags.extend(d.flags);
        }
        self.table.insert(INV_VELOCITY_DERIVED, v.iter().map(|x| 1.0 / x).collect())?;
        self.table.insert("V_derived", v)?;
        self.table.insert("H_derived", h)?;
        self.derived_flags = Some(flags);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn tickers(&self) -> Vec<String> {
        self.assets.iter().map(|a| a.ticker.clone()).collect()
    }

    pub fn ticker_of(&self, row: usize) -> &str {
        &self.assets[self.asset_index[row] as usize].ticker
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EoeOptions {
    pub intercept: bool,
    pub use_derived: bool,
}

impl Default for EoeOptions {
    fn default() -> Self {
        EoeOptions {
            intercept: true,
            use_derived: false,
        }
    }
}

pub fn eoe_spec(opts: &EoeOptions) -> ModelSpec {
    let inv_v = if opts.use_derived { INV_VELOCITY_DERIVED } else { INV_VELOCITY };
    ModelSpec::new(
        PRICE,
        true,
        vec![
            Feature::new(VOLUME, FeatureTransform::Log),
            Feature::new(SUPPLY, FeatureTransform::Log),
            Feature::new(inv_v, FeatureTransform::Log),
        ],
        opts.intercept,
    )
}

pub fn lookahead_spec() -> ModelSpec {
    ModelSpec::new(
        PRICE,
        true,
        vec![
            Feature::new(VOLUME, FeatureTransform::Log),
            Feature::new(SUPPLY, FeatureTransform::Log),
            Feature::new(VELOCITY, FeatureTransform::Log),
            Feature::new(PRICE, FeatureTransform::LagLog),
        ],
        true,
    )
}

/// `ln price = c0 + cT ln T + cM ln M + cV ln(1/V)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EoEModel {
    pub intercept: Option<f64>,
    pub c_t: f64,
    pub c_m: f64,
    pub c_inv_v: f64,
    pub adj_r2: Option<f64>,
    pub velocity_source: String,
    pub fitted_on: Vec<String>,
    pub fit: Option<FittedLinearModel>,
}

impl EoEModel {
    pub fn published() -> Self {
        EoEModel {
            intercept: None,
            c_t: PUBLISHED_EOE[0],
            c_m: PUBLISHED_EOE[1],
            c_inv_v: PUBLISHED_EOE[2],
            adj_r2: None,
            velocity_source: "published".into(),
            fitted_on: Vec::new(),
            fit: None,
        }
    }

    pub fn log_price(&self, t: f64, m: f64, v: f64) -> f64 {
        self.intercept.unwrap_or(0.0) + self.c_t * t.ln() + self.c_m * m.ln() + self.c_inv_v * (1.0 / v).ln()
    }

    pub fn predict_price(&self, t: f64, m: f64, v: f64) -> f64 {
        self.log_price(t, m, v).exp()
    }
}

/// `ln price = c0 + cT ln T + cM ln M + cV ln V + cP ln price[t-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookaheadModel {
    pub intercept: f64,
    pub c_t: f64,
    pub c_m: f64,
    pub c_v: f64,
    pub c_lag: f64,
    pub adj_r2: f64,
    pub fitted_on: Vec<String>,
    pub fit: FittedLinearModel,
}

impl LookaheadModel {
    pub fn predict_price(&self, t: f64, m: f64, v: f64, previous_price: f64) -> f64 {
        (self.intercept + self.c_t * t.ln() + self.c_m * m.ln() + self.c_v * v.ln() + self.c_lag * previous_price.ln())
            .exp()
    }
}

pub fn fit_eoe(pooled: &PooledTable, opts: &EoeOptions) -> Result<EoEModel, EoeError> {
    if opts.use_derived && pooled.derived_flags.is_none() {
        return Err(EoeError::MissingDerived);
    }
    let design = build_design(&eoe_spec(opts), &pooled.table)?;
    if design.len() < MIN_EOE_ROWS {
        return Err(EoeError::InsufficientData {
            needed: MIN_EOE_ROWS,
            got: design.len(),
        });
    }
    let fit = fit_design(&design, None)?;
    let c = fit.feature_coefficients();
    Ok(EoEModel {
        intercept: fit.intercept(),
        c_t: c[0],
        c_m: c[1],
        c_inv_v: c[2],
        adj_r2: fit.adj_r2.is_finite().then_some(fit.adj_r2),
        velocity_source: if opts.use_derived { "derived" } else { "empirical" }.into(),
        fitted_on: pooled.tickers(),
        fit: Some(fit),
    })
}

pub fn fit_lookahead(pooled: &PooledTable) -> Result<LookaheadModel, EoeError> {
    let design = build_design(&lookahead_spec(), &pooled.table)?;
    let fit = fit_design(&design, None)?;
    let c = fit.coefficients.clone();
    Ok(LookaheadModel {
        intercept: c[0],
        c_t: c[1],
        c_m: c[2],
        c_v: c[3],
        c_lag: c[4],
        adj_r2: fit.adj_r2,
        fitted_on: pooled.tickers(),
        fit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R2Domain {
    Price,
    LogPrice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMode {
    Shuffled,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    pub seed: u64,
    pub mode: FoldMode,
    pub domain: R2Domain,
}

impl CvOptions {
    pub fn new(seed: u64) -> Self {
        CvOptions {
            k: DEFAULT_FOLDS,
            seed,
            mode: FoldMode::Shuffled,
            domain: R2Domain::Price,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub row: usize,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub size: usize,
    pub mae: f64,
    pub rmse: f64,
    /// `None` for folds with fewer than two rows or no spread.
    pub r2_price: Option<f64>,
    pub r2_log_price: Option<f64>,
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

impl FoldResult {
    pub fn r2(&self, domain: R2Domain) -> Option<f64> {
        match domain {
            R2Domain::Price => self.r2_price,
            R2Domain::LogPrice => self.r2_log_price,
        }
    }

    pub fn test_rows(&self) -> Vec<usize> {
        self.predictions.iter().map(|p| p.row).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvAggregate {
    pub mae: f64,
    pub rmse: f64,
    /// Mean R² in the report's selected domain.
    pub r2: Option<f64>,
    pub r2_price: Option<f64>,
    pub r2_log_price: Option<f64>,
    /// Folds whose R² was undefined and left out of the means.
    pub r2_undefined_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub k: usize,
    pub seed: u64,
    pub mode: FoldMode,
    pub domain: R2Domain,
    pub spec: String,
    pub rows: usize,
    pub per_fold: Vec<FoldResult>,
    pub aggregate: CvAggregate,
}

impl CVReport {
    pub fn predictions(&self) -> Vec<Prediction> {
        let mut all: Vec<Prediction> = self.per_fold.iter().flat_map(|f| f.predictions.iter().copied()).collect();
        all.sort_by_key(|p| p.row);
        all
    }
}

fn r2_of(actual: &[f64], predicted: &[f64]) -> Option<f64> {
    if actual.len() < 2 {
        return None;
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let sst: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    let sse: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    (sst > 0.0).then(|| 1.0 - sse / sst)
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Fold `f` of `k` over `n` items holds positions `f n / k .. (f + 1) n / k`.
pub fn fold_bounds(n: usize, k: usize, f: usize) -> std::ops::Range<usize> {
    f * n / k..(f + 1) * n / k
}

/// k-fold cross-validation of a log-price spec. Errors are measured on
/// exponentiated predictions against the observed price.
pub fn cross_validate(spec: &ModelSpec, pooled: &PooledTable, opts: &CvOptions) -> Result<CVReport, EoeError> {
    let design = build_design(spec, &pooled.table)?;
    let n = design.len();
    let width = spec.width();
    if opts.k < 2 || n < opts.k || n - n.div_ceil(opts.k) < width {
        return Err(EoeError::InsufficientData {
            needed: opts.k.max(2).max(width + 1),
            got: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    if opts.mode == FoldMode::Shuffled {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    }
    let price = pooled.table.column(PRICE)?;

    let per_fold = (0..opts.k)
        .into_par_iter()
        .map(|f| {
            let range = fold_bounds(n, opts.k, f);
            let test = &order[range.clone()];
            let train: Vec<usize> = order[..range.start].iter().chain(&order[range.end..]).copied().collect();
            let model = fit_design(&design, Some(&train))?;
            let beta = nalgebra::DVector::from_column_slice(&model.coefficients);
            let predictions: Vec<Prediction> = test
                .iter()
                .map(|&i| {
                    let log_pred = (design.x.row(i) * &beta)[0];
                    Prediction {
                        row: design.rows[i],
                        actual: price[design.rows[i]],
                        predicted: log_pred.exp(),
                    }
                })
                .collect();
            let abs: Vec<f64> = predictions.iter().map(|p| (p.actual - p.predicted).abs()).collect();
            let m = abs.len() as f64;
            let actual: Vec<f64> = predictions.iter().map(|p| p.actual).collect();
            let pred: Vec<f64> = predictions.iter().map(|p| p.predicted).collect();
            let log_actual: Vec<f64> = test.iter().map(|&i| design.y[i]).collect();
            let log_pred: Vec<f64> = pred.iter().map(|p| p.ln()).collect();
            Ok(FoldResult {
                fold: f,
                size: test.len(),
                mae: abs.iter().sum::<f64>() / m,
                rmse: (abs.iter().map(|e| e * e).sum::<f64>() / m).sqrt(),
                r2_price: r2_of(&actual, &pred),
                r2_log_price: r2_of(&log_actual, &log_pred),
                predictions,
            })
        })
        .collect::<Result<Vec<FoldResult>, RegressError>>()?;

    let aggregate = CvAggregate {
        mae: mean_of(per_fold.iter().map(|f| f.mae)).unwrap_or(f64::NAN),
        rmse: mean_of(per_fold.iter().map(|f| f.rmse)).unwrap_or(f64::NAN),
        r2: mean_of(per_fold.iter().filter_map(|f| f.r2(opts.domain))),
        r2_price: mean_of(per_fold.iter().filter_map(|f| f.r2_price)),
        r2_log_price: mean_of(per_fold.iter().filter_map(|f| f.r2_log_price)),
        r2_undefined_folds: per_fold.iter().filter(|f| f.r2(opts.domain).is_none()).count(),
    };
    Ok(CVReport {
        k: opts.k,
        seed: opts.seed,
        mode: opts.mode,
        domain: opts.domain,
        spec: spec.to_string(),
        rows: n,
        per_fold,
        aggregate,
    })
}
