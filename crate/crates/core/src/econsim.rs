//! Monte Carlo token economies.
//!
//! Each economy holds `n` tokens whose velocities are drawn from a fitted
//! distribution. A token's holding time is `1 / v`, so the economy's mean
//! holding time is the mean of reciprocals, which is never smaller than the
//! reciprocal of the mean velocity.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distfit::FittedDistribution;
use crate::ingest::AssetId;

pub const DEFAULT_TOKENS_PER_ECONOMY: usize = 100;
pub const DEFAULT_ECONOMIES: usize = 1000;
pub const IQR_MULTIPLIER: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{family} does not have strictly positive support")]
    UnsupportedDistribution { family: String },
    #[error("drew a non-positive velocity {0}")]
    NonPositiveDraw(f64),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("no batches left after excluding non-medium-of-exchange assets")]
    EmptyAfterExclusion,
    #[error("IQR filter needs at least 4 values, got {0}")]
    TooFewValues(usize),
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub tokens_per_economy: usize,
    pub economies_per_distribution: usize,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn new(seed: u64) -> Self {
        SimulationConfig {
            tokens_per_economy: DEFAULT_TOKENS_PER_ECONOMY,
            economies_per_distribution: DEFAULT_ECONOMIES,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.tokens_per_economy < 2 {
            return Err(SimError::InvalidConfig(format!(
                "tokens_per_economy must be at least 2, got {}",
                self.tokens_per_economy
            )));
        }
        if self.economies_per_distribution < 1 {
            return Err(SimError::InvalidConfig(
                "economies_per_distribution must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EconomySample {
    pub mean_velocity: f64,
    pub mean_holding_time: f64,
    pub source_asset: AssetId,
}

impl EconomySample {
    pub fn product(&self) -> f64 {
        self.mean_velocity * self.mean_holding_time
    }
}

/// Mean velocity and mean holding time of an economy with the given token
/// velocities.
pub fn economy_from_velocities(velocities: &[f64], asset: &AssetId) -> Result<EconomySample, SimError> {
    if velocities.is_empty() {
        return Err(SimError::InvalidConfig("economy has no tokens".into()));
    }
    if let Some(&bad) = velocities.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(SimError::NonPositiveDraw(bad));
    }
    let n = velocities.len() as f64;
    Ok(EconomySample {
        mean_velocity: velocities.iter().sum::<f64>() / n,
        mean_holding_time: velocities.iter().map(|v| 1.0 / v).sum::<f64>() / n,
        source_asset: asset.clone(),
    })
}

fn check_support(dist: &FittedDistribution) -> Result<(), SimError> {
    if dist.has_positive_support() {
        Ok(())
    } else {
        Err(SimError::UnsupportedDistribution {
            family: dist.family().to_string(),
        })
    }
}

pub fn simulate_economy(
    dist: &FittedDistribution,
    n_tokens: usize,
    seed: u64,
    asset: &AssetId,
) -> Result<EconomySample, SimError> {
    check_support(dist)?;
    economy_from_velocities(&dist.sample(n_tokens, seed), asset)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for economy `index` of a batch seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

/// `economies_per_distribution` economies, economy `i` seeded with
/// `derive_seed(config.seed, i)`. Output is in economy order regardless of
/// scheduling.
pub fn simulate_batch(
    dist: &FittedDistribution,
    config: &SimulationConfig,
    asset: &AssetId,
) -> Result<Vec<EconomySample>, SimError> {
    config.validate()?;
    check_support(dist)?;
    (0..config.economies_per_distribution as u64)
        .into_par_iter()
        .map(|i| simulate_economy(dist, config.tokens_per_economy, derive_seed(config.seed, i), asset))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub economies: usize,
    pub mean_velocity: f64,
    pub mean_holding_time: f64,
    /// Average of `mean_velocity * mean_holding_time` over economies.
    pub mean_product: f64,
    pub min_product: f64,
}

pub fn summarize_batch(batch: &[EconomySample]) -> Option<BatchSummary> {
    if batch.is_empty() {
        return None;
    }
    let n = batch.len() as f64;
    Some(BatchSummary {
        economies: batch.len(),
        mean_velocity: batch.iter().map(|s| s.mean_velocity).sum::<f64>() / n,
        mean_holding_time: batch.iter().map(|s| s.mean_holding_time).sum::<f64>() / n,
        mean_product: batch.iter().map(EconomySample::product).sum::<f64>() / n,
        min_product: batch.iter().map(EconomySample::product).fold(f64::INFINITY, f64::min),
    })
}

/// Linear-interpolation quantile at order-statistic position `1 + p (n - 1)`.
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqrFences {
    pub q1: f64,
    pub q3: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IqrFences {
    pub fn from_values(values: &[f64]) -> Result<Self, SimError> {
        if values.len() < 4 {
            return Err(SimError::TooFewValues(values.len()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q1 = quantile_linear(&sorted, 0.25);
        let q3 = quantile_linear(&sorted, 0.75);
        let iqr = q3 - q1;
        Ok(IqrFences {
            q1,
            q3,
            lower: q1 - IQR_MULTIPLIER * iqr,
            upper: q3 + IQR_MULTIPLIER * iqr,
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

/// Keep-mask for Tukey fences at 1.5 IQR.
pub fn iqr_filter(values: &[f64]) -> Result<Vec<bool>, SimError> {
    let fences = IqrFences::from_values(values)?;
    Ok(values.iter().map(|&x| fences.contains(x)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionDataset {
    pub points: Vec<EconomySample>,
    pub excluded_assets: BTreeSet<AssetId>,
    pub iqr_removed_count: usize,
    pub velocity_fences: Option<IqrFences>,
    pub holding_time_fences: Option<IqrFences>,
}

impl RegressionDataset {
    pub fn velocities(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean_velocity).collect()
    }

    pub fn holding_times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean_holding_time).collect()
    }
}

/// Pool every medium-of-exchange batch (in asset order) and drop points that
/// fall outside the IQR fences on either coordinate. Fewer than four pooled
/// points are kept as-is.
pub fn build_regression_dataset(
    batches: &BTreeMap<AssetId, Vec<EconomySample>>,
) -> Result<RegressionDataset, SimError> {
    let excluded_assets: BTreeSet<AssetId> = batches
        .keys()
        .filter(|a| !a.is_medium_of_exchange)
        .cloned()
        .collect();
    let pooled: Vec<EconomySample> = batches
        .iter()
        .filter(|(a, _)| a.is_medium_of_exchange)
        .flat_map(|(_, b)| b.iter().cloned())
        .collect();
    if pooled.is_empty() {
        return Err(SimError::EmptyAfterExclusion);
    }
    if pooled.len() < 4 {
        return Ok(RegressionDataset {
            points: pooled,
            excluded_assets,
            iqr_removed_count: 0,
            velocity_fences: None,
            holding_time_fences: None,
        });
    }

    let v: Vec<f64> = pooled.iter().map(|p| p.mean_velocity).collect();
    let h: Vec<f64> = pooled.iter().map(|p| p.mean_holding_time).collect();
    let fv = IqrFences::from_values(&v)?;
    let fh = IqrFences::from_values(&h)?;
    let before = pooled.len();
    let points: Vec<EconomySample> = pooled
        .into_iter()
        .filter(|p| fv.contains(p.mean_velocity) && fh.contains(p.mean_holding_time))
        .collect();
    Ok(RegressionDataset {
        iqr_removed_count: before - points.len(),
        points,
        excluded_assets,
        velocity_fences: Some(fv),
        holding_time_fences: Some(fh),
    })
}

pub fn write_dataset_csv(dataset: &RegressionDataset) -> String {
    let mut out = String::from("asset,mean_V,mean_H\n");
    for p in &dataset.points {
        out.push_str(&format!(
            "{},{},{}\n",
            p.source_asset.ticker, p.mean_velocity, p.mean_holding_time
        ));
    }
    out
}

/// Read `asset,mean_V,mean_H` rows back into samples.
pub fn read_dataset_csv<R: Read>(input: R) -> Result<Vec<EconomySample>, SimError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let bad = |line: u64, reason: String| SimError::MalformedRow { line, reason };
    let header = reader.headers().map_err(|e| bad(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != ["asset", "mean_V", "mean_H"] {
        return Err(bad(1, "expected header asset,mean_V,mean_H".into()));
    }
    let mut out = Vec::new();
    for result in reader.records() {
        let row = result.map_err(|e| bad(0, e.to_string()))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let asset = AssetId::from_ticker(&row[0]).map_err(|e| bad(line, e.to_string()))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line, format!("not a number: {s:?}")));
        out.push(EconomySample {
            mean_velocity: num(&row[1])?,
            mean_holding_time: num(&row[2])?,
            source_asset: asset,
        });
    }
    Ok(out)
}

/// JSON sidecar describing how a dataset CSV was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub config: SimulationConfig,
    pub seed_derivation: String,
    pub distributions: BTreeMap<String, FittedDistribution>,
    pub excluded_assets: Vec<String>,
    pub outlier_rule: String,
    pub quantile_rule: String,
    pub velocity_fences: Option<IqrFences>,
    pub holding_time_fences: Option<IqrFences>,
    pub iqr_removed_count: usize,
    pub points: usize,
}

impl DatasetSidecar {
    pub fn new(
        config: SimulationConfig,
        distributions: BTreeMap<String, FittedDistribution>,
        dataset: &RegressionDataset,
    ) -> Self {
        DatasetSidecar {
            config,
            seed_derivation: "splitmix64(splitmix64(seed) ^ economy_index)".into(),
            distributions,
            excluded_assets: dataset.excluded_assets.iter().map(|a| a.ticker.clone()).collect(),
            outlier_rule: "per-coordinate 1.5 IQR fences on mean_V and mean_H, union removal".into(),
            quantile_rule: "linear interpolation at position 1 + p(n-1)".into(),
            velocity_fences: dataset.velocity_fences,
            holding_time_fences: dataset.holding_time_fences,
            iqr_removed_count: dataset.iqr_removed_count,
            points: dataset.points.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn asset(t: &str) -> AssetId {
        AssetId::from_ticker(t).unwrap()
    }

    fn lognormal(mu: f64, sigma: f64) -> FittedDistribution {
        FittedDistribution::Lognormal { mu, sigma }
    }

    #[test]
    fn degenerate_economy_is_exact() {
        let s = simulate_economy(&lognormal(2f64.ln(), 0.0), 100, 7, &asset("BTC")).unwrap();
        assert!((s.mean_velocity - 2.0).abs() < 1e-14);
        assert!((s.mean_holding_time - 0.5).abs() < 1e-14);
    }

    #[test]
    fn two_token_hand_example() {
        let s = economy_from_velocities(&[1.0, 3.0], &asset("BTC")).unwrap();
        assert_eq!(s.mean_velocity, 2.0);
        assert!((s.mean_holding_time - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.product() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            economy_from_velocities(&[1.0, 0.0], &asset("BTC")),
            Err(SimError::NonPositiveDraw(_))
        ));
        let normal = FittedDistribution::Normal { mu: 1.0, sigma: 1.0 };
        assert!(matches!(
            simulate_economy(&normal, 10, 1, &asset("BTC")),
            Err(SimError::UnsupportedDistribution { .. })
        ));
        let cfg = SimulationConfig { tokens_per_economy: 1, ..SimulationConfig::new(1) };
        assert!(simulate_batch(&lognormal(0.0, 1.0), &cfg, &asset("BTC")).is_err());
    }

    #[test]
    fn batch_is_deterministic_and_consistent() {
        let cfg = SimulationConfig::new(42);
        let d = lognormal(0.0, 1.0);
        let a = simulate_batch(&d, &cfg, &asset("ETH")).unwrap();
        let b = simulate_batch(&d, &cfg, &asset("ETH")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1000);
        assert!(a.iter().all(|s| s.product() >= 1.0));

        let one = SimulationConfig { economies_per_distribution: 1, ..cfg };
        let single = simulate_batch(&d, &one, &asset("ETH")).unwrap();
        let direct = simulate_economy(&d, 100, derive_seed(42, 0), &asset("ETH")).unwrap();
        assert_eq!(single, vec![direct]);
    }

    #[test]
    fn lognormal_product_moment() {
        // 10^4 economies of 100 tokens = 10^6 draws.
        // E[mean_V * mean_H] = 1/n + (1 - 1/n) e^{sigma^2} for iid tokens.
        let cfg = SimulationConfig { economies_per_distribution: 10_000, ..SimulationConfig::new(3) };
        let batch = simulate_batch(&lognormal(0.0, 1.0), &cfg, &asset("BTC")).unwrap();
        let avg = batch.iter().map(EconomySample::product).sum::<f64>() / batch.len() as f64;
        let n = 100.0;
        let expected = 1.0 / n + (1.0 - 1.0 / n) * std::f64::consts::E;
        assert!((avg / expected - 1.0).abs() < 0.02, "{avg} vs {expected}");
        let summary = summarize_batch(&batch).unwrap();
        assert!((summary.mean_product - avg).abs() < 1e-12);
        assert!(summary.min_product >= 1.0);
        assert!((summary.mean_holding_time / 0.5f64.exp() - 1.0).abs() < 0.02);
        assert!(summarize_batch(&[]).is_none());
    }

    #[test]
    fn iqr_examples() {
        let v: Vec<f64> = vec![1., 2., 3., 4., 5., 6., 7., 8., 9., 100.];
        let f = IqrFences::from_values(&v).unwrap();
        assert!((f.q1 - 3.25).abs() < 1e-12 && (f.q3 - 7.75).abs() < 1e-12);
        assert!((f.lower + 3.5).abs() < 1e-12 && (f.upper - 14.5).abs() < 1e-12);
        let mask = iqr_filter(&v).unwrap();
        assert_eq!(mask.iter().filter(|k| !**k).count(), 1);
        assert!(!mask[9]);

        assert!(iqr_filter(&[5.0; 6]).unwrap().iter().all(|k| *k));

        let ramp: Vec<f64> = (1..=100).map(f64::from).collect();
        let f = IqrFences::from_values(&ramp).unwrap();
        // Q1 = 25.75, Q3 = 75.25 at positions 25.75 and 75.25
        assert!((f.lower + 48.5).abs() < 1e-12 && (f.upper - 149.5).abs() < 1e-12);
        assert!(iqr_filter(&ramp).unwrap().iter().all(|k| *k));

        assert!(matches!(iqr_filter(&[1.0, 2.0, 3.0]), Err(SimError::TooFewValues(3))));
    }

    #[test]
    fn dataset_exclusion_and_counts() {
        let cfg = SimulationConfig { economies_per_distribution: 10, ..SimulationConfig::new(1) };
        let mut batches = BTreeMap::new();
        let usdt = asset("USDT");
        batches.insert(usdt.clone(), simulate_batch(&lognormal(0.0, 0.1), &cfg, &usdt).unwrap());
        assert_eq!(build_regression_dataset(&batches), Err(SimError::EmptyAfterExclusion));

        for (t, mu) in [("BTC", 0.0), ("ETH", 0.0)] {
            let a = asset(t);
            batches.insert(a.clone(), simulate_batch(&lognormal(mu, 0.0), &cfg, &a).unwrap());
        }
        let ds = build_regression_dataset(&batches).unwrap();
        assert_eq!(ds.points.len(), 20);
        assert_eq!(ds.iqr_removed_count, 0);
        assert!(ds.excluded_assets.contains(&usdt));
        assert!(ds.points.iter().all(|p| p.source_asset != usdt));
    }

    #[test]
    fn seven_assets_stay_inside_fences() {
        let cfg = SimulationConfig::new(9);
        let mut batches = BTreeMap::new();
        let params = [
            ("BTC", -3.0, 0.6),
            ("ETH", -2.5, 0.7),
            ("BNB", -3.5, 0.9),
            ("CRV", -2.0, 1.0),
            ("UNI", -3.0, 1.1),
            ("DOT", -2.7, 0.8),
            ("LINK", -2.2, 0.9),
            ("USDT", 0.0, 0.5),
        ];
        for (t, mu, s) in params {
            let a = asset(t);
            batches.insert(a.clone(), simulate_batch(&lognormal(mu, s), &cfg, &a).unwrap());
        }
        let ds = build_regression_dataset(&batches).unwrap();
        assert!(ds.points.len() <= 7000);
        assert_eq!(ds.points.len() + ds.iqr_removed_count, 7000);
        let (fv, fh) = (ds.velocity_fences.unwrap(), ds.holding_time_fences.unwrap());
        assert!(ds.points.iter().all(|p| fv.contains(p.mean_velocity) && fh.contains(p.mean_holding_time)));
        assert_eq!(build_regression_dataset(&batches).unwrap(), ds);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let cfg = SimulationConfig { economies_per_distribution: 8, ..SimulationConfig::new(5) };
        let a = asset("DOT");
        let mut batches = BTreeMap::new();
        batches.insert(a.clone(), simulate_batch(&lognormal(-1.0, 0.5), &cfg, &a).unwrap());
        let ds = build_regression_dataset(&batches).unwrap();
        let back = read_dataset_csv(write_dataset_csv(&ds).as_bytes()).unwrap();
        assert_eq!(back, ds.points);
    }

    proptest! {
        #[test]
        fn jensen_bound(vs in prop::collection::vec(1e-4f64..1e4, 1..200)) {
            let s = economy_from_velocities(&vs, &asset("BTC")).unwrap();
            prop_assert!(s.product() >= 1.0 - 1e-12);
            prop_assert!(1.0 / s.mean_velocity <= s.mean_holding_time * (1.0 + 1e-12));
        }

        #[test]
        fn iqr_keeps_everything_inside_fences(vs in prop::collection::vec(-1e3f64..1e3, 4..100)) {
            let f = IqrFences::from_values(&vs).unwrap();
            let mask = iqr_filter(&vs).unwrap();
            for (x, keep) in vs.iter().zip(mask) {
                prop_assert_eq!(keep, f.contains(*x));
            }
            prop_assert!(f.q1 <= f.q3);
        }
    }
}
