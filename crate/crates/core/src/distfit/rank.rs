use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::family::{DistributionFamily, FittedDistribution};
use super::fit::{fit_mle, min_max, MIN_ITERATIVE_SAMPLES};
use super::DistError;

pub const DEFAULT_BINS: usize = 50;
pub const MIN_BINS: usize = 5;

/// Equal-width histogram normalised to a density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<usize>,
    pub densities: Vec<f64>,
}

impl Histogram {
    pub fn new(samples: &[f64], bins: usize) -> Result<Self, DistError> {
        if bins < MIN_BINS {
            return Err(DistError::InvalidBinCount(bins));
        }
        if samples.is_empty() || samples.iter().any(|x| !x.is_finite()) {
            return Err(DistError::NonFiniteSample);
        }
        let (lower, upper) = min_max(samples);
        if lower == upper {
            return Err(DistError::DegenerateSample);
        }
        let width = (upper - lower) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &x in samples {
            let i = (((x - lower) / width).floor() as usize).min(bins - 1);
            counts[i] += 1;
        }
        let norm = bins as f64 / (samples.len() as f64 * (upper - lower));
        let densities = counts.iter().map(|&c| c as f64 * norm).collect();
        Ok(Histogram {
            lower,
            upper,
            counts,
            densities,
        })
    }

    pub fn bin_width(&self) -> f64 {
        (self.upper - self.lower) / self.counts.len() as f64
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        let w = self.bin_width();
        (0..self.counts.len()).map(move |i| self.lower + (i as f64 + 0.5) * w)
    }
}

/// What the empirical histogram density is compared against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RssMode {
    /// Fitted probability mass of each bin divided by its width, i.e. the
    /// density a histogram of the fitted distribution would show.
    #[default]
    BinAverage,
    /// Fitted pdf evaluated at each bin centre.
    BinCenter,
}

/// Residual sum of squares between the empirical histogram density and the
/// fitted density, using the default [`RssMode`].
pub fn rss_score(dist: &FittedDistribution, samples: &[f64], bins: usize) -> Result<f64, DistError> {
    rss_score_with(dist, samples, bins, RssMode::default())
}

pub fn rss_score_with(
    dist: &FittedDistribution,
    samples: &[f64],
    bins: usize,
    mode: RssMode,
) -> Result<f64, DistError> {
    let hist = Histogram::new(samples, bins)?;
    Ok(residual_sum(dist, &hist, mode))
}

fn residual_sum(dist: &FittedDistribution, hist: &Histogram, mode: RssMode) -> f64 {
    let width = hist.bin_width();
    hist.densities
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let left = hist.lower + i as f64 * width;
            let fitted = match mode {
                RssMode::BinCenter => dist.pdf(left + 0.5 * width),
                RssMode::BinAverage => {
                    let right = if i + 1 == hist.counts.len() {
                        hist.upper
                    } else {
                        left + width
                    };
                    (dist.cdf(right) - dist.cdf(left)) / width
                }
            };
            (d - fitted).powi(2)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFit {
    #[serde(flatten)]
    pub dist: FittedDistribution,
    pub rss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFamily {
    pub family: DistributionFamily,
    pub reason: String,
}

/// Fitted families sorted by ascending RSS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRanking {
    /// Which series was fitted (e.g. `"V"`); empty when unnamed.
    #[serde(default)]
    pub column: String,
    #[serde(rename = "bins")]
    pub bin_count: usize,
    #[serde(rename = "n")]
    pub sample_count: usize,
    #[serde(rename = "fits")]
    pub entries: Vec<RankedFit>,
    #[serde(default)]
    pub skipped: Vec<SkippedFamily>,
    #[serde(default)]
    pub rss_mode: RssMode,
}

impl FitRanking {
    pub fn best(&self) -> Option<&RankedFit> {
        self.entries.first()
    }

    /// 1-based rank of `family`, if it was fitted.
    pub fn rank_of(&self, family: DistributionFamily) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.dist.family() == family)
            .map(|i| i + 1)
    }
}

/// Fit every requested family, score it, and sort ascending by RSS (ties
/// broken by family order). Families that cannot be fitted are recorded in
/// `skipped`.
pub fn rank_fits(
    samples: &[f64],
    families: &[DistributionFamily],
    bins: usize,
) -> Result<FitRanking, DistError> {
    rank_fits_with(samples, families, bins, RssMode::default())
}

pub fn rank_fits_with(
    samples: &[f64],
    families: &[DistributionFamily],
    bins: usize,
    mode: RssMode,
) -> Result<FitRanking, DistError> {
    if samples.len() < MIN_ITERATIVE_SAMPLES {
        return Err(DistError::InsufficientSamples {
            needed: MIN_ITERATIVE_SAMPLES,
            got: samples.len(),
        });
    }
    let hist = Histogram::new(samples, bins)?;

    let mut unique: Vec<DistributionFamily> = families.to_vec();
    unique.sort();
    unique.dedup();

    let outcomes: Vec<(DistributionFamily, Result<RankedFit, DistError>)> = unique
        .par_iter()
        .map(|&family| {
            let outcome = fit_mle(samples, family).and_then(|dist| {
                let rss = residual_sum(&dist, &hist, mode);
                if rss.is_finite() {
                    Ok(RankedFit { dist, rss })
                } else {
                    Err(DistError::NonFiniteScore(family))
                }
            });
            (family, outcome)
        })
        .collect();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (family, outcome) in outcomes {
        match outcome {
            Ok(fit) => entries.push(fit),
            Err(e) => skipped.push(SkippedFamily {
                family,
                reason: e.to_string(),
            }),
        }
    }
    if entries.is_empty() {
        return Err(DistError::AllFamiliesFailed);
    }
    entries.sort_by(|a, b| {
        a.rss
            .total_cmp(&b.rss)
            .then(a.dist.family().cmp(&b.dist.family()))
    });
    Ok(FitRanking {
        column: String::new(),
        bin_count: bins,
        sample_count: samples.len(),
        entries,
        skipped,
        rss_mode: mode,
    })
}

/// QQ pairs `(fitted quantile, empirical quantile)` at probabilities
/// `k / (n + 1)`.
pub fn qq_pairs(dist: &FittedDistribution, samples: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (dist.quantile((i + 1) as f64 / (n + 1.0)), x))
        .collect()
}
