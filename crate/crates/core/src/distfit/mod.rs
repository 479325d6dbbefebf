//! Parametric distribution fitting and ranking.
//!
//! Each candidate family is fitted by maximum likelihood (closed form where
//! one exists, Newton or a simplex search otherwise) and scored by the
//! residual sum of squares between an equal-width density histogram and the
//! fitted density over each bin (bin-averaged by default, or sampled at the
//! bin centre). Lower RSS ranks higher.

mod family;
mod fit;
mod rank;
mod simplex;
pub mod special;

use thiserror::Error;

pub use family::{pdf, sample, DistributionFamily, FittedDistribution};
pub use fit::{fit_mle, negative_log_likelihood, MIN_CLOSED_FORM_SAMPLES, MIN_ITERATIVE_SAMPLES};
pub use rank::{
    qq_pairs, rank_fits, rank_fits_with, rss_score, rss_score_with, FitRanking, Histogram, RankedFit,
    RssMode, SkippedFamily, DEFAULT_BINS, MIN_BINS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("{family} requires a different support: {detail}")]
    UnsupportedSupport {
        family: DistributionFamily,
        detail: String,
    },
    #[error("{family} fit did not converge after {evaluations} evaluations")]
    NonConvergence {
        family: DistributionFamily,
        evaluations: usize,
    },
    #[error("sample has zero variance")]
    DegenerateSample,
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("sample contains non-finite values")]
    NonFiniteSample,
    #[error("invalid distribution parameters: {0}")]
    InvalidParameter(String),
    #[error("bin count must be at least 5, got {0}")]
    InvalidBinCount(usize),
    #[error("unknown distribution family {0:?}")]
    UnknownFamily(String),
    #[error("{0} produced a non-finite score")]
    NonFiniteScore(DistributionFamily),
    #[error("no family could be fitted")]
    AllFamiliesFailed,
}
