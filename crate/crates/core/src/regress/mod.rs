//! Ordinary least squares over transformed features.
//!
//! Coefficients come from a Householder QR of the column-scaled design, and
//! inference uses classical (homoscedastic) standard errors with Student t
//! p-values. [`range`] locates where a fitted velocity curve is positive and
//! whether it is monotonic there; [`zoo`] fits the ten velocity-vs-holding
//! time specifications and picks an admissible one.

mod ols;
pub mod range;
pub mod zoo;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ols::{adjusted_r2, build_design, fit_design, fit_ols, Design, FittedLinearModel};
pub use range::{analyze_curve, analyze_range, DerivativeSign, PositiveInterval, RangeAnalysis, VelocityCurve};
pub use zoo::{
    fit_velocity_zoo, select_model, velocity_model_specs, SelectionRule, ZooEntry, ZooReport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressError {
    #[error("design matrix is rank deficient (column {column})")]
    RankDeficient { column: String },
    #[error("need at least {needed} usable rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("column {0:?} not found")]
    MissingColumn(String),
    #[error("column {name:?} has {got} rows, table has {expected}")]
    ColumnLength { name: String, expected: usize, got: usize },
    #[error("model is not a function of a single variable")]
    NotSingleVariable,
    #[error("fitted curve is not positive anywhere on (0, 1e6]")]
    NoPositiveRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum FeatureTransform {
    Identity,
    /// `x^k`, k at least 2.
    Power { k: u32 },
    Log,
    /// `(ln x)^k`, k at least 2.
    LogPower { k: u32 },
    /// `x^-k`, k at least 1.
    InversePower { k: u32 },
    /// `ln` of the previous row's value within the same group.
    LagLog,
}

impl FeatureTransform {
    /// Transform of `x`, or `None` outside the domain.
    pub fn apply(self, x: f64) -> Option<f64> {
        let y = match self {
            FeatureTransform::Identity => x,
            FeatureTransform::Power { k } => x.powi(k as i32),
            FeatureTransform::Log | FeatureTransform::LagLog if x > 0.0 => x.ln(),
            FeatureTransform::LogPower { k } if x > 0.0 => x.ln().powi(k as i32),
            FeatureTransform::InversePower { k } if x != 0.0 => x.powi(-(k as i32)),
            _ => return None,
        };
        y.is_finite().then_some(y)
    }

    /// d/dx of the transform; `None` for lagged features.
    pub fn derivative(self, x: f64) -> Option<f64> {
        Some(match self {
            FeatureTransform::Identity => 1.0,
            FeatureTransform::Power { k } => k as f64 * x.powi(k as i32 - 1),
            FeatureTransform::Log => 1.0 / x,
            FeatureTransform::LogPower { k } => k as f64 * x.ln().powi(k as i32 - 1) / x,
            FeatureTransform::InversePower { k } => -(k as f64) * x.powi(-(k as i32) - 1),
            FeatureTransform::LagLog => return None,
        })
    }

    pub fn label(self, var: &str) -> String {
        match self {
            FeatureTransform::Identity => var.to_string(),
            FeatureTransform::Power { k } => format!("{var}^{k}"),
            FeatureTransform::Log => format!("log({var})"),
            FeatureTransform::LogPower { k } => format!("log({var})^{k}"),
            FeatureTransform::InversePower { k: 1 } => format!("1/{var}"),
            FeatureTransform::InversePower { k } => format!("1/{var}^{k}"),
            FeatureTransform::LagLog => format!("log({var}_lag1)"),
        }
    }

    fn validate(self) -> Result<(), RegressError> {
        match self {
            FeatureTransform::Power { k } | FeatureTransform::LogPower { k } if k < 2 => Err(
                RegressError::InvalidSpec(format!("power transforms need k >= 2, got {k}")),
            ),
            FeatureTransform::InversePower { k: 0 } => {
                Err(RegressError::InvalidSpec("inverse power needs k >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub variable: String,
    #[serde(flatten)]
    pub transform: FeatureTransform,
}

impl Feature {
    pub fn new(variable: &str, transform: FeatureTransform) -> Self {
        Feature {
            variable: variable.to_string(),
            transform,
        }
    }

    pub fn label(&self) -> String {
        self.transform.label(&self.variable)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub variable: String,
    pub log: bool,
}

impl Response {
    pub fn label(&self) -> String {
        if self.log {
            format!("log({})", self.variable)
        } else {
            self.variable.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: Response,
    pub features: Vec<Feature>,
    pub intercept: bool,
}

impl ModelSpec {
    pub fn new(response: &str, log_response: bool, features: Vec<Feature>, intercept: bool) -> Self {
        ModelSpec {
            response: Response {
                variable: response.to_string(),
                log: log_response,
            },
            features,
            intercept,
        }
    }

    pub fn validate(&self) -> Result<(), RegressError> {
        if self.features.is_empty() {
            return Err(RegressError::InvalidSpec("no features".into()));
        }
        for (i, f) in self.features.iter().enumerate() {
            f.transform.validate()?;
            if self.features[..i].contains(f) {
                return Err(RegressError::InvalidSpec(format!("duplicate feature {}", f.label())));
            }
        }
        Ok(())
    }

    /// Column labels in coefficient order.
    pub fn term_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.features.len() + 1);
        if self.intercept {
            names.push("intercept".to_string());
        }
        names.extend(self.features.iter().map(Feature::label));
        names
    }

    /// Number of fitted coefficients.
    pub fn width(&self) -> usize {
        self.features.len() + usize::from(self.intercept)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut terms: Vec<String> = Vec::new();
        if self.intercept {
            terms.push("1".into());
        }
        terms.extend(self.features.iter().map(Feature::label));
        write!(f, "{} ~ {}", self.response.label(), terms.join(" + "))
    }
}

/// Named numeric columns of equal length, with optional group labels that
/// scope lagged features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    len: usize,
    columns: BTreeMap<String, Vec<f64>>,
    groups: Option<Vec<u32>>,
}

impl Table {
    pub fn new(len: usize) -> Self {
        Table {
            len,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>) -> Result<(), RegressError> {
        if values.len() != self.len {
            return Err(RegressError::ColumnLength {
                name: name.to_string(),
                expected: self.len,
                got: values.len(),
            });
        }
        self.columns.insert(name.to_string(), values);
        Ok(())
    }

    pub fn with(mut self, name: &str, values: Vec<f64>) -> Result<Self, RegressError> {
        self.insert(name, values)?;
        Ok(self)
    }

    pub fn set_groups(&mut self, groups: Vec<u32>) -> Result<(), RegressError> {
        if groups.len() != self.len {
            return Err(RegressError::ColumnLength {
                name: "groups".into(),
                expected: self.len,
                got: groups.len(),
            });
        }
        self.groups = Some(groups);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<&[f64], RegressError> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| RegressError::MissingColumn(name.to_string()))
    }

    pub fn groups(&self) -> Option<&[u32]> {
        self.groups.as_deref()
    }

    /// Index of the row preceding `i` in the same group.
    pub fn previous_row(&self, i: usize) -> Option<usize> {
        match &self.groups {
            None => i.checked_sub(1),
            Some(g) => (0..i).rev().find(|&j| g[j] == g[i]),
        }
    }
}
