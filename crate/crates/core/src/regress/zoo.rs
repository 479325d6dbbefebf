//! The ten velocity-vs-holding-time specifications and the rule used to pick
//! one of them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::range::{analyze_range, RangeAnalysis};
use super::{fit_ols, Feature, FeatureTransform as T, FittedLinearModel, ModelSpec, RegressError, Table};

const VELOCITY: &str = "V";
const HOLDING_TIME: &str = "H";

/// `(id, spec)` for the ten models, richest combined model first.
pub fn velocity_model_specs() -> Vec<(&'static str, ModelSpec)> {
    let inv = |k| T::InversePower { k };
    let pow = |k| T::Power { k };
    let logp = |k| T::LogPower { k };
    let table: [(&str, Vec<T>); 10] = [
        ("linear_inverse_log", vec![T::Identity, inv(1), T::Log]),
        ("log_quadratic", vec![T::Log, logp(2)]),
        ("log_cubic", vec![T::Log, logp(2), logp(3)]),
        ("inverse_cubic", vec![inv(1), inv(2), inv(3)]),
        ("inverse_quadratic", vec![inv(1), inv(2)]),
        ("cubic", vec![T::Identity, pow(2), pow(3)]),
        ("inverse", vec![inv(1)]),
        ("quadratic", vec![T::Identity, pow(2)]),
        ("log", vec![T::Log]),
        ("linear", vec![T::Identity]),
    ];
    table
        .into_iter()
        .map(|(id, ts)| {
            let features = ts.into_iter().map(|t| Feature::new(HOLDING_TIME, t)).collect();
            (id, ModelSpec::new(VELOCITY, false, features, true))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRule {
    pub alpha: f64,
    pub require_significant: bool,
    /// Also require the intercept to be significant.
    pub include_intercept: bool,
    pub require_monotonic: bool,
    pub require_full_positivity: bool,
    /// Adjusted R² values closer than this count as tied; ties go to the
    /// model with fewer coefficients, then to the earlier spec.
    pub tie_tolerance: f64,
}

impl Default for SelectionRule {
    fn default() -> Self {
        SelectionRule {
            alpha: 0.05,
            require_significant: true,
            include_intercept: false,
            require_monotonic: true,
            require_full_positivity: true,
            tie_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooEntry {
    pub id: String,
    pub equation: String,
    pub adj_r2: f64,
    pub remarks: Vec<String>,
    pub valid_range: String,
    pub admissible: bool,
    pub model: FittedLinearModel,
    pub range: Option<RangeAnalysis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooFailure {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooReport {
    pub n: usize,
    pub rule: SelectionRule,
    pub entries: Vec<ZooEntry>,
    pub failures: Vec<ZooFailure>,
    pub selected: String,
    /// No entry was admissible and the best adjusted R² was taken instead.
    pub fallback: bool,
}

impl ZooReport {
    pub fn selected_entry(&self) -> &ZooEntry {
        self.entries
            .iter()
            .find(|e| e.id == self.selected)
            .expect("selected id is always one of the entries")
    }

    pub fn entry(&self, id: &str) -> Option<&ZooEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// `V = 0.03358 + 1.20329 * 1/H`, five decimals.
pub fn equation_string(model: &FittedLinearModel) -> String {
    let mut out = format!("{} =", model.spec.response.label());
    let mut first = true;
    for (term, c) in model.terms.iter().zip(&model.coefficients) {
        let body = if term == "intercept" {
            format!("{:.5}", c.abs())
        } else {
            format!("{:.5} * {}", c.abs(), term)
        };
        match (first, *c < 0.0) {
            (true, false) => out.push_str(&format!(" {body}")),
            (true, true) => out.push_str(&format!(" -{body}")),
            (false, false) => out.push_str(&format!(" + {body}")),
            (false, true) => out.push_str(&format!(" - {body}")),
        }
        first = false;
    }
    out
}

fn remarks(model: &FittedLinearModel, range: Option<&RangeAnalysis>, alpha: f64) -> Vec<String> {
    let skip = usize::from(model.spec.intercept);
    let mut out: Vec<String> = model.terms[skip..]
        .iter()
        .zip(&model.p_values[skip..])
        .filter(|(_, p)| !(**p <= alpha))
        .map(|(t, _)| format!("coef for {t} has p-value > {alpha}"))
        .collect();
    match range {
        Some(r) if !r.monotonic => out.push("non-monotonic relationship".into()),
        None => out.push("no positive region".into()),
        _ => {}
    }
    out
}

fn is_admissible(model: &FittedLinearModel, range: Option<&RangeAnalysis>, rule: &SelectionRule) -> bool {
    let Some(range) = range else { return false };
    let skip = usize::from(model.spec.intercept && !rule.include_intercept);
    let significant = model.p_values[skip..].iter().all(|p| *p < rule.alpha);
    (!rule.require_significant || significant)
        && (!rule.require_monotonic || range.monotonic)
        && (!rule.require_full_positivity || range.covers_all_positive_h())
        && model.adj_r2.is_finite()
}

/// Index of the chosen entry and whether the fallback was used.
pub fn select_model(entries: &[ZooEntry], rule: &SelectionRule) -> Option<(usize, bool)> {
    let pick = |pool: Vec<usize>| -> Option<usize> {
        let best = pool
            .iter()
            .map(|&i| entries[i].adj_r2)
            .fold(f64::NEG_INFINITY, f64::max);
        pool.into_iter()
            .filter(|&i| entries[i].adj_r2 >= best - rule.tie_tolerance)
            .min_by_key(|&i| (entries[i].model.coefficients.len(), i))
    };
    let admissible: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].admissible).collect();
    if let Some(i) = pick(admissible) {
        return Some((i, false));
    }
    let finite: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].adj_r2.is_finite()).collect();
    pick(finite).map(|i| (i, true))
}

/// Fit all ten specs of `V` on `H` and select one under `rule`.
pub fn fit_velocity_zoo(h: &[f64], v: &[f64], rule: &SelectionRule) -> Result<ZooReport, RegressError> {
    if h.is_empty() || h.len() != v.len() {
        return Err(RegressError::InsufficientData { needed: 1, got: h.len().min(v.len()) });
    }
    let table = Table::new(h.len())
        .with(HOLDING_TIME, h.to_vec())?
        .with(VELOCITY, v.to_vec())?;
    let results: Vec<(&str, Result<FittedLinearModel, RegressError>)> = velocity_model_specs()
        .into_par_iter()
        .map(|(id, spec)| (id, fit_ols(&spec, &table)))
        .collect();

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (id, result) in results {
        match result {
            Ok(model) => {
                let range = analyze_range(&model).ok();
                entries.push(ZooEntry {
                    id: id.to_string(),
                    equation: equation_string(&model),
                    adj_r2: model.adj_r2,
                    remarks: remarks(&model, range.as_ref(), rule.alpha),
                    valid_range: range.as_ref().map_or_else(|| "none".into(), |r| r.valid_range.clone()),
                    admissible: is_admissible(&model, range.as_ref(), rule),
                    model,
                    range,
                });
            }
            Err(e) => failures.push(ZooFailure {
                id: id.to_string(),
                reason: e.to_string(),
            }),
        }
    }
    let (index, fallback) = select_model(&entries, rule).ok_or(RegressError::InsufficientData {
        needed: 3,
        got: h.len(),
    })?;
    Ok(ZooReport {
        n: h.len(),
        rule: *rule,
        selected: entries[index].id.clone(),
        entries,
        failures,
        fallback,
    })
}
