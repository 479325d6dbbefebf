use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{FeatureTransform, ModelSpec, RegressError, Table};
use crate::distfit::special::student_t_two_sided;

/// Diagonal of R relative to its largest entry below which the design is
/// treated as collinear.
const RANK_TOLERANCE: f64 = 1e-10;

/// A design matrix with the table rows it was built from.
#[derive(Debug, Clone)]
pub struct Design {
    pub spec: ModelSpec,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Table row behind each design row.
    pub rows: Vec<usize>,
}

impl Design {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn lag_indices(table: &Table) -> Vec<Option<usize>> {
    match table.groups() {
        None => (0..table.len()).map(|i| i.checked_sub(1)).collect(),
        Some(groups) => {
            let mut last: HashMap<u32, usize> = HashMap::new();
            groups
                .iter()
                .enumerate()
                .map(|(i, g)| last.insert(*g, i))
                .collect()
        }
    }
}

struct Evaluator<'a> {
    spec: &'a ModelSpec,
    columns: Vec<&'a [f64]>,
    lags: Vec<Option<usize>>,
}

impl<'a> Evaluator<'a> {
    fn new(spec: &'a ModelSpec, table: &'a Table) -> Result<Self, RegressError> {
        spec.validate()?;
        let columns = spec
            .features
            .iter()
            .map(|f| table.column(&f.variable))
            .collect::<Result<_, _>>()?;
        Ok(Evaluator {
            spec,
            columns,
            lags: lag_indices(table),
        })
    }

    fn features(&self, i: usize) -> Option<Vec<f64>> {
        let mut row = Vec::with_capacity(self.spec.width());
        if self.spec.intercept {
            row.push(1.0);
        }
        for (f, col) in self.spec.features.iter().zip(&self.columns) {
            let x = match f.transform {
                FeatureTransform::LagLog => col[self.lags[i]?],
                _ => col[i],
            };
            row.push(f.transform.apply(x)?);
        }
        Some(row)
    }
}

fn response_value(spec: &ModelSpec, y: f64) -> Option<f64> {
    let y = if spec.response.log {
        if y > 0.0 {
            y.ln()
        } else {
            return None;
        }
    } else {
        y
    };
    y.is_finite().then_some(y)
}

/// Evaluate the spec on every table row, skipping rows where the response or
/// any feature is undefined.
pub fn build_design(spec: &ModelSpec, table: &Table) -> Result<Design, RegressError> {
    let eval = Evaluator::new(spec, table)?;
    let response = table.column(&spec.response.variable)?;
    let k = spec.width();
    let mut data = Vec::new();
    let mut ys = Vec::new();
    let mut rows = Vec::new();
    for i in 0..table.len() {
        let (Some(y), Some(x)) = (response_value(spec, response[i]), eval.features(i)) else {
            continue;
        };
        data.extend(x);
        ys.push(y);
        rows.push(i);
    }
    Ok(Design {
        spec: spec.clone(),
        x: DMatrix::from_row_slice(rows.len(), k, &data),
        y: DVector::from_vec(ys),
        rows,
    })
}

pub fn fit_ols(spec: &ModelSpec, table: &Table) -> Result<FittedLinearModel, RegressError> {
    fit_design(&build_design(spec, table)?, None)
}

/// `1 - (1 - r2)(n - 1)/(n - p - 1)` with `p` the number of regressors
/// excluding the intercept. NaN when `n - p - 1` is not positive.
pub fn adjusted_r2(r2: f64, n: usize, p: usize) -> f64 {
    if n <= p + 1 {
        return f64::NAN;
    }
    1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n - p - 1) as f64
}

/// Fit on all design rows, or only on the given positions into the design.
pub fn fit_design(design: &Design, subset: Option<&[usize]>) -> Result<FittedLinearModel, RegressError> {
    let spec = &design.spec;
    let names = spec.term_names();
    let (x, y, rows) = match subset {
        None => (design.x.clone(), design.y.clone(), design.rows.clone()),
        Some(idx) => (
            design.x.select_rows(idx),
            design.y.select_rows(idx),
            idx.iter().map(|&i| design.rows[i]).collect(),
        ),
    };
    let (n, k) = x.shape();
    if n < k || n == 0 {
        return Err(RegressError::InsufficientData { needed: k.max(1), got: n });
    }

    let norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
    let mut xs = x.clone();
    for (j, mut col) in xs.column_iter_mut().enumerate() {
        if !(norms[j] > 0.0) {
            return Err(RegressError::RankDeficient { column: names[j].clone() });
        }
        col /= norms[j];
    }

    let qr = xs.qr();
    let r = qr.r();
    let rmax = r.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if let Some(j) = (0..k).find(|&j| r[(j, j)].abs() <= RANK_TOLERANCE * rmax) {
        return Err(RegressError::RankDeficient { column: names[j].clone() });
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, k).into_owned();
    let bs = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| RegressError::RankDeficient { column: names[k - 1].clone() })?;
    let coefficients: Vec<f64> = bs.iter().zip(&norms).map(|(b, s)| b / s).collect();

    let fitted = &x * DVector::from_column_slice(&coefficients);
    let residuals: Vec<f64> = (&y - fitted).iter().copied().collect();
    let sse: f64 = residuals.iter().map(|e| e * e).sum();
    let ybar = y.mean();
    let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let r2 = if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        0.0
    };
    let p = spec.features.len();
    let adj_r2 = adjusted_r2(r2, n, p);

    let dof = n - k;
    let (std_errors, t_stats, p_values) = if dof == 0 {
        (vec![f64::NAN; k], vec![f64::NAN; k], vec![f64::NAN; k])
    } else {
        let s2 = sse / dof as f64;
        let rinv = r
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .ok_or_else(|| RegressError::RankDeficient { column: names[k - 1].clone() })?;
        let se: Vec<f64> = (0..k)
            .map(|j| (s2 * rinv.row(j).norm_squared()).sqrt() / norms[j])
            .collect();
        let t: Vec<f64> = coefficients
            .iter()
            .zip(&se)
            .map(|(&b, &s)| {
                if s > 0.0 {
                    b / s
                } else if b == 0.0 {
                    0.0
                } else {
                    b.signum() * f64::INFINITY
                }
            })
            .collect();
        let pv = t.iter().map(|&t| student_t_two_sided(t, dof as f64)).collect();
        (se, t, pv)
    };

    Ok(FittedLinearModel {
        spec: spec.clone(),
        terms: names,
        coefficients,
        std_errors,
        t_stats,
        p_values,
        r2,
        adj_r2,
        n,
        residual_dof: dof,
        residuals,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLinearModel {
    pub spec: ModelSpec,
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub std_errors: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub t_stats: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub p_values: Vec<f64>,
    pub r2: f64,
    #[serde(with = "nan_as_null::scalar")]
    pub adj_r2: f64,
    pub n: usize,
    pub residual_dof: usize,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    #[serde(skip)]
    pub rows: Vec<usize>,
}

impl FittedLinearModel {
    pub fn intercept(&self) -> Option<f64> {
        self.spec.intercept.then(|| self.coefficients[0])
    }

    /// Coefficient of the named term.
    pub fn coefficient(&self, term: &str) -> Option<f64> {
        self.terms.iter().position(|t| t == term).map(|i| self.coefficients[i])
    }

    /// Non-intercept coefficients, aligned with `spec.features`.
    pub fn feature_coefficients(&self) -> &[f64] {
        &self.coefficients[usize::from(self.spec.intercept)..]
    }

    pub fn feature_p_values(&self) -> &[f64] {
        &self.p_values[usize::from(self.spec.intercept)..]
    }

    /// Prediction in the response's fitted scale (log scale for a logged
    /// response) for every table row; `None` where a feature is undefined.
    pub fn predict(&self, table: &Table) -> Result<Vec<Option<f64>>, RegressError> {
        let eval = Evaluator::new(&self.spec, table)?;
        Ok((0..table.len())
            .map(|i| {
                eval.features(i)
                    .map(|x| x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
            })
            .collect())
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
            v.is_finite().then_some(*v).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
        }
    }
}
