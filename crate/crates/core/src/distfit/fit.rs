//! Maximum-likelihood estimation for each family.

use super::family::{DistributionFamily, FittedDistribution};
use super::simplex::{minimize, SimplexOptions};
use super::special::{digamma, ln_beta, ln_gamma_half_ratio, trigamma};
use super::DistError;

/// Minimum sample count for the iteratively fitted families.
pub const MIN_ITERATIVE_SAMPLES: usize = 20;
/// Minimum sample count for the closed-form families.
pub const MIN_CLOSED_FORM_SAMPLES: usize = 2;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const MAX_T_DOF: f64 = 1e8;

/// Maximum-likelihood fit of `family` to `samples`.
pub fn fit_mle(samples: &[f64], family: DistributionFamily) -> Result<FittedDistribution, DistError> {
    check_samples(samples, family)?;
    let fitted = match family {
        DistributionFamily::Lognormal => {
            let logs: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
            let (mu, var) = mean_var(&logs);
            FittedDistribution::Lognormal { mu, sigma: var.sqrt() }
        }
        DistributionFamily::Normal => {
            let (mu, var) = mean_var(samples);
            FittedDistribution::Normal { mu, sigma: var.sqrt() }
        }
        DistributionFamily::Exponential => {
            let (mean, _) = mean_var(samples);
            FittedDistribution::Exponential { rate: 1.0 / mean }
        }
        DistributionFamily::Pareto => {
            let x_min = samples.iter().copied().fold(f64::INFINITY, f64::min);
            let s: f64 = samples.iter().map(|x| (x / x_min).ln()).sum();
            FittedDistribution::Pareto {
                alpha: samples.len() as f64 / s,
                x_min,
            }
        }
        DistributionFamily::Uniform => {
            let (lower, upper) = min_max(samples);
            FittedDistribution::Uniform { lower, upper }
        }
        DistributionFamily::Gamma => fit_gamma(samples)?,
        DistributionFamily::Weibull => fit_weibull(samples)?,
        DistributionFamily::Gev => fit_gev(samples)?,
        DistributionFamily::StudentT => fit_student_t(samples)?,
        DistributionFamily::Beta => fit_beta(samples)?,
    };
    fitted.validate().map_err(|_| DistError::NonConvergence {
        family,
        evaluations: 0,
    })?;
    Ok(fitted)
}

/// Negative log-likelihood of `samples` under `dist`.
pub fn negative_log_likelihood(dist: &FittedDistribution, samples: &[f64]) -> f64 {
    -samples.iter().map(|&x| dist.ln_pdf(x)).sum::<f64>()
}

fn check_samples(samples: &[f64], family: DistributionFamily) -> Result<(), DistError> {
    let needed = if family.is_iterative() {
        MIN_ITERATIVE_SAMPLES
    } else {
        MIN_CLOSED_FORM_SAMPLES
    };
    if samples.len() < needed {
        return Err(DistError::InsufficientSamples {
            needed,
            got: samples.len(),
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(DistError::NonFiniteSample);
    }
    if family.requires_positive() {
        let ok = match family {
            DistributionFamily::Exponential => samples.iter().all(|&x| x >= 0.0),
            _ => samples.iter().all(|&x| x > 0.0),
        };
        if !ok {
            return Err(DistError::UnsupportedSupport {
                family,
                detail: "requires strictly positive samples".into(),
            });
        }
    }
    let (lo, hi) = min_max(samples);
    if lo == hi {
        return Err(DistError::DegenerateSample);
    }
    Ok(())
}

pub(crate) fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

pub(crate) fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn quartiles(xs: &[f64]) -> (f64, f64, f64) {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < sorted.len() {
            sorted[i] + frac * (sorted[i + 1] - sorted[i])
        } else {
            sorted[i]
        }
    };
    (at(0.25), at(0.5), at(0.75))
}

/// Newton iteration on `ln k - ψ(k) = ln(mean) - mean(ln x)`.
fn fit_gamma(samples: &[f64]) -> Result<FittedDistribution, DistError> {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let mean_log = samples.iter().map(|x| x.ln()).sum::<f64>() / n;
    let s = mean.ln() - mean_log;
    if !(s > 0.0) {
        return Err(DistError::DegenerateSample);
    }
    let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    for iter in 0..200 {
        let f = k.ln() - digamma(k) - s;
        let df = 1.0 / k - trigamma(k);
        let mut next = k - f / df;
        if !(next > 0.0) || !next.is_finite() {
            next = k / 2.0;
        }
        let done = ((next - k) / k).abs() < 1e-13;
        k = next;
        if done {
            return Ok(FittedDistribution::Gamma {
                shape: k,
                scale: mean / k,
            });
        }
        if iter == 199 {
            break;
        }
    }
    Err(DistError::NonConvergence {
        family: DistributionFamily::Gamma,
        evaluations: 200,
    })
}

/// Bisection in log-shape on the Weibull profile score equation.
fn fit_weibull(samples: &[f64]) -> Result<FittedDistribution, DistError> {
    let (_, x_max) = min_max(samples);
    let ys: Vec<f64> = samples.iter().map(|x| x / x_max).collect();
    let logs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / logs.len() as f64;
    let score = |k: f64| {
        let mut num = 0.0;
        let mut den = 0.0;
        for (y, l) in ys.iter().zip(&logs) {
            let w = y.powf(k);
            num += w * l;
            den += w;
        }
        num / den - 1.0 / k - mean_log
    };
    let (mut lo, mut hi) = (1e-3f64.ln(), 1e3f64.ln());
    if score(lo.exp()) > 0.0 || score(hi.exp()) < 0.0 {
        return Err(DistError::NonConvergence {
            family: DistributionFamily::Weibull,
            evaluations: 2,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if score(mid.exp()) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let k = (0.5 * (lo + hi)).exp();
    let mean_pow = ys.iter().map(|y| y.powf(k)).sum::<f64>() / ys.len() as f64;
    Ok(FittedDistribution::Weibull {
        shape: k,
        scale: x_max * mean_pow.powf(1.0 / k),
    })
}

fn simplex_fit<F>(
    family: DistributionFamily,
    nll: F,
    start: &[f64],
    steps: &[f64],
) -> Result<Vec<f64>, DistError>
where
    F: FnMut(&[f64]) -> f64,
{
    match minimize(nll, start, steps, SimplexOptions::default()) {
        Ok(m) if m.value.is_finite() => Ok(m.point),
        Ok(m) | Err(m) => Err(DistError::NonConvergence {
            family,
            evaluations: m.evaluations,
        }),
    }
}

/// Simplex search over `(xi, loc, ln scale)` started from Gumbel moments.
fn fit_gev(samples: &[f64]) -> Result<FittedDistribution, DistError> {
    let (mean, var) = mean_var(samples);
    let scale0 = var.sqrt() * 6f64.sqrt() / std::f64::consts::PI;
    let loc0 = mean - EULER_GAMMA * scale0;
    let nll = |p: &[f64]| {
        let dist = FittedDistribution::Gev {
            shape_xi: p[0],
            loc: p[1],
            scale: p[2].exp(),
        };
        negative_log_likelihood(&dist, samples)
    };
    let mut xi0 = 0.1;
    if !nll(&[xi0, loc0, scale0.ln()]).is_finite() {
        xi0 = 0.0;
    }
    let p = simplex_fit(
        DistributionFamily::Gev,
        nll,
        &[xi0, loc0, scale0.ln()],
        &[0.1, 0.2 * scale0, 0.2],
    )?;
    Ok(FittedDistribution::Gev {
        shape_xi: p[0],
        loc: p[1],
        scale: p[2].exp(),
    })
}

/// Simplex search over `(ln dof, loc, ln scale)` started from the median and
/// interquartile spread.
fn fit_student_t(samples: &[f64]) -> Result<FittedDistribution, DistError> {
    let (q1, median, q3) = quartiles(samples);
    let mut scale0 = (q3 - q1) / 1.349;
    if !(scale0 > 0.0) {
        scale0 = mean_var(samples).1.sqrt();
    }
    let n = samples.len() as f64;
    let nll = |p: &[f64]| {
        // beyond this the likelihood is indistinguishable from the normal
        let dof = p[0].min(MAX_T_DOF.ln()).exp();
        let loc = p[1];
        let ln_scale = p[2];
        let scale = ln_scale.exp();
        let c = ln_gamma_half_ratio(dof / 2.0)
            - 0.5 * (dof * std::f64::consts::PI).ln()
            - ln_scale;
        let tail: f64 = samples
            .iter()
            .map(|x| {
                let z = (x - loc) / scale;
                (z * z / dof).ln_1p()
            })
            .sum();
        -(n * c) + (dof + 1.0) / 2.0 * tail
    };
    let p = simplex_fit(
        DistributionFamily::StudentT,
        nll,
        &[5f64.ln(), median, scale0.ln()],
        &[0.5, 0.2 * scale0, 0.2],
    )?;
    Ok(FittedDistribution::StudentT {
        dof: p[0].min(MAX_T_DOF.ln()).exp(),
        loc: p[1],
        scale: p[2].exp(),
    })
}

/// Beta fitted on samples rescaled into (0, 1) with bounds just outside the
/// sample range; simplex over `(ln alpha, ln beta)`.
fn fit_beta(samples: &[f64]) -> Result<FittedDistribution, DistError> {
    let (x_lo, x_hi) = min_max(samples);
    let eps = 1e-9 * (x_hi - x_lo);
    let lower = x_lo - eps;
    let upper = x_hi + eps;
    let width = upper - lower;
    let ys: Vec<f64> = samples.iter().map(|x| (x - lower) / width).collect();
    let n = ys.len() as f64;
    let sum_ln_y: f64 = ys.iter().map(|y| y.ln()).sum();
    let sum_ln_1my: f64 = ys.iter().map(|y| (-y).ln_1p()).sum();

    let (m, v) = mean_var(&ys);
    let common = m * (1.0 - m) / v - 1.0;
    let (a0, b0) = if common > 0.0 {
        (m * common, (1.0 - m) * common)
    } else {
        (1.0, 1.0)
    };
    let nll = |p: &[f64]| {
        let a = p[0].exp();
        let b = p[1].exp();
        -((a - 1.0) * sum_ln_y + (b - 1.0) * sum_ln_1my - n * ln_beta(a, b) - n * width.ln())
    };
    let p = simplex_fit(
        DistributionFamily::Beta,
        nll,
        &[a0.ln(), b0.ln()],
        &[0.2, 0.2],
    )?;
    Ok(FittedDistribution::Beta {
        alpha: p[0].exp(),
        beta: p[1].exp(),
        lower,
        upper,
    })
}
