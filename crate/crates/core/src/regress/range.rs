//! Where a fitted velocity curve `V(H)` is positive, and whether it is
//! monotonic there.

use serde::{Deserialize, Serialize};

use super::{FeatureTransform, FittedLinearModel, RegressError};

pub const SEARCH_MIN: f64 = 1e-9;
pub const SEARCH_MAX: f64 = 1e6;
pub const GRID_POINTS: usize = 10_000;

/// `intercept + sum coef * transform(H)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityCurve {
    pub intercept: f64,
    pub terms: Vec<(FeatureTransform, f64)>,
}

impl VelocityCurve {
    pub fn new(intercept: f64, terms: Vec<(FeatureTransform, f64)>) -> Result<Self, RegressError> {
        if terms.iter().any(|(t, _)| *t == FeatureTransform::LagLog) {
            return Err(RegressError::NotSingleVariable);
        }
        Ok(VelocityCurve { intercept, terms })
    }

    pub fn from_model(model: &FittedLinearModel) -> Result<Self, RegressError> {
        let spec = &model.spec;
        let var = spec.features.first().map(|f| f.variable.as_str());
        if spec.features.iter().any(|f| Some(f.variable.as_str()) != var) {
            return Err(RegressError::NotSingleVariable);
        }
        let terms = spec
            .features
            .iter()
            .zip(model.feature_coefficients())
            .map(|(f, c)| (f.transform, *c))
            .collect();
        VelocityCurve::new(model.intercept().unwrap_or(0.0), terms)
    }

    pub fn value(&self, h: f64) -> f64 {
        self.intercept
            + self
                .terms
                .iter()
                .map(|(t, c)| c * t.apply(h).unwrap_or(f64::NAN))
                .sum::<f64>()
    }

    pub fn derivative(&self, h: f64) -> f64 {
        self.terms
            .iter()
            .map(|(t, c)| c * t.derivative(h).unwrap_or(f64::NAN))
            .sum()
    }

    /// True when every term is a plain power of `H`, so the curve is
    /// defined for all real `H`.
    pub fn is_polynomial(&self) -> bool {
        self.terms
            .iter()
            .all(|(t, _)| matches!(t, FeatureTransform::Identity | FeatureTransform::Power { .. }))
    }

    fn is_constant(&self) -> bool {
        self.terms.iter().all(|(_, c)| *c == 0.0)
    }

    /// Smallest `H` with `value(H) = v`, searched on the positivity grid.
    pub fn solve_for(&self, v: f64) -> Option<f64> {
        let grid = log_grid();
        let f = |h: f64| self.value(h) - v;
        grid.windows(2).find_map(|w| {
            let (a, b) = (f(w[0]), f(w[1]));
            if a == 0.0 {
                Some(w[0])
            } else if a.is_finite() && b.is_finite() && (a > 0.0) != (b > 0.0) {
                Some(bisect(&f, w[0], w[1]))
            } else {
                None
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSign {
    Increasing,
    Decreasing,
    Mixed,
}

/// `lower < H < upper`; `upper = None` means unbounded, `lower = 0` means the
/// curve is positive down to the edge of the search window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveInterval {
    pub lower: f64,
    pub upper: Option<f64>,
}

impl PositiveInterval {
    fn contains(&self, h: f64) -> bool {
        h > self.lower && self.upper.is_none_or(|u| h < u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeAnalysis {
    pub positivity_range: Vec<PositiveInterval>,
    pub monotonic: bool,
    pub derivative_sign: DerivativeSign,
    /// Derivative identically zero.
    pub degenerate: bool,
    /// Sign changes of the derivative inside the positivity range.
    pub stationary_points: Vec<f64>,
    pub valid_range: String,
}

impl RangeAnalysis {
    /// Positive for every `H > 0` in the search window.
    pub fn covers_all_positive_h(&self) -> bool {
        matches!(
            self.positivity_range.as_slice(),
            [PositiveInterval { lower, upper: None }] if *lower == 0.0
        )
    }

    /// Finite interval endpoints in increasing order.
    pub fn boundaries(&self) -> Vec<f64> {
        self.positivity_range
            .iter()
            .flat_map(|i| [Some(i.lower).filter(|l| *l > 0.0), i.upper])
            .flatten()
            .collect()
    }
}

fn log_grid() -> Vec<f64> {
    let (a, b) = (SEARCH_MIN.ln(), SEARCH_MAX.ln());
    let step = (b - a) / (GRID_POINTS - 1) as f64;
    (0..GRID_POINTS)
        .map(|i| if i + 1 == GRID_POINTS { SEARCH_MAX } else { (a + step * i as f64).exp() })
        .collect()
}

/// Root of `f` bracketed by `[lo, hi]`, to a relative width of 1e-15.
fn bisect(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let lo_pos = f(lo) > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi {
            break;
        }
        if (f(mid) > 0.0) == lo_pos {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let decimals = (5 - x.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn describe(intervals: &[PositiveInterval], polynomial: bool) -> String {
    intervals
        .iter()
        .map(|i| match (i.lower == 0.0, i.upper) {
            (true, None) => "H > 0".to_string(),
            (true, Some(u)) if polynomial => format!("H < {}", format_sig(u)),
            (true, Some(u)) => format!("0 < H < {}", format_sig(u)),
            (false, None) => format!("H > {}", format_sig(i.lower)),
            (false, Some(u)) => format!("{} < H < {}", format_sig(i.lower), format_sig(u)),
        })
        .collect::<Vec<_>>()
        .join(" or ")
}

pub fn analyze_curve(curve: &VelocityCurve) -> Result<RangeAnalysis, RegressError> {
    let grid = log_grid();
    let value = |h: f64| curve.value(h);
    let vals: Vec<f64> = grid.iter().map(|&h| value(h)).collect();

    let mut intervals = Vec::new();
    let mut open: Option<f64> = (vals[0] > 0.0).then_some(0.0);
    for i in 1..grid.len() {
        let (was, is) = (vals[i - 1] > 0.0, vals[i] > 0.0);
        if was == is {
            continue;
        }
        let root = bisect(&value, grid[i - 1], grid[i]);
        if was {
            intervals.push(PositiveInterval {
                lower: open.take().unwrap_or(0.0),
                upper: Some(root),
            });
        } else {
            open = Some(root);
        }
    }
    if let Some(lower) = open {
        intervals.push(PositiveInterval { lower, upper: None });
    }
    if intervals.is_empty() {
        return Err(RegressError::NoPositiveRegion);
    }
    let valid_range = describe(&intervals, curve.is_polynomial());

    if curve.is_constant() {
        return Ok(RangeAnalysis {
            positivity_range: intervals,
            monotonic: true,
            derivative_sign: DerivativeSign::Mixed,
            degenerate: true,
            stationary_points: Vec::new(),
            valid_range,
        });
    }

    let deriv = |h: f64| curve.derivative(h);
    let inside: Vec<(f64, f64)> = grid
        .iter()
        .filter(|h| intervals.iter().any(|iv| iv.contains(**h)))
        .map(|&h| (h, deriv(h)))
        .collect();
    let any_up = inside.iter().any(|(_, d)| *d > 0.0);
    let any_down = inside.iter().any(|(_, d)| *d < 0.0);
    let stationary_points = inside
        .windows(2)
        .filter(|w| {
            let same_interval = intervals.iter().any(|iv| iv.contains(w[0].0) && iv.contains(w[1].0));
            same_interval && w[0].1 != 0.0 && (w[0].1 > 0.0) != (w[1].1 > 0.0)
        })
        .map(|w| bisect(&deriv, w[0].0, w[1].0))
        .collect();
    let derivative_sign = match (any_up, any_down) {
        (true, false) => DerivativeSign::Increasing,
        (false, true) => DerivativeSign::Decreasing,
        _ => DerivativeSign::Mixed,
    };
    Ok(RangeAnalysis {
        positivity_range: intervals,
        monotonic: !(any_up && any_down),
        derivative_sign,
        degenerate: !any_up && !any_down,
        stationary_points,
        valid_range,
    })
}

/// Range analysis of a fitted single-variable model.
pub fn analyze_range(model: &FittedLinearModel) -> Result<RangeAnalysis, RegressError> {
    analyze_curve(&VelocityCurve::from_model(model)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::FeatureTransform as T;
    use proptest::prelude::*;

    fn curve(intercept: f64, terms: &[(T, f64)]) -> VelocityCurve {
        VelocityCurve::new(intercept, terms.to_vec()).unwrap()
    }

    #[test]
    fn linear_boundary() {
        let r = analyze_curve(&curve(0.19854, &[(T::Identity, -0.00419)])).unwrap();
        assert_eq!(r.boundaries().len(), 1);
        assert!((r.boundaries()[0] - 0.19854 / 0.00419).abs() < 1e-9);
        assert_eq!(r.valid_range, "H < 47.3842");
        assert!(r.monotonic);
        assert_eq!(r.derivative_sign, DerivativeSign::Decreasing);
    }

    #[test]
    fn log_boundary() {
        let r = analyze_curve(&curve(0.37503, &[(T::Log, -0.09028)])).unwrap();
        let want = (0.37503f64 / 0.09028).exp();
        assert!((r.boundaries()[0] - want).abs() < 1e-9 * want);
        assert!(r.valid_range.starts_with("0 < H < 63.69"));
    }

    #[test]
    fn inverse_quadratic_boundary() {
        let c = curve(0.02213, &[(T::InversePower { k: 1 }, 1.53561), (T::InversePower { k: 2 }, -1.54978)]);
        let r = analyze_curve(&c).unwrap();
        // root of 0.02213 H^2 + 1.53561 H - 1.54978
        let (a, b, cc) = (0.02213f64, 1.53561f64, -1.54978f64);
        let want = (-b + (b * b - 4.0 * a * cc).sqrt()) / (2.0 * a);
        assert!((r.boundaries()[0] - want).abs() < 1e-9);
        assert!(r.valid_range.starts_with("H > 0.99496"));
        assert!(!r.covers_all_positive_h());
        assert!(!r.monotonic);
        assert_eq!(r.stationary_points.len(), 1);
    }

    #[test]
    fn published_inverse_model_is_admissible_shape() {
        let r = analyze_curve(&curve(0.03358, &[(T::InversePower { k: 1 }, 1.20329)])).unwrap();
        assert!(r.covers_all_positive_h());
        assert!(r.monotonic);
        assert_eq!(r.valid_range, "H > 0");
    }

    #[test]
    fn quadratic_positive_everywhere_but_not_monotonic() {
        let r = analyze_curve(&curve(0.30099, &[(T::Identity, -0.01470), (T::Power { k: 2 }, 0.00022)])).unwrap();
        assert!(r.covers_all_positive_h());
        assert!(!r.monotonic);
        let vertex = 0.01470 / (2.0 * 0.00022);
        assert!((r.stationary_points[0] - vertex).abs() < 1e-6);
    }

    #[test]
    fn constant_curve_is_degenerate() {
        let r = analyze_curve(&curve(0.5, &[])).unwrap();
        assert!(r.monotonic && r.degenerate);
        assert_eq!(r.derivative_sign, DerivativeSign::Mixed);
        assert!(matches!(analyze_curve(&curve(-0.5, &[])), Err(RegressError::NoPositiveRegion)));
        assert!(VelocityCurve::new(0.0, vec![(T::LagLog, 1.0)]).is_err());
    }

    #[test]
    fn solve_for_inverts_value() {
        let c = curve(0.03358, &[(T::InversePower { k: 1 }, 1.20329)]);
        let h = c.solve_for(0.2).unwrap();
        assert!((h - 1.20329 / (0.2 - 0.03358)).abs() < 1e-9 * h);
        assert!(c.solve_for(0.01).is_none());
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(63.693_12), "63.6931");
        assert_eq!(format_sig(0.066_523_71), "0.0665237");
        assert_eq!(format_sig(2.0), "2");
        assert_eq!(format_sig(123_456.7), "123457");
    }

    proptest! {
        #[test]
        fn boundaries_are_roots(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -1.0f64..1.0) {
            let cv = curve(a, &[(T::Log, b), (T::InversePower { k: 1 }, c)]);
            if let Ok(r) = analyze_curve(&cv) {
                for h in r.boundaries() {
                    prop_assert!(cv.value(h).abs() <= 1e-6, "V({h}) = {}", cv.value(h));
                }
            }
        }

        #[test]
        fn linear_monotone(a in 0.01f64..2.0, b in -1.0f64..1.0) {
            prop_assume!(b != 0.0);
            let r = analyze_curve(&curve(a, &[(T::Identity, b)])).unwrap();
            prop_assert!(r.monotonic);
            prop_assert!(r.stationary_points.is_empty());
        }
    }
}
