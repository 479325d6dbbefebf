use std::fmt;
use std::str::FromStr;

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::special::{
    beta_inc, gamma_p, ln_beta, ln_gamma, ln_gamma_half_ratio, normal_cdf, normal_quantile, student_t_cdf,
};
use super::DistError;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const GUMBEL_XI: f64 = 1e-12;

/// The candidate parametric families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionFamily {
    Lognormal,
    Normal,
    Exponential,
    Gamma,
    Beta,
    Gev,
    Pareto,
    StudentT,
    Weibull,
    Uniform,
}

impl DistributionFamily {
    pub const ALL: [DistributionFamily; 10] = [
        DistributionFamily::Lognormal,
        DistributionFamily::Normal,
        DistributionFamily::Exponential,
        DistributionFamily::Gamma,
        DistributionFamily::Beta,
        DistributionFamily::Gev,
        DistributionFamily::Pareto,
        DistributionFamily::StudentT,
        DistributionFamily::Weibull,
        DistributionFamily::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistributionFamily::Lognormal => "lognormal",
            DistributionFamily::Normal => "normal",
            DistributionFamily::Exponential => "exponential",
            DistributionFamily::Gamma => "gamma",
            DistributionFamily::Beta => "beta",
            DistributionFamily::Gev => "gev",
            DistributionFamily::Pareto => "pareto",
            DistributionFamily::StudentT => "student_t",
            DistributionFamily::Weibull => "weibull",
            DistributionFamily::Uniform => "uniform",
        }
    }

    /// Families whose support is confined to the positive half-line.
    pub fn requires_positive(self) -> bool {
        matches!(
            self,
            DistributionFamily::Lognormal
                | DistributionFamily::Exponential
                | DistributionFamily::Gamma
                | DistributionFamily::Pareto
                | DistributionFamily::Weibull
        )
    }

    /// Families fitted iteratively rather than in closed form.
    pub fn is_iterative(self) -> bool {
        matches!(
            self,
            DistributionFamily::Gamma
                | DistributionFamily::Beta
                | DistributionFamily::Gev
                | DistributionFamily::StudentT
                | DistributionFamily::Weibull
        )
    }
}

impl fmt::Display for DistributionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistributionFamily {
    type Err = DistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        let family = match key.as_str() {
            "lognormal" | "lognorm" => DistributionFamily::Lognormal,
            "normal" | "norm" => DistributionFamily::Normal,
            "exponential" | "expon" => DistributionFamily::Exponential,
            "gamma" => DistributionFamily::Gamma,
            "beta" => DistributionFamily::Beta,
            "gev" | "genextreme" => DistributionFamily::Gev,
            "pareto" => DistributionFamily::Pareto,
            "student_t" | "t" => DistributionFamily::StudentT,
            "weibull" => DistributionFamily::Weibull,
            "uniform" => DistributionFamily::Uniform,
            _ => return Err(DistError::UnknownFamily(s.to_string())),
        };
        Ok(family)
    }
}

/// A family together with its estimated parameters.
///
/// Serialises as `{"family": "...", "params": {...}}`. The GEV uses the
/// `xi` sign convention where `xi > 0` is the heavy (Fréchet) tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum FittedDistribution {
    Lognormal { mu: f64, sigma: f64 },
    Normal { mu: f64, sigma: f64 },
    Exponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
    Beta { alpha: f64, beta: f64, lower: f64, upper: f64 },
    Gev { shape_xi: f64, loc: f64, scale: f64 },
    Pareto { alpha: f64, x_min: f64 },
    StudentT { dof: f64, loc: f64, scale: f64 },
    Weibull { shape: f64, scale: f64 },
    Uniform { lower: f64, upper: f64 },
}

impl FittedDistribution {
    pub fn family(&self) -> DistributionFamily {
        match self {
            FittedDistribution::Lognormal { .. } => DistributionFamily::Lognormal,
            FittedDistribution::Normal { .. } => DistributionFamily::Normal,
            FittedDistribution::Exponential { .. } => DistributionFamily::Exponential,
            FittedDistribution::Gamma { .. } => DistributionFamily::Gamma,
            FittedDistribution::Beta { .. } => DistributionFamily::Beta,
            FittedDistribution::Gev { .. } => DistributionFamily::Gev,
            FittedDistribution::Pareto { .. } => DistributionFamily::Pareto,
            FittedDistribution::StudentT { .. } => DistributionFamily::StudentT,
            FittedDistribution::Weibull { .. } => DistributionFamily::Weibull,
            FittedDistribution::Uniform { .. } => DistributionFamily::Uniform,
        }
    }

    /// Checks parameter constraints. Lognormal and normal accept `sigma = 0`
    /// (a point mass) so that degenerate economies can be simulated.
    pub fn validate(&self) -> Result<(), DistError> {
        use FittedDistribution::*;
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match *self {
            Lognormal { mu, sigma } | Normal { mu, sigma } => finite(&[mu, sigma]) && sigma >= 0.0,
            Exponential { rate } => rate.is_finite() && rate > 0.0,
            Gamma { shape, scale } | Weibull { shape, scale } => {
                finite(&[shape, scale]) && shape > 0.0 && scale > 0.0
            }
            Beta { alpha, beta, lower, upper } => {
                finite(&[alpha, beta, lower, upper]) && alpha > 0.0 && beta > 0.0 && upper > lower
            }
            Gev { shape_xi, loc, scale } => finite(&[shape_xi, loc, scale]) && scale > 0.0,
            Pareto { alpha, x_min } => finite(&[alpha, x_min]) && alpha > 0.0 && x_min > 0.0,
            StudentT { dof, loc, scale } => {
                finite(&[dof, loc, scale]) && dof > 0.0 && scale > 0.0
            }
            Uniform { lower, upper } => finite(&[lower, upper]) && upper > lower,
        };
        if ok {
            Ok(())
        } else {
            Err(DistError::InvalidParameter(format!("{self:?}")))
        }
    }

    /// True when every draw is strictly positive.
    pub fn has_positive_support(&self) -> bool {
        match *self {
            FittedDistribution::Lognormal { .. }
            | FittedDistribution::Gamma { .. }
            | FittedDistribution::Pareto { .. }
            | FittedDistribution::Weibull { .. }
            | FittedDistribution::Exponential { .. } => true,
            FittedDistribution::Beta { lower, .. } | FittedDistribution::Uniform { lower, .. } => {
                lower > 0.0
            }
            FittedDistribution::Gev { shape_xi, loc, scale } => {
                shape_xi > 0.0 && loc - scale / shape_xi >= 0.0
            }
            FittedDistribution::Normal { .. } | FittedDistribution::StudentT { .. } => false,
        }
    }

    /// Named parameter values in declaration order.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        use FittedDistribution::*;
        match *self {
            Lognormal { mu, sigma } | Normal { mu, sigma } => vec![("mu", mu), ("sigma", sigma)],
            Exponential { rate } => vec![("rate", rate)],
            Gamma { shape, scale } | Weibull { shape, scale } => {
                vec![("shape", shape), ("scale", scale)]
            }
            Beta { alpha, beta, lower, upper } => vec![
                ("alpha", alpha),
                ("beta", beta),
                ("lower", lower),
                ("upper", upper),
            ],
            Gev { shape_xi, loc, scale } => {
                vec![("shape_xi", shape_xi), ("loc", loc), ("scale", scale)]
            }
            Pareto { alpha, x_min } => vec![("alpha", alpha), ("x_min", x_min)],
            StudentT { dof, loc, scale } => vec![("dof", dof), ("loc", loc), ("scale", scale)],
            Uniform { lower, upper } => vec![("lower", lower), ("upper", upper)],
        }
    }

    /// Log-density; `-inf` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        use FittedDistribution::*;
        let neg_inf = f64::NEG_INFINITY;
        match *self {
            Lognormal { mu, sigma } => {
                if x <= 0.0 || sigma <= 0.0 {
                    return neg_inf;
                }
                let z = (x.ln() - mu) / sigma;
                -0.5 * z * z - LN_SQRT_2PI - sigma.ln() - x.ln()
            }
            Normal { mu, sigma } => {
                if sigma <= 0.0 {
                    return neg_inf;
                }
                let z = (x - mu) / sigma;
                -0.5 * z * z - LN_SQRT_2PI - sigma.ln()
            }
            Exponential { rate } => {
                if x < 0.0 {
                    return neg_inf;
                }
                rate.ln() - rate * x
            }
            Gamma { shape, scale } => {
                if x <= 0.0 {
                    return neg_inf;
                }
                (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()
            }
            Beta { alpha, beta, lower, upper } => {
                let width = upper - lower;
                let y = (x - lower) / width;
                if y <= 0.0 || y >= 1.0 {
                    return neg_inf;
                }
                (alpha - 1.0) * y.ln() + (beta - 1.0) * (1.0 - y).ln()
                    - ln_beta(alpha, beta)
                    - width.ln()
            }
            Gev { shape_xi, loc, scale } => {
                let z = (x - loc) / scale;
                if shape_xi.abs() < GUMBEL_XI {
                    return -z - (-z).exp() - scale.ln();
                }
                let t = 1.0 + shape_xi * z;
                if t <= 0.0 {
                    return neg_inf;
                }
                let lt = t.ln();
                -(1.0 + 1.0 / shape_xi) * lt - (-lt / shape_xi).exp() - scale.ln()
            }
            Pareto { alpha, x_min } => {
                if x < x_min {
                    return neg_inf;
                }
                alpha.ln() + alpha * x_min.ln() - (alpha + 1.0) * x.ln()
            }
            StudentT { dof, loc, scale } => {
                let z = (x - loc) / scale;
                ln_gamma_half_ratio(dof / 2.0)
                    - 0.5 * (dof * std::f64::consts::PI).ln()
                    - scale.ln()
                    - (dof + 1.0) / 2.0 * (z * z / dof).ln_1p()
            }
            Weibull { shape, scale } => {
                if x < 0.0 {
                    return neg_inf;
                }
                let y = x / scale;
                shape.ln() - scale.ln() + (shape - 1.0) * y.ln() - y.powf(shape)
            }
            Uniform { lower, upper } => {
                if x < lower || x > upper {
                    return neg_inf;
                }
                -(upper - lower).ln()
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let v = self.ln_pdf(x).exp();
        if v.is_nan() {
            0.0
        } else {
            v
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        use FittedDistribution::*;
        match *self {
            Lognormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else if sigma == 0.0 {
                    if x.ln() >= mu {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    normal_cdf((x.ln() - mu) / sigma)
                }
            }
            Normal { mu, sigma } => {
                if sigma == 0.0 {
                    if x >= mu {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    normal_cdf((x - mu) / sigma)
                }
            }
            Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Gamma { shape, scale } => gamma_p(shape, x / scale),
            Beta { alpha, beta, lower, upper } => beta_inc(alpha, beta, (x - lower) / (upper - lower)),
            Gev { shape_xi, loc, scale } => {
                let z = (x - loc) / scale;
                if shape_xi.abs() < GUMBEL_XI {
                    return (-(-z).exp()).exp();
                }
                let t = 1.0 + shape_xi * z;
                if t <= 0.0 {
                    return if shape_xi > 0.0 { 0.0 } else { 1.0 };
                }
                (-t.powf(-1.0 / shape_xi)).exp()
            }
            Pareto { alpha, x_min } => {
                if x <= x_min {
                    0.0
                } else {
                    1.0 - (x_min / x).powf(alpha)
                }
            }
            StudentT { dof, loc, scale } => student_t_cdf((x - loc) / scale, dof),
            Weibull { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-(x / scale).powf(shape)).exp_m1()
                }
            }
            Uniform { lower, upper } => ((x - lower) / (upper - lower)).clamp(0.0, 1.0),
        }
    }

    /// Inverse CDF. Closed form where one exists, otherwise bisection on `cdf`.
    pub fn quantile(&self, p: f64) -> f64 {
        use FittedDistribution::*;
        if !(0.0..=1.0).contains(&p) {
            return f64::NAN;
        }
        match *self {
            Lognormal { mu, sigma } => (mu + sigma * normal_quantile(p)).exp(),
            Normal { mu, sigma } => mu + sigma * normal_quantile(p),
            Exponential { rate } => -(-p).ln_1p() / rate,
            Gev { shape_xi, loc, scale } => {
                let y = -p.ln();
                if shape_xi.abs() < GUMBEL_XI {
                    loc - scale * y.ln()
                } else {
                    loc + scale * (y.powf(-shape_xi) - 1.0) / shape_xi
                }
            }
            Pareto { alpha, x_min } => x_min * (1.0 - p).powf(-1.0 / alpha),
            Weibull { shape, scale } => scale * (-(-p).ln_1p()).powf(1.0 / shape),
            Uniform { lower, upper } => lower + p * (upper - lower),
            Beta { lower, upper, .. } => {
                if p == 0.0 {
                    lower
                } else if p == 1.0 {
                    upper
                } else {
                    self.bisect_quantile(p, lower, upper)
                }
            }
            Gamma { shape, scale } => {
                if p == 0.0 {
                    return 0.0;
                }
                if p == 1.0 {
                    return f64::INFINITY;
                }
                let mut hi = shape * scale + scale;
                while self.cdf(hi) < p {
                    hi *= 2.0;
                }
                self.bisect_quantile(p, 0.0, hi)
            }
            StudentT { loc, scale, .. } => {
                if p == 0.0 {
                    return f64::NEG_INFINITY;
                }
                if p == 1.0 {
                    return f64::INFINITY;
                }
                let mut half = scale;
                while self.cdf(loc - half) > p || self.cdf(loc + half) < p {
                    half *= 2.0;
                }
                self.bisect_quantile(p, loc - half, loc + half)
            }
        }
    }

    fn bisect_quantile(&self, p: f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Analytic mean where finite.
    pub fn mean(&self) -> Option<f64> {
        use FittedDistribution::*;
        let m = match *self {
            Lognormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
            Normal { mu, .. } => mu,
            Exponential { rate } => 1.0 / rate,
            Gamma { shape, scale } => shape * scale,
            Beta { alpha, beta, lower, upper } => lower + (upper - lower) * alpha / (alpha + beta),
            Gev { shape_xi, loc, scale } => {
                if shape_xi >= 1.0 {
                    return None;
                }
                if shape_xi.abs() < GUMBEL_XI {
                    loc + scale * 0.577_215_664_901_532_9
                } else {
                    loc + scale * ((ln_gamma(1.0 - shape_xi)).exp() - 1.0) / shape_xi
                }
            }
            Pareto { alpha, x_min } => {
                if alpha <= 1.0 {
                    return None;
                }
                alpha * x_min / (alpha - 1.0)
            }
            StudentT { dof, loc, .. } => {
                if dof <= 1.0 {
                    return None;
                }
                loc
            }
            Weibull { shape, scale } => scale * ln_gamma(1.0 + 1.0 / shape).exp(),
            Uniform { lower, upper } => 0.5 * (lower + upper),
        };
        Some(m)
    }

    /// Draws `count` values with a ChaCha8 stream seeded from `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.draw(&mut rng)).collect()
    }

    /// One draw from an arbitrary RNG.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        use FittedDistribution::*;
        match *self {
            Lognormal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
            Normal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                mu + sigma * z
            }
            Gamma { shape, scale } => rand_distr::Gamma::new(shape, scale)
                .map(|g| g.sample(rng))
                .unwrap_or(f64::NAN),
            Beta { alpha, beta, lower, upper } => {
                let y = rand_distr::Beta::new(alpha, beta)
                    .map(|b| b.sample(rng))
                    .unwrap_or(f64::NAN);
                lower + (upper - lower) * y
            }
            StudentT { dof, loc, scale } => {
                let t = rand_distr::StudentT::new(dof)
                    .map(|d| d.sample(rng))
                    .unwrap_or(f64::NAN);
                loc + scale * t
            }
            _ => {
                let u: f64 = Open01.sample(rng);
                self.quantile(u)
            }
        }
    }
}

/// Density of `dist` at `x`.
pub fn pdf(dist: &FittedDistribution, x: f64) -> f64 {
    dist.pdf(x)
}

/// `count` deterministic draws from `dist` for the given seed.
pub fn sample(dist: &FittedDistribution, count: usize, seed: u64) -> Vec<f64> {
    dist.sample(count, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn examples() -> Vec<FittedDistribution> {
        use FittedDistribution::*;
        vec![
            Lognormal { mu: 0.3, sigma: 0.8 },
            Normal { mu: -1.0, sigma: 2.0 },
            Exponential { rate: 1.7 },
            Gamma { shape: 2.5, scale: 0.7 },
            Beta { alpha: 2.0, beta: 5.0, lower: -1.0, upper: 3.0 },
            Gev { shape_xi: 0.2, loc: 1.0, scale: 0.5 },
            Gev { shape_xi: -0.3, loc: 0.0, scale: 1.2 },
            Gev { shape_xi: 0.0, loc: 0.0, scale: 1.0 },
            Pareto { alpha: 3.0, x_min: 0.5 },
            StudentT { dof: 4.0, loc: 2.0, scale: 0.5 },
            Weibull { shape: 1.5, scale: 2.0 },
            Uniform { lower: -2.0, upper: 5.0 },
        ]
    }

    #[test]
    fn lognormal_pdf_at_one() {
        let d = FittedDistribution::Lognormal { mu: 0.0, sigma: 1.0 };
        assert!((d.pdf(1.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        assert!((d.pdf(1.0) - 0.398_942).abs() < 1e-6);
    }

    #[test]
    fn pdf_outside_support_is_zero() {
        let p = FittedDistribution::Pareto { alpha: 2.0, x_min: 1.0 };
        assert_eq!(pdf(&p, 0.5), 0.0);
        let u = FittedDistribution::Uniform { lower: 0.0, upper: 2.0 };
        assert_eq!(pdf(&u, 1.0), 0.5);
        assert_eq!(pdf(&u, 2.5), 0.0);
        let ln = FittedDistribution::Lognormal { mu: 0.0, sigma: 1.0 };
        assert_eq!(ln.pdf(-1.0), 0.0);
    }

    /// Composite Simpson over the central 99.99% of mass.
    fn central_mass(d: &FittedDistribution) -> f64 {
        let lo = d.quantile(0.000_05);
        let hi = d.quantile(0.999_95);
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let mut s = d.pdf(lo) + d.pdf(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * d.pdf(lo + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn densities_are_normalised() {
        for d in examples() {
            let mass = central_mass(&d);
            assert!((mass - 1.0).abs() < 1e-3, "{d:?}: {mass}");
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for d in examples() {
            for &p in &[0.01, 0.25, 0.5, 0.8, 0.99] {
                let x = d.quantile(p);
                assert!((d.cdf(x) - p).abs() < 1e-9, "{d:?} p={p}");
            }
        }
    }

    #[test]
    fn degenerate_lognormal_draws_are_one() {
        let d = FittedDistribution::Lognormal { mu: 0.0, sigma: 0.0 };
        assert!(sample(&d, 50, 3).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn lognormal_sample_mean() {
        let d = FittedDistribution::Lognormal { mu: 0.0, sigma: 1.0 };
        let xs = sample(&d, 100_000, 11);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let expected = 0.5f64.exp();
        assert!(((mean - expected) / expected).abs() < 0.03, "{mean}");
    }

    #[test]
    fn sampling_is_deterministic() {
        for d in examples() {
            let a = sample(&d, 64, 99);
            let b = sample(&d, 64, 99);
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            assert_ne!(a, sample(&d, 64, 100));
        }
    }

    #[test]
    fn sample_means_match_analytic() {
        for d in examples() {
            let Some(m) = d.mean() else { continue };
            let xs = d.sample(200_000, 5);
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let lo = d.quantile(0.1);
            let hi = d.quantile(0.9);
            assert!((mean - m).abs() < 0.02 * (hi - lo), "{d:?}: {mean} vs {m}");
        }
    }

    #[test]
    fn json_shape() {
        let d = FittedDistribution::Lognormal { mu: 0.5, sigma: 1.25 };
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"family":"lognormal","params":{"mu":0.5,"sigma":1.25}}"#);
        let back: FittedDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
        let t = FittedDistribution::StudentT { dof: 3.0, loc: 0.0, scale: 1.0 };
        assert!(serde_json::to_string(&t).unwrap().contains("\"student_t\""));
    }

    #[test]
    fn family_names_round_trip() {
        for f in DistributionFamily::ALL {
            assert_eq!(f.name().parse::<DistributionFamily>().unwrap(), f);
        }
        assert!("cauchy".parse::<DistributionFamily>().is_err());
    }

    #[test]
    fn validate_rejects_bad_parameters() {
        assert!(FittedDistribution::Exponential { rate: 0.0 }.validate().is_err());
        assert!(FittedDistribution::Uniform { lower: 1.0, upper: 1.0 }.validate().is_err());
        assert!(FittedDistribution::Lognormal { mu: 0.0, sigma: 0.0 }.validate().is_ok());
        assert!(FittedDistribution::Pareto { alpha: 1.0, x_min: -1.0 }.validate().is_err());
    }
}
