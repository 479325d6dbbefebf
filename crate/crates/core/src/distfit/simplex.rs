//! Derivative-free Nelder–Mead minimisation used by the likelihood fits that
//! have no closed form.

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub point: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SimplexOptions {
    pub max_evaluations: usize,
    /// Stop when `(f_worst - f_best) <= rel_tol * max(|f_best|, 1)`.
    pub rel_tol: f64,
    /// Number of restarts from the current best point after convergence.
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_evaluations: 10_000,
            rel_tol: 1e-9,
            restarts: 2,
        }
    }
}

/// Minimise `f` from `start` using initial per-coordinate steps `steps`.
///
/// Returns `Err(best_so_far)` when the evaluation budget runs out before the
/// tolerance is met. Non-finite objective values are treated as +inf.
pub(crate) fn minimize<F>(
    mut f: F,
    start: &[f64],
    steps: &[f64],
    opts: SimplexOptions,
) -> Result<Minimum, Minimum>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut best = start.to_vec();
    let mut best_val = eval(&best, &mut evals);
    let mut step_scale = 1.0;
    for round in 0..=opts.restarts {
        let steps: Vec<f64> = steps.iter().map(|s| s * step_scale).collect();
        let result = run(&mut eval, &best, best_val, &steps, opts, &mut evals);
        let improved = best_val - result.value;
        match result.converged {
            true => {
                best = result.point;
                best_val = result.value;
                if round > 0 && improved.abs() <= opts.rel_tol * best_val.abs().max(1.0) {
                    break;
                }
            }
            false => {
                return Err(Minimum {
                    point: result.point,
                    value: result.value,
                    evaluations: evals,
                });
            }
        }
        step_scale *= 0.5;
    }
    Ok(Minimum {
        point: best,
        value: best_val,
        evaluations: evals,
    })
}

struct RunResult {
    point: Vec<f64>,
    value: f64,
    converged: bool,
}

fn run<E>(
    eval: &mut E,
    start: &[f64],
    start_val: f64,
    steps: &[f64],
    opts: SimplexOptions,
    evals: &mut usize,
) -> RunResult
where
    E: FnMut(&[f64], &mut usize) -> f64,
{
    let dim = start.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((start.to_vec(), start_val));
    for i in 0..dim {
        let mut p = start.to_vec();
        p[i] += steps[i];
        let mut v = eval(&p, evals);
        if !v.is_finite() {
            // try the opposite direction before giving up on this vertex
            p[i] = start[i] - steps[i];
            v = eval(&p, evals);
        }
        simplex.push((p, v));
    }

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_best = simplex[0].1;
        let f_worst = simplex[dim].1;
        if f_best.is_finite() && (f_worst - f_best) <= opts.rel_tol * f_best.abs().max(1.0) {
            return RunResult {
                point: simplex[0].0.clone(),
                value: f_best,
                converged: true,
            };
        }
        if *evals >= opts.max_evaluations {
            return RunResult {
                point: simplex[0].0.clone(),
                value: f_best,
                converged: false,
            };
        }

        let mut centroid = vec![0.0; dim];
        for (p, _) in &simplex[..dim] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / dim as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let reflected = along(-alpha);
        let f_r = eval(&reflected, evals);
        if f_r < simplex[0].1 {
            let expanded = along(-gamma);
            let f_e = eval(&expanded, evals);
            simplex[dim] = if f_e < f_r {
                (expanded, f_e)
            } else {
                (reflected, f_r)
            };
            continue;
        }
        if f_r < simplex[dim - 1].1 {
            simplex[dim] = (reflected, f_r);
            continue;
        }
        let (contracted, f_c) = if f_r < simplex[dim].1 {
            let p = along(-rho);
            let v = eval(&p, evals);
            (p, v)
        } else {
            let p = along(rho);
            let v = eval(&p, evals);
            (p, v)
        };
        if f_c < simplex[dim].1.min(f_r) {
            simplex[dim] = (contracted, f_c);
            continue;
        }
        // shrink toward the best vertex
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let p: Vec<f64> = best
                .iter()
                .zip(&vertex.0)
                .map(|(b, x)| b + sigma * (x - b))
                .collect();
            let v = eval(&p, evals);
            *vertex = (p, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2) + 5.0;
        let m = minimize(f, &[0.0, 0.0], &[1.0, 1.0], SimplexOptions::default()).unwrap();
        assert!((m.point[0] - 3.0).abs() < 1e-3);
        assert!((m.point[1] + 1.0).abs() < 1e-3);
        assert!((m.value - 5.0).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = SimplexOptions {
            rel_tol: 1e-14,
            ..SimplexOptions::default()
        };
        let m = minimize(f, &[-1.2, 1.0], &[0.5, 0.5], opts).unwrap();
        assert!((m.point[0] - 1.0).abs() < 1e-3, "{:?}", m.point);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let opts = SimplexOptions {
            max_evaluations: 15,
            rel_tol: 1e-15,
            restarts: 0,
        };
        assert!(minimize(f, &[5.0, 5.0, 5.0], &[1.0, 1.0, 1.0], opts).is_err());
    }

    #[test]
    fn infinite_region_is_avoided() {
        let f = |x: &[f64]| if x[0] <= 0.0 { f64::INFINITY } else { x[0] - x[0].ln() };
        let m = minimize(f, &[3.0], &[1.0], SimplexOptions::default()).unwrap();
        assert!((m.point[0] - 1.0).abs() < 1e-3);
    }
}
