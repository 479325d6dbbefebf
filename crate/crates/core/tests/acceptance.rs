//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any gating criterion fails.
//!
//! Criterion 10 needs real exchange data and never gates. Point
//! `EOE_LAB_REAL_DATA` at a directory of `<TICKER>.csv` exports to run it.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use eoe_lab::distfit::special::student_t_two_sided;
use eoe_lab::distfit::{fit_mle, rank_fits, DistributionFamily, FittedDistribution};
use eoe_lab::econsim::{simulate_batch, summarize_batch, SimulationConfig};
use eoe_lab::eoe::{cross_validate, fit_eoe, lookahead_spec, CvOptions, EoeOptions, PooledTable};
use eoe_lab::ingest::{AssetId, AssetSeries, SeriesRow};
use eoe_lab::regress::{
    adjusted_r2, analyze_curve, fit_ols, fit_velocity_zoo, FeatureTransform, ModelSpec, SelectionRule, Table,
    VelocityCurve,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

// pinned tolerances
const JENSEN_REL_TOL: f64 = 0.05;
const JENSEN_MAX_RUNTIME: Duration = Duration::from_secs(1);
const RECOVERY_MIN_WINS: usize = 95;
const RECOVERY_MAX_RUNTIME: Duration = Duration::from_secs(30);
const LOGNORMAL_TOL: f64 = 1e-12;
const GEV_TOL: f64 = 0.1;
const ZOO_TOL: f64 = 1e-8;
/// Two-point fit, a few ulps.
const EXACT_FIT_TOL: f64 = 1e-12;
const LINEAR_BOUNDARY_TOL: f64 = 1e-3;
const LOG_BOUNDARY_TOL: f64 = 1e-2;
const INV_QUAD_BOUNDARY_TOL: f64 = 1e-3;
const P_VALUE_TOL: f64 = 1e-4;
const ADJ_R2_TOL: f64 = 1e-12;
const EOE_COEF_TOL: f64 = 1e-3;
const EOE_MIN_ADJ_R2: f64 = 0.999;
/// Relative to the largest price in the data.
const CV_ZERO_TOL: f64 = 1e-9;
const PIPELINE_MAX_RUNTIME: Duration = Duration::from_secs(120);

struct Check {
    ok: bool,
    detail: String,
}

fn check(ok: bool, detail: impl Into<String>) -> Check {
    Check { ok, detail: detail.into() }
}

fn all(checks: Vec<Check>) -> Check {
    let ok = checks.iter().all(|c| c.ok);
    let detail = checks
        .iter()
        .filter(|c| !ok || c.ok)
        .filter(|c| ok || !c.ok)
        .map(|c| c.detail.as_str())
        .collect::<Vec<_>>()
        .join("; ");
    Check { ok, detail }
}

fn asset(t: &str) -> AssetId {
    AssetId::from_ticker(t).unwrap()
}

fn jensen() -> Check {
    let dist = FittedDistribution::Lognormal { mu: 0.0, sigma: 1.0 };
    let cfg = SimulationConfig {
        tokens_per_economy: 100,
        economies_per_distribution: 1000,
        seed: 2023,
    };
    let start = Instant::now();
    let batch = simulate_batch(&dist, &cfg, &asset("BTC")).unwrap();
    let summary = summarize_batch(&batch).unwrap();
    let elapsed = start.elapsed();
    // E[V] E[1/V] = exp(sigma^2) for a lognormal
    let target = 1f64.exp();
    let rel = (summary.mean_product - target).abs() / target;
    let below_one = batch.iter().filter(|e| e.product() < 1.0).count();
    all(vec![
        check(rel <= JENSEN_REL_TOL, format!("mean product {:.5} vs e, rel err {rel:.4}", summary.mean_product)),
        check(below_one == 0, format!("{below_one} economies with product < 1 (min {:.5})", summary.min_product)),
        check(elapsed < JENSEN_MAX_RUNTIME, format!("{elapsed:.2?}")),
    ])
}

fn distribution_recovery() -> Check {
    let truth = FittedDistribution::Lognormal { mu: 0.0, sigma: 1.0 };
    let start = Instant::now();
    let mut wins = 0;
    let mut losers = Vec::new();
    for trial in 0..100u64 {
        let draws = truth.sample(5000, 10_000 + trial);
        let ranking = rank_fits(&draws, &DistributionFamily::ALL, 50).unwrap();
        let best = ranking.best().unwrap().dist.family();
        if best == DistributionFamily::Lognormal {
            wins += 1;
        } else {
            losers.push(best.to_string());
        }
    }
    let elapsed = start.elapsed();
    all(vec![
        check(wins >= RECOVERY_MIN_WINS, format!("lognormal first in {wins}/100 (others: {losers:?})")),
        check(elapsed < RECOVERY_MAX_RUNTIME, format!("{elapsed:.2?}")),
    ])
}

fn mle_oracles() -> Check {
    let mut checks = Vec::new();

    let dyadic = [0.5, 1.25, 3.0, 0.75, 2.5, 4.0, 1.0, 0.25, 2.0, 1.5, 0.125, 3.5, 0.625, 1.75, 2.25, 0.875, 5.0, 0.375, 1.125, 2.75];
    let mean = dyadic.iter().sum::<f64>() / dyadic.len() as f64;
    let rate = match fit_mle(&dyadic, DistributionFamily::Exponential).unwrap() {
        FittedDistribution::Exponential { rate } => rate,
        other => panic!("{other:?}"),
    };
    checks.push(check(rate == 1.0 / mean, format!("exponential rate {rate} vs 1/mean {}", 1.0 / mean)));

    let draws = FittedDistribution::Exponential { rate: 0.7 }.sample(3000, 5);
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let rate = match fit_mle(&draws, DistributionFamily::Exponential).unwrap() {
        FittedDistribution::Exponential { rate } => rate,
        other => panic!("{other:?}"),
    };
    checks.push(check(rate == 1.0 / mean, format!("exponential rate on draws {rate}")));

    let draws = FittedDistribution::Lognormal { mu: -0.4, sigma: 0.9 }.sample(4000, 6);
    let logs: Vec<f64> = draws.iter().map(|x| x.ln()).collect();
    // compensated sums so the oracle does not share rounding with the fit
    let kahan = |xs: &mut dyn Iterator<Item = f64>| {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for x in xs {
            let y = x - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        s
    };
    let n = logs.len() as f64;
    let mu = kahan(&mut logs.iter().copied()) / n;
    let sigma = (kahan(&mut logs.iter().map(|l| (l - mu) * (l - mu))) / n).sqrt();
    match fit_mle(&draws, DistributionFamily::Lognormal).unwrap() {
        FittedDistribution::Lognormal { mu: m, sigma: s } => checks.push(check(
            (m - mu).abs() <= LOGNORMAL_TOL && (s - sigma).abs() <= LOGNORMAL_TOL,
            format!("lognormal |dmu| {:.1e} |dsigma| {:.1e}", (m - mu).abs(), (s - sigma).abs()),
        )),
        other => panic!("{other:?}"),
    }

    let draws = FittedDistribution::Gev { shape_xi: 0.2, loc: 1.0, scale: 0.5 }.sample(5000, 7);
    match fit_mle(&draws, DistributionFamily::Gev).unwrap() {
        FittedDistribution::Gev { shape_xi, loc, scale } => checks.push(check(
            (shape_xi - 0.2).abs() <= GEV_TOL && (loc - 1.0).abs() <= GEV_TOL && (scale - 0.5).abs() <= GEV_TOL,
            format!("gev xi {shape_xi:.4} loc {loc:.4} scale {scale:.4}"),
        )),
        other => panic!("{other:?}"),
    }
    all(checks)
}

fn ols_oracle() -> Check {
    let mut checks = Vec::new();
    let table = Table::new(2).with("x", vec![0.0, 1.0]).unwrap().with("y", vec![1.0, 3.0]).unwrap();
    let spec = ModelSpec::new(
        "y",
        false,
        vec![eoe_lab::regress::Feature::new("x", FeatureTransform::Identity)],
        true,
    );
    let fit = fit_ols(&spec, &table).unwrap();
    let (a, b) = (fit.intercept().unwrap(), fit.coefficient("x").unwrap());
    checks.push(check((a - 1.0).abs() <= EXACT_FIT_TOL && (b - 2.0).abs() <= EXACT_FIT_TOL, format!("two-point fit y = {a} + {b} x")));

    let h: Vec<f64> = (0..150).map(|i| 0.5 * 1.04f64.powi(i)).collect();
    let v: Vec<f64> = h.iter().map(|h| 0.03358 + 1.20329 / h).collect();
    let zoo = fit_velocity_zoo(&h, &v, &SelectionRule::default()).unwrap();
    let inv = zoo.entry("inverse").unwrap();
    let (a, b) = (inv.model.intercept().unwrap(), inv.model.coefficient("1/H").unwrap());
    checks.push(check(
        (a - 0.03358).abs() <= ZOO_TOL && (b - 1.20329).abs() <= ZOO_TOL,
        format!("inverse entry |da| {:.1e} |db| {:.1e}", (a - 0.03358).abs(), (b - 1.20329).abs()),
    ));
    for id in ["linear_inverse_log", "inverse_quadratic", "inverse_cubic"] {
        let m = &zoo.entry(id).unwrap().model;
        let worst = m
            .terms
            .iter()
            .zip(&m.coefficients)
            .map(|(t, c)| {
                let want = match t.as_str() {
                    "intercept" => 0.03358,
                    "1/H" => 1.20329,
                    _ => 0.0,
                };
                (c - want).abs()
            })
            .fold(0.0, f64::max);
        checks.push(check(worst <= ZOO_TOL, format!("{id} max coefficient error {worst:.1e}")));
    }
    checks.push(check(zoo.selected == "inverse" && !zoo.fallback, format!("selected {}", zoo.selected)));
    all(checks)
}

fn valid_ranges() -> Check {
    let boundary = |c: VelocityCurve| {
        let r = analyze_curve(&c).unwrap();
        (r.boundaries(), r.valid_range)
    };
    let lin = boundary(VelocityCurve::new(0.19854, vec![(FeatureTransform::Identity, -0.00419)]).unwrap());
    let log = boundary(VelocityCurve::new(0.37503, vec![(FeatureTransform::Log, -0.09028)]).unwrap());
    let iq = boundary(
        VelocityCurve::new(
            0.02213,
            vec![(FeatureTransform::InversePower { k: 1 }, 1.53561), (FeatureTransform::InversePower { k: 2 }, -1.54978)],
        )
        .unwrap(),
    );
    let one = |(b, text): &(Vec<f64>, String), want: f64, tol: f64| {
        check(b.len() == 1 && (b[0] - want).abs() <= tol, format!("{text} ({b:?})"))
    };
    all(vec![
        one(&lin, 47.384, LINEAR_BOUNDARY_TOL),
        one(&log, 63.6931, LOG_BOUNDARY_TOL),
        one(&iq, 0.994961, INV_QUAD_BOUNDARY_TOL),
    ])
}

/// Gamma(n / 2) for a positive integer n.
fn gamma_half(n: u32) -> f64 {
    match n {
        1 => std::f64::consts::PI.sqrt(),
        2 => 1.0,
        _ => (n as f64 / 2.0 - 1.0) * gamma_half(n - 2),
    }
}

/// Two-sided tail of Student's t by Simpson's rule on the central mass.
fn t_two_sided_quadrature(t: f64, dof: u32) -> f64 {
    let nu = dof as f64;
    let c = gamma_half(dof + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(dof));
    let f = |x: f64| c * (1.0 + x * x / nu).powf(-(nu + 1.0) / 2.0);
    let n = 20_000;
    let h = t / n as f64;
    let mut s = f(0.0) + f(t);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    1.0 - 2.0 * s * h / 3.0
}

fn inference() -> Check {
    let p = student_t_two_sided(2.0, 10.0);
    let oracle = t_two_sided_quadrature(2.0, 10);
    let adj = adjusted_r2(0.6, 100, 3);
    all(vec![
        check((p - oracle).abs() <= P_VALUE_TOL, format!("p {p:.6} vs quadrature {oracle:.6}")),
        check((p - 0.07339).abs() <= P_VALUE_TOL, format!("p {p:.6} vs 0.07339")),
        check((adj - 0.5875).abs() <= ADJ_R2_TOL, format!("adj_r2 {adj}")),
    ])
}

fn day(i: usize) -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 1).unwrap() + chrono::Duration::days(i as i64)
}

/// Series from `(price, T, M, V)` with V supplied independently of T / MC.
fn series_from(ticker: &str, rows: Vec<(f64, f64, f64, f64)>) -> AssetSeries {
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, (price, t, m, v))| SeriesRow {
            date: day(i),
            price,
            mc: price * m,
            t,
            m,
            v,
            h: 1.0 / v,
        })
        .collect();
    AssetSeries {
        asset: asset(ticker),
        summary: Default::default(),
        rows,
    }
}

fn eoe_self_consistency() -> Check {
    let series: Vec<AssetSeries> = [("BTC", 11u64), ("ETH", 12), ("LINK", 13)]
        .into_iter()
        .map(|(t, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = Normal::new(0.0f64, 1.0).unwrap();
            let rows = (0..300)
                .map(|_| {
                    let lt = 18.0 + 2.0 * z.sample(&mut rng);
                    let lm = 20.0 + 1.5 * z.sample(&mut rng);
                    let lv = -2.5 + 0.8 * z.sample(&mut rng);
                    let lp = 0.88 * lt + 0.84 * lm - 1.15 * lv + 1e-6 * z.sample(&mut rng);
                    (lp.exp(), lt.exp(), lm.exp(), lv.exp())
                })
                .collect();
            series_from(t, rows)
        })
        .collect();
    let pooled = PooledTable::new(&series).unwrap();
    let m = fit_eoe(&pooled, &EoeOptions::default()).unwrap();
    let worst = [(m.c_t, 0.88), (m.c_m, 0.84), (m.c_inv_v, 1.15)]
        .iter()
        .map(|(c, want)| (c - want).abs())
        .fold(0.0, f64::max);
    let adj = m.adj_r2.unwrap_or(f64::NAN);
    all(vec![
        check(
            worst <= EOE_COEF_TOL,
            format!("c_T {:.6} c_M {:.6} c_1/V {:.6}", m.c_t, m.c_m, m.c_inv_v),
        ),
        check(adj > EOE_MIN_ADJ_R2, format!("adj_r2 {adj:.6}")),
    ])
}

fn cv_contract() -> Check {
    // ln p_t = -0.90 + 0.02 ln T + 0.04 ln M + 0.03 ln V + 0.98 ln p_{t-1}
    let series: Vec<AssetSeries> = [("BTC", 21u64), ("ETH", 22), ("UNI", 23)]
        .into_iter()
        .map(|(t, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = Normal::new(0.0f64, 1.0).unwrap();
            let mut lp: f64 = 2.0;
            let rows = (0..200)
                .map(|i| {
                    let lt = 15.0 + 0.3 * z.sample(&mut rng);
                    let lm = 18.0 + 0.3 * z.sample(&mut rng);
                    let lv = -2.0 + 0.3 * z.sample(&mut rng);
                    if i > 0 {
                        lp = -0.90 + 0.02 * lt + 0.04 * lm + 0.03 * lv + 0.98 * lp;
                    }
                    (lp.exp(), lt.exp(), lm.exp(), lv.exp())
                })
                .collect();
            series_from(t, rows)
        })
        .collect();
    let pooled = PooledTable::new(&series).unwrap();
    let scale = series.iter().flat_map(|s| s.rows.iter().map(|r| r.price)).fold(0.0, f64::max);
    let opts = CvOptions::new(99);
    let a = cross_validate(&lookahead_spec(), &pooled, &opts).unwrap();
    let b = cross_validate(&lookahead_spec(), &pooled, &opts).unwrap();

    let worst = a.per_fold.iter().map(|f| f.mae.max(f.rmse)).fold(0.0, f64::max);
    let mut seen = BTreeSet::new();
    let mut total = 0;
    for f in &a.per_fold {
        for r in f.test_rows() {
            seen.insert(r);
            total += 1;
        }
    }
    // every asset's first row has no lag and drops out of the design
    let expected: BTreeSet<usize> = (0..pooled.len()).filter(|&r| pooled.table.previous_row(r).is_some()).collect();
    let same = a == b && a.predictions() == b.predictions();
    all(vec![
        check(a.per_fold.len() == 20, format!("{} folds", a.per_fold.len())),
        check(worst <= CV_ZERO_TOL * scale, format!("max fold MAE/RMSE {worst:.2e} (price scale {scale:.1})")),
        check(total == seen.len() && seen == expected, format!("{total} test rows, {} distinct, {} expected", seen.len(), expected.len())),
        check(same, "repeat run identical"),
    ])
}

fn sample_inputs() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample");
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files
}

fn collect_files(root: &Path, rel: &Path, out: &mut Vec<PathBuf>) {
    let mut entries: Vec<_> = std::fs::read_dir(root.join(rel)).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        let r = rel.join(p.file_name().unwrap());
        if p.is_dir() {
            collect_files(root, &r, out);
        } else {
            out.push(r);
        }
    }
}

fn pipeline_determinism() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = sample_inputs();
    let start = Instant::now();
    let mut dirs = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_eoe-lab"));
        cmd.env_remove("EOE_LAB_SEED").args(["pipeline", "--seed", "7"]);
        for p in &inputs {
            cmd.arg("--in").arg(p);
        }
        let status = cmd.arg("--out").arg(&out).output().unwrap();
        if !status.status.success() {
            return check(false, format!("pipeline failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        dirs.push(out);
    }
    let elapsed = start.elapsed() / 2;
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    collect_files(&dirs[0], Path::new(""), &mut fa);
    collect_files(&dirs[1], Path::new(""), &mut fb);
    let differing: Vec<String> = fa
        .iter()
        .filter(|r| std::fs::read(dirs[0].join(r)).ok() != std::fs::read(dirs[1].join(r)).ok())
        .map(|r| r.display().to_string())
        .collect();
    let svgs = fa.iter().filter(|r| r.extension().is_some_and(|e| e == "svg")).count();
    all(vec![
        check(fa == fb && differing.is_empty(), format!("{} files, {svgs} SVGs, differing {differing:?}", fa.len())),
        check(fa.iter().any(|r| r == Path::new("report.json")), "report.json written"),
        check(elapsed < PIPELINE_MAX_RUNTIME, format!("{elapsed:.2?} per run on {} inputs", inputs.len())),
    ])
}

/// Soft targets on real data. Returns `None` when no data was supplied.
fn real_data_targets() -> Option<Check> {
    let dir = std::env::var_os("EOE_LAB_REAL_DATA")?;
    let tmp = tempfile::tempdir().unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_eoe-lab"));
    cmd.args(["pipeline", "--seed", "42"]);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .ok()?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    for p in &files {
        cmd.arg("--in").arg(p);
    }
    let out = cmd.arg("--out").arg(tmp.path()).output().unwrap();
    if !out.status.success() {
        return Some(check(false, String::from_utf8_lossy(&out.stderr).into_owned()));
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    let dists = report["distributions"].as_object().unwrap();
    let top3 = dists
        .values()
        .filter(|d| {
            d["velocity"]["fits"].as_array().unwrap().iter().take(3).any(|f| f["family"] == "lognormal")
        })
        .count();
    let inv_adj = report["velocity_models"]["entries"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["id"] == "inverse")
        .and_then(|e| e["adj_r2"].as_f64())
        .unwrap_or(f64::NAN);
    let eoe_adj = report["eoe"]["model"]["adj_r2"].as_f64().unwrap_or(f64::NAN);
    Some(all(vec![
        check(top3 * 8 >= 6 * dists.len(), format!("lognormal top 3 for {top3}/{} assets", dists.len())),
        check((0.4..=0.7).contains(&inv_adj), format!("inverse adj_r2 {inv_adj:.5}")),
        check((0.9..=1.0).contains(&eoe_adj), format!("eoe adj_r2 {eoe_adj:.5}")),
    ]))
}

type Criterion = (u32, &'static str, fn() -> Check);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "simulated V*H batch mean near e, every economy >= 1", jensen),
        (2, "lognormal recovered by ranking", distribution_recovery),
        (3, "MLE closed forms and GEV recovery", mle_oracles),
        (4, "OLS exact fit and inverse model recovery", ols_oracle),
        (5, "valid-range boundaries from published coefficients", valid_ranges),
        (6, "t p-value and adjusted R2", inference),
        (7, "price model self-consistency", eoe_self_consistency),
        (8, "cross-validation contract", cv_contract),
        (9, "pipeline determinism on bundled samples", pipeline_determinism),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let c = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check(false, format!("panicked: {msg}"))
        });
        println!("criterion {id:>2}: {} {name} [{}]", if c.ok { "PASS" } else { "FAIL" }, c.detail);
        if !c.ok {
            failed += 1;
        }
    }
    match real_data_targets() {
        None => println!("criterion 10: SKIP real-data soft targets [set EOE_LAB_REAL_DATA to run; non-gating]"),
        Some(c) => println!(
            "criterion 10: {} real-data soft targets [{}; non-gating]",
            if c.ok { "PASS" } else { "FAIL" },
            c.detail
        ),
    }
    if failed > 0 {
        println!("{failed} gating criteria failed");
        std::process::exit(1);
    }
}
