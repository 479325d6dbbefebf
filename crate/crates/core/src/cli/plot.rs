//! Static SVG charts rendered from a [`PipelineReport`].
//!
//! Output is plain text with fixed-precision coordinates, so identical
//! reports give byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::pipeline::{PipelineReport, PricePoint};
use crate::distfit::{FittedDistribution, Histogram};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const CURVE_POINTS: usize = 200;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("report has no {0} stage to plot")]
    MissingStage(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy)]
enum Scale {
    Linear,
    Log10,
}

#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    scale: Scale,
}

impl Axis {
    fn new(lo: f64, hi: f64, scale: Scale) -> Self {
        let (lo, hi) = match scale {
            Scale::Linear => (lo, hi),
            Scale::Log10 => (lo.log10(), hi.log10()),
        };
        let (lo, hi) = if hi > lo {
            let pad = 0.02 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            (lo - 0.5, hi + 0.5)
        };
        Axis { lo, hi, scale }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = match self.scale {
            Scale::Linear => v,
            Scale::Log10 => v.log10(),
        };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        match self.scale {
            Scale::Log10 => (self.lo.ceil() as i32..=self.hi.floor() as i32)
                .map(|e| 10f64.powi(e))
                .collect(),
            Scale::Linear => {
                let raw = (self.hi - self.lo) / 6.0;
                let mag = 10f64.powf(raw.log10().floor());
                let step = [1.0, 2.0, 5.0, 10.0]
                    .iter()
                    .map(|m| m * mag)
                    .find(|s| *s >= raw)
                    .unwrap_or(10.0 * mag);
                let first = (self.lo / step).ceil() as i64;
                let last = (self.hi / step).floor() as i64;
                (first..=last).map(|i| i as f64 * step).collect()
            }
        }
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if !(1e-3..1e5).contains(&a) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Canvas {
    body: String,
    x: Axis,
    y: Axis,
}

impl Canvas {
    fn new(title: &str, x_label: &str, y_label: &str, x: Axis, y: Axis) -> Self {
        let mut c = Canvas {
            body: String::new(),
            x,
            y,
        };
        let _ = write!(
            c.body,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"11\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
             <text x=\"{:.2}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
            WIDTH / 2.0,
            escape(title)
        );
        c.frame(x_label, y_label);
        c
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + self.x.unit(x) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - self.y.unit(y) * (HEIGHT - TOP - BOTTOM)
    }

    fn frame(&mut self, x_label: &str, y_label: &str) {
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = writeln!(
            self.body,
            "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#333\"/>",
            x1 - x0,
            y1 - y0
        );
        for t in self.x.ticks() {
            let px = self.px(t);
            let _ = writeln!(
                self.body,
                "<line x1=\"{px:.2}\" y1=\"{y1:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"#333\"/><text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                y1 + 5.0,
                y1 + 18.0,
                tick_label(t)
            );
        }
        for t in self.y.ticks() {
            let py = self.py(t);
            let _ = writeln!(
                self.body,
                "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{x0:.2}\" y2=\"{py:.2}\" stroke=\"#333\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0,
                tick_label(t)
            );
        }
        let _ = writeln!(
            self.body,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            (x0 + x1) / 2.0,
            HEIGHT - 14.0,
            escape(x_label)
        );
        let _ = writeln!(
            self.body,
            "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
    }

    fn bars(&mut self, hist: &Histogram) {
        let w = hist.bin_width();
        for (i, d) in hist.densities.iter().enumerate() {
            let a = hist.lower + i as f64 * w;
            let (x0, x1) = (self.px(a), self.px(a + w));
            let (ytop, ybase) = (self.py(*d), self.py(0.0));
            let _ = writeln!(
                self.body,
                "<rect x=\"{x0:.2}\" y=\"{ytop:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#9ecae1\" stroke=\"#3182bd\" stroke-width=\"0.5\"/>",
                x1 - x0,
                ybase - ytop
            );
        }
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str) {
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", self.px(*x), self.py(*y)))
            .collect();
        let _ = writeln!(
            self.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            path.join(" ")
        );
    }

    fn dots(&mut self, pts: &[(f64, f64)], color: &str) {
        for (x, y) in pts {
            let _ = writeln!(
                self.body,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.8\" fill=\"{color}\" fill-opacity=\"0.6\"/>",
                self.px(*x),
                self.py(*y)
            );
        }
    }

    fn legend(&mut self, entries: &[(String, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = TOP + 14.0 + 14.0 * i as f64;
            let _ = writeln!(
                self.body,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
                LEFT + 10.0,
                y - 9.0,
                LEFT + 24.0,
                y,
                escape(label)
            );
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn finite_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Density histogram with an optional fitted curve.
pub fn histogram_svg(title: &str, x_label: &str, hist: &Histogram, curve: Option<(&str, Vec<(f64, f64)>)>) -> String {
    let curve_max = curve
        .as_ref()
        .map_or(0.0, |(_, pts)| finite_bounds(pts.iter().map(|p| p.1)).1.max(0.0));
    let bar_max = hist.densities.iter().copied().fold(0.0, f64::max);
    // keep a spiky pdf from flattening the bars
    let y_hi = bar_max.max(curve_max.min(3.0 * bar_max)) * 1.05;
    let x = Axis::new(hist.lower, hist.upper, Scale::Linear);
    let y = Axis::new(0.0, y_hi, Scale::Linear);
    let mut c = Canvas::new(title, x_label, "density", x, y);
    c.bars(hist);
    if let Some((label, pts)) = curve {
        let clipped: Vec<(f64, f64)> = pts.into_iter().map(|(a, b)| (a, b.min(y_hi))).collect();
        c.polyline(&clipped, "#d62728");
        c.legend(&[(label.to_string(), "#d62728")]);
    }
    c.finish()
}

/// Scatter plot with an identity reference line.
pub fn scatter_svg(title: &str, x_label: &str, y_label: &str, groups: &[(String, Vec<(f64, f64)>)], log: bool) -> String {
    let keep = |v: f64| v.is_finite() && (!log || v > 0.0);
    let groups: Vec<(String, Vec<(f64, f64)>)> = groups
        .iter()
        .map(|(l, pts)| (l.clone(), pts.iter().copied().filter(|(a, b)| keep(*a) && keep(*b)).collect()))
        .collect();
    let all = groups.iter().flat_map(|(_, p)| p.iter().flat_map(|(a, b)| [*a, *b]));
    let (lo, hi) = finite_bounds(all);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (1.0, 10.0) };
    let scale = if log { Scale::Log10 } else { Scale::Linear };
    let axis = Axis::new(lo, hi, scale);
    let mut c = Canvas::new(title, x_label, y_label, axis, axis);
    c.polyline(&[(lo, lo), (hi, hi)], "#888");
    let mut legend = Vec::new();
    for (i, (label, pts)) in groups.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        c.dots(pts, color);
        if groups.len() > 1 {
            legend.push((label.clone(), color));
        }
    }
    c.legend(&legend);
    c.finish()
}

fn pdf_curve(dist: &FittedDistribution, lo: f64, hi: f64, log_x: bool) -> Vec<(f64, f64)> {
    (0..CURVE_POINTS)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64;
            if log_x {
                // density of ln V at x
                (x, dist.pdf(x.exp()) * x.exp())
            } else {
                (x, dist.pdf(x))
            }
        })
        .collect()
}

fn group_prices(points: &[PricePoint]) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut by: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        by.entry(p.asset.as_str()).or_default().push((p.actual, p.predicted));
    }
    by.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// `(file name, svg)` for every chart the report supports.
pub fn render_plots(report: &PipelineReport) -> Result<Vec<(String, String)>, PlotError> {
    let mut out = Vec::new();
    if let Some(dists) = &report.distributions {
        for (ticker, d) in dists {
            let Some(top) = d.velocity.best() else { continue };
            let label = format!("{} fit", top.dist.family());
            let h = &d.plot.histogram;
            out.push((
                format!("{ticker}_velocity_hist.svg"),
                histogram_svg(
                    &format!("{ticker} velocity"),
                    "V (1/day)",
                    h,
                    Some((&label, pdf_curve(&top.dist, h.lower, h.upper, false))),
                ),
            ));
            let lh = &d.plot.log_histogram;
            out.push((
                format!("{ticker}_velocity_log_hist.svg"),
                histogram_svg(
                    &format!("{ticker} log velocity"),
                    "ln V",
                    lh,
                    Some((&label, pdf_curve(&top.dist, lh.lower, lh.upper, true))),
                ),
            ));
            out.push((
                format!("{ticker}_velocity_qq.svg"),
                scatter_svg(
                    &format!("{ticker} velocity QQ ({})", top.dist.family()),
                    "fitted quantile",
                    "empirical quantile",
                    &[(ticker.clone(), d.plot.qq.clone())],
                    false,
                ),
            ));
        }
    }
    if let Some(e) = &report.eoe {
        out.push((
            "eoe_predicted_vs_actual.svg".into(),
            scatter_svg("Price model", "actual price (USD)", "predicted price (USD)", &group_prices(&e.predictions), true),
        ));
    }
    if let Some(l) = &report.lookahead {
        out.push((
            "lookahead_predicted_vs_actual.svg".into(),
            scatter_svg(
                "Lookahead model, out-of-fold",
                "actual price (USD)",
                "predicted price (USD)",
                &group_prices(&l.predictions),
                true,
            ),
        ));
    }
    if out.is_empty() {
        return Err(PlotError::MissingStage("distribution or price model"));
    }
    Ok(out)
}

pub fn emit_plots(report: &PipelineReport, out_dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let plots = render_plots(report)?;
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::with_capacity(plots.len());
    for (name, svg) in plots {
        let path = out_dir.join(name);
        std::fs::write(&path, svg)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::pipeline::{distribution_stage, RunConfig};
    use crate::ingest::{AssetId, AssetSeries, SeriesRow};

    fn one_asset_report() -> PipelineReport {
        let dist = FittedDistribution::Lognormal { mu: -2.0, sigma: 0.5 };
        let v = dist.sample(400, 3);
        let day0 = chrono::NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        let rows = v
            .iter()
            .enumerate()
            .map(|(i, v)| SeriesRow::derive(day0 + chrono::Duration::days(i as i64), 2.0, 1e6, v * 1e6))
            .collect();
        let series = AssetSeries {
            asset: AssetId::from_ticker("BNB").unwrap(),
            rows,
            summary: Default::default(),
        };
        let d = distribution_stage(&series, &RunConfig::new(vec![], 1)).unwrap();
        let mut report = PipelineReport::empty();
        report.distributions = Some([("BNB".to_string(), d)].into_iter().collect());
        report
    }

    #[test]
    fn one_asset_gives_three_files() {
        let plots = render_plots(&one_asset_report()).unwrap();
        let names: Vec<&str> = plots.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["BNB_velocity_hist.svg", "BNB_velocity_log_hist.svg", "BNB_velocity_qq.svg"]);
        assert!(plots.iter().all(|(_, s)| s.starts_with("<svg") && s.ends_with("</svg>\n")));
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(matches!(render_plots(&PipelineReport::empty()), Err(PlotError::MissingStage(_))));
    }

    #[test]
    fn rendering_is_deterministic() {
        let r = one_asset_report();
        assert_eq!(render_plots(&r).unwrap(), render_plots(&r).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let a = emit_plots(&r, &dir.path().join("a")).unwrap();
        let b = emit_plots(&r, &dir.path().join("b")).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
        }
    }

    #[test]
    fn ticks_and_labels() {
        let a = Axis::new(0.0, 1.0, Scale::Linear);
        let labels: Vec<String> = a.ticks().into_iter().map(tick_label).collect();
        assert_eq!(labels, ["0", "0.2", "0.4", "0.6", "0.8", "1"]);
        let l = Axis::new(0.5, 2e4, Scale::Log10);
        assert_eq!(l.ticks(), vec![1.0, 10.0, 100.0, 1000.0, 10000.0]);
        assert_eq!(tick_label(0.25), "0.25");
        assert_eq!(tick_label(1e6), "1e6");
        assert_eq!(escape("a<b"), "a&lt;b");
    }
}
