//! Headless SVG line charts from run metrics: bold mean line, one-standard-
//! deviation band across seeds, and a companion aggregated CSV.

use std::fs;
use std::path::PathBuf;

use costreg_core::{Error, Result};

use crate::artifact::read_metrics;
use crate::format::sig6;

pub const PLOTTABLE_METRICS: &[&str] = &["ep_return", "cum_cost", "ret_over_logcost"];

#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub metric: String,
    pub runs: Vec<PathBuf>,
    pub smoothing_window: usize,
    pub output: PathBuf,
}

/// One aggregated curve: x values with per-point mean and standard deviation.
pub struct Aggregated {
    pub steps: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return values.to_vec();
    }
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        let n = (i + 1).min(window) as f64;
        out.push(sum / n);
    }
    out
}

/// Linear interpolation of `(xs, ys)` onto `grid`, clamping at the ends.
fn resample(xs: &[f64], ys: &[f64], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&x| {
            if x <= xs[0] {
                return ys[0];
            }
            if x >= xs[xs.len() - 1] {
                return ys[ys.len() - 1];
            }
            let idx = xs.partition_point(|&v| v < x);
            let (x0, x1) = (xs[idx - 1], xs[idx]);
            let (y0, y1) = (ys[idx - 1], ys[idx]);
            if x1 == x0 {
                y0
            } else {
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        })
        .collect()
}

/// Load, smooth, and aggregate the metric across runs.
pub fn aggregate(spec: &PlotSpec) -> Result<Aggregated> {
    if spec.runs.is_empty() {
        return Err(Error::Config("no run directories given".into()));
    }
    if !PLOTTABLE_METRICS.contains(&spec.metric.as_str()) {
        return Err(Error::Config(format!(
            "metric '{}' is not plottable (expected one of {PLOTTABLE_METRICS:?})",
            spec.metric
        )));
    }
    let mut series: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for run in &spec.runs {
        let table = read_metrics(&run.join("metrics.csv"))?;
        let steps = table
            .column("step")
            .ok_or_else(|| Error::Config("metrics.csv lacks a step column".into()))?;
        let values = table
            .column(&spec.metric)
            .ok_or_else(|| Error::Config(format!("metric '{}' absent from metrics header", spec.metric)))?;
        if steps.is_empty() {
            return Err(Error::Config(format!("'{}' has no metric rows", run.display())));
        }
        series.push((steps, moving_average(&values, spec.smoothing_window)));
    }

    let grid: Vec<f64> = series[0].0.clone();
    let resampled: Vec<Vec<f64>> = series.iter().map(|(xs, ys)| resample(xs, ys, &grid)).collect();
    let n = resampled.len() as f64;
    let mut mean = Vec::with_capacity(grid.len());
    let mut std = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let m = resampled.iter().map(|r| r[i]).sum::<f64>() / n;
        let v = resampled.iter().map(|r| (r[i] - m) * (r[i] - m)).sum::<f64>() / n;
        mean.push(m);
        std.push(v.sqrt());
    }
    Ok(Aggregated { steps: grid, mean, std })
}

/// Render the aggregated curve to an SVG file plus a sibling `.csv`.
pub fn render(spec: &PlotSpec) -> Result<Aggregated> {
    let agg = aggregate(spec)?;
    let svg = render_svg(&spec.metric, &agg);
    fs::write(&spec.output, svg)
        .map_err(|e| Error::Internal(format!("writing '{}': {e}", spec.output.display())))?;

    let mut csv = String::from("step,mean,std\n");
    for i in 0..agg.steps.len() {
        csv.push_str(&format!("{},{},{}\n", agg.steps[i], sig6(agg.mean[i]), sig6(agg.std[i])));
    }
    let csv_path = spec.output.with_extension("csv");
    fs::write(&csv_path, csv)
        .map_err(|e| Error::Internal(format!("writing '{}': {e}", csv_path.display())))?;
    Ok(agg)
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;

fn render_svg(metric: &str, agg: &Aggregated) -> String {
    let (x_lo, x_hi) = (agg.steps[0], *agg.steps.last().expect("nonempty"));
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for i in 0..agg.steps.len() {
        y_lo = y_lo.min(agg.mean[i] - agg.std[i]);
        y_hi = y_hi.max(agg.mean[i] + agg.std[i]);
    }
    if y_lo == y_hi {
        y_lo -= 1.0;
        y_hi += 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);

    let x_span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    let sx = move |x: f64| MARGIN_L + (x - x_lo) / x_span * (WIDTH - MARGIN_L - MARGIN_R);
    let sy = move |y: f64| HEIGHT - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"28\" font-family=\"sans-serif\" font-size=\"18\" text-anchor=\"middle\">{metric}</text>\n",
        WIDTH / 2.0
    ));

    // std band
    if agg.std.iter().any(|&s| s > 0.0) {
        let mut points = String::new();
        for i in 0..agg.steps.len() {
            points.push_str(&format!("{:.2},{:.2} ", sx(agg.steps[i]), sy(agg.mean[i] + agg.std[i])));
        }
        for i in (0..agg.steps.len()).rev() {
            points.push_str(&format!("{:.2},{:.2} ", sx(agg.steps[i]), sy(agg.mean[i] - agg.std[i])));
        }
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"#4477aa\" fill-opacity=\"0.25\" stroke=\"none\"/>\n",
            points.trim_end()
        ));
    }

    // mean line (one vertex per row)
    let mut points = String::new();
    for i in 0..agg.steps.len() {
        points.push_str(&format!("{:.2},{:.2} ", sx(agg.steps[i]), sy(agg.mean[i])));
    }
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#4477aa\" stroke-width=\"2.5\"/>\n",
        points.trim_end()
    ));

    // axes and ticks
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B
    ));
    for k in 0..=4 {
        let fx = x_lo + x_span * k as f64 / 4.0;
        let fy = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        svg.push_str(&format!(
            "<line x1=\"{0:.2}\" y1=\"{1}\" x2=\"{0:.2}\" y2=\"{2}\" stroke=\"black\"/>\n",
            sx(fx),
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 6.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            sx(fx),
            HEIGHT - MARGIN_B + 22.0,
            sig6(fx)
        ));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{1:.2}\" x2=\"{MARGIN_L}\" y2=\"{1:.2}\" stroke=\"black\"/>\n",
            MARGIN_L - 6.0,
            sy(fy)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L - 10.0,
            sy(fy) + 4.0,
            sig6(fy)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">environment step</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 14.0
    ));
    svg.push_str("</svg>\n");
    svg
}
