use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::config::Strategy;
use super::run::{ExperimentReport, AGGREGATE_METRICS};
use crate::error::{Error, Result};

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(140, 86, 75),
];

fn plot_err<E: std::error::Error + Send + Sync>(e: DrawingAreaErrorKind<E>) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn color(strategies: &[Strategy], s: Strategy) -> RGBColor {
    PALETTE[strategies.iter().position(|t| *t == s).unwrap_or(0) % PALETTE.len()]
}

fn padded_log_range(lo: f64, hi: f64) -> std::ops::Range<f64> {
    let (lo, hi) = if lo == hi { (lo / 2.0, hi * 2.0) } else { (lo, hi) };
    lo / 1.25..hi * 1.25
}

type Series = (Strategy, Vec<(f64, f64)>, String);

fn loglog(path: &Path, metric: &str, strategies: &[Strategy], series: &[Series]) -> Result<()> {
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0f64);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("median {metric} vs n"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(padded_log_range(x0, x1).log_scale(), padded_log_range(y0, y1).log_scale())
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("n (source records)")
        .y_desc(metric)
        .x_label_formatter(&|v| format!("{v:.0}"))
        .y_label_formatter(&|v| format!("{v:.2e}"))
        .draw()
        .map_err(plot_err)?;
    for (s, points, label) in series {
        let c = color(strategies, *s);
        chart
            .draw_series(LineSeries::new(points.iter().copied(), c.stroke_width(2)))
            .map_err(plot_err)?
            .label(label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], c.stroke_width(2)));
        chart.draw_series(points.iter().map(|&p| Circle::new(p, 4, c.filled()))).map_err(plot_err)?;
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.85)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn bars(path: &Path, strategies: &[Strategy], values: &[(Strategy, f64)], n: usize) -> Result<()> {
    let top = values.iter().map(|v| v.1).fold(0.0, f64::max).max(1e-12) * 1.15;
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let labels: Vec<String> = values.iter().map(|v| v.0.to_string()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("median l2q_error at n = {n}"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..values.len() as f64, 0.0..top)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(values.len() + 1)
        .x_label_formatter(&|v| {
            let i = (v - 0.5).round();
            if (v - 0.5 - i).abs() < 1e-9 && i >= 0.0 {
                labels.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("l2q_error")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(values.iter().enumerate().map(|(i, (s, v))| {
            let x = i as f64;
            Rectangle::new([(x + 0.15, 0.0), (x + 0.85, *v)], color(strategies, *s).filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Writes one log–log plot of median error against n per metric with data,
/// and a bar chart of each strategy's median L2(Q) error at its largest n.
/// Legend entries carry the fitted slope when a strategy has two or more points.
pub fn emit_plots(report: &ExperimentReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let strategies = report.strategies();
    if strategies.is_empty() {
        return Err(Error::invalid("nothing to plot: report has no strategies"));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for metric in AGGREGATE_METRICS {
        let mut series: Vec<Series> = Vec::new();
        for &s in &strategies {
            let points: Vec<(f64, f64)> = report
                .aggregates
                .iter()
                .filter(|a| a.strategy == s && a.metric == metric)
                .filter_map(|a| a.median.filter(|m| *m > 0.0).map(|m| (a.n_p as f64, m)))
                .collect();
            if points.is_empty() {
                continue;
            }
            let label = match report.slope(s, metric).and_then(|sl| sl.slope.map(|v| (v, sl.slope_se))) {
                Some((v, Some(se))) if points.len() > 1 => format!("{s} (slope {v:.3} ± {se:.3})"),
                Some((v, None)) if points.len() > 1 => format!("{s} (slope {v:.3})"),
                _ => s.to_string(),
            };
            series.push((s, points, label));
        }
        if series.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("{metric}.svg"));
        loglog(&path, metric, &strategies, &series)?;
        written.push(path);
    }
    let mut finals = Vec::new();
    let mut n_max = 0;
    for &s in &strategies {
        let last = report
            .aggregates
            .iter()
            .filter(|a| a.strategy == s && a.metric == "l2q_error" && a.median.is_some())
            .max_by_key(|a| a.n_p);
        if let Some(a) = last {
            n_max = n_max.max(a.n_p);
            finals.push((s, a.median.unwrap_or(0.0)));
        }
    }
    if !finals.is_empty() {
        let path = out_dir.join("final_n.svg");
        bars(&path, &strategies, &finals, n_max)?;
        written.push(path);
    }
    Ok(written)
}
