//! SVG figures from a [`MetricsReport`]: value-difference and reward-MSE
//! curves against the number of demonstrations, and behavior distributions.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{MetricsReport, SummaryRow, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    ValueDifference,
    RewardMse,
}

impl Metric {
    fn label(self) -> &'static str {
        match self {
            Metric::ValueDifference => "value difference",
            Metric::RewardMse => "reward MSE",
        }
    }

    fn of(self, s: &SummaryRow) -> Option<(f64, f64)> {
        match self {
            Metric::ValueDifference => Some((s.value_difference_mean, s.value_difference_std)),
            Metric::RewardMse => s.reward_mse_mean.zip(s.reward_mse_std),
        }
    }
}

fn plot_err<E: std::error::Error>(e: E) -> Error {
    Error::Numerical(format!("plot: {e}"))
}

fn color(i: usize) -> RGBColor {
    let c = Palette99::pick(i).to_rgba();
    RGBColor(c.0, c.1, c.2)
}

fn series(report: &MetricsReport, metric: Metric) -> Vec<(Variant, Vec<(f64, f64, f64)>)> {
    let mut out: Vec<(Variant, Vec<(f64, f64, f64)>)> = Vec::new();
    for s in report.summary() {
        let Some((m, sd)) = metric.of(&s) else { continue };
        match out.last_mut() {
            Some((v, pts)) if *v == s.variant => pts.push((s.n_demos as f64, m, sd)),
            _ => out.push((s.variant, vec![(s.n_demos as f64, m, sd)])),
        }
    }
    out
}

/// Mean over seeds against N (log axis), with one standard deviation bars.
pub fn plot_metric(report: &MetricsReport, metric: Metric, path: &Path) -> Result<()> {
    let data = series(report, metric);
    if data.is_empty() {
        return Err(Error::validation(format!("no {} values to plot", metric.label())));
    }
    let pts = data.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, m, sd) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(m - sd);
        y1 = y1.max(m + sd);
    }
    let pad = ((y1 - y0) * 0.05).max(1e-6);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{} vs demonstrations", metric.label()), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d((x0 * 0.8..x1 * 1.25).log_scale(), (y0 - pad)..(y1 + pad))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("demonstrations")
        .y_desc(metric.label())
        .draw()
        .map_err(plot_err)?;
    for (i, (variant, p)) in data.iter().enumerate() {
        let c = color(i);
        chart
            .draw_series(LineSeries::new(p.iter().map(|&(x, m, _)| (x, m)), c.stroke_width(2)))
            .map_err(plot_err)?
            .label(variant.name())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], c.stroke_width(2)));
        chart
            .draw_series(p.iter().map(|&(x, m, sd)| ErrorBar::new_vertical(x, m - sd, m, m + sd, c.filled(), 6)))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Grouped bars of the mean behavior distribution of every variant at
/// `n_demos`, next to the expert's when the report carries metadata.
pub fn plot_distribution(report: &MetricsReport, n_demos: usize, path: &Path) -> Result<()> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    if let Some(meta) = &report.meta {
        groups.push(("expert".into(), meta.expert_distribution.clone()));
    }
    for s in report.summary().into_iter().filter(|s| s.n_demos == n_demos) {
        groups.push((s.variant.name().into(), s.distribution_mean));
    }
    let bins = report.bins();
    if groups.is_empty() || bins == 0 {
        return Err(Error::validation(format!("no distributions at N = {n_demos}")));
    }
    let width = groups.len() as f64 + 1.0;
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("behavior distribution, N = {n_demos}"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..bins as f64 * width, 0.0..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(bins)
        .x_label_formatter(&|x| format!("bin {}", (x / width).floor() as usize))
        .y_desc("share")
        .draw()
        .map_err(plot_err)?;
    for (g, (name, dist)) in groups.iter().enumerate() {
        let c = color(g);
        chart
            .draw_series(dist.iter().enumerate().map(|(b, &v)| {
                let x = b as f64 * width + 0.5 + g as f64;
                Rectangle::new([(x, 0.0), (x + 0.9, v)], c.filled())
            }))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], c.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Writes `value_difference.svg`, `reward_mse.svg` (when any variant has a
/// reward) and `distribution.svg` (at the largest N) into `dir`.
pub fn render_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let p = dir.join("value_difference.svg");
    plot_metric(report, Metric::ValueDifference, &p)?;
    written.push(p);
    if report.rows.iter().any(|r| r.reward_mse.is_some()) {
        let p = dir.join("reward_mse.svg");
        plot_metric(report, Metric::RewardMse, &p)?;
        written.push(p);
    }
    if let Some(n) = report.rows.iter().map(|r| r.n_demos).max() {
        let p = dir.join("distribution.svg");
        plot_distribution(report, n, &p)?;
        written.push(p);
    }
    Ok(written)
}
