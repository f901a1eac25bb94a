//! SVG figures: PSNR against SNR per layer with references, average recall
//! against SNR, and grouped class-weighting bars.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::evaluation::{BetaRow, CrossedRow, SweepResult};

const SIZE: (u32, u32) = (720, 480);

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points, dashed: false }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).abs().max(1e-6);
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// Line chart with markers. Non-finite points are skipped.
pub fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let finite: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Domain(format!("{title}: nothing to plot")));
    }
    let (x0, x1) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0, y1);

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(plot_err)?;

    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        let style = color.stroke_width(2);
        let drawn = if s.dashed {
            chart.draw_series(DashedLineSeries::new(pts.clone(), 6, 4, style))
        } else {
            chart.draw_series(LineSeries::new(pts.clone(), style))
        };
        drawn
            .map_err(plot_err)?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled()))).map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Grouped bars: one group per entry of `groups`, one bar per entry of
/// `bars` (label, value per group). Values are expected in `[0, 1]`.
pub fn bar_chart(path: &Path, title: &str, groups: &[String], bars: &[(String, Vec<f64>)]) -> Result<()> {
    if groups.is_empty() || bars.is_empty() || bars.iter().any(|(_, v)| v.len() != groups.len()) {
        return Err(Error::Shape(format!("{title}: each bar series needs one value per group")));
    }
    let n = bars.len() as f64;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..groups.len() as f64, 0.0..1.05)
        .map_err(plot_err)?;
    let names = groups.to_vec();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(groups.len() * 2 + 1)
        .x_label_formatter(&move |x| {
            let c = x - x.floor();
            if (c - 0.5).abs() < 1e-6 {
                names.get(x.floor() as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("value")
        .draw()
        .map_err(plot_err)?;
    for (i, (label, values)) in bars.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let w = 0.8 / n;
        chart
            .draw_series(values.iter().enumerate().map(|(g, &v)| {
                let left = g as f64 + 0.1 + i as f64 * w;
                let v = if v.is_finite() { v } else { 0.0 };
                Rectangle::new([(left, 0.0), (left + w * 0.9, v)], color.filled())
            }))
            .map_err(plot_err)?
            .label(label.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn layer_series(sweep: &SweepResult, label: &str, value: impl Fn(&crate::evaluation::SweepRow) -> f64) -> Vec<Series> {
    let mut layers: Vec<usize> = sweep.rows.iter().map(|r| r.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    layers
        .into_iter()
        .map(|l| {
            let pts = sweep.rows.iter().filter(|r| r.layer == l).map(|r| (r.training_snr_db, value(r))).collect();
            Series::new(format!("{label} layer {l}"), pts)
        })
        .collect()
}

/// PSNR of every layer against SNR, with the single-head baseline and the
/// separate-coding reference when given.
pub fn psnr_figure(path: &Path, sweep: &SweepResult, baseline: Option<&SweepResult>, sscc: Option<&[(f64, f64)]>) -> Result<()> {
    let mut series = layer_series(sweep, "JSCC", |r| r.psnr_db);
    if let Some(b) = baseline {
        let last = b.rows.iter().map(|r| r.layer).max().unwrap_or(1);
        let pts = b.rows.iter().filter(|r| r.layer == last).map(|r| (r.training_snr_db, r.psnr_db)).collect();
        series.push(Series::new("single-head baseline", pts).dashed());
    }
    if let Some(s) = sscc {
        series.push(Series::new("SSCC", s.to_vec()).dashed());
    }
    line_chart(path, "Reconstruction quality", "SNR (dB)", "PSNR (dB)", &series)
}

/// Average recall of every layer against SNR. Crossed rows add one curve
/// per later-sub-block SNR, plotted against the first sub-block's SNR.
pub fn recall_figure(path: &Path, sweep: &SweepResult, crossed: &[CrossedRow]) -> Result<()> {
    let mut series = layer_series(sweep, "matched", |r| r.avg_recall);
    let mut keys: Vec<(usize, f64)> = crossed.iter().filter(|r| r.layer > 1).map(|r| (r.layer, r.later_snr_db)).collect();
    keys.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    keys.dedup();
    for (layer, later) in keys {
        let pts = crossed.iter().filter(|r| r.layer == layer && r.later_snr_db == later).map(|r| (r.first_snr_db, r.avg_recall)).collect();
        series.push(Series::new(format!("layer {layer}, later sub-blocks at {later} dB"), pts).dashed());
    }
    line_chart(path, "Average recall", "SNR (dB)", "average recall", &series)
}

/// Mean recall and precision over the emphasised and remaining classes for
/// the first layer and each weighting scheme.
pub fn beta_figure(path: &Path, rows: &[BetaRow], keep: usize) -> Result<()> {
    let groups: Vec<String> = rows.iter().map(|r| r.scheme.clone()).collect();
    let bars = vec![
        (format!("recall 0-{}", keep - 1), rows.iter().map(|r| r.recall_head).collect()),
        (format!("precision 0-{}", keep - 1), rows.iter().map(|r| r.precision_head).collect()),
        (format!("recall {keep}+"), rows.iter().map(|r| r.recall_tail).collect()),
        (format!("precision {keep}+"), rows.iter().map(|r| r.precision_tail).collect()),
    ];
    bar_chart(path, "Effect of class weights", &groups, &bars)
}
