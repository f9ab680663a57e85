//! SVG plots: loss curves, A/B overlays and metric-vs-checkpoint charts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use plotters::prelude::*;
use t2i_core::metrics::MetricsReport;

use crate::{CmdResult, Failure, RuntimeExt, ValidationExt};

const SIZE: (u32, u32) = (800, 500);

/// A parsed loss CSV: first column is the x axis, the rest are series.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl LossTable {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
        let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if columns.len() < 2 {
            bail!("{}: need an x column and at least one series", path.display());
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.with_context(|| format!("{}: malformed row {}", path.display(), i + 1))?;
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| anyhow!("{}: row {}: {e}", path.display(), i + 1))?;
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn series(&self, column: usize) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r[0], r[column])).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

fn bounds<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> (std::ops::Range<f64>, std::ops::Range<f64>) {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = |lo: f64, hi: f64| {
        if !lo.is_finite() {
            0.0..1.0
        } else if hi - lo < 1e-12 {
            lo - 0.5..hi + 0.5
        } else {
            let m = 0.05 * (hi - lo);
            lo - m..hi + m
        }
    };
    (pad(x0, x1), pad(y0, y1))
}

/// One line chart with a legend entry per series.
pub fn line_chart(path: &Path, title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> anyhow::Result<()> {
    let (xr, yr) = bounds(series.iter().flat_map(|(_, s)| s.iter()));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(xr, yr)?;
    chart.configure_mesh().x_desc(x_label).draw()?;
    for (i, (name, points)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    if !series.is_empty() {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()?;
    }
    root.present()?;
    Ok(())
}

/// `losses.svg` style chart: one curve per loss column.
pub fn plot_losses(table: &LossTable, title: &str, path: &Path) -> anyhow::Result<()> {
    let series: Vec<_> = (1..table.columns.len())
        .map(|c| (table.columns[c].clone(), table.series(c)))
        .collect();
    line_chart(path, title, &table.columns[0], &series)
}

/// `column` of every table on one chart.
pub fn plot_overlay(tables: &[(String, LossTable)], column: &str, path: &Path) -> anyhow::Result<()> {
    let mut series = Vec::new();
    for (label, t) in tables {
        let c = t
            .column_index(column)
            .ok_or_else(|| anyhow!("{label} has no column {column:?}"))?;
        series.push((label.clone(), t.series(c)));
    }
    let x = tables.first().map(|(_, t)| t.columns[0].as_str()).unwrap_or("step");
    line_chart(path, &format!("{column} overlay"), x, &series)
}

fn step_of(id: &str) -> Option<f64> {
    let digits: String = id.chars().rev().take_while(char::is_ascii_digit).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

/// FID, IS and R-precision against the checkpoint step parsed from each
/// report id (report order when the id carries no step).
pub fn plot_metrics(reports: &[MetricsReport], path: &Path) -> anyhow::Result<()> {
    let mut points: Vec<(f64, &MetricsReport)> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| (step_of(&r.checkpoint_id).unwrap_or(i as f64), r))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let root = SVGBackend::new(path, (SIZE.0, 3 * SIZE.1 / 2)).into_drawing_area();
    root.fill(&WHITE)?;
    let panels = root.split_evenly((3, 1));
    let metrics: [(&str, fn(&MetricsReport) -> f64); 3] = [
        ("FID", |r| r.fid),
        ("IS", |r| r.is_mean),
        ("R-precision (%)", |r| r.rp_mean),
    ];
    for (panel, (name, get)) in panels.iter().zip(metrics) {
        let series: Vec<(f64, f64)> = points.iter().map(|(x, r)| (*x, get(r))).collect();
        let (xr, yr) = bounds(series.iter());
        let mut chart = ChartBuilder::on(panel)
            .caption(name, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(56)
            .build_cartesian_2d(xr, yr)?;
        chart.configure_mesh().x_desc("checkpoint step").draw()?;
        chart.draw_series(LineSeries::new(series.iter().copied(), BLUE.stroke_width(2)))?;
        chart.draw_series(series.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))?;
    }
    root.present()?;
    Ok(())
}

fn label_of(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match path.parent().and_then(|p| p.file_name()) {
        Some(dir) => format!("{}/{stem}", dir.to_string_lossy()),
        None => stem,
    }
}

/// Plots every CSV individually, overlays `column` when several CSVs are
/// given, and charts all report JSON files together.
pub fn plot_inputs(inputs: &[PathBuf], out: &Path, column: &str) -> CmdResult<()> {
    let mut tables = Vec::new();
    let mut reports = Vec::new();
    for p in inputs {
        match p.extension().and_then(|e| e.to_str()) {
            Some("csv") => tables.push((label_of(p), LossTable::read(p).invalid()?)),
            Some("json") => reports.push(
                MetricsReport::load(p)
                    .with_context(|| format!("{} is not a metrics report", p.display()))
                    .invalid()?,
            ),
            _ => {
                return Err(Failure::Validation(anyhow!(
                    "{}: expected a .csv loss file or a .json metrics report",
                    p.display()
                )))
            }
        }
    }
    fs::create_dir_all(out).runtime()?;
    let mut written = Vec::new();
    for (label, table) in &tables {
        let file = out.join(format!("{}.svg", label.replace(['/', '\\'], "_")));
        plot_losses(table, label, &file).runtime()?;
        written.push(file);
    }
    if tables.len() > 1 {
        let with: Vec<_> = tables.iter().filter(|(_, t)| t.column_index(column).is_some()).cloned().collect();
        if with.is_empty() {
            return Err(Failure::Validation(anyhow!("no input has a column {column:?}")));
        }
        if with.len() > 1 {
            let file = out.join(format!("overlay_{}.svg", column.replace(['/', '\\'], "_")));
            plot_overlay(&with, column, &file).invalid()?;
            written.push(file);
        }
    }
    if !reports.is_empty() {
        let file = out.join("metrics.svg");
        plot_metrics(&reports, &file).runtime()?;
        written.push(file);
    }
    for f in written {
        println!("wrote {}", f.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_digits_give_the_step() {
        assert_eq!(step_of("gan_step000500"), Some(500.0));
        assert_eq!(step_of("real-as-fake"), None);
    }

    #[test]
    fn degenerate_ranges_are_widened() {
        let (x, y) = bounds([(1.0, 2.0)].iter());
        assert!(x.start < 1.0 && x.end > 1.0);
        assert!(y.start < 2.0 && y.end > 2.0);
        let (x, _) = bounds([].iter());
        assert_eq!(x, 0.0..1.0);
    }
}
