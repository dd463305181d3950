//! Learning-curve rendering: test accuracy (mean ± std over seeds)
//! against training-set size, one curve per metrics file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use plotters::prelude::*;

use resolve_core::harness::read_metrics_csv;

struct Curve {
    label: String,
    /// (train_size, mean, std, n_seeds)
    points: Vec<(usize, f64, f64, usize)>,
}

fn extract_curve(path: &Path, metric: Option<&str>) -> anyhow::Result<Curve> {
    let rows = read_metrics_csv(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let metric = match metric {
        Some(m) => m.to_string(),
        None => {
            // headline metric: the first per-seed test metric in the file
            rows.iter()
                .find(|r| r.split == "test" && r.seed.is_some())
                .map(|r| r.metric.clone())
                .context("no per-seed test rows in metrics file")?
        }
    };
    let mut points: Vec<(usize, f64, f64, usize)> = Vec::new();
    let mut sizes: Vec<usize> = rows
        .iter()
        .filter(|r| r.split == "test" && r.seed.is_some() && r.metric == metric)
        .map(|r| r.train_size)
        .collect();
    sizes.sort_unstable();
    sizes.dedup();
    for size in sizes {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| {
                r.split == "test" && r.seed.is_some() && r.metric == metric && r.train_size == size
            })
            .map(|r| r.value)
            .collect();
        let n = vals.len();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        points.push((size, mean, var.sqrt(), n));
    }
    if points.is_empty() {
        bail!("metric '{metric}' has no test rows in {}", path.display());
    }
    let first = &rows[0];
    let n_min = points.iter().map(|p| p.3).min().unwrap();
    let n_max = points.iter().map(|p| p.3).max().unwrap();
    let n_note = if n_min == n_max {
        format!("n={n_min}")
    } else {
        format!("n={n_min}..{n_max}")
    };
    Ok(Curve {
        label: format!("{} / {} ({}, {})", first.run_id, first.model, metric, n_note),
        points,
    })
}

pub fn learning_curves(
    metrics: &[PathBuf],
    out: &Path,
    metric: Option<&str>,
) -> anyhow::Result<()> {
    let curves: Vec<Curve> = metrics
        .iter()
        .map(|p| extract_curve(p, metric))
        .collect::<anyhow::Result<_>>()?;

    let x_min = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .min()
        .unwrap() as f64;
    let x_max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .max()
        .unwrap() as f64;
    let x_pad = ((x_max - x_min) * 0.05).max(1.0);
    let y_lo = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1 - p.2))
        .fold(f64::INFINITY, f64::min);
    let y_hi = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1 + p.2))
        .fold(f64::NEG_INFINITY, f64::max);
    let y_pad = ((y_hi - y_lo) * 0.1).max(0.02);

    let root = SVGBackend::new(out, (900, 600)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(45)
        .y_label_area_size(55)
        .caption("Test accuracy vs. training-set size", ("sans-serif", 22))
        .build_cartesian_2d(
            (x_min - x_pad)..(x_max + x_pad),
            (y_lo - y_pad)..(y_hi + y_pad),
        )?;
    chart
        .configure_mesh()
        .x_desc("training samples")
        .y_desc("accuracy (mean ± std over seeds)")
        .draw()?;

    for (i, curve) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let line: Vec<(f64, f64)> = curve
            .points
            .iter()
            .map(|&(x, m, _, _)| (x as f64, m))
            .collect();
        chart
            .draw_series(LineSeries::new(line.clone(), color.stroke_width(2)))?
            .label(curve.label.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
            });
        chart.draw_series(line.iter().map(|&(x, y)| Circle::new((x, y), 3, color.filled())))?;
        // error bars: vertical segment with short caps at mean ± std
        let cap = (x_max - x_min).max(1.0) * 0.008;
        chart.draw_series(curve.points.iter().flat_map(|&(x, m, s, _)| {
            let x = x as f64;
            [
                PathElement::new(vec![(x, m - s), (x, m + s)], color.stroke_width(1)),
                PathElement::new(vec![(x - cap, m - s), (x + cap, m - s)], color.stroke_width(1)),
                PathElement::new(vec![(x - cap, m + s), (x + cap, m + s)], color.stroke_width(1)),
            ]
        }))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()?;
    root.present()?;
    Ok(())
}
