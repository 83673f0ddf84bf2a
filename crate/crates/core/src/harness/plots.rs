use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::harness::report::ReportRow;
use crate::harness::series::{PredictionSeries, Variable};

fn plot_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::Invalid(format!("plotting failed: {e:?}"))
}

/// Per-node NMSE heat map, log10 colour scale: one row per node, columns
/// u, du, ddu for the open-loop model then for the filter.
pub fn nmse_heat_map(row: &ReportRow, path: &Path) -> Result<()> {
    let nodes = row.open_loop.per_node.len();
    let values: Vec<[f64; 6]> = (0..nodes)
        .map(|k| {
            let o = row.open_loop.per_node[k];
            let f = row.filtered.per_node[k];
            [o[0], o[1], o[2], f[0], f[1], f[2]]
        })
        .collect();
    let logs: Vec<f64> = values.iter().flatten().map(|v| v.max(1e-300).log10()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(lo + 1e-9);
    let height = (60 + 14 * nodes.max(1)) as u32;
    let root = SVGBackend::new(path, (520, height)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{}: per-node NMSE (log10 {lo:.1} .. {hi:.1})", row.case), ("sans-serif", 14))
        .margin(8)
        .x_label_area_size(24)
        .y_label_area_size(36)
        .build_cartesian_2d(0f64..6f64, 0f64..nodes.max(1) as f64)
        .map_err(plot_err)?;
    let labels = ["OL u", "OL du", "OL ddu", "F u", "F du", "F ddu"];
    chart
        .configure_mesh()
        .disable_mesh()
        .x_labels(6)
        .x_label_formatter(&|x| labels.get(x.floor() as usize).copied().unwrap_or("").to_string())
        .y_desc("node")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(values.iter().enumerate().flat_map(|(k, vals)| {
            vals.iter().enumerate().map(move |(c, v)| {
                let t = (v.max(1e-300).log10() - lo) / (hi - lo);
                let colour = ViridisRGB::get_color(t);
                Rectangle::new([(c as f64, k as f64), (c as f64 + 1.0, k as f64 + 1.0)], colour.filled())
            })
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// True signal with open-loop and filtered predictions of one node channel;
/// the filter's 95% band is shaded when available.
pub fn signal_overlay(
    truth: &PredictionSeries,
    open_loop: &PredictionSeries,
    filtered: &PredictionSeries,
    variable: Variable,
    node: usize,
    direction: usize,
    path: &Path,
) -> Result<()> {
    let pick = |s: &PredictionSeries| -> Vec<(f64, f64)> {
        s.times
            .iter()
            .zip(s.variable(variable))
            .map(|(t, row)| (*t, row[node][direction]))
            .collect()
    };
    let t = pick(truth);
    let o = pick(open_loop);
    let f = pick(filtered);
    let band: Option<Vec<(f64, f64, f64)>> = filtered.variable_std(variable).map(|sd| {
        f.iter()
            .zip(sd)
            .map(|(&(x, m), s)| (x, m - 2.0 * s[node][direction], m + 2.0 * s[node][direction]))
            .collect()
    });
    let mut ys: Vec<f64> = t.iter().chain(&o).chain(&f).map(|p| p.1).collect();
    if let Some(b) = &band {
        ys.extend(b.iter().flat_map(|p| [p.1, p.2]));
    }
    let (ymin, ymax) = ys
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let pad = 0.05 * (ymax - ymin).max(1e-12);
    let (t0, t1) = (truth.times[0], *truth.times.last().unwrap_or(&1.0));
    let root = SVGBackend::new(path, (900, 320)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let dir = if direction == 0 { "x" } else { "y" };
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("node {node}, {} {dir}", variable.label()), ("sans-serif", 14))
        .margin(8)
        .x_label_area_size(28)
        .y_label_area_size(60)
        .build_cartesian_2d(t0..t1.max(t0 + 1e-9), (ymin - pad)..(ymax + pad))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("time [s]").draw().map_err(plot_err)?;
    if let Some(b) = band {
        let mut poly: Vec<(f64, f64)> = b.iter().map(|p| (p.0, p.2)).collect();
        poly.extend(b.iter().rev().map(|p| (p.0, p.1)));
        chart
            .draw_series(std::iter::once(Polygon::new(poly, BLUE.mix(0.2).filled())))
            .map_err(plot_err)?;
    }
    chart
        .draw_series(LineSeries::new(t, BLACK.stroke_width(2)))
        .map_err(plot_err)?
        .label("truth")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLACK));
    chart
        .draw_series(LineSeries::new(o, RED))
        .map_err(plot_err)?
        .label("open loop")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], RED));
    chart
        .draw_series(LineSeries::new(f, BLUE))
        .map_err(plot_err)?
        .label("filtered")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLUE));
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
