use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::nmse::{aggregate, nmse_terms, select_nodes, NmseNormalisation};
use crate::harness::series::{PredictionSeries, Variable};

/// Which predictor produced a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "PGGNODE")]
    OpenLoop,
    #[serde(rename = "PGGNODE-GEKF")]
    Filtered,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::OpenLoop => "PGGNODE",
            ModelKind::Filtered => "PGGNODE-GEKF",
        }
    }
}

/// NMSE of one predictor: per node (mean over directions) and global, for
/// displacement, velocity and acceleration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: ModelKind,
    pub nodes: Vec<usize>,
    /// `[node][variable]`, variables in [`Variable::ALL`] order.
    pub per_node: Vec<[f64; 3]>,
    pub global: [f64; 3],
    pub normalisation: NmseNormalisation,
}

impl EvaluationReport {
    pub fn get(&self, v: Variable) -> f64 {
        self.global[v as usize]
    }
}

/// NMSE of `predicted` against `truth` over `nodes` (all nodes if `None`).
pub fn evaluate(
    model: ModelKind,
    predicted: &PredictionSeries,
    truth: &PredictionSeries,
    nodes: Option<&[usize]>,
    normalisation: NmseNormalisation,
) -> Result<EvaluationReport> {
    let nodes: Vec<usize> = match nodes {
        Some(n) => n.to_vec(),
        None => (0..truth.node_count()).collect(),
    };
    if let Some(&bad) = nodes.iter().find(|&&i| i >= truth.node_count() || i >= predicted.node_count()) {
        return Err(Error::Invalid(format!("node {bad} out of range")));
    }
    let mut per_node = vec![[0.0; 3]; nodes.len()];
    let mut global = [0.0; 3];
    for v in Variable::ALL {
        let p = select_nodes(predicted.variable(v), &nodes);
        let t = select_nodes(truth.variable(v), &nodes);
        let terms = nmse_terms(&p, &t, normalisation)?;
        for (slot, term) in per_node.iter_mut().zip(&terms) {
            slot[v as usize] = 0.5 * (term[0] + term[1]);
        }
        global[v as usize] = aggregate(&terms);
    }
    Ok(EvaluationReport {
        model,
        nodes,
        per_node,
        global,
        normalisation,
    })
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub case: String,
    pub open_loop: EvaluationReport,
    pub filtered: EvaluationReport,
}

const CASE_WIDTH: usize = 28;
const VALUE_WIDTH: usize = 16;

/// Aligned text table: case name, then u, du, ddu NMSE for the open-loop
/// model and for the filter.
pub fn render_table(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<CASE_WIDTH$}", "case");
    for m in [ModelKind::OpenLoop, ModelKind::Filtered] {
        for v in Variable::ALL {
            let _ = write!(out, " | {:>VALUE_WIDTH$}", format!("{} {}", m.label(), v.label()));
        }
    }
    out.push('\n');
    let _ = writeln!(out, "{}", "-".repeat(CASE_WIDTH + 6 * (VALUE_WIDTH + 3)));
    for row in rows {
        let _ = write!(out, "{:<CASE_WIDTH$}", row.case);
        for r in [&row.open_loop, &row.filtered] {
            for v in r.global {
                let _ = write!(out, " | {:>VALUE_WIDTH$.6e}", v);
            }
        }
        out.push('\n');
    }
    out
}

/// Reads back `(case, [six NMSE values])` from [`render_table`] output.
pub fn parse_table(text: &str) -> Result<Vec<(String, [f64; 6])>> {
    let mut rows = Vec::new();
    for line in text.lines().skip(2).filter(|l| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(" | ").collect();
        if cells.len() != 7 {
            return Err(Error::Parse(format!("expected 7 cells, got {}: {line}", cells.len())));
        }
        let mut values = [0.0; 6];
        for (slot, cell) in values.iter_mut().zip(&cells[1..]) {
            *slot = cell
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("bad value {cell:?}: {e}")))?;
        }
        rows.push((cells[0].trim().to_string(), values));
    }
    Ok(rows)
}

/// Writes `nmse_table.txt`, one per-node CSV per row and, with `plots`,
/// a per-node NMSE heat map per row.
pub fn emit_report(rows: &[ReportRow], dir: &Path, plots: bool) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Invalid("no reports to emit".into()));
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("nmse_table.txt"), render_table(rows))?;
    for row in rows {
        let stem = sanitize(&row.case);
        write_per_node(&row.open_loop, &row.filtered, &dir.join(format!("{stem}_per_node.csv")))?;
        if plots {
            crate::harness::plots::nmse_heat_map(row, &dir.join(format!("{stem}_per_node.svg")))?;
        }
    }
    Ok(())
}

pub(crate) fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

fn write_per_node(open: &EvaluationReport, filtered: &EvaluationReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node", "open_u", "open_du", "open_ddu", "gekf_u", "gekf_du", "gekf_ddu"])?;
    for (k, node) in open.nodes.iter().enumerate() {
        let mut rec = vec![node.to_string()];
        rec.extend(open.per_node[k].iter().map(|v| format!("{v:e}")));
        rec.extend(filtered.per_node[k].iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
