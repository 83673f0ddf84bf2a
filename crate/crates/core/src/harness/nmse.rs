use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec2;

/// Denominator of the NMSE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmseNormalisation {
    /// Euclidean norm of the true series.
    #[default]
    Norm,
    /// Squared Euclidean norm (scale-free variant).
    SquaredNorm,
}

/// Per-node, per-direction error terms `||p - t||^2 / ||t||` of one variable;
/// `series[step][node]`.
pub fn nmse_terms(
    predicted: &[Vec<Vec2>],
    truth: &[Vec<Vec2>],
    normalisation: NmseNormalisation,
) -> Result<Vec<[f64; 2]>> {
    if predicted.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    let nodes = truth.first().map_or(0, Vec::len);
    if truth.iter().chain(predicted).any(|row| row.len() != nodes) {
        return Err(Error::Invalid("series rows differ in node count".into()));
    }
    let mut out = Vec::with_capacity(nodes);
    for j in 0..nodes {
        let mut term = [0.0; 2];
        for (d, slot) in term.iter_mut().enumerate() {
            let (mut err, mut norm2) = (0.0, 0.0);
            for (p, t) in predicted.iter().zip(truth) {
                err += (p[j][d] - t[j][d]).powi(2);
                norm2 += t[j][d] * t[j][d];
            }
            if norm2 == 0.0 {
                return Err(Error::ZeroReference { node: j, direction: d });
            }
            *slot = match normalisation {
                NmseNormalisation::Norm => err / norm2.sqrt(),
                NmseNormalisation::SquaredNorm => err / norm2,
            };
        }
        out.push(term);
    }
    Ok(out)
}

/// `1/(2 n) sum_j sum_d ||p_jd - t_jd||^2 / ||t_jd||` over all nodes of the series.
pub fn nmse(predicted: &[Vec<Vec2>], truth: &[Vec<Vec2>], normalisation: NmseNormalisation) -> Result<f64> {
    let terms = nmse_terms(predicted, truth, normalisation)?;
    Ok(aggregate(&terms))
}

/// Global NMSE from per-node terms: the mean over nodes and directions.
pub fn aggregate(terms: &[[f64; 2]]) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    terms.iter().map(|t| t[0] + t[1]).sum::<f64>() / (2.0 * terms.len() as f64)
}

/// Restricts `series[step][node]` to the given nodes.
pub fn select_nodes(series: &[Vec<Vec2>], nodes: &[usize]) -> Vec<Vec<Vec2>> {
    series.iter().map(|row| nodes.iter().map(|&i| row[i]).collect()).collect()
}
