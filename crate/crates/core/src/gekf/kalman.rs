use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{GraphState, ObservationMask, StructuralGraph};
use crate::model::{acceleration_jacobian, verlet_jacobian, PiggoModel};
use crate::Vec2;

/// Largest innovation-covariance condition number accepted by [`update`].
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;
const INNOVATION_JITTER: f64 = 1e-12;

/// Gaussian over the flattened graph state.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::ShapeMismatch {
                expected: mean.len(),
                got: covariance.nrows(),
            });
        }
        Ok(GaussianBelief { mean, covariance })
    }

    /// Zero mean with a diagonal covariance.
    pub fn zero_mean(diagonal: &[f64]) -> Self {
        GaussianBelief {
            mean: DVector::zeros(diagonal.len()),
            covariance: DMatrix::from_diagonal(&DVector::from_column_slice(diagonal)),
        }
    }

    pub fn state(&self) -> Result<GraphState> {
        GraphState::unflatten(self.mean.as_slice())
    }

    /// Standard deviation of every component.
    pub fn std(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Symmetric within 1e-10 and smallest eigenvalue at least -1e-10 (relative
    /// to the largest diagonal entry when that exceeds one).
    pub fn is_valid(&self) -> bool {
        let p = &self.covariance;
        let scale = p.diagonal().amax().max(1.0);
        if (p - p.transpose()).amax() > 1e-10 * scale {
            return false;
        }
        let min = p.clone().symmetric_eigenvalues().min();
        min >= -1e-10 * scale
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Jacobian of one Verlet step with respect to the flattened state, with the
/// propagated mean.
pub fn transition_jacobian(
    model: &PiggoModel,
    graph: &StructuralGraph,
    mean: &GraphState,
    forces: &[Vec2],
    dt: f64,
) -> Result<(GraphState, DMatrix<f64>)> {
    if !mean.is_finite() {
        return Err(Error::Invalid("belief mean is not finite".into()));
    }
    verlet_jacobian(model, graph, mean, forces, dt)
}

/// Predicted accelerations at the nodes of `nodes` (two channels each) and
/// their Jacobian with respect to the flattened state.
pub fn acceleration_observation(
    model: &PiggoModel,
    graph: &StructuralGraph,
    mean: &GraphState,
    forces: &[Vec2],
    nodes: &[usize],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !mean.is_finite() {
        return Err(Error::Invalid("belief mean is not finite".into()));
    }
    let n = graph.node_count();
    let (acc, ju, jv) = acceleration_jacobian(model, graph, mean, forces)?;
    let mut y = DVector::zeros(2 * nodes.len());
    let mut h = DMatrix::zeros(2 * nodes.len(), 4 * n);
    for (row, &i) in nodes.iter().enumerate() {
        for d in 0..2 {
            let r = 2 * row + d;
            y[r] = acc[i][d];
            for j in 0..n {
                for e in 0..2 {
                    h[(r, 4 * j + e)] = ju[(2 * i + d, 2 * j + e)];
                    h[(r, 4 * j + 2 + e)] = jv[(2 * i + d, 2 * j + e)];
                }
            }
        }
    }
    Ok((y, h))
}

/// Measured-node accelerations and their Jacobian; unmeasured nodes have no rows.
pub fn observation_jacobian(
    model: &PiggoModel,
    graph: &StructuralGraph,
    mean: &GraphState,
    forces: &[Vec2],
    mask: &ObservationMask,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    acceleration_observation(model, graph, mean, forces, &mask.measured_nodes())
}

/// Prior after one step: mean through the Verlet step, covariance
/// `A P A^T + Q` with `Q` diagonal.
pub fn predict(
    belief: &GaussianBelief,
    model: &PiggoModel,
    graph: &StructuralGraph,
    forces: &[Vec2],
    dt: f64,
    process_noise: &[f64],
) -> Result<GaussianBelief> {
    if process_noise.len() != belief.mean.len() {
        return Err(Error::ShapeMismatch {
            expected: belief.mean.len(),
            got: process_noise.len(),
        });
    }
    let state = belief.state()?;
    let (next, a) = transition_jacobian(model, graph, &state, forces, dt)?;
    let mut covariance = &a * &belief.covariance * a.transpose();
    for (k, q) in process_noise.iter().enumerate() {
        covariance[(k, k)] += q;
    }
    symmetrize(&mut covariance);
    Ok(GaussianBelief {
        mean: DVector::from_vec(next.flatten()),
        covariance,
    })
}

/// Innovation of one update.
#[derive(Clone, Debug, PartialEq)]
pub struct Innovation {
    pub residual: DVector<f64>,
    /// `H P H^T + R`, before regularisation.
    pub covariance: DMatrix<f64>,
}

/// Kalman update with the Joseph-form covariance.
pub fn update(
    prior: &GaussianBelief,
    observed: &DVector<f64>,
    predicted: &DVector<f64>,
    h: &DMatrix<f64>,
    measurement_noise: &[f64],
) -> Result<(GaussianBelief, Innovation)> {
    let m = observed.len();
    let n = prior.mean.len();
    if predicted.len() != m || h.nrows() != m || measurement_noise.len() != m {
        return Err(Error::ShapeMismatch {
            expected: m,
            got: h.nrows(),
        });
    }
    if h.ncols() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: h.ncols(),
        });
    }
    if m == 0 {
        return Ok((
            prior.clone(),
            Innovation {
                residual: DVector::zeros(0),
                covariance: DMatrix::zeros(0, 0),
            },
        ));
    }
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(measurement_noise));
    let pht = &prior.covariance * h.transpose();
    let mut s = h * &pht + &r;
    symmetrize(&mut s);
    let innovation_covariance = s.clone();
    let jitter = INNOVATION_JITTER * s.trace() / m as f64;
    for k in 0..m {
        s[(k, k)] += jitter;
    }
    let eig = s.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(Error::SingularInnovation { condition });
    }
    let chol = s.cholesky().ok_or(Error::SingularInnovation { condition })?;
    // K = P H^T S^-1  <=>  S K^T = H P
    let gain = chol.solve(&pht.transpose()).transpose();
    let residual = observed - predicted;
    let mean = &prior.mean + &gain * &residual;
    let i_kh = DMatrix::<f64>::identity(n, n) - &gain * h;
    let mut covariance = &i_kh * &prior.covariance * i_kh.transpose() + &gain * r * gain.transpose();
    symmetrize(&mut covariance);
    Ok((
        GaussianBelief { mean, covariance },
        Innovation {
            residual,
            covariance: innovation_covariance,
        },
    ))
}

/// Per-channel variance of the predicted observation, `diag(H P H^T + R)`.
pub fn observation_variance(belief: &GaussianBelief, h: &DMatrix<f64>, measurement_noise: &[f64]) -> Vec<f64> {
    let hp = h * &belief.covariance;
    (0..h.nrows())
        .map(|r| {
            let quad = hp.row(r).dot(&h.row(r));
            quad.max(0.0) + measurement_noise.get(r).copied().unwrap_or(0.0)
        })
        .collect()
}
