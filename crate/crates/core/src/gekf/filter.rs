use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gekf::kalman::{
    acceleration_observation, observation_variance, predict, update, GaussianBelief, Innovation,
};
use crate::graph::{GraphState, ObservationMask, StructuralGraph, STATE_PER_NODE};
use crate::model::PiggoModel;
use crate::sim::TrajectoryDataset;
use crate::Vec2;

/// Where the measurement-noise variances come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementNoiseSource {
    /// Acceleration noise variances recorded with the dataset.
    #[default]
    Dataset,
    /// Residual variance mapped to acceleration units, `s_a^2 + s_f^2 / m^2`,
    /// which also covers the noise of the load input at measured nodes.
    Residual,
    /// One variance for every channel, (m/s^2)^2.
    Override(f64),
}

/// Filter settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Model-error acceleration scale, m/s^2. `None`: 10% of the RMS true
    /// acceleration of the training system.
    pub model_error: Option<f64>,
    pub measurement: MeasurementNoiseSource,
    /// Initial variance of displacement and velocity channels. `None`: one
    /// step of process noise, as records start from rest.
    pub initial_variance: Option<(f64, f64)>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            model_error: None,
            measurement: MeasurementNoiseSource::Dataset,
            initial_variance: None,
        }
    }
}

/// Default fraction of the training RMS acceleration used as model error.
pub const MODEL_ERROR_FRACTION: f64 = 0.1;

/// RMS of the true accelerations over every node, direction and step.
pub fn rms_acceleration(data: &TrajectoryDataset) -> f64 {
    let (sum, count) = data
        .true_accelerations
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), a| (s + a.norm_squared(), c + 2));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Noise scale taken from the training system, used where the config
/// leaves it open.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterScales {
    /// Model-error acceleration scale, m/s^2.
    pub model_error: f64,
}

impl FilterScales {
    pub fn from_training(data: &TrajectoryDataset) -> Self {
        FilterScales {
            model_error: MODEL_ERROR_FRACTION * rms_acceleration(data),
        }
    }
}

/// Diagonal process, measurement and initial covariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per state component, flattened layout.
    pub process: Vec<f64>,
    /// Per measured acceleration channel.
    pub measurement: Vec<f64>,
    /// Per state component, flattened layout.
    pub initial: Vec<f64>,
}

impl NoiseConfig {
    /// `q_u = (e dt^2)^2`, `q_v = (e dt)^2` with `e` the model-error scale.
    pub fn process_diagonal(nodes: usize, model_error: f64, dt: f64) -> Vec<f64> {
        let qu = (model_error * dt * dt).powi(2);
        let qv = (model_error * dt).powi(2);
        (0..nodes).flat_map(|_| [qu, qu, qv, qv]).collect()
    }

    /// Noise for filtering `data` on `graph`; `scales` fill in what the config
    /// leaves open.
    pub fn build(
        cfg: &FilterConfig,
        graph: &StructuralGraph,
        data: &TrajectoryDataset,
        scales: &FilterScales,
    ) -> Result<Self> {
        let n = graph.node_count();
        if data.node_count() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: data.node_count(),
            });
        }
        let e = cfg.model_error.unwrap_or(scales.model_error);
        if !(e >= 0.0) {
            return Err(Error::Invalid(format!("model error {e} must be non-negative")));
        }
        if let Some((iu, iv)) = cfg.initial_variance {
            if !(iu >= 0.0 && iv >= 0.0) {
                return Err(Error::Invalid("initial variances must be non-negative".into()));
            }
        }
        let measured = data.mask.measured_nodes();
        let measurement: Vec<f64> = match cfg.measurement {
            MeasurementNoiseSource::Dataset => data
                .acceleration_noise_variance
                .iter()
                .flat_map(|v| [v.x, v.y])
                .collect(),
            MeasurementNoiseSource::Residual => data
                .residual_variance(&graph.masses())
                .iter()
                .zip(&measured)
                .flat_map(|(v, &i)| {
                    let m2 = graph.nodes[i].mass.powi(2);
                    [v.x / m2, v.y / m2]
                })
                .collect(),
            MeasurementNoiseSource::Override(r) => {
                if !(r >= 0.0) {
                    return Err(Error::Invalid(format!("measurement variance {r} must be non-negative")));
                }
                vec![r; 2 * measured.len()]
            }
        };
        if measurement.len() != 2 * measured.len() {
            return Err(Error::ShapeMismatch {
                expected: 2 * measured.len(),
                got: measurement.len(),
            });
        }
        let process = Self::process_diagonal(n, e, data.dt());
        let initial = match cfg.initial_variance {
            Some((iu, iv)) => (0..n).flat_map(|_| [iu, iu, iv, iv]).collect(),
            None => process.clone(),
        };
        Ok(NoiseConfig {
            process,
            measurement,
            initial,
        })
    }
}

/// Stateful filter: one belief advanced sample by sample.
pub struct GraphEkf<'a> {
    pub model: &'a PiggoModel,
    pub graph: &'a StructuralGraph,
    pub noise: NoiseConfig,
    pub measured: Vec<usize>,
    pub dt: f64,
    pub belief: GaussianBelief,
    last_forces: Option<Vec<Vec2>>,
}

/// What one filter step produced.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub prior: GaussianBelief,
    pub innovation: Innovation,
    /// `diag(H P H^T + R)` at the posterior, measured channels.
    pub observation_variance: Vec<f64>,
}

impl<'a> GraphEkf<'a> {
    pub fn new(
        model: &'a PiggoModel,
        graph: &'a StructuralGraph,
        noise: NoiseConfig,
        mask: &ObservationMask,
        dt: f64,
    ) -> Result<Self> {
        let n = graph.node_count();
        if noise.process.len() != STATE_PER_NODE * n || noise.initial.len() != STATE_PER_NODE * n {
            return Err(Error::ShapeMismatch {
                expected: STATE_PER_NODE * n,
                got: noise.process.len(),
            });
        }
        if mask.measured.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: mask.measured.len(),
            });
        }
        if noise.process.iter().chain(&noise.measurement).chain(&noise.initial).any(|v| !(*v >= 0.0)) {
            return Err(Error::Invalid("noise variances must be non-negative".into()));
        }
        let belief = GaussianBelief::zero_mean(&noise.initial);
        Ok(GraphEkf {
            model,
            graph,
            measured: mask.measured_nodes(),
            noise,
            dt,
            belief,
            last_forces: None,
        })
    }

    /// Predicts across one sample with the previous load (skipped on the first
    /// call) and updates with the accelerations measured under `forces`.
    pub fn step(&mut self, forces: &[Vec2], observed: &[Vec2]) -> Result<StepOutput> {
        if observed.len() != self.measured.len() {
            return Err(Error::ShapeMismatch {
                expected: self.measured.len(),
                got: observed.len(),
            });
        }
        let prior = match &self.last_forces {
            Some(f) => predict(&self.belief, self.model, self.graph, f, self.dt, &self.noise.process)?,
            None => self.belief.clone(),
        };
        let state = prior.state()?;
        let (predicted, h) = acceleration_observation(self.model, self.graph, &state, forces, &self.measured)?;
        let y = DVector::from_iterator(observed.len() * 2, observed.iter().flat_map(|a| [a.x, a.y]));
        let (posterior, innovation) = update(&prior, &y, &predicted, &h, &self.noise.measurement)?;
        let observation_variance = observation_variance(&posterior, &h, &self.noise.measurement);
        self.belief = posterior;
        self.last_forces = Some(forces.to_vec());
        Ok(StepOutput {
            prior,
            innovation,
            observation_variance,
        })
    }

    /// Accelerations at every node from the current mean, with standard
    /// deviations `sqrt(diag(H P H^T) + R)` (R only at measured nodes).
    pub fn accelerations(&self, forces: &[Vec2]) -> Result<(Vec<Vec2>, Vec<Vec2>)> {
        let n = self.graph.node_count();
        let all: Vec<usize> = (0..n).collect();
        let (y, h) = acceleration_observation(self.model, self.graph, &self.belief.state()?, forces, &all)?;
        let mut r = vec![0.0; 2 * n];
        for (k, &i) in self.measured.iter().enumerate() {
            r[2 * i] = self.noise.measurement[2 * k];
            r[2 * i + 1] = self.noise.measurement[2 * k + 1];
        }
        let var = observation_variance(&self.belief, &h, &r);
        let acc = (0..n).map(|i| Vec2::new(y[2 * i], y[2 * i + 1])).collect();
        let std = (0..n).map(|i| Vec2::new(var[2 * i].sqrt(), var[2 * i + 1].sqrt())).collect();
        Ok((acc, std))
    }
}

/// Posterior series of a filtering run, `[step][node]` unless noted.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutput {
    pub states: Vec<GraphState>,
    /// Standard deviations in the state layout.
    pub state_std: Vec<GraphState>,
    pub accelerations: Vec<Vec<Vec2>>,
    pub acceleration_std: Vec<Vec<Vec2>>,
    /// `[step][channel]` over measured channels.
    pub observation_variance: Vec<Vec<f64>>,
    /// Innovation vectors, `[step][channel]`.
    pub innovations: Vec<Vec<f64>>,
    /// Diagonal of the innovation covariance, `[step][channel]`.
    pub innovation_variance: Vec<Vec<f64>>,
    /// Smallest covariance eigenvalue seen, scaled by the largest diagonal.
    pub min_relative_eigenvalue: f64,
}

impl FilterOutput {
    pub fn displacements(&self) -> Vec<Vec<Vec2>> {
        self.states.iter().map(|s| s.displacements.clone()).collect()
    }

    pub fn velocities(&self) -> Vec<Vec<Vec2>> {
        self.states.iter().map(|s| s.velocities.clone()).collect()
    }
}

/// Runs the filter over the observed loads and accelerations of `data`.
/// `check_psd` computes the covariance spectrum every step.
pub fn filter_trajectory(
    model: &PiggoModel,
    graph: &StructuralGraph,
    data: &TrajectoryDataset,
    noise: &NoiseConfig,
    check_psd: bool,
) -> Result<FilterOutput> {
    crate::sim::uniform_step(&data.times)?;
    let mut ekf = GraphEkf::new(model, graph, noise.clone(), &data.mask, data.dt())?;
    let mut out = FilterOutput {
        states: Vec::with_capacity(data.len()),
        state_std: Vec::with_capacity(data.len()),
        accelerations: Vec::with_capacity(data.len()),
        acceleration_std: Vec::with_capacity(data.len()),
        observation_variance: Vec::with_capacity(data.len()),
        innovations: Vec::with_capacity(data.len()),
        innovation_variance: Vec::with_capacity(data.len()),
        min_relative_eigenvalue: f64::INFINITY,
    };
    for s in 0..data.len() {
        let forces = &data.observed_forces[s];
        let step = ekf.step(forces, &data.observed_accelerations[s]).map_err(|e| match e {
            Error::Diverged { magnitude, .. } => Error::Diverged { step: s, magnitude },
            other => other,
        })?;
        if check_psd {
            out.min_relative_eigenvalue = out.min_relative_eigenvalue.min(relative_min_eigenvalue(&ekf.belief.covariance));
        }
        let (acc, acc_std) = ekf.accelerations(forces)?;
        out.states.push(ekf.belief.state()?);
        out.state_std.push(GraphState::unflatten(&ekf.belief.std())?);
        out.accelerations.push(acc);
        out.acceleration_std.push(acc_std);
        out.observation_variance.push(step.observation_variance);
        out.innovations.push(step.innovation.residual.iter().copied().collect());
        out.innovation_variance.push(step.innovation.covariance.diagonal().iter().copied().collect());
    }
    Ok(out)
}

fn relative_min_eigenvalue(p: &DMatrix<f64>) -> f64 {
    let scale = p.diagonal().amax().max(1e-300);
    p.clone().symmetric_eigenvalues().min() / scale
}
