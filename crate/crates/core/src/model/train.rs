use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphState, StructuralGraph};
use crate::model::dynamics::{rollout, verlet_vjp};
use crate::model::features::FeatureScales;
use crate::model::loss::residual_from_restoring;
use crate::model::piggo::{ArchitectureConfig, ModelGradients, PiggoModel};
use crate::nn::Adam;
use crate::sim::TrajectoryDataset;
use crate::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over steps of summed squared residuals.
    #[default]
    Deterministic,
    /// Gaussian negative log-likelihood with the dataset's residual variances.
    Likelihood,
}

/// Offline training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Window length in seconds from the start of the dataset; 0 uses all of it.
    pub window: f64,
    /// Expected dataset step; checked when set.
    pub dt: Option<f64>,
    pub learning_rate: f64,
    /// Relative loss improvement below which training stops.
    pub tolerance: f64,
    /// Epochs over which the improvement is measured.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub architecture: ArchitectureConfig,
    /// Fresh models start with a silent message network, i.e. as the
    /// nominal linear physics.
    pub physics_start: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            window: 0.0,
            dt: None,
            learning_rate: 1e-3,
            tolerance: 1e-6,
            patience: 25,
            max_epochs: 5000,
            seed: 0,
            loss: LossKind::Deterministic,
            architecture: ArchitectureConfig::default(),
            physics_start: true,
        }
    }
}

impl TrainingConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainingConfig = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.tolerance >= 0.0) || !(self.window >= 0.0) {
            return Err(Error::Invalid(
                "learning rate must be positive; tolerance and window non-negative".into(),
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::Invalid("max_epochs must be at least 1".into()));
        }
        Ok(())
    }

    fn steps(&self, data: &TrajectoryDataset) -> Result<usize> {
        let dt = data.dt();
        if let Some(want) = self.dt {
            if (want - dt).abs() > 1e-9 * dt {
                return Err(Error::Invalid(format!("dataset step {dt} differs from configured {want}")));
            }
        }
        let steps = if self.window > 0.0 {
            ((self.window / dt).round() as usize).min(data.len())
        } else {
            data.len()
        };
        if steps < 2 {
            return Err(Error::Invalid("training window needs at least two samples".into()));
        }
        Ok(steps)
    }
}

/// Loss trajectory of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub loss_history: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stopped_early: bool,
}

impl PiggoModel {
    /// Fresh model with feature scales and noise variances taken from a
    /// training dataset.
    pub fn for_dataset(
        arch: &ArchitectureConfig,
        nominal_graph: &StructuralGraph,
        data: &TrajectoryDataset,
        seed: u64,
    ) -> Result<Self> {
        let scales = FeatureScales::from_dataset(nominal_graph, data)?;
        let mut m = PiggoModel::new(arch, nominal_graph.clone(), scales, seed)?;
        m.acceleration_noise_variance = data.acceleration_noise_variance.clone();
        m.force_noise_variance = data.force_noise_variance.clone();
        Ok(m)
    }
}

/// Physics loss over the first `steps` samples, rolled out from rest under
/// the observed forces, and its gradient with respect to the flat parameters.
pub fn loss_and_gradient(
    model: &PiggoModel,
    graph: &StructuralGraph,
    data: &TrajectoryDataset,
    steps: usize,
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    let dt = data.dt();
    let forces = &data.observed_forces[..steps];
    let run = rollout(model, graph, GraphState::zeros(graph.node_count()), forces, dt)?;
    let variances = match kind {
        LossKind::Deterministic => None,
        LossKind::Likelihood => Some(data.residual_variance(&graph.masses())),
    };
    let measured = data.mask.measured_nodes();
    let mut loss = 0.0;
    let mut residuals = Vec::with_capacity(steps);
    for k in 0..steps {
        // xi = f - m a from the recorded accelerations
        let xi: Vec<Vec2> = graph
            .nodes
            .iter()
            .zip(forces[k].iter().zip(&run.accelerations[k]))
            .map(|(n, (f, a))| f - n.mass * a)
            .collect();
        let r = residual_from_restoring(graph, &xi, &forces[k], &data.observed_accelerations[k], &data.mask)?;
        loss += match &variances {
            None => r.iter().map(|v| v.norm_squared()).sum::<f64>() / steps as f64,
            Some(var) => r
                .iter()
                .zip(var)
                .map(|(v, s)| {
                    (0..2)
                        .map(|d| 0.5 * ((2.0 * std::f64::consts::PI * s[d]).ln() + v[d] * v[d] / s[d]))
                        .sum::<f64>()
                })
                .sum(),
        };
        residuals.push(r);
    }

    let mut grads = ModelGradients::zeros_like(model);
    let n = graph.node_count();
    let mut adj = GraphState::zeros(n);
    for k in (0..steps).rev() {
        let mut xi_bar = vec![Vec2::zeros(); n];
        for (j, (&i, r)) in measured.iter().zip(&residuals[k]).enumerate() {
            xi_bar[i] = match &variances {
                None => 2.0 * r / steps as f64,
                Some(var) => Vec2::new(r.x / var[j].x, r.y / var[j].y),
            };
        }
        let (ub, vb) = model.restoring_vjp(graph, &run.states[k], &forces[k], &xi_bar, Some(&mut grads))?;
        for i in 0..n {
            adj.displacements[i] += ub[i];
            adj.velocities[i] += vb[i];
        }
        if k > 0 {
            adj = verlet_vjp(model, graph, &run.states[k - 1], &forces[k - 1], dt, &adj, Some(&mut grads))?;
        }
    }
    Ok((loss, grads.flat()))
}

/// Offline training: full-window rollout, physics loss on measured nodes,
/// Adam step per epoch, early stopping. Returns the best parameters seen.
pub fn train(
    model: PiggoModel,
    graph: &StructuralGraph,
    data: &TrajectoryDataset,
    config: &TrainingConfig,
) -> Result<(PiggoModel, TrainingReport)> {
    train_with_progress(model, graph, data, config, |_, _| {})
}

pub fn train_with_progress(
    mut model: PiggoModel,
    graph: &StructuralGraph,
    data: &TrajectoryDataset,
    config: &TrainingConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(PiggoModel, TrainingReport)> {
    config.validate()?;
    if data.mask.measured_count() == 0 {
        return Err(Error::AllUnmeasured {
            nodes: data.node_count(),
            percent: 100.0,
        });
    }
    let steps = config.steps(data)?;
    let mut params = model.flat_params();
    let mut opt = Adam::new(params.len(), config.learning_rate);
    let mut history = Vec::new();
    let mut best_so_far: Vec<f64> = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut stopped_early = false;
    for epoch in 0..config.max_epochs {
        let (loss, grad) = loss_and_gradient(&model, graph, data, steps, config.loss)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonfiniteLoss { epoch });
        }
        progress(epoch, loss);
        history.push(loss);
        if loss < best.0 {
            best = (loss, epoch, params.clone());
        }
        best_so_far.push(best.0);
        if epoch >= config.patience {
            let earlier = best_so_far[epoch - config.patience];
            if earlier - best.0 <= config.tolerance * earlier.abs() {
                stopped_early = true;
                break;
            }
        }
        opt.step(&mut params, &grad);
        model.set_flat_params(&params)?;
    }
    model.set_flat_params(&best.2)?;
    Ok((
        model,
        TrainingReport {
            loss_history: history,
            best_epoch: best.1,
            best_loss: best.0,
            stopped_early,
        },
    ))
}
