use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{sparsity_mask, StructuralGraph};
use crate::sim::{
    banded_white_noise, corrupt_and_mask, generate_bridge_truss, generate_sobol_array, lowest_nodes, simulate,
    ForcingSpec, ParameterDistributions, TrajectoryDataset,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// Sobol point array with cubic edges; size is the node count.
    Sobol,
    /// Bridge truss with angular clearance; size is the span in metres.
    Bridge,
}

impl SystemKind {
    pub fn distributions(self) -> ParameterDistributions {
        match self {
            SystemKind::Sobol => ParameterDistributions::sobol_array(),
            SystemKind::Bridge => ParameterDistributions::bridge_truss(),
        }
    }

    pub fn build(self, size: f64, seed: u64, dists: &ParameterDistributions) -> Result<StructuralGraph> {
        match self {
            SystemKind::Sobol => {
                if size.fract() != 0.0 || size < 1.0 {
                    return Err(Error::Invalid(format!("node count {size} must be a positive integer")));
                }
                generate_sobol_array(size as usize, seed, dists)
            }
            SystemKind::Bridge => generate_bridge_truss(size, seed, dists),
        }
    }
}

/// One structure and the data recorded on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub size: f64,
    /// Record length, s.
    pub duration: f64,
    /// Percentage of unmeasured nodes.
    pub sparsity: f64,
    /// Seed for the true parameters; forcing and noise use derived streams.
    pub seed: u64,
}

/// Settings shared by every recorded dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Dataset sample step, s.
    pub sample_dt: f64,
    /// Ground-truth integration step, s; must divide `sample_dt`.
    pub truth_dt: f64,
    /// Signal-to-noise power ratio; `None` records noise-free data.
    pub snr: Option<f64>,
    /// Passband in rad/s.
    pub band: (f64, f64),
    /// RMS force per forced channel, N.
    pub amplitude: f64,
    /// Number of lowest nodes that receive forcing.
    pub forced_nodes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            sample_dt: 0.01,
            truth_dt: 1e-3,
            snr: Some(25.0),
            band: (0.5, 4.0),
            amplitude: 1.0,
            forced_nodes: 4,
        }
    }
}

impl DataConfig {
    pub fn stride(&self) -> Result<usize> {
        let ratio = self.sample_dt / self.truth_dt;
        if !(self.truth_dt > 0.0) || !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "sample step {} must be a positive multiple of the truth step {}",
                self.sample_dt, self.truth_dt
            )));
        }
        Ok(ratio.round() as usize)
    }
}

/// Independent seed stream `stream` of a base seed (SplitMix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generated structure with its nominal counterpart and observed data.
#[derive(Clone, Debug)]
pub struct GeneratedSystem {
    pub truth: StructuralGraph,
    pub nominal: StructuralGraph,
    pub data: TrajectoryDataset,
    pub forcing: ForcingSpec,
}

/// Builds the true structure, forces it, integrates the truth and records
/// corrupted, masked observations. The nominal graph carries the means of
/// `dists`.
pub fn generate_system(
    kind: SystemKind,
    dists: &ParameterDistributions,
    spec: &SystemSpec,
    cfg: &DataConfig,
) -> Result<GeneratedSystem> {
    let truth = kind.build(spec.size, spec.seed, dists)?;
    let nominal = truth.nominal_copy(dists.stiffness.mean, dists.damping.mean);
    let stride = cfg.stride()?;
    if !(spec.duration > 0.0) {
        return Err(Error::Invalid(format!("duration {} must be positive", spec.duration)));
    }
    let samples = (spec.duration / cfg.sample_dt).round() as usize;
    let fine = samples.saturating_sub(1) * stride + 1;
    let times: Vec<f64> = (0..fine).map(|k| k as f64 * cfg.truth_dt).collect();
    let forcing = ForcingSpec {
        nodes: lowest_nodes(&truth, cfg.forced_nodes.min(truth.node_count())),
        band: cfg.band,
        amplitude: cfg.amplitude,
        seed: derive_seed(spec.seed, 1),
    };
    let forces = banded_white_noise(&times, truth.node_count(), &forcing)?;
    let fine_data = simulate(&truth, &forces, cfg.truth_dt)?;
    let coarse = fine_data.subsample(stride, f64::INFINITY);
    let mask = sparsity_mask(truth.node_count(), spec.sparsity)?;
    let data = corrupt_and_mask(&coarse, cfg.snr, &mask, derive_seed(spec.seed, 2))?;
    Ok(GeneratedSystem {
        truth,
        nominal,
        data,
        forcing,
    })
}
