use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which nodes carry accelerometers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationMask {
    pub measured: Vec<bool>,
}

impl ObservationMask {
    pub fn all(nodes: usize) -> Self {
        ObservationMask {
            measured: vec![true; nodes],
        }
    }

    pub fn measured_nodes(&self) -> Vec<usize> {
        (0..self.measured.len()).filter(|&i| self.measured[i]).collect()
    }

    pub fn unmeasured_nodes(&self) -> Vec<usize> {
        (0..self.measured.len()).filter(|&i| !self.measured[i]).collect()
    }

    pub fn measured_count(&self) -> usize {
        self.measured.iter().filter(|&&m| m).count()
    }
}

/// Marks `round(n * p / 100)` evenly spaced nodes, starting at node 0, as
/// unmeasured.
pub fn sparsity_mask(nodes: usize, percent: f64) -> Result<ObservationMask> {
    if nodes < 2 {
        return Err(Error::Invalid(format!("sparsity mask needs >= 2 nodes, got {nodes}")));
    }
    if !(0.0..100.0).contains(&percent) {
        return Err(Error::Invalid(format!("sparsity {percent}% outside [0, 100)")));
    }
    let unmeasured = (nodes as f64 * percent / 100.0).round() as usize;
    if unmeasured >= nodes {
        return Err(Error::AllUnmeasured { nodes, percent });
    }
    let mut measured = vec![true; nodes];
    for k in 0..unmeasured {
        measured[k * nodes / unmeasured] = false;
    }
    Ok(ObservationMask { measured })
}
