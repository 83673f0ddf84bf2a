use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeKinematics, StructuralGraph};
use crate::sim::TrajectoryDataset;
use crate::Vec2;

pub const NODE_FEATURES: usize = 5;
pub const EDGE_FEATURES: usize = 8;

/// Fixed normalisation constants that keep encoder inputs O(1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScales {
    pub length: f64,
    pub force: f64,
    pub extension: f64,
    pub extension_rate: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub mass: f64,
}

impl FeatureScales {
    /// Scales from nominal parameters and the RMS of the nonzero force channels.
    pub fn from_nominal(graph: &StructuralGraph, force_rms: f64) -> Result<Self> {
        if graph.edges.is_empty() || graph.nodes.is_empty() {
            return Err(Error::Invalid("graph has no nodes or edges".into()));
        }
        let ne = graph.edge_count() as f64;
        let stiffness = graph.edges.iter().map(|e| e.stiffness).sum::<f64>() / ne;
        let damping = graph.edges.iter().map(|e| e.damping).sum::<f64>() / ne;
        let mass = graph.nodes.iter().map(|n| n.mass).sum::<f64>() / graph.node_count() as f64;
        let (mut lo, mut hi) = (graph.nodes[0].rest_position, graph.nodes[0].rest_position);
        for n in &graph.nodes {
            lo = lo.inf(&n.rest_position);
            hi = hi.sup(&n.rest_position);
        }
        let longest = graph.edges.iter().map(|e| e.rest_length).fold(0.0, f64::max);
        let length = (hi - lo).max().max(longest);
        let scales = FeatureScales {
            length,
            force: force_rms,
            extension: force_rms / stiffness,
            extension_rate: force_rms / stiffness * (stiffness / mass).sqrt(),
            stiffness,
            damping,
            mass,
        };
        scales.validate()?;
        Ok(scales)
    }

    pub fn from_dataset(graph: &StructuralGraph, data: &TrajectoryDataset) -> Result<Self> {
        Self::from_nominal(graph, force_rms(&data.observed_forces))
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.length,
            self.force,
            self.extension,
            self.extension_rate,
            self.stiffness,
            self.damping,
            self.mass,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Invalid(format!("feature scales must be positive: {self:?}")))
        }
    }

    pub fn node_features(&self, rest_position: Vec2, force: Vec2, mass: f64) -> [f64; NODE_FEATURES] {
        [
            rest_position.x / self.length,
            rest_position.y / self.length,
            force.x / self.force,
            force.y / self.force,
            mass / self.mass,
        ]
    }

    /// Edge features seen from a receiver. `flip` views the edge from its `a`
    /// end, reversing both the current and the rest direction.
    pub fn edge_features(&self, edge: &Edge, kin: &EdgeKinematics, flip: bool) -> [f64; EDGE_FEATURES] {
        let s = if flip { -1.0 } else { 1.0 };
        [
            kin.extension / self.extension,
            kin.extension_rate / self.extension_rate,
            s * kin.direction.x,
            s * kin.direction.y,
            s * edge.rest_angle.cos(),
            s * edge.rest_angle.sin(),
            edge.stiffness / self.stiffness,
            edge.damping / self.damping,
        ]
    }
}

/// RMS over force channels that are not identically zero.
pub fn force_rms(forces: &[Vec<Vec2>]) -> f64 {
    let nodes = forces.first().map_or(0, Vec::len);
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..nodes {
        for d in 0..2 {
            let p: f64 = forces.iter().map(|row| row[i][d] * row[i][d]).sum();
            if p > 0.0 {
                sum += p;
                count += forces.len();
            }
        }
    }
    if count == 0 {
        1.0
    } else {
        (sum / count as f64).sqrt()
    }
}
