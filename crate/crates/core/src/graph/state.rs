use crate::error::{Error, Result};
use crate::Vec2;

/// Per-node displacement and velocity: the hidden state of the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphState {
    pub displacements: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
}

/// Number of state components stored per node.
pub const STATE_PER_NODE: usize = 4;

impl GraphState {
    pub fn zeros(nodes: usize) -> Self {
        GraphState {
            displacements: vec![Vec2::zeros(); nodes],
            velocities: vec![Vec2::zeros(); nodes],
        }
    }

    pub fn node_count(&self) -> usize {
        self.displacements.len()
    }

    pub fn is_finite(&self) -> bool {
        self.displacements
            .iter()
            .chain(&self.velocities)
            .all(|v| v.x.is_finite() && v.y.is_finite())
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.displacements
            .iter()
            .chain(&self.velocities)
            .map(|v| v.x.abs().max(v.y.abs()))
            .fold(0.0, f64::max)
    }

    /// Node-major layout: `[u_x, u_y, v_x, v_y]` for node 0, then node 1, ...
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(STATE_PER_NODE * self.node_count());
        for (u, v) in self.displacements.iter().zip(&self.velocities) {
            out.extend_from_slice(&[u.x, u.y, v.x, v.y]);
        }
        out
    }

    pub fn unflatten(flat: &[f64]) -> Result<Self> {
        if flat.len() % STATE_PER_NODE != 0 {
            return Err(Error::ShapeMismatch {
                expected: STATE_PER_NODE * (flat.len() / STATE_PER_NODE + 1),
                got: flat.len(),
            });
        }
        let chunks = flat.chunks_exact(STATE_PER_NODE);
        let (displacements, velocities) = chunks
            .map(|c| (Vec2::new(c[0], c[1]), Vec2::new(c[2], c[3])))
            .unzip();
        Ok(GraphState {
            displacements,
            velocities,
        })
    }
}

/// Index of displacement component `d` of node `i` in the flattened state.
pub fn displacement_index(node: usize, d: usize) -> usize {
    STATE_PER_NODE * node + d
}

/// Index of velocity component `d` of node `i` in the flattened state.
pub fn velocity_index(node: usize, d: usize) -> usize {
    STATE_PER_NODE * node + 2 + d
}
