//! Graph representation shared by the simulator, the model and the filter.

mod io;
mod kinematics;
mod mask;
mod state;
mod structure;

pub use kinematics::{corotational_kinematics, edge_kinematics, EdgeKinematics, MIN_EDGE_LENGTH};
pub use mask::{sparsity_mask, ObservationMask};
pub use state::{displacement_index, velocity_index, GraphState, STATE_PER_NODE};
pub use structure::{Edge, EdgeNonlinearity, Node, StructuralGraph, DEFAULT_NODE_MASS};

use std::f64::consts::{PI, TAU};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}
