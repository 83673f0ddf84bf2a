use crate::error::Result;
use crate::graph::{corotational_kinematics, wrap_angle, Edge, EdgeKinematics, EdgeNonlinearity, GraphState, StructuralGraph};
use crate::Vec2;

/// Scalar actions of an edge on its `b` end (or its node, for self-loops):
/// `axial` along the edge direction, `perpendicular` along the direction of
/// increasing edge angle. The `a` end receives the opposite.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EdgeAction {
    pub axial: f64,
    pub perpendicular: f64,
}

/// Unit vector along increasing edge angle.
pub fn perpendicular(direction: Vec2) -> Vec2 {
    Vec2::new(-direction.y, direction.x)
}

/// `k eps + c eps_dot + kappa eps^3`.
pub fn edge_force_cubic(stiffness: f64, damping: f64, kappa: f64, kin: &EdgeKinematics) -> f64 {
    let eps = kin.extension;
    stiffness * eps + damping * kin.extension_rate + kappa * eps * eps * eps
}

/// Axial spring-damper plus an angular restoring action that switches on once
/// the bar rotates by at least `clearance` from its rest angle.
pub fn edge_force_clearance(
    stiffness: f64,
    damping: f64,
    rotational_stiffness: f64,
    clearance: f64,
    rest_angle: f64,
    kin: &EdgeKinematics,
) -> EdgeAction {
    let rotation = wrap_angle(kin.angle - rest_angle);
    let angular = if rotation.abs() < clearance {
        0.0
    } else {
        rotational_stiffness * rotation
    };
    EdgeAction {
        axial: stiffness * kin.extension + damping * kin.extension_rate,
        perpendicular: angular,
    }
}

/// Ground-truth action of an edge, including its nonlinear law if any.
pub fn true_edge_action(edge: &Edge, kin: &EdgeKinematics) -> EdgeAction {
    match edge.nonlinearity {
        None => EdgeAction {
            axial: edge.stiffness * kin.extension + edge.damping * kin.extension_rate,
            perpendicular: 0.0,
        },
        Some(EdgeNonlinearity::Cubic { kappa }) => EdgeAction {
            axial: edge_force_cubic(edge.stiffness, edge.damping, kappa, kin),
            perpendicular: 0.0,
        },
        Some(EdgeNonlinearity::Clearance {
            rotational_stiffness,
            clearance,
        }) => edge_force_clearance(
            edge.stiffness,
            edge.damping,
            rotational_stiffness,
            clearance,
            edge.rest_angle,
            kin,
        ),
    }
}

/// Adds the nodal restoring forces of one edge into `xi`.
pub fn scatter_edge_action(edge: &Edge, kin: &EdgeKinematics, action: EdgeAction, xi: &mut [Vec2]) {
    let force = action.axial * kin.direction + action.perpendicular * perpendicular(kin.direction);
    if edge.is_self_loop() {
        xi[edge.a] += force;
    } else {
        xi[edge.b] += force;
        xi[edge.a] -= force;
    }
}

/// Total restoring force on every node; accelerations are `(f - xi) / m`.
pub fn true_restoring_forces(graph: &StructuralGraph, state: &GraphState) -> Result<Vec<Vec2>> {
    let kins = corotational_kinematics(graph, state)?;
    let mut xi = vec![Vec2::zeros(); graph.node_count()];
    for (edge, kin) in graph.edges.iter().zip(&kins) {
        scatter_edge_action(edge, kin, true_edge_action(edge, kin), &mut xi);
    }
    Ok(xi)
}

/// Potential energy stored in the springs (cubic and linear laws only).
pub fn elastic_energy(graph: &StructuralGraph, state: &GraphState) -> Result<f64> {
    let kins = corotational_kinematics(graph, state)?;
    Ok(graph
        .edges
        .iter()
        .zip(&kins)
        .map(|(e, k)| {
            let eps = k.extension;
            let kappa = match e.nonlinearity {
                Some(EdgeNonlinearity::Cubic { kappa }) => kappa,
                _ => 0.0,
            };
            0.5 * e.stiffness * eps * eps + 0.25 * kappa * eps.powi(4)
        })
        .sum())
}

pub fn kinetic_energy(graph: &StructuralGraph, state: &GraphState) -> f64 {
    graph
        .nodes
        .iter()
        .zip(&state.velocities)
        .map(|(n, v)| 0.5 * n.mass * v.norm_squared())
        .sum()
}
