use crate::error::{Error, Result};
use crate::graph::{GraphState, StructuralGraph};
use crate::Vec2;

/// Current-configuration quantities of one edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeKinematics {
    pub length: f64,
    pub extension: f64,
    pub extension_rate: f64,
    pub angle: f64,
    /// Unit vector from `a` to `b`, or from the anchor to the node.
    pub direction: Vec2,
    /// Relative velocity `v_b - v_a` (or the node velocity for self-loops).
    pub relative_velocity: Vec2,
}

/// Edges shorter than this are treated as coincident endpoints.
pub const MIN_EDGE_LENGTH: f64 = 1e-12;

pub fn edge_kinematics(
    graph: &StructuralGraph,
    state: &GraphState,
    edge_index: usize,
) -> Result<EdgeKinematics> {
    let e = &graph.edges[edge_index];
    let pos = |k: usize| graph.nodes[k].rest_position + state.displacements[k];
    let (d, dv) = match e.anchor {
        Some(anchor) if e.is_self_loop() => (pos(e.a) - anchor, state.velocities[e.a]),
        _ => (
            pos(e.b) - pos(e.a),
            state.velocities[e.b] - state.velocities[e.a],
        ),
    };
    let length = d.norm();
    if !(length > MIN_EDGE_LENGTH) {
        return Err(Error::DegenerateEdge {
            edge: edge_index,
            length,
        });
    }
    let direction = d / length;
    Ok(EdgeKinematics {
        length,
        extension: length - e.rest_length,
        extension_rate: dv.dot(&direction),
        angle: direction.y.atan2(direction.x),
        direction,
        relative_velocity: dv,
    })
}

/// Corotational extension, extension rate and orientation of every edge.
pub fn corotational_kinematics(
    graph: &StructuralGraph,
    state: &GraphState,
) -> Result<Vec<EdgeKinematics>> {
    if state.node_count() != graph.node_count() {
        return Err(Error::ShapeMismatch {
            expected: graph.node_count(),
            got: state.node_count(),
        });
    }
    (0..graph.edge_count())
        .map(|e| edge_kinematics(graph, state, e))
        .collect()
}
