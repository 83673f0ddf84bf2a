use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec2;

/// Ground-truth nonlinear restoring law attached to an edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum EdgeNonlinearity {
    /// Cubic hardening, `kappa` in N/m^3.
    Cubic { kappa: f64 },
    /// Angular clearance: `rotational_stiffness` in N/rad acting once the bar
    /// rotates more than `clearance` rad away from its rest angle.
    Clearance {
        rotational_stiffness: f64,
        clearance: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub rest_position: Vec2,
    pub mass: f64,
}

/// An undirected spring-damper. `a == b` marks a boundary self-loop whose far
/// end is the fixed `anchor` point.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub anchor: Option<Vec2>,
    pub rest_length: f64,
    /// Angle of the rest direction `p_b - p_a` (or `p_a - anchor`).
    pub rest_angle: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub nonlinearity: Option<EdgeNonlinearity>,
}

impl Edge {
    pub fn is_self_loop(&self) -> bool {
        self.a == self.b
    }
}

/// Topology, rest geometry and material parameters of a planar truss.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct StructuralGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

pub const DEFAULT_NODE_MASS: f64 = 1.0;

impl StructuralGraph {
    pub fn with_nodes(positions: &[Vec2], mass: f64) -> Self {
        StructuralGraph {
            nodes: positions
                .iter()
                .map(|&p| Node {
                    rest_position: p,
                    mass,
                })
                .collect(),
            edges: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Adds an internal edge; rest length and angle come from the rest geometry.
    pub fn add_edge(
        &mut self,
        a: usize,
        b: usize,
        stiffness: f64,
        damping: f64,
        nonlinearity: Option<EdgeNonlinearity>,
    ) -> usize {
        let d = self.nodes[b].rest_position - self.nodes[a].rest_position;
        self.edges.push(Edge {
            a,
            b,
            anchor: None,
            rest_length: d.norm(),
            rest_angle: d.y.atan2(d.x),
            stiffness,
            damping,
            nonlinearity,
        });
        self.edges.len() - 1
    }

    /// Adds a boundary self-loop tying `node` to a fixed point.
    pub fn add_anchor(
        &mut self,
        node: usize,
        anchor: Vec2,
        stiffness: f64,
        damping: f64,
        nonlinearity: Option<EdgeNonlinearity>,
    ) -> usize {
        let d = self.nodes[node].rest_position - anchor;
        self.edges.push(Edge {
            a: node,
            b: node,
            anchor: Some(anchor),
            rest_length: d.norm(),
            rest_angle: d.y.atan2(d.x),
            stiffness,
            damping,
            nonlinearity,
        });
        self.edges.len() - 1
    }

    /// Rest direction vector of an edge.
    pub fn rest_vector(&self, edge: &Edge) -> Vec2 {
        match edge.anchor {
            Some(anchor) if edge.is_self_loop() => self.nodes[edge.a].rest_position - anchor,
            _ => self.nodes[edge.b].rest_position - self.nodes[edge.a].rest_position,
        }
    }

    /// Symmetric boolean adjacency; self-loops set the diagonal.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let n = self.node_count();
        let mut adj = vec![vec![false; n]; n];
        for e in &self.edges {
            adj[e.a][e.b] = true;
            adj[e.b][e.a] = true;
        }
        adj
    }

    /// Same topology and geometry with every edge set to the nominal `k`, `c`
    /// and the nonlinear law stripped: the model's prior knowledge.
    pub fn nominal_copy(&self, stiffness: f64, damping: f64) -> StructuralGraph {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.stiffness = stiffness;
            e.damping = damping;
            e.nonlinearity = None;
        }
        g
    }

    pub fn masses(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.mass).collect()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.node_count();
        let mut seen = std::collections::HashSet::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if !(node.mass > 0.0 && node.mass.is_finite()) {
                return Err(Error::Invalid(format!("node {idx} has mass {}", node.mass)));
            }
        }
        for (idx, e) in self.edges.iter().enumerate() {
            if e.a >= n || e.b >= n {
                return Err(Error::Invalid(format!("edge {idx} references a missing node")));
            }
            if e.is_self_loop() {
                if e.anchor.is_none() {
                    return Err(Error::Invalid(format!("self-loop {idx} has no anchor")));
                }
            } else {
                if e.anchor.is_some() {
                    return Err(Error::Invalid(format!("internal edge {idx} carries an anchor")));
                }
                let key = (e.a.min(e.b), e.a.max(e.b));
                if !seen.insert(key) {
                    return Err(Error::Invalid(format!("edge {idx} duplicates {key:?}")));
                }
            }
            if !(e.stiffness > 0.0) || !(e.damping >= 0.0) {
                return Err(Error::Invalid(format!(
                    "edge {idx} has stiffness {} and damping {}",
                    e.stiffness, e.damping
                )));
            }
            let d = self.rest_vector(e);
            if (d.norm() - e.rest_length).abs() > 1e-9 || e.rest_length <= 0.0 {
                return Err(Error::Invalid(format!(
                    "edge {idx} rest length {} disagrees with geometry {}",
                    e.rest_length,
                    d.norm()
                )));
            }
            let angle = d.y.atan2(d.x);
            if crate::graph::wrap_angle(angle - e.rest_angle).abs() > 1e-9 {
                return Err(Error::Invalid(format!(
                    "edge {idx} rest angle {} disagrees with geometry {angle}",
                    e.rest_angle
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> StructuralGraph {
        let mut g = StructuralGraph::with_nodes(
            &[
                Vec2::new(0.0, 0.0),
                Vec2::new(1.0, 0.0),
                Vec2::new(1.0, 1.0),
                Vec2::new(0.0, 1.0),
            ],
            1.0,
        );
        for (a, b) in [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)] {
            g.add_edge(a, b, 200.0, 0.1, None);
        }
        g.add_anchor(0, Vec2::new(-0.5, 0.0), 200.0, 0.1, None);
        g
    }

    #[test]
    fn rest_geometry_is_consistent() {
        let g = square();
        g.validate().unwrap();
        assert!((g.edges[4].rest_length - 2f64.sqrt()).abs() < 1e-15);
        assert!((g.edges[4].rest_angle - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert_eq!(g.edges[5].rest_angle, 0.0);
        assert_eq!(g.edges[5].rest_length, 0.5);
    }

    #[test]
    fn adjacency_is_symmetric() {
        let adj = square().adjacency();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(adj[i][j], adj[j][i]);
            }
        }
        assert!(adj[0][0]);
        assert!(!adj[1][3]);
    }

    #[test]
    fn duplicate_edges_are_rejected() {
        let mut g = square();
        g.add_edge(1, 0, 1.0, 0.0, None);
        assert!(g.validate().is_err());
    }

    #[test]
    fn nominal_copy_strips_nonlinearity() {
        let mut g = square();
        g.edges[0].nonlinearity = Some(EdgeNonlinearity::Cubic { kappa: 10.0 });
        g.edges[0].stiffness = 210.0;
        let nominal = g.nominal_copy(200.0, 0.1);
        assert!(nominal.edges.iter().all(|e| e.nonlinearity.is_none() && e.stiffness == 200.0));
    }
}
