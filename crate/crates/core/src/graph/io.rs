//! Human-readable TOML layout for structural graphs.
//!
//! ```toml
//! [[nodes]]
//! id = 0
//! x = 0.0        # rest position, m
//! y = 0.0
//! mass = 1.0     # kg
//!
//! [[edges]]
//! i = 0          # self-loop when i == j
//! j = 1
//! k = 200.0      # N/m
//! c = 0.1        # N s/m
//! rest_length = 1.25
//! rest_angle = 0.3
//! nonlinear = { law = "cubic", kappa = 1000.0 }   # optional
//!
//! [[anchors]]
//! edge = 7       # index into `edges`, must be a self-loop
//! x = -0.5
//! y = 0.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeNonlinearity, Node, StructuralGraph};
use crate::Vec2;

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    x: f64,
    y: f64,
    mass: f64,
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    i: usize,
    j: usize,
    k: f64,
    c: f64,
    rest_length: f64,
    rest_angle: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nonlinear: Option<EdgeNonlinearity>,
}

#[derive(Serialize, Deserialize)]
struct AnchorRecord {
    edge: usize,
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
    #[serde(default)]
    anchors: Vec<AnchorRecord>,
}

impl StructuralGraph {
    pub fn to_toml(&self) -> Result<String> {
        let file = GraphFile {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| NodeRecord {
                    id,
                    x: n.rest_position.x,
                    y: n.rest_position.y,
                    mass: n.mass,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    i: e.a,
                    j: e.b,
                    k: e.stiffness,
                    c: e.damping,
                    rest_length: e.rest_length,
                    rest_angle: e.rest_angle,
                    nonlinear: e.nonlinearity,
                })
                .collect(),
            anchors: self
                .edges
                .iter()
                .enumerate()
                .filter_map(|(idx, e)| {
                    e.anchor.map(|a| AnchorRecord {
                        edge: idx,
                        x: a.x,
                        y: a.y,
                    })
                })
                .collect(),
        };
        Ok(toml::to_string(&file)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: GraphFile = toml::from_str(text)?;
        let mut nodes = vec![None; file.nodes.len()];
        for n in &file.nodes {
            let slot = nodes
                .get_mut(n.id)
                .ok_or_else(|| Error::Parse(format!("node id {} out of range", n.id)))?;
            *slot = Some(Node {
                rest_position: Vec2::new(n.x, n.y),
                mass: n.mass,
            });
        }
        let nodes = nodes
            .into_iter()
            .enumerate()
            .map(|(i, n)| n.ok_or_else(|| Error::Parse(format!("node id {i} missing"))))
            .collect::<Result<Vec<_>>>()?;
        let mut edges: Vec<Edge> = file
            .edges
            .iter()
            .map(|e| Edge {
                a: e.i,
                b: e.j,
                anchor: None,
                rest_length: e.rest_length,
                rest_angle: e.rest_angle,
                stiffness: e.k,
                damping: e.c,
                nonlinearity: e.nonlinear,
            })
            .collect();
        for a in &file.anchors {
            let edge = edges
                .get_mut(a.edge)
                .ok_or_else(|| Error::Parse(format!("anchor refers to missing edge {}", a.edge)))?;
            edge.anchor = Some(Vec2::new(a.x, a.y));
        }
        let graph = StructuralGraph { nodes, edges };
        graph.validate()?;
        Ok(graph)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}
