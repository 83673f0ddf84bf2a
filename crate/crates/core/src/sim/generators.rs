use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{StructuralGraph, DEFAULT_NODE_MASS};
use crate::sim::delaunay::{convex_hull, delaunay_triangulate};
use crate::sim::params::ParameterDistributions;
use crate::sim::sobol::sobol_points;
use crate::Vec2;

/// Geometry of the random (Sobol) truss array.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SobolArrayLayout {
    /// Side of the square domain holding the nodes, m.
    pub extent: f64,
    /// Gap between the domain and the fixed boundary square on every side, m.
    pub boundary_margin: f64,
    pub node_mass: f64,
}

impl Default for SobolArrayLayout {
    fn default() -> Self {
        SobolArrayLayout {
            extent: 5.0,
            boundary_margin: 0.5,
            node_mass: DEFAULT_NODE_MASS,
        }
    }
}

/// Closest point on the boundary of the axis-aligned square `[lo, hi]^2`.
fn nearest_on_square(p: Vec2, lo: f64, hi: f64) -> Vec2 {
    let candidates = [
        (p.x - lo, Vec2::new(lo, p.y)),
        (hi - p.x, Vec2::new(hi, p.y)),
        (p.y - lo, Vec2::new(p.x, lo)),
        (hi - p.y, Vec2::new(p.x, hi)),
    ];
    candidates
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|c| c.1)
        .expect("four candidates")
}

/// Sobol points in a 5 m square joined by Delaunay triangulation; every convex
/// hull node is tied to the nearest point of a surrounding fixed square.
pub fn generate_sobol_array(
    nodes: usize,
    seed: u64,
    dists: &ParameterDistributions,
) -> Result<StructuralGraph> {
    generate_sobol_array_with(nodes, seed, dists, &SobolArrayLayout::default())
}

pub fn generate_sobol_array_with(
    nodes: usize,
    seed: u64,
    dists: &ParameterDistributions,
    layout: &SobolArrayLayout,
) -> Result<StructuralGraph> {
    if nodes < 8 {
        return Err(Error::Invalid(format!("Sobol array needs >= 8 nodes, got {nodes}")));
    }
    let points = sobol_points(nodes, layout.extent);
    let edges = delaunay_triangulate(&points)?;
    let mut hull = convex_hull(&points);
    hull.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = StructuralGraph::with_nodes(&points, layout.node_mass);
    for (a, b) in edges {
        let (k, c, nl) = dists.sample_edge(&mut rng);
        graph.add_edge(a, b, k, c, Some(nl));
    }
    let (lo, hi) = (-layout.boundary_margin, layout.extent + layout.boundary_margin);
    for node in hull {
        let anchor = nearest_on_square(points[node], lo, hi);
        let (k, c, nl) = dists.sample_edge(&mut rng);
        graph.add_anchor(node, anchor, k, c, Some(nl));
    }
    graph.validate()?;
    Ok(graph)
}

/// Panel width and height of the bridge truss, m.
pub const BRIDGE_PANEL: f64 = 2.0;

/// Two-chord Warren truss with verticals. Bottom and top chord nodes sit at
/// every panel point; diagonals alternate direction panel by panel. The two
/// end bottom nodes and the centre bottom node are fixed supports: they are
/// removed from the graph and every member reaching them becomes a self-loop
/// on its other end, anchored at the support.
pub fn generate_bridge_truss(
    span: f64,
    seed: u64,
    dists: &ParameterDistributions,
) -> Result<StructuralGraph> {
    let panels_f = span / BRIDGE_PANEL;
    if !(span > 0.0) || (panels_f - panels_f.round()).abs() > 1e-9 || panels_f.round() < 2.0 {
        return Err(Error::Invalid(format!(
            "bridge span {span} m is not a multiple (>= 2) of the {BRIDGE_PANEL} m panel"
        )));
    }
    let panels = panels_f.round() as usize;
    let stations = panels + 1;
    // station index -> (bottom id, top id) in the full truss, bottom first
    let bottom = |k: usize| k;
    let top = |k: usize| stations + k;
    let position = |id: usize| {
        if id < stations {
            Vec2::new(id as f64 * BRIDGE_PANEL, 0.0)
        } else {
            Vec2::new((id - stations) as f64 * BRIDGE_PANEL, BRIDGE_PANEL)
        }
    };

    let mut members = Vec::new();
    for k in 0..panels {
        members.push((bottom(k), bottom(k + 1)));
        members.push((top(k), top(k + 1)));
        if k % 2 == 0 {
            members.push((bottom(k), top(k + 1)));
        } else {
            members.push((top(k), bottom(k + 1)));
        }
    }
    for k in 0..stations {
        members.push((bottom(k), top(k)));
    }

    let supports = [bottom(0), bottom(panels / 2), bottom(panels)];
    let mut graph_id = vec![usize::MAX; 2 * stations];
    let mut positions = Vec::new();
    for id in 0..2 * stations {
        if !supports.contains(&id) {
            graph_id[id] = positions.len();
            positions.push(position(id));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = StructuralGraph::with_nodes(&positions, DEFAULT_NODE_MASS);
    for (a, b) in members {
        let (k, c, nl) = dists.sample_edge(&mut rng);
        match (supports.contains(&a), supports.contains(&b)) {
            (false, false) => {
                graph.add_edge(graph_id[a], graph_id[b], k, c, Some(nl));
            }
            (true, false) => {
                graph.add_anchor(graph_id[b], position(a), k, c, Some(nl));
            }
            (false, true) => {
                graph.add_anchor(graph_id[a], position(b), k, c, Some(nl));
            }
            (true, true) => {}
        }
    }
    graph.validate()?;
    Ok(graph)
}

/// The `count` nodes with the smallest rest `y`, ties broken by `x`.
pub fn lowest_nodes(graph: &StructuralGraph, count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..graph.node_count()).collect();
    idx.sort_by(|&a, &b| {
        let (pa, pb) = (graph.nodes[a].rest_position, graph.nodes[b].rest_position);
        pa.y.total_cmp(&pb.y).then(pa.x.total_cmp(&pb.x))
    });
    idx.truncate(count);
    idx
}
