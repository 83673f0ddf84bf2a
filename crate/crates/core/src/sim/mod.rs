//! Ground-truth structures and synthetic measurement data.

mod dataset;
mod delaunay;
mod forcing;
mod generators;
mod integrate;
mod laws;
mod params;
mod sobol;

pub use dataset::{corrupt_and_mask, TrajectoryDataset};
pub use delaunay::{convex_hull, delaunay_triangles, delaunay_triangulate, in_circle};
pub use forcing::{banded_white_noise, bin_frequency, uniform_step, ForcingSpec};
pub use generators::{
    generate_bridge_truss, generate_sobol_array, generate_sobol_array_with, lowest_nodes,
    SobolArrayLayout, BRIDGE_PANEL,
};
pub use integrate::{simulate, simulate_from, true_accelerations, DIVERGENCE_LIMIT, TRUTH_DT};
pub use laws::{
    edge_force_clearance, edge_force_cubic, elastic_energy, kinetic_energy, perpendicular,
    scatter_edge_action, true_edge_action, true_restoring_forces, EdgeAction,
};
pub use params::{Gaussian, NonlinearDistribution, ParameterDistributions};
pub use sobol::{sobol_points, SobolSequence};
