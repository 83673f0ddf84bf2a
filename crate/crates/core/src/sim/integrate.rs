use crate::error::{Error, Result};
use crate::graph::{GraphState, StructuralGraph};
use crate::sim::dataset::TrajectoryDataset;
use crate::sim::laws::true_restoring_forces;
use crate::Vec2;

/// States beyond this magnitude are reported as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Default ground-truth integration step, s.
pub const TRUTH_DT: f64 = 1e-3;

/// True accelerations `(f - xi) / m`.
pub fn true_accelerations(graph: &StructuralGraph, state: &GraphState, forces: &[Vec2]) -> Result<Vec<Vec2>> {
    let xi = true_restoring_forces(graph, state)?;
    Ok(graph
        .nodes
        .iter()
        .zip(forces.iter().zip(&xi))
        .map(|(n, (f, x))| (f - x) / n.mass)
        .collect())
}

fn axpy(state: &GraphState, h: f64, du: &[Vec2], dv: &[Vec2]) -> GraphState {
    GraphState {
        displacements: state
            .displacements
            .iter()
            .zip(du)
            .map(|(u, d)| u + h * d)
            .collect(),
        velocities: state.velocities.iter().zip(dv).map(|(v, d)| v + h * d).collect(),
    }
}

fn mean_force(a: &[Vec2], b: &[Vec2]) -> Vec<Vec2> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

/// Classical RK4 from rest. `forces[k]` is the applied load at `t = k dt`;
/// it is interpolated linearly inside each step.
pub fn simulate(graph: &StructuralGraph, forces: &[Vec<Vec2>], dt: f64) -> Result<TrajectoryDataset> {
    simulate_from(graph, GraphState::zeros(graph.node_count()), forces, dt)
}

pub fn simulate_from(
    graph: &StructuralGraph,
    initial: GraphState,
    forces: &[Vec<Vec2>],
    dt: f64,
) -> Result<TrajectoryDataset> {
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("time step {dt} must be positive")));
    }
    if forces.is_empty() {
        return Err(Error::Invalid("empty force series".into()));
    }
    let n = graph.node_count();
    if let Some(row) = forces.iter().find(|r| r.len() != n) {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: row.len(),
        });
    }
    let steps = forces.len();
    let mut states = Vec::with_capacity(steps);
    let mut accels = Vec::with_capacity(steps);
    let mut state = initial;
    for k in 0..steps {
        let a0 = true_accelerations(graph, &state, &forces[k])?;
        accels.push(a0.clone());
        states.push(state.clone());
        if k + 1 == steps {
            break;
        }
        let f_mid = mean_force(&forces[k], &forces[k + 1]);
        let f_end = &forces[k + 1];

        let k1v = a0;
        let k1u = state.velocities.clone();
        let s2 = axpy(&state, 0.5 * dt, &k1u, &k1v);
        let k2v = true_accelerations(graph, &s2, &f_mid)?;
        let k2u = s2.velocities.clone();
        let s3 = axpy(&state, 0.5 * dt, &k2u, &k2v);
        let k3v = true_accelerations(graph, &s3, &f_mid)?;
        let k3u = s3.velocities.clone();
        let s4 = axpy(&state, dt, &k3u, &k3v);
        let k4v = true_accelerations(graph, &s4, f_end)?;
        let k4u = s4.velocities.clone();

        let comb = |a: &[Vec2], b: &[Vec2], c: &[Vec2], d: &[Vec2]| -> Vec<Vec2> {
            (0..n).map(|i| (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) / 6.0).collect()
        };
        state = axpy(&state, dt, &comb(&k1u, &k2u, &k3u, &k4u), &comb(&k1v, &k2v, &k3v, &k4v));
        let mag = state.max_abs();
        if !(mag <= DIVERGENCE_LIMIT) {
            return Err(Error::Diverged {
                step: k + 1,
                magnitude: mag,
            });
        }
    }
    Ok(TrajectoryDataset::from_truth(
        (0..steps).map(|k| k as f64 * dt).collect(),
        states,
        accels,
        forces.to_vec(),
    ))
}
