use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{GraphState, StructuralGraph};
use crate::model::piggo::{ModelGradients, PiggoModel};
use crate::sim::DIVERGENCE_LIMIT;
use crate::Vec2;

/// Time derivative of the state: `(u_dot, u_ddot)` per node.
pub fn state_derivative(
    model: &PiggoModel,
    graph: &StructuralGraph,
    state: &GraphState,
    forces: &[Vec2],
) -> Result<(Vec<Vec2>, Vec<Vec2>)> {
    Ok((state.velocities.clone(), accelerations(model, graph, state, forces)?))
}

/// `m^-1 (f - xi_lin - xi_nonlin)`.
pub fn accelerations(model: &PiggoModel, graph: &StructuralGraph, state: &GraphState, forces: &[Vec2]) -> Result<Vec<Vec2>> {
    let xi = model.restoring_forces(graph, state, forces)?;
    Ok(graph
        .nodes
        .iter()
        .zip(forces.iter().zip(&xi))
        .map(|(n, (f, x))| (f - x) / n.mass)
        .collect())
}

/// Accelerations with their Jacobians with respect to displacements and
/// velocities (both `2n x 2n`, node-major).
pub fn acceleration_jacobian(
    model: &PiggoModel,
    graph: &StructuralGraph,
    state: &GraphState,
    forces: &[Vec2],
) -> Result<(Vec<Vec2>, DMatrix<f64>, DMatrix<f64>)> {
    let (eval, mut ju, mut jv) = model.restoring_jacobian(graph, state, forces)?;
    let xi = eval.total();
    let mut acc = Vec::with_capacity(graph.node_count());
    for (i, node) in graph.nodes.iter().enumerate() {
        acc.push((forces[i] - xi[i]) / node.mass);
        let s = -1.0 / node.mass;
        ju.rows_mut(2 * i, 2).scale_mut(s);
        jv.rows_mut(2 * i, 2).scale_mut(s);
    }
    Ok((acc, ju, jv))
}

fn check_divergence(state: &GraphState, step: usize) -> Result<()> {
    let mag = state.max_abs();
    if mag <= DIVERGENCE_LIMIT {
        Ok(())
    } else {
        Err(Error::Diverged { step, magnitude: mag })
    }
}

fn advance(state: &GraphState, a: &[Vec2], dt: f64) -> (Vec<Vec2>, Vec<Vec2>) {
    let u: Vec<Vec2> = state
        .displacements
        .iter()
        .zip(&state.velocities)
        .zip(a)
        .map(|((u, v), a)| u + dt * v + 0.5 * dt * dt * a)
        .collect();
    let vp: Vec<Vec2> = state.velocities.iter().zip(a).map(|(v, a)| v + dt * a).collect();
    (u, vp)
}

fn verlet_from(
    model: &PiggoModel,
    graph: &StructuralGraph,
    state: &GraphState,
    a: &[Vec2],
    forces: &[Vec2],
    dt: f64,
) -> Result<GraphState> {
    let (u, vp) = advance(state, a, dt);
    let predicted = GraphState {
        displacements: u,
        velocities: vp,
    };
    let a_next = accelerations(model, graph, &predicted, forces)?;
    let velocities = state
        .velocities
        .iter()
        .zip(a.iter().zip(&a_next))
        .map(|(v, (a0, a1))| v + 0.5 * dt * (a0 + a1))
        .collect();
    let next = GraphState {
        displacements: predicted.displacements,
        velocities,
    };
    check_divergence(&next, 1)?;
    Ok(next)
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("time step {dt} must be positive")))
    }
}

/// One Velocity Verlet step with the force held at `forces` over the step;
/// the second acceleration uses the predictor velocity `v + dt a`.
pub fn verlet_step(
    model: &PiggoModel,
    graph: &StructuralGraph,
    state: &GraphState,
    forces: &[Vec2],
    dt: f64,
) -> Result<GraphState> {
    check_dt(dt)?;
    let a = accelerations(model, graph, state, forces)?;
    verlet_from(model, graph, state, &a, forces, dt)
}

/// The step and its Jacobian with respect to the flattened state
/// (layout of [`GraphState::flatten`]).
pub fn verlet_jacobian(
    model: &PiggoModel,
    graph: &StructuralGraph,
    state: &GraphState,
    forces: &[Vec2],
    dt: f64,
) -> Result<(GraphState, DMatrix<f64>)> {
    check_dt(dt)?;
    let n = graph.node_count();
    let m = 2 * n;
    let (a, ju, jv) = acceleration_jacobian(model, graph, state, forces)?;
    let (u, vp) = advance(state, &a, dt);
    let predicted = GraphState {
        displacements: u,
        velocities: vp,
    };
    let (a1, ju1, jv1) = acceleration_jacobian(model, graph, &predicted, forces)?;
    let eye = DMatrix::<f64>::identity(m, m);
    let h2 = 0.5 * dt * dt;
    let uu = &eye + h2 * &ju;
    let uv = dt * &eye + h2 * &jv;
    let pu = dt * &ju;
    let pv = &eye + dt * &jv;
    let au = &ju1 * &uu + &jv1 * &pu;
    let av = &ju1 * &uv + &jv1 * &pv;
    let vu = 0.5 * dt * (&ju + au);
    let vv = &eye + 0.5 * dt * (&jv + av);

    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    // reduced index 2i + d maps to 4i + d (displacement) or 4i + 2 + d (velocity)
    let ui = |k: usize| 4 * (k / 2) + k % 2;
    let vi = |k: usize| 4 * (k / 2) + 2 + k % 2;
    for r in 0..m {
        for c in 0..m {
            jac[(ui(r), ui(c))] = uu[(r, c)];
            jac[(ui(r), vi(c))] = uv[(r, c)];
            jac[(vi(r), ui(c))] = vu[(r, c)];
            jac[(vi(r), vi(c))] = vv[(r, c)];
        }
    }
    let velocities = state
        .velocities
        .iter()
        .zip(a.iter().zip(&a1))
        .map(|(v, (a0, a1))| v + 0.5 * dt * (a0 + a1))
        .collect();
    let next = GraphState {
        displacements: predicted.displacements,
        velocities,
    };
    check_divergence(&next, 1)?;
    Ok((next, jac))
}

/// Adjoint of the acceleration map for `a_bar`: state adjoints, parameter
/// gradients accumulated into `grads`.
fn acceleration_vjp(
    model: &PiggoModel,
    graph: &StructuralGraph,
    state: &GraphState,
    forces: &[Vec2],
    a_bar: &[Vec2],
    grads: Option<&mut ModelGradients>,
) -> Result<(Vec<Vec2>, Vec<Vec2>)> {
    let xi_bar: Vec<Vec2> = graph.nodes.iter().zip(a_bar).map(|(n, a)| -a / n.mass).collect();
    model.restoring_vjp(graph, state, forces, &xi_bar, grads)
}

/// Reverse pass of one Verlet step: given adjoints of the next state,
/// returns adjoints of `state`.
pub fn verlet_vjp(
    model: &PiggoModel,
    graph: &StructuralGraph,
    state: &GraphState,
    forces: &[Vec2],
    dt: f64,
    next_bar: &GraphState,
    mut grads: Option<&mut ModelGradients>,
) -> Result<GraphState> {
    check_dt(dt)?;
    let a = accelerations(model, graph, state, forces)?;
    let (u, vp) = advance(state, &a, dt);
    let predicted = GraphState {
        displacements: u,
        velocities: vp,
    };
    let half = 0.5 * dt;
    let a1_bar: Vec<Vec2> = next_bar.velocities.iter().map(|v| half * v).collect();
    let mut a_bar = a1_bar.clone();
    let mut v_bar = next_bar.velocities.clone();
    let (pu_bar, pv_bar) = acceleration_vjp(model, graph, &predicted, forces, &a1_bar, grads.as_deref_mut())?;
    let mut u_bar = next_bar.displacements.clone();
    for i in 0..graph.node_count() {
        let up = u_bar[i] + pu_bar[i];
        u_bar[i] = up;
        v_bar[i] += dt * up + pv_bar[i];
        a_bar[i] += half * dt * up + dt * pv_bar[i];
    }
    let (au_bar, av_bar) = acceleration_vjp(model, graph, state, forces, &a_bar, grads)?;
    for i in 0..graph.node_count() {
        u_bar[i] += au_bar[i];
        v_bar[i] += av_bar[i];
    }
    Ok(GraphState {
        displacements: u_bar,
        velocities: v_bar,
    })
}

/// States and accelerations of an autoregressive rollout.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub states: Vec<GraphState>,
    pub accelerations: Vec<Vec<Vec2>>,
}

/// Applies [`verlet_step`] along the force series. `forces[k]` acts over
/// `[t_k, t_k + dt)`; accelerations are recorded at each grid point.
pub fn rollout(
    model: &PiggoModel,
    graph: &StructuralGraph,
    initial: GraphState,
    forces: &[Vec<Vec2>],
    dt: f64,
) -> Result<Rollout> {
    check_dt(dt)?;
    let mut out = Rollout {
        states: Vec::with_capacity(forces.len()),
        accelerations: Vec::with_capacity(forces.len()),
    };
    let mut state = initial;
    for (k, f) in forces.iter().enumerate() {
        let a = accelerations(model, graph, &state, f)?;
        let next = if k + 1 < forces.len() {
            Some(verlet_from(model, graph, &state, &a, f, dt).map_err(|e| match e {
                Error::Diverged { magnitude, .. } => Error::Diverged { step: k + 1, magnitude },
                other => other,
            })?)
        } else {
            None
        };
        out.states.push(state);
        out.accelerations.push(a);
        match next {
            Some(s) => state = s,
            None => break,
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::features::FeatureScales;
    use crate::model::piggo::ArchitectureConfig;
    use crate::nn::fd_jacobian;
    use crate::sim::{
        generate_sobol_array, simulate_from, true_accelerations, ParameterDistributions, TRUTH_DT,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Undamped unit mass on an anchored spring; the model's reference graph
    /// carries a dummy damping because construction requires it.
    fn oscillator(k: f64) -> (PiggoModel, StructuralGraph) {
        let mut g = StructuralGraph::with_nodes(&[Vec2::new(1.0, 0.0)], 1.0);
        g.add_anchor(0, Vec2::zeros(), k, 0.0, None);
        let reference = g.nominal_copy(k, 1.0);
        let scales = FeatureScales::from_nominal(&reference, 1.0).unwrap();
        let mut m = PiggoModel::new(&ArchitectureConfig::default(), reference, scales, 0).unwrap();
        m.silence_messages();
        (m, g)
    }

    fn energy(k: f64, s: &GraphState) -> f64 {
        // axial spring only: use the exact extension
        let l = (Vec2::new(1.0, 0.0) + s.displacements[0]).norm();
        0.5 * k * (l - 1.0).powi(2) + 0.5 * s.velocities[0].norm_squared()
    }

    #[test]
    fn verlet_energy_drift_below_tenth_percent() {
        let k = 200.0;
        let (m, g) = oscillator(k);
        let period = std::f64::consts::TAU / k.sqrt();
        let dt = period / 100.0;
        let mut s = GraphState::zeros(1);
        s.displacements[0].x = 0.01;
        let e0 = energy(k, &s);
        let f = [Vec2::zeros()];
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            s = verlet_step(&m, &g, &s, &f, dt).unwrap();
            worst = worst.max((energy(k, &s) / e0 - 1.0).abs());
        }
        assert!(worst < 1e-3, "drift {worst}");
    }

    #[test]
    fn zero_field_leaves_state_unchanged() {
        let mut g = StructuralGraph::with_nodes(&[Vec2::new(1.0, 0.0)], 1.0);
        g.add_anchor(0, Vec2::zeros(), 200.0, 0.1, None);
        let scales = FeatureScales::from_nominal(&g, 1.0).unwrap();
        let mut m = PiggoModel::new(&ArchitectureConfig::default(), g.clone(), scales, 0).unwrap();
        m.silence_messages();
        let s = GraphState::zeros(1);
        assert_eq!(verlet_step(&m, &g, &s, &[Vec2::zeros()], 0.01).unwrap(), s);
    }

    fn one_period_error(dt_div: usize) -> f64 {
        let k = 200.0;
        let (m, g) = oscillator(k);
        let omega = k.sqrt();
        let period = std::f64::consts::TAU / omega;
        let dt = period / dt_div as f64;
        let mut s = GraphState::zeros(1);
        s.displacements[0].x = 1e-4;
        for _ in 0..dt_div {
            s = verlet_step(&m, &g, &s, &[Vec2::zeros()], dt).unwrap();
        }
        ((s.displacements[0].x - 1e-4).powi(2) + (s.velocities[0].x / omega).powi(2)).sqrt()
    }

    #[test]
    fn second_order_convergence() {
        let e1 = one_period_error(50);
        let e2 = one_period_error(100);
        let e3 = one_period_error(200);
        let order1 = (e1 / e2).log2();
        let order2 = (e2 / e3).log2();
        assert!(order1 >= 1.9 && order2 >= 1.9, "orders {order1} {order2}");
    }

    fn oracle_model(seed: u64, nodes: usize) -> (PiggoModel, StructuralGraph, StructuralGraph) {
        let truth = generate_sobol_array(nodes, seed, &ParameterDistributions::sobol_array()).unwrap();
        let nominal = truth.nominal_copy(200.0, 0.1);
        let scales = FeatureScales::from_nominal(&nominal, 1.0).unwrap();
        (PiggoModel::oracle(nominal.clone(), truth.clone(), scales).unwrap(), nominal, truth)
    }

    #[test]
    fn oracle_state_derivative_matches_truth() {
        let (m, nominal, truth) = oracle_model(5, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = GraphState::zeros(8);
        for i in 0..8 {
            s.displacements[i] = Vec2::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
            s.velocities[i] = Vec2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        }
        let f: Vec<Vec2> = (0..8).map(|i| Vec2::new(i as f64 * 0.1, -0.2)).collect();
        let (ud, a) = state_derivative(&m, &nominal, &s, &f).unwrap();
        assert_eq!(ud, s.velocities);
        let want = true_accelerations(&truth, &s, &f).unwrap();
        for (x, y) in a.iter().zip(&want) {
            assert!((x - y).norm() < 1e-10 * y.norm().max(1.0));
        }
    }

    #[test]
    fn oracle_rollout_tracks_truth_simulator() {
        let (m, nominal, truth) = oracle_model(6, 8);
        let mut init = GraphState::zeros(8);
        init.displacements[3] = Vec2::new(0.02, -0.01);
        let dt = 1e-4;
        let steps = 10_001;
        let zero = vec![vec![Vec2::zeros(); 8]; steps];
        let ours = rollout(&m, &nominal, init.clone(), &zero, dt).unwrap();
        let reference = simulate_from(&truth, init, &vec![vec![Vec2::zeros(); 8]; 1001], TRUTH_DT).unwrap();
        let mut err = 0.0;
        let mut norm = 0.0;
        for (k, st) in reference.true_states.iter().enumerate() {
            let o = &ours.states[10 * k];
            for i in 0..8 {
                err += (o.displacements[i] - st.displacements[i]).norm_squared();
                norm += st.displacements[i].norm_squared();
            }
        }
        assert!((err / norm).sqrt() < 1e-3, "relative error {}", (err / norm).sqrt());
    }

    #[test]
    fn rollout_from_rest_without_force_stays_at_rest() {
        let (m, nominal, _) = oracle_model(7, 8);
        let r = rollout(&m, &nominal, GraphState::zeros(8), &vec![vec![Vec2::zeros(); 8]; 50], 0.01).unwrap();
        assert!(r.states.iter().all(|s| s.max_abs() == 0.0));
        let again = rollout(&m, &nominal, GraphState::zeros(8), &vec![vec![Vec2::zeros(); 8]; 50], 0.01).unwrap();
        assert_eq!(r.states, again.states);
    }

    fn learned_triangle() -> (PiggoModel, StructuralGraph) {
        let mut g = StructuralGraph::with_nodes(
            &[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.1), Vec2::new(0.4, 0.9)],
            1.0,
        );
        g.add_edge(0, 1, 200.0, 0.1, None);
        g.add_edge(1, 2, 210.0, 0.12, None);
        g.add_edge(2, 0, 190.0, 0.09, None);
        g.add_anchor(0, Vec2::new(-0.8, -0.3), 205.0, 0.1, None);
        g.nodes[2].mass = 1.3;
        let scales = FeatureScales::from_nominal(&g, 1.0).unwrap();
        let arch = ArchitectureConfig {
            node_latent: 4,
            edge_latent: 4,
            hidden: vec![8],
            perpendicular_output: true,
        };
        let mut m = PiggoModel::new(&arch, g.clone(), scales, 11).unwrap();
        for w in &mut m.message_net.layers.last_mut().unwrap().weights {
            *w *= 20.0;
        }
        (m, g)
    }

    fn sample_state(seed: u64) -> GraphState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = GraphState::zeros(3);
        for i in 0..3 {
            s.displacements[i] = Vec2::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
            s.velocities[i] = Vec2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        }
        s
    }

    #[test]
    fn transition_jacobian_matches_finite_differences() {
        let (m, g) = learned_triangle();
        let s = sample_state(1);
        let f = vec![Vec2::new(0.2, 0.1), Vec2::zeros(), Vec2::new(-0.3, 0.4)];
        let dt = 0.01;
        let (next, jac) = verlet_jacobian(&m, &g, &s, &f, dt).unwrap();
        assert_eq!(next, verlet_step(&m, &g, &s, &f, dt).unwrap());
        let fd = fd_jacobian(
            |x| {
                let st = GraphState::unflatten(x).unwrap();
                verlet_step(&m, &g, &st, &f, dt).unwrap().flatten()
            },
            &s.flatten(),
            1e-6,
        );
        let err = (&jac - &fd).abs().max();
        assert!(err < 1e-7 * jac.abs().max(), "{err}");
    }

    #[test]
    fn free_particles_give_block_transition() {
        let g = StructuralGraph::with_nodes(&[Vec2::zeros(), Vec2::new(1.0, 0.0)], 1.0);
        let mut ref_g = g.clone();
        ref_g.add_edge(0, 1, 1.0, 1.0, None);
        let scales = FeatureScales::from_nominal(&ref_g, 1.0).unwrap();
        let mut m = PiggoModel::new(&ArchitectureConfig::default(), ref_g, scales, 0).unwrap();
        m.silence_messages();
        let dt = 0.05;
        let (_, jac) = verlet_jacobian(&m, &g, &GraphState::zeros(2), &[Vec2::zeros(); 2], dt).unwrap();
        let mut want = DMatrix::<f64>::identity(8, 8);
        for i in 0..2 {
            for d in 0..2 {
                want[(4 * i + d, 4 * i + 2 + d)] = dt;
            }
        }
        assert_eq!(jac, want);
    }

    #[test]
    fn step_adjoint_matches_jacobian_transpose() {
        let (m, g) = learned_triangle();
        let s = sample_state(2);
        let f = vec![Vec2::new(0.2, 0.1), Vec2::zeros(), Vec2::new(-0.3, 0.4)];
        let dt = 0.01;
        let (_, jac) = verlet_jacobian(&m, &g, &s, &f, dt).unwrap();
        let bar = sample_state(3);
        let adj = verlet_vjp(&m, &g, &s, &f, dt, &bar, None).unwrap();
        let want = jac.transpose() * nalgebra::DVector::from_vec(bar.flatten());
        let got = nalgebra::DVector::from_vec(adj.flatten());
        assert!((got - &want).abs().max() < 1e-12 * want.abs().max());
    }
}
