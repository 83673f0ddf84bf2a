use crate::error::{Error, Result};
use crate::graph::{GraphState, ObservationMask, StructuralGraph};
use crate::model::piggo::PiggoModel;
use crate::Vec2;

/// Force-balance residual `m a* + xi(state) - f*` at the measured nodes, in
/// the order of [`ObservationMask::measured_nodes`].
pub fn physics_residual(
    model: &PiggoModel,
    graph: &StructuralGraph,
    state: &GraphState,
    observed_forces: &[Vec2],
    observed_accelerations: &[Vec2],
    mask: &ObservationMask,
) -> Result<Vec<Vec2>> {
    let xi = model.restoring_forces(graph, state, observed_forces)?;
    residual_from_restoring(graph, &xi, observed_forces, observed_accelerations, mask)
}

pub(crate) fn residual_from_restoring(
    graph: &StructuralGraph,
    xi: &[Vec2],
    observed_forces: &[Vec2],
    observed_accelerations: &[Vec2],
    mask: &ObservationMask,
) -> Result<Vec<Vec2>> {
    let measured = mask.measured_nodes();
    if observed_accelerations.len() != measured.len() {
        return Err(Error::ShapeMismatch {
            expected: measured.len(),
            got: observed_accelerations.len(),
        });
    }
    Ok(measured
        .iter()
        .zip(observed_accelerations)
        .map(|(&i, a)| graph.nodes[i].mass * a + xi[i] - observed_forces[i])
        .collect())
}

/// Mean over steps of the summed squared residual norms.
pub fn loss_physics_deterministic(residuals: &[Vec<Vec2>]) -> f64 {
    if residuals.is_empty() {
        return 0.0;
    }
    let total: f64 = residuals.iter().flatten().map(|r| r.norm_squared()).sum();
    total / residuals.len() as f64
}

/// Negative log-likelihood of independent Gaussian residuals with
/// per-node, per-direction variances, normalising constants included.
pub fn loss_physics_nll(residuals: &[Vec<Vec2>], variances: &[Vec2]) -> Result<f64> {
    for (k, v) in variances.iter().enumerate() {
        for d in 0..2 {
            if !(v[d] > 0.0) {
                return Err(Error::NonpositiveVariance {
                    channel: 2 * k + d,
                    variance: v[d],
                });
            }
        }
    }
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut nll = 0.0;
    for step in residuals {
        if step.len() != variances.len() {
            return Err(Error::ShapeMismatch {
                expected: variances.len(),
                got: step.len(),
            });
        }
        for (r, v) in step.iter().zip(variances) {
            for d in 0..2 {
                nll += 0.5 * (ln_2pi + v[d].ln()) + r[d] * r[d] / (2.0 * v[d]);
            }
        }
    }
    Ok(nll)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::features::FeatureScales;
    use crate::model::piggo::ArchitectureConfig;
    use crate::sim::{corrupt_and_mask, generate_sobol_array, simulate, ParameterDistributions};

    #[test]
    fn deterministic_loss_basics() {
        assert_eq!(loss_physics_deterministic(&vec![vec![Vec2::zeros(); 3]; 4]), 0.0);
        let r = vec![vec![Vec2::new(1.0, -2.0)], vec![Vec2::new(0.5, 0.0)]];
        // (1 + 4 + 0.25) / 2
        assert_eq!(loss_physics_deterministic(&r), 2.625);
        let r2: Vec<Vec<Vec2>> = r.iter().map(|s| s.iter().map(|v| 2.0 * v).collect()).collect();
        assert_eq!(loss_physics_deterministic(&r2), 4.0 * 2.625);
    }

    #[test]
    fn nll_normaliser_and_standardised_term() {
        let zero = vec![vec![Vec2::zeros(); 2]; 3];
        let v = vec![Vec2::new(0.3, 0.7); 2];
        let v2: Vec<Vec2> = v.iter().map(|x| 2.0 * x).collect();
        let a = loss_physics_nll(&zero, &v).unwrap();
        let b = loss_physics_nll(&zero, &v2).unwrap();
        // 3 steps x 2 nodes x 2 directions
        assert!((b - a - 12.0 * 0.5 * 2f64.ln()).abs() < 1e-12);
        let one = vec![vec![Vec2::new(0.3f64.sqrt(), 0.0)]];
        let base = loss_physics_nll(&[vec![Vec2::zeros()]], &[Vec2::new(0.3, 0.7)]).unwrap();
        let with = loss_physics_nll(&one, &[Vec2::new(0.3, 0.7)]).unwrap();
        assert!((with - base - 0.5).abs() < 1e-12);
        assert!(matches!(
            loss_physics_nll(&zero, &[Vec2::new(0.0, 1.0); 2]),
            Err(Error::NonpositiveVariance { .. })
        ));
    }

    #[test]
    fn residual_on_truth_with_true_law_vanishes() {
        let truth = generate_sobol_array(8, 1, &ParameterDistributions::sobol_array()).unwrap();
        let nominal = truth.nominal_copy(200.0, 0.1);
        let scales = FeatureScales::from_nominal(&nominal, 1.0).unwrap();
        let model = PiggoModel::oracle(nominal.clone(), truth.clone(), scales).unwrap();
        let forces: Vec<Vec<Vec2>> = (0..300)
            .map(|k| {
                let t = k as f64 * 1e-3;
                (0..8).map(|i| Vec2::new((3.0 * t + i as f64).sin(), (2.0 * t).cos())).collect()
            })
            .collect();
        let data = simulate(&truth, &forces, 1e-3).unwrap();
        let mask = crate::graph::sparsity_mask(8, 75.0).unwrap();
        let obs = corrupt_and_mask(&data, None, &mask, 0).unwrap();
        for k in (0..300).step_by(37) {
            let r = physics_residual(
                &model,
                &nominal,
                &obs.true_states[k],
                &obs.observed_forces[k],
                &obs.observed_accelerations[k],
                &obs.mask,
            )
            .unwrap();
            assert!(r.iter().all(|v| v.norm() < 1e-8), "{r:?}");
        }
    }

    #[test]
    fn residual_is_linear_in_acceleration() {
        let mut g = StructuralGraph::with_nodes(&[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)], 2.5);
        g.add_edge(0, 1, 200.0, 0.1, None);
        let scales = FeatureScales::from_nominal(&g, 1.0).unwrap();
        let mut m = PiggoModel::new(&ArchitectureConfig::default(), g.clone(), scales, 0).unwrap();
        m.silence_messages();
        let mask = ObservationMask::all(2);
        let s = GraphState::zeros(2);
        let f = [Vec2::zeros(); 2];
        let r0 = physics_residual(&m, &g, &s, &f, &[Vec2::zeros(); 2], &mask).unwrap();
        assert!(r0.iter().all(|v| *v == Vec2::zeros()));
        let a = [Vec2::new(1.0, -2.0), Vec2::new(0.5, 0.5)];
        let r = physics_residual(&m, &g, &s, &f, &a, &mask).unwrap();
        for (ri, ai) in r.iter().zip(&a) {
            assert!((ri - 2.5 * ai).norm() < 1e-15);
        }
    }
}
