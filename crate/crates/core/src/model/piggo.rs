use nalgebra::{DMatrix, Matrix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{corotational_kinematics, wrap_angle, Edge, EdgeKinematics, EdgeNonlinearity, GraphState, StructuralGraph};
use crate::model::features::{FeatureScales, EDGE_FEATURES, NODE_FEATURES};
use crate::nn::{DenseNetwork, ForwardCache, GradientBundle};
use crate::sim::{perpendicular, EdgeAction};
use crate::Vec2;

/// Sizes of the three networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    pub node_latent: usize,
    pub edge_latent: usize,
    pub hidden: Vec<usize>,
    /// Emit an (axial, perpendicular) pair per edge instead of an axial scalar.
    pub perpendicular_output: bool,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            node_latent: 16,
            edge_latent: 16,
            hidden: vec![64, 64],
            perpendicular_output: false,
        }
    }
}

/// Source of the nonlinear edge action.
#[derive(Clone, Debug, PartialEq)]
pub enum Closure {
    /// Message-passing networks.
    Learned,
    /// Exact ground-truth law of the given graph, minus the nominal linear
    /// part. Used as a plug-in reference.
    Oracle(StructuralGraph),
}

/// Physics-guided graph ODE: nominal linear convolution plus a learned
/// message-passing correction.
#[derive(Clone, Debug, PartialEq)]
pub struct PiggoModel {
    pub node_encoder: DenseNetwork,
    pub edge_encoder: DenseNetwork,
    pub message_net: DenseNetwork,
    /// Nominal graph of the training system.
    pub nominal_graph: StructuralGraph,
    pub scales: FeatureScales,
    /// Per measured node of the training data.
    pub acceleration_noise_variance: Vec<Vec2>,
    /// Per node of the training data.
    pub force_noise_variance: Vec<Vec2>,
    pub closure: Closure,
}

/// Gradients for all three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradients {
    pub node: GradientBundle,
    pub edge: GradientBundle,
    pub message: GradientBundle,
}

impl ModelGradients {
    pub fn zeros_like(model: &PiggoModel) -> Self {
        ModelGradients {
            node: GradientBundle::zeros_like(&model.node_encoder),
            edge: GradientBundle::zeros_like(&model.edge_encoder),
            message: GradientBundle::zeros_like(&model.message_net),
        }
    }

    /// Same order as [`PiggoModel::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.node.flat();
        out.extend(self.edge.flat());
        out.extend(self.message.flat());
        out
    }
}

/// One edge at one state: kinematics, the two action parts and the local
/// sensitivities of the total action.
#[derive(Clone, Copy, Debug)]
pub struct EdgeResponse {
    pub kin: EdgeKinematics,
    pub linear: EdgeAction,
    pub nonlinear: EdgeAction,
    /// `d(axial, perpendicular) / d(extension, extension_rate, dir_x, dir_y)`.
    pub sensitivity: [[f64; 4]; 2],
}

impl EdgeResponse {
    pub fn total(&self) -> EdgeAction {
        EdgeAction {
            axial: self.linear.axial + self.nonlinear.axial,
            perpendicular: self.linear.perpendicular + self.nonlinear.perpendicular,
        }
    }

    fn force(&self, action: EdgeAction) -> Vec2 {
        action.axial * self.kin.direction + action.perpendicular * perpendicular(self.kin.direction)
    }

    /// Jacobians of the edge force on its `b` end with respect to the edge
    /// vector and the relative velocity.
    pub fn force_jacobians(&self) -> (Matrix2<f64>, Matrix2<f64>) {
        let n = self.kin.direction;
        let t = perpendicular(n);
        let l = self.kin.length;
        let dv = self.kin.relative_velocity;
        let p = Matrix2::identity() - n * n.transpose();
        let rot = Matrix2::new(0.0, -1.0, 1.0, 0.0);
        let a = self.total();
        let grad_d = |s: &[f64; 4]| -> nalgebra::RowVector2<f64> {
            let dn = nalgebra::RowVector2::new(s[2], s[3]);
            s[0] * n.transpose() + (s[1] * dv.transpose() + dn) * p / l
        };
        let [sa, sp] = &self.sensitivity;
        let jd = n * grad_d(sa) + t * grad_d(sp) + (a.axial * Matrix2::identity() + a.perpendicular * rot) * p / l;
        let jv = (sa[1] * n + sp[1] * t) * n.transpose();
        (jd, jv)
    }
}

/// Restoring forces with their per-edge breakdown.
#[derive(Clone, Debug)]
pub struct ForceEvaluation {
    pub edges: Vec<EdgeResponse>,
    pub linear: Vec<Vec2>,
    pub nonlinear: Vec<Vec2>,
}

impl ForceEvaluation {
    pub fn total(&self) -> Vec<Vec2> {
        self.linear.iter().zip(&self.nonlinear).map(|(a, b)| a + b).collect()
    }
}

struct MessageTape {
    edge: ForwardCache,
    message: ForwardCache,
}

/// Forward caches kept for the parameter reverse pass.
struct NetworkTape {
    node_inputs: Vec<[f64; NODE_FEATURES]>,
    /// One entry per edge: the `b`-receiver message, then the `a`-receiver one.
    messages: Vec<(MessageTape, Option<MessageTape>)>,
}

fn scatter(edge: &Edge, force: Vec2, xi: &mut [Vec2]) {
    if edge.is_self_loop() {
        xi[edge.a] += force;
    } else {
        xi[edge.b] += force;
        xi[edge.a] -= force;
    }
}

/// Linear physics convolution: nominal `k eps + c eps_dot` along every edge.
pub fn physics_convolution(graph: &StructuralGraph, state: &GraphState) -> Result<Vec<Vec2>> {
    let kins = corotational_kinematics(graph, state)?;
    let mut xi = vec![Vec2::zeros(); graph.node_count()];
    for (e, kin) in graph.edges.iter().zip(&kins) {
        let s = e.stiffness * kin.extension + e.damping * kin.extension_rate;
        scatter(e, s * kin.direction, &mut xi);
    }
    Ok(xi)
}

/// Nonlinear (black-box) convolution alone.
pub fn blackbox_convolution(
    model: &PiggoModel,
    graph: &StructuralGraph,
    state: &GraphState,
    forces: &[Vec2],
) -> Result<Vec<Vec2>> {
    Ok(model.evaluate(graph, state, forces, false)?.nonlinear)
}

impl PiggoModel {
    /// Glorot-initialised networks for the given nominal graph.
    pub fn new(
        arch: &ArchitectureConfig,
        nominal_graph: StructuralGraph,
        scales: FeatureScales,
        seed: u64,
    ) -> Result<Self> {
        if arch.node_latent == 0 || arch.edge_latent == 0 || arch.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Invalid("network sizes must be positive".into()));
        }
        nominal_graph.validate()?;
        scales.validate()?;
        if nominal_graph.edges.iter().any(|e| !(e.stiffness > 0.0) || !(e.damping > 0.0)) {
            return Err(Error::Invalid("nominal stiffness and damping must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let node_encoder = DenseNetwork::glorot(&[NODE_FEATURES, arch.node_latent, arch.node_latent], &mut rng);
        let edge_encoder = DenseNetwork::glorot(&[EDGE_FEATURES, arch.edge_latent, arch.edge_latent], &mut rng);
        let mut sizes = vec![2 * arch.node_latent + arch.edge_latent];
        sizes.extend(&arch.hidden);
        sizes.push(if arch.perpendicular_output { 2 } else { 1 });
        let message_net = DenseNetwork::glorot(&sizes, &mut rng);
        let nodes = nominal_graph.node_count();
        Ok(PiggoModel {
            node_encoder,
            edge_encoder,
            message_net,
            nominal_graph,
            scales,
            acceleration_noise_variance: Vec::new(),
            force_noise_variance: vec![Vec2::zeros(); nodes],
            closure: Closure::Learned,
        })
    }

    /// A model whose nonlinear part is the exact law of `truth`.
    pub fn oracle(nominal_graph: StructuralGraph, truth: StructuralGraph, scales: FeatureScales) -> Result<Self> {
        let mut m = Self::new(&ArchitectureConfig::default(), nominal_graph, scales, 0)?;
        m.closure = Closure::Oracle(truth);
        Ok(m)
    }

    /// Zeroes the message network's last layer so the nonlinear part vanishes.
    pub fn silence_messages(&mut self) {
        let last = self.message_net.layers.last_mut().expect("message net has layers");
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn architecture(&self) -> ArchitectureConfig {
        let sizes = self.message_net.sizes();
        ArchitectureConfig {
            node_latent: self.node_encoder.output_size(),
            edge_latent: self.edge_encoder.output_size(),
            hidden: sizes[1..sizes.len() - 1].to_vec(),
            perpendicular_output: self.output_width() == 2,
        }
    }

    pub fn output_width(&self) -> usize {
        self.message_net.output_size()
    }

    pub fn parameter_count(&self) -> usize {
        self.node_encoder.parameter_count() + self.edge_encoder.parameter_count() + self.message_net.parameter_count()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = self.node_encoder.flat_params();
        out.extend(self.edge_encoder.flat_params());
        out.extend(self.message_net.flat_params());
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::ShapeMismatch {
                expected: self.parameter_count(),
                got: flat.len(),
            });
        }
        let a = self.node_encoder.parameter_count();
        let b = a + self.edge_encoder.parameter_count();
        self.node_encoder.set_flat_params(&flat[..a])?;
        self.edge_encoder.set_flat_params(&flat[a..b])?;
        self.message_net.set_flat_params(&flat[b..])
    }

    fn check_shapes(&self, graph: &StructuralGraph, state: &GraphState, forces: &[Vec2]) -> Result<()> {
        let n = graph.node_count();
        for got in [state.node_count(), forces.len()] {
            if got != n {
                return Err(Error::ShapeMismatch { expected: n, got });
            }
        }
        if let Closure::Oracle(truth) = &self.closure {
            if truth.edge_count() != graph.edge_count() {
                return Err(Error::ShapeMismatch {
                    expected: graph.edge_count(),
                    got: truth.edge_count(),
                });
            }
        }
        Ok(())
    }

    fn node_inputs(&self, graph: &StructuralGraph, forces: &[Vec2]) -> Vec<[f64; NODE_FEATURES]> {
        graph
            .nodes
            .iter()
            .zip(forces)
            .map(|(n, f)| self.scales.node_features(n.rest_position, *f, n.mass))
            .collect()
    }

    fn message_input(sender: &[f64], receiver: &[f64], edge_latent: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(sender.len() + receiver.len() + edge_latent.len());
        x.extend_from_slice(sender);
        x.extend_from_slice(receiver);
        x.extend_from_slice(edge_latent);
        x
    }

    /// One directed message: output, optional gradients of each output with
    /// respect to the edge features, optional caches.
    fn directed_message(
        &self,
        sender: &[f64],
        receiver: &[f64],
        edge_features: &[f64; EDGE_FEATURES],
        sensitivities: bool,
        keep: bool,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>, Option<MessageTape>)> {
        if !sensitivities && !keep {
            let he = self.edge_encoder.forward(edge_features)?;
            let out = self.message_net.forward(&Self::message_input(sender, receiver, &he))?;
            return Ok((out, Vec::new(), None));
        }
        let ec = self.edge_encoder.forward_cached(edge_features)?;
        let mc = self.message_net.forward_cached(&Self::message_input(sender, receiver, ec.output()))?;
        let out = mc.output().to_vec();
        let mut grads = Vec::new();
        if sensitivities {
            let skip = sender.len() + receiver.len();
            for k in 0..out.len() {
                let mut up = vec![0.0; out.len()];
                up[k] = 1.0;
                let gin = self.message_net.backward_cached(&mc, &up, None)?;
                grads.push(self.edge_encoder.backward_cached(&ec, &gin[skip..], None)?);
            }
        }
        let tape = keep.then_some(MessageTape { edge: ec, message: mc });
        Ok((out, grads, tape))
    }

    fn evaluate_inner(
        &self,
        graph: &StructuralGraph,
        state: &GraphState,
        forces: &[Vec2],
        sensitivities: bool,
        keep: bool,
    ) -> Result<(ForceEvaluation, Option<NetworkTape>)> {
        self.check_shapes(graph, state, forces)?;
        let kins = corotational_kinematics(graph, state)?;
        let n = graph.node_count();
        let mut eval = ForceEvaluation {
            edges: Vec::with_capacity(graph.edge_count()),
            linear: vec![Vec2::zeros(); n],
            nonlinear: vec![Vec2::zeros(); n],
        };
        let node_inputs = match self.closure {
            Closure::Learned => self.node_inputs(graph, forces),
            Closure::Oracle(_) => Vec::new(),
        };
        let latents: Vec<Vec<f64>> = node_inputs
            .iter()
            .map(|x| self.node_encoder.forward(x))
            .collect::<Result<_>>()?;
        let mut tape = keep.then(|| NetworkTape {
            node_inputs: node_inputs.clone(),
            messages: Vec::with_capacity(graph.edge_count()),
        });

        for (idx, (edge, kin)) in graph.edges.iter().zip(&kins).enumerate() {
            let linear = EdgeAction {
                axial: edge.stiffness * kin.extension + edge.damping * kin.extension_rate,
                perpendicular: 0.0,
            };
            let mut sens = [[edge.stiffness, edge.damping, 0.0, 0.0], [0.0; 4]];
            let nonlinear = match &self.closure {
                Closure::Oracle(truth) => {
                    let (action, s) = oracle_action(edge, &truth.edges[idx], kin);
                    for (row, srow) in sens.iter_mut().zip(&s) {
                        for (a, b) in row.iter_mut().zip(srow) {
                            *a += b;
                        }
                    }
                    action
                }
                Closure::Learned => {
                    let fs = self.scales.force;
                    let to_local = |g: &[f64], scale: f64| {
                        [
                            scale * g[0] / self.scales.extension,
                            scale * g[1] / self.scales.extension_rate,
                            scale * g[2],
                            scale * g[3],
                        ]
                    };
                    let ef = self.scales.edge_features(edge, kin, false);
                    let (out, tapes) = if edge.is_self_loop() {
                        let h = &latents[edge.a];
                        let (o, g, t) = self.directed_message(h, h, &ef, sensitivities, keep)?;
                        for (k, gk) in g.iter().enumerate() {
                            let local = to_local(gk, fs);
                            for (a, b) in sens[k].iter_mut().zip(&local) {
                                *a += b;
                            }
                        }
                        let scaled: Vec<f64> = o.iter().map(|v| fs * v).collect();
                        (scaled, (t, None))
                    } else {
                        let ef_a = self.scales.edge_features(edge, kin, true);
                        let (ha, hb) = (&latents[edge.a], &latents[edge.b]);
                        let (ob, gb, tb) = self.directed_message(ha, hb, &ef, sensitivities, keep)?;
                        let (oa, ga, ta) = self.directed_message(hb, ha, &ef_a, sensitivities, keep)?;
                        for k in 0..gb.len() {
                            let lb = to_local(&gb[k], 0.5 * fs);
                            let la = to_local(&ga[k], 0.5 * fs);
                            let local = [lb[0] + la[0], lb[1] + la[1], lb[2] - la[2], lb[3] - la[3]];
                            for (a, b) in sens[k].iter_mut().zip(&local) {
                                *a += b;
                            }
                        }
                        let scaled: Vec<f64> = ob.iter().zip(&oa).map(|(x, y)| 0.5 * fs * (x + y)).collect();
                        (scaled, (tb, ta))
                    };
                    if let Some(t) = tape.as_mut() {
                        let (tb, ta) = tapes;
                        t.messages.push((tb.expect("tape requested"), ta));
                    }
                    EdgeAction {
                        axial: out[0],
                        perpendicular: out.get(1).copied().unwrap_or(0.0),
                    }
                }
            };
            let resp = EdgeResponse {
                kin: *kin,
                linear,
                nonlinear,
                sensitivity: sens,
            };
            scatter(edge, resp.force(linear), &mut eval.linear);
            scatter(edge, resp.force(nonlinear), &mut eval.nonlinear);
            eval.edges.push(resp);
        }
        Ok((eval, tape))
    }

    /// Restoring forces; with `sensitivities` the local edge derivatives are
    /// filled in as well.
    pub fn evaluate(
        &self,
        graph: &StructuralGraph,
        state: &GraphState,
        forces: &[Vec2],
        sensitivities: bool,
    ) -> Result<ForceEvaluation> {
        Ok(self.evaluate_inner(graph, state, forces, sensitivities, false)?.0)
    }

    /// Total restoring force per node.
    pub fn restoring_forces(&self, graph: &StructuralGraph, state: &GraphState, forces: &[Vec2]) -> Result<Vec<Vec2>> {
        Ok(self.evaluate(graph, state, forces, false)?.total())
    }

    /// Jacobians of the total restoring force (node-major rows `2i + d`) with
    /// respect to displacements and velocities (columns `2j + d`).
    pub fn restoring_jacobian(
        &self,
        graph: &StructuralGraph,
        state: &GraphState,
        forces: &[Vec2],
    ) -> Result<(ForceEvaluation, DMatrix<f64>, DMatrix<f64>)> {
        let eval = self.evaluate(graph, state, forces, true)?;
        let n = graph.node_count();
        let mut ju = DMatrix::zeros(2 * n, 2 * n);
        let mut jv = DMatrix::zeros(2 * n, 2 * n);
        for (edge, resp) in graph.edges.iter().zip(&eval.edges) {
            let (jd, jdv) = resp.force_jacobians();
            // (row node, column node, sign)
            let blocks: &[(usize, usize, f64)] = if edge.is_self_loop() {
                &[(edge.a, edge.a, 1.0)]
            } else {
                &[(edge.b, edge.b, 1.0), (edge.b, edge.a, -1.0), (edge.a, edge.b, -1.0), (edge.a, edge.a, 1.0)]
            };
            for &(r, c, s) in blocks {
                let mut bu = ju.fixed_view_mut::<2, 2>(2 * r, 2 * c);
                bu += s * jd;
                let mut bv = jv.fixed_view_mut::<2, 2>(2 * r, 2 * c);
                bv += s * jdv;
            }
        }
        Ok((eval, ju, jv))
    }

    /// Reverse pass of `xi_bar . xi(state)`: returns the displacement and
    /// velocity adjoints and, if `grads` is given, accumulates parameter
    /// gradients.
    pub fn restoring_vjp(
        &self,
        graph: &StructuralGraph,
        state: &GraphState,
        forces: &[Vec2],
        xi_bar: &[Vec2],
        grads: Option<&mut ModelGradients>,
    ) -> Result<(Vec<Vec2>, Vec<Vec2>)> {
        let learned = matches!(self.closure, Closure::Learned);
        let keep = grads.is_some() && learned;
        let (eval, tape) = self.evaluate_inner(graph, state, forces, true, keep)?;
        let n = graph.node_count();
        let mut u_bar = vec![Vec2::zeros(); n];
        let mut v_bar = vec![Vec2::zeros(); n];
        let mut action_bars = Vec::with_capacity(graph.edge_count());
        for (edge, resp) in graph.edges.iter().zip(&eval.edges) {
            let f_bar = if edge.is_self_loop() {
                xi_bar[edge.a]
            } else {
                xi_bar[edge.b] - xi_bar[edge.a]
            };
            let (jd, jdv) = resp.force_jacobians();
            let d_bar = jd.transpose() * f_bar;
            let dv_bar = jdv.transpose() * f_bar;
            u_bar[edge.b] += d_bar;
            v_bar[edge.b] += dv_bar;
            if !edge.is_self_loop() {
                u_bar[edge.a] -= d_bar;
                v_bar[edge.a] -= dv_bar;
            }
            let dir = resp.kin.direction;
            action_bars.push([f_bar.dot(&dir), f_bar.dot(&perpendicular(dir))]);
        }
        if let (Some(grads), Some(tape)) = (grads, tape) {
            self.parameter_backward(graph, &tape, &action_bars, grads)?;
        }
        Ok((u_bar, v_bar))
    }

    fn parameter_backward(
        &self,
        graph: &StructuralGraph,
        tape: &NetworkTape,
        action_bars: &[[f64; 2]],
        grads: &mut ModelGradients,
    ) -> Result<()> {
        let width = self.output_width();
        let hn = self.node_encoder.output_size();
        let mut latent_bars = vec![vec![0.0; hn]; graph.node_count()];
        let fs = self.scales.force;
        let mut push = |t: &MessageTape, sender: usize, receiver: usize, up: &[f64], latent_bars: &mut Vec<Vec<f64>>| -> Result<()> {
            let gin = self.message_net.backward_cached(&t.message, up, Some(&mut grads.message))?;
            for (k, g) in gin[..hn].iter().enumerate() {
                latent_bars[sender][k] += g;
            }
            for (k, g) in gin[hn..2 * hn].iter().enumerate() {
                latent_bars[receiver][k] += g;
            }
            self.edge_encoder.backward_cached(&t.edge, &gin[2 * hn..], Some(&mut grads.edge))?;
            Ok(())
        };
        for ((edge, (tb, ta)), bar) in graph.edges.iter().zip(&tape.messages).zip(action_bars) {
            if bar[..width].iter().all(|&v| v == 0.0) {
                continue;
            }
            match ta {
                None => {
                    let up: Vec<f64> = bar[..width].iter().map(|v| fs * v).collect();
                    push(tb, edge.a, edge.a, &up, &mut latent_bars)?;
                }
                Some(ta) => {
                    let up: Vec<f64> = bar[..width].iter().map(|v| 0.5 * fs * v).collect();
                    push(tb, edge.a, edge.b, &up, &mut latent_bars)?;
                    push(ta, edge.b, edge.a, &up, &mut latent_bars)?;
                }
            }
        }
        for (x, bar) in tape.node_inputs.iter().zip(&latent_bars) {
            if bar.iter().all(|&v| v == 0.0) {
                continue;
            }
            let cache = self.node_encoder.forward_cached(x)?;
            self.node_encoder.backward_cached(&cache, bar, Some(&mut grads.node))?;
        }
        Ok(())
    }
}

/// Exact nonlinear remainder `truth - nominal linear` and its local sensitivities.
fn oracle_action(nominal: &Edge, truth: &Edge, kin: &EdgeKinematics) -> (EdgeAction, [[f64; 4]; 2]) {
    let eps = kin.extension;
    let dk = truth.stiffness - nominal.stiffness;
    let dc = truth.damping - nominal.damping;
    let mut action = EdgeAction {
        axial: dk * eps + dc * kin.extension_rate,
        perpendicular: 0.0,
    };
    let mut sens = [[dk, dc, 0.0, 0.0], [0.0; 4]];
    match truth.nonlinearity {
        None => {}
        Some(EdgeNonlinearity::Cubic { kappa }) => {
            action.axial += kappa * eps * eps * eps;
            sens[0][0] += 3.0 * kappa * eps * eps;
        }
        Some(EdgeNonlinearity::Clearance {
            rotational_stiffness,
            clearance,
        }) => {
            let rotation = wrap_angle(kin.angle - truth.rest_angle);
            if rotation.abs() >= clearance {
                action.perpendicular = rotational_stiffness * rotation;
                let t = perpendicular(kin.direction);
                sens[1][2] = rotational_stiffness * t.x;
                sens[1][3] = rotational_stiffness * t.y;
            }
        }
    }
    (action, sens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::fd_jacobian;
    use crate::sim::{generate_sobol_array, true_restoring_forces, ParameterDistributions};
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) fn triangle() -> StructuralGraph {
        let mut g = StructuralGraph::with_nodes(
            &[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.1), Vec2::new(0.4, 0.9)],
            1.0,
        );
        g.add_edge(0, 1, 200.0, 0.1, None);
        g.add_edge(1, 2, 210.0, 0.12, None);
        g.add_edge(2, 0, 190.0, 0.09, None);
        g.add_anchor(0, Vec2::new(-0.8, -0.3), 205.0, 0.1, None);
        g
    }

    fn small_arch() -> ArchitectureConfig {
        ArchitectureConfig {
            node_latent: 4,
            edge_latent: 5,
            hidden: vec![6, 6],
            perpendicular_output: true,
        }
    }

    fn random_state(n: usize, amp: f64, seed: u64) -> GraphState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = GraphState::zeros(n);
        for i in 0..n {
            s.displacements[i] = Vec2::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp));
            s.velocities[i] = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        s
    }

    fn boosted(model: &mut PiggoModel) {
        // larger last-layer weights so the nonlinear part matters in checks
        for w in &mut model.message_net.layers.last_mut().unwrap().weights {
            *w *= 20.0;
        }
    }

    #[test]
    fn two_node_spring_force_balance() {
        let mut g = StructuralGraph::with_nodes(&[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)], 1.0);
        g.add_edge(0, 1, 200.0, 0.1, None);
        let mut s = GraphState::zeros(2);
        s.displacements[1].x = 0.01;
        let xi = physics_convolution(&g, &s).unwrap();
        assert!((xi[1] - Vec2::new(2.0, 0.0)).norm() < 1e-12);
        assert!((xi[0] + xi[1]).norm() < 1e-15);
    }

    #[test]
    fn rest_state_has_no_linear_force() {
        let g = triangle();
        let xi = physics_convolution(&g, &GraphState::zeros(3)).unwrap();
        assert!(xi.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn silenced_messages_give_zero_nonlinear_force() {
        let g = triangle();
        let scales = FeatureScales::from_nominal(&g, 1.0).unwrap();
        let mut m = PiggoModel::new(&small_arch(), g.clone(), scales, 1).unwrap();
        m.silence_messages();
        let s = random_state(3, 0.05, 1);
        let f = vec![Vec2::new(0.3, -0.2); 3];
        assert!(blackbox_convolution(&m, &g, &s, &f).unwrap().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn duplicated_edge_doubles_contribution() {
        let g = triangle();
        let scales = FeatureScales::from_nominal(&g, 1.0).unwrap();
        let m = PiggoModel::new(&small_arch(), g.clone(), scales, 2).unwrap();
        let mut single = g.clone();
        single.edges.truncate(1);
        let mut double = single.clone();
        double.edges.push(single.edges[0].clone());
        let s = random_state(3, 0.05, 2);
        let f = vec![Vec2::new(0.3, -0.2); 3];
        let a = blackbox_convolution(&m, &single, &s, &f).unwrap();
        let b = blackbox_convolution(&m, &double, &s, &f).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn oracle_reproduces_true_restoring_forces() {
        let truth = generate_sobol_array(8, 3, &ParameterDistributions::sobol_array()).unwrap();
        let nominal = truth.nominal_copy(200.0, 0.1);
        let scales = FeatureScales::from_nominal(&nominal, 1.0).unwrap();
        let m = PiggoModel::oracle(nominal.clone(), truth.clone(), scales).unwrap();
        let s = random_state(8, 0.05, 3);
        let xi = m.restoring_forces(&nominal, &s, &vec![Vec2::zeros(); 8]).unwrap();
        let want = true_restoring_forces(&truth, &s).unwrap();
        for (a, b) in xi.iter().zip(&want) {
            assert!((a - b).norm() < 1e-10 * b.norm().max(1.0));
        }
    }

    fn check_jacobian(model: &PiggoModel, g: &StructuralGraph, s: &GraphState, f: &[Vec2]) {
        let (_, ju, jv) = model.restoring_jacobian(g, s, f).unwrap();
        let n = g.node_count();
        let flat_u: Vec<f64> = s.displacements.iter().flat_map(|v| [v.x, v.y]).collect();
        let flat_v: Vec<f64> = s.velocities.iter().flat_map(|v| [v.x, v.y]).collect();
        let xi_flat = |st: &GraphState| -> Vec<f64> {
            model.restoring_forces(g, st, f).unwrap().iter().flat_map(|v| [v.x, v.y]).collect()
        };
        let fd_u = fd_jacobian(
            |x| {
                let mut st = s.clone();
                for i in 0..n {
                    st.displacements[i] = Vec2::new(x[2 * i], x[2 * i + 1]);
                }
                xi_flat(&st)
            },
            &flat_u,
            1e-6,
        );
        let fd_v = fd_jacobian(
            |x| {
                let mut st = s.clone();
                for i in 0..n {
                    st.velocities[i] = Vec2::new(x[2 * i], x[2 * i + 1]);
                }
                xi_flat(&st)
            },
            &flat_v,
            1e-6,
        );
        let scale = ju.abs().max().max(1.0);
        assert!((&ju - &fd_u).abs().max() < 1e-6 * scale, "{}", (&ju - &fd_u).abs().max());
        assert!((&jv - &fd_v).abs().max() < 1e-6 * jv.abs().max().max(1.0));
    }

    #[test]
    fn learned_jacobian_matches_finite_differences() {
        let g = triangle();
        let scales = FeatureScales::from_nominal(&g, 1.0).unwrap();
        for seed in 0..3 {
            let mut m = PiggoModel::new(&small_arch(), g.clone(), scales, seed).unwrap();
            boosted(&mut m);
            let s = random_state(3, 0.05, 10 + seed);
            let f = vec![Vec2::new(0.5, -0.1), Vec2::new(-0.2, 0.4), Vec2::zeros()];
            check_jacobian(&m, &g, &s, &f);
        }
    }

    #[test]
    fn oracle_jacobian_matches_finite_differences() {
        let truth = generate_sobol_array(8, 4, &ParameterDistributions::sobol_array()).unwrap();
        let nominal = truth.nominal_copy(200.0, 0.1);
        let scales = FeatureScales::from_nominal(&nominal, 1.0).unwrap();
        let m = PiggoModel::oracle(nominal.clone(), truth, scales).unwrap();
        check_jacobian(&m, &nominal, &random_state(8, 0.05, 4), &vec![Vec2::zeros(); 8]);
    }

    #[test]
    fn parameter_vjp_matches_finite_differences() {
        let g = triangle();
        let scales = FeatureScales::from_nominal(&g, 1.0).unwrap();
        let mut m = PiggoModel::new(&small_arch(), g.clone(), scales, 7).unwrap();
        boosted(&mut m);
        let s = random_state(3, 0.05, 7);
        let f = vec![Vec2::new(0.5, -0.1), Vec2::new(-0.2, 0.4), Vec2::zeros()];
        let xi_bar = vec![Vec2::new(0.3, -0.7), Vec2::new(1.1, 0.2), Vec2::new(-0.4, 0.9)];
        let mut grads = ModelGradients::zeros_like(&m);
        m.restoring_vjp(&g, &s, &f, &xi_bar, Some(&mut grads)).unwrap();
        let p0 = m.flat_params();
        let fd = fd_jacobian(
            |p| {
                let mut mm = m.clone();
                mm.set_flat_params(p).unwrap();
                let xi = mm.restoring_forces(&g, &s, &f).unwrap();
                vec![xi.iter().zip(&xi_bar).map(|(a, b)| a.dot(b)).sum()]
            },
            &p0,
            1e-6,
        );
        let an = grads.flat();
        let scale = an.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for (k, a) in an.iter().enumerate() {
            assert!((a - fd[(0, k)]).abs() < 1e-6 * scale, "param {k}: {a} vs {}", fd[(0, k)]);
        }
    }

    fn rotate(v: Vec2, c: f64, s: f64) -> Vec2 {
        Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn physics_convolution_is_frame_equivariant(
            angle in -3.1..3.1f64, tx in -5.0..5.0f64, ty in -5.0..5.0f64, seed in 0u64..1000
        ) {
            let g = triangle();
            let s = random_state(3, 0.05, seed);
            let xi = physics_convolution(&g, &s).unwrap();
            let (c, sn) = (angle.cos(), angle.sin());
            let t = Vec2::new(tx, ty);
            let mut rg = g.clone();
            for n in &mut rg.nodes {
                n.rest_position = rotate(n.rest_position, c, sn) + t;
            }
            for e in &mut rg.edges {
                if let Some(a) = e.anchor.as_mut() {
                    *a = rotate(*a, c, sn) + t;
                }
                e.rest_angle += angle;
            }
            let rs = GraphState {
                displacements: s.displacements.iter().map(|v| rotate(*v, c, sn)).collect(),
                velocities: s.velocities.iter().map(|v| rotate(*v, c, sn)).collect(),
            };
            let rxi = physics_convolution(&rg, &rs).unwrap();
            for (a, b) in xi.iter().zip(&rxi) {
                prop_assert!((rotate(*a, c, sn) - b).norm() < 1e-9);
            }
        }

        #[test]
        fn blackbox_is_permutation_equivariant(seed in 0u64..1000, perm_seed in 0u64..1000) {
            let g = generate_sobol_array(8, seed % 7, &ParameterDistributions::sobol_array()).unwrap();
            let nominal = g.nominal_copy(200.0, 0.1);
            let scales = FeatureScales::from_nominal(&nominal, 1.0).unwrap();
            let mut m = PiggoModel::new(&small_arch(), nominal.clone(), scales, seed).unwrap();
            boosted(&mut m);
            let s = random_state(8, 0.05, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
            let f: Vec<Vec2> = (0..8).map(|_| Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let mut perm: Vec<usize> = (0..8).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            // node i of the original graph becomes node perm[i]
            let mut pg = nominal.clone();
            let mut ps = s.clone();
            let mut pf = f.clone();
            for i in 0..8 {
                pg.nodes[perm[i]] = nominal.nodes[i];
                ps.displacements[perm[i]] = s.displacements[i];
                ps.velocities[perm[i]] = s.velocities[i];
                pf[perm[i]] = f[i];
            }
            for e in &mut pg.edges {
                // relabel and also reverse every internal edge
                let (a, b) = (perm[e.a], perm[e.b]);
                if e.is_self_loop() {
                    e.a = a;
                    e.b = b;
                } else {
                    e.a = b;
                    e.b = a;
                    e.rest_angle = wrap_angle(e.rest_angle + std::f64::consts::PI);
                }
            }
            pg.edges.reverse();
            let xi = blackbox_convolution(&m, &nominal, &s, &f).unwrap();
            let pxi = blackbox_convolution(&m, &pg, &ps, &pf).unwrap();
            for i in 0..8 {
                prop_assert!((xi[i] - pxi[perm[i]]).norm() < 1e-10 * xi[i].norm().max(1.0));
            }
        }

        #[test]
        fn internal_forces_sum_to_zero(seed in 0u64..1000) {
            let g = generate_sobol_array(8, seed % 5, &ParameterDistributions::sobol_array()).unwrap();
            let mut internal = g.nominal_copy(200.0, 0.1);
            internal.edges.retain(|e| !e.is_self_loop());
            let scales = FeatureScales::from_nominal(&internal, 1.0).unwrap();
            let mut m = PiggoModel::new(&small_arch(), internal.clone(), scales, seed).unwrap();
            boosted(&mut m);
            let s = random_state(8, 0.05, seed);
            let f = vec![Vec2::new(0.4, 0.1); 8];
            let total: Vec2 = m.restoring_forces(&internal, &s, &f).unwrap().iter().sum();
            prop_assert!(total.norm() < 1e-10);
        }
    }
}
