use rand::Rng;

use crate::error::{Error, Result};

/// Negative-side slope of the LeakyReLU used by every hidden layer.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Affine map `y = W x + b`, weights stored row-major (`outputs x inputs`).
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.bias);
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs)) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

/// Multilayer perceptron: LeakyReLU after every layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNetwork {
    pub layers: Vec<Layer>,
    pub slope: f64,
}

/// Activations retained by [`DenseNetwork::forward_cached`] for the reverse pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradients mirroring every parameter array of a network, plus the gradient
/// with respect to the input when requested.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<Layer>,
    pub input: Option<Vec<f64>>,
}

impl GradientBundle {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        GradientBundle {
            layers: net.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect(),
            input: None,
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        self.input = None;
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

impl DenseNetwork {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        DenseNetwork {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            slope: LEAKY_SLOPE,
        }
    }

    /// Glorot-uniform weights `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for l in &mut net.layers {
            let a = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            for w in &mut l.weights {
                *w = rng.random_range(-a..a);
            }
        }
        net
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_size()];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::ShapeMismatch {
                expected: self.parameter_count(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_size() {
            return Err(Error::ShapeMismatch {
                expected: self.input_size(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut y = Vec::new();
        let last = self.layers.len() - 1;
        for (idx, l) in self.layers.iter().enumerate() {
            l.apply(&x, &mut y);
            if idx < last {
                y.iter_mut().for_each(|v| *v = leaky(*v, self.slope));
            }
            std::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for l in &self.layers {
            let mut y = Vec::with_capacity(l.outputs);
            l.apply(&x, &mut y);
            let next: Vec<f64> = y.iter().map(|&v| leaky(v, self.slope)).collect();
            cache.inputs.push(x);
            cache.pre.push(y);
            x = next;
        }
        Ok(cache)
    }

    /// Reverse pass for `upstream^T output`. Adds parameter gradients into
    /// `grads` (if given) and returns the gradient with respect to the input.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        mut grads: Option<&mut GradientBundle>,
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.output_size() {
            return Err(Error::ShapeMismatch {
                expected: self.output_size(),
                got: upstream.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut g = upstream.to_vec();
        for idx in (0..self.layers.len()).rev() {
            let l = &self.layers[idx];
            if idx < last {
                for (gv, &z) in g.iter_mut().zip(&cache.pre[idx]) {
                    if z <= 0.0 {
                        *gv *= self.slope;
                    }
                }
            }
            let x = &cache.inputs[idx];
            if let Some(gb) = grads.as_deref_mut() {
                let gl = &mut gb.layers[idx];
                for (o, &go) in g.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    gl.bias[o] += go;
                    let row = &mut gl.weights[o * l.inputs..(o + 1) * l.inputs];
                    for (w, &xv) in row.iter_mut().zip(x) {
                        *w += go * xv;
                    }
                }
            }
            let mut gin = vec![0.0; l.inputs];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                for (gi, &w) in gin.iter_mut().zip(row) {
                    *gi += go * w;
                }
            }
            g = gin;
        }
        Ok(g)
    }

    /// Gradients of `upstream^T forward(input)` with respect to every parameter
    /// and to the input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<GradientBundle> {
        let cache = self.forward_cached(input)?;
        let mut grads = GradientBundle::zeros_like(self);
        let gin = self.backward_cached(&cache, upstream, Some(&mut grads))?;
        grads.input = Some(gin);
        Ok(grads)
    }
}
