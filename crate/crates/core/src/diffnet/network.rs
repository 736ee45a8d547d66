use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{GradientSet, LayerParams, Matrix, ParamSet, ParameterSnapshot};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

/// Dense affine map `y = act(W x + b)` with `W` stored out_dim x in_dim.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    params: LayerParams,
    activation: Activation,
    depth: usize,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Shape(format!(
                "bias has {} entries for {} outputs",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFiniteInput("bias".into()));
        }
        Ok(Self {
            params: LayerParams { weights, bias },
            activation,
            depth: 0,
        })
    }

    pub fn weights(&self) -> &Matrix {
        &self.params.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.params.bias
    }

    pub fn params(&self) -> &LayerParams {
        &self.params
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn in_dim(&self) -> usize {
        self.params.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.params.weights.rows()
    }

    /// Returns the pre-activation and the activation for `input`.
    fn affine(&self, input: &Matrix) -> (Matrix, Matrix) {
        let (batch, out_dim) = (input.rows(), self.out_dim());
        let w = self.params.weights.as_slice();
        let in_dim = self.in_dim();
        let mut pre = Vec::with_capacity(batch * out_dim);
        for x in input.row_iter() {
            for (o, b) in self.params.bias.iter().enumerate() {
                let wr = &w[o * in_dim..(o + 1) * in_dim];
                pre.push(b + wr.iter().zip(x).map(|(a, v)| a * v).sum::<f64>());
            }
        }
        let post = pre.iter().map(|&z| self.activation.apply(z)).collect();
        (
            Matrix::from_raw(batch, out_dim, pre),
            Matrix::from_raw(batch, out_dim, post),
        )
    }
}

/// Cached per-layer inputs and pre-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

impl Trace {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

/// Ordered stack of dense layers; depth 0 is nearest the input and the last
/// layer emits logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    class_count: usize,
}

impl Network {
    pub fn new(mut layers: Vec<Layer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::Shape("network needs at least one layer".into()))?;
        if last.activation != Activation::Identity {
            return Err(Error::Shape("output layer must use the identity activation".into()));
        }
        let class_count = last.out_dim();
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        for (depth, layer) in layers.iter_mut().enumerate() {
            layer.depth = depth;
        }
        Ok(Self { layers, class_count })
    }

    /// He-initialized network: relu hidden layers, identity output, zero bias.
    /// `dims` lists the input width followed by every layer's output width.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {dims:?}")));
        }
        let depth = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, d)| {
                let (in_dim, out_dim) = (d[0], d[1]);
                let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt())
                    .map_err(|e| Error::Config(e.to_string()))?;
                let data = (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect();
                let act = if k + 1 == depth {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Layer::new(Matrix::new(out_dim, in_dim, data)?, vec![0.0; out_dim], act)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.len()).sum()
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.rows() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        if !batch.is_finite() {
            return Err(Error::NonFiniteInput("batch features".into()));
        }
        Ok(())
    }

    /// Logits plus the activations needed by [`Network::backward`].
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, Trace)> {
        self.check_batch(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for layer in &self.layers {
            let (pre, post) = layer.affine(&current);
            inputs.push(current);
            pre_activations.push(pre);
            current = post;
        }
        if !current.is_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok((
            current,
            Trace {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Logits only.
    pub fn logits(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_batch(batch)?;
        let mut current = batch.clone();
        for layer in &self.layers {
            current = layer.affine(&current).1;
        }
        if !current.is_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(current)
    }

    /// Gradient of a scalar loss with respect to every weight and bias, given
    /// the loss gradient with respect to the logits.
    pub fn backward(&self, trace: &Trace, upstream: &Matrix) -> Result<GradientSet> {
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::Shape("trace depth does not match network".into()));
        }
        if upstream.shape() != (trace.batch_size(), self.class_count) {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, expected {:?}",
                upstream.shape(),
                (trace.batch_size(), self.class_count)
            )));
        }
        let mut grads: Vec<LayerParams> = Vec::with_capacity(self.layers.len());
        let mut delta = upstream.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[k];
            let pre = &trace.pre_activations[k];
            if input.cols() != layer.in_dim() || pre.shape() != delta.shape() {
                return Err(Error::Shape(format!("trace does not match layer {k}")));
            }
            if layer.activation == Activation::Relu {
                for (d, z) in delta.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let (in_dim, out_dim) = (layer.in_dim(), layer.out_dim());
            let mut gw = vec![0.0; out_dim * in_dim];
            let mut gb = vec![0.0; out_dim];
            for (d_row, x_row) in delta.row_iter().zip(input.row_iter()) {
                for (o, d) in d_row.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, x) in gw[o * in_dim..(o + 1) * in_dim].iter_mut().zip(x_row) {
                        *g += d * x;
                    }
                }
            }
            if k > 0 {
                let w = layer.params.weights.as_slice();
                let mut prev = vec![0.0; delta.rows() * in_dim];
                for (d_row, p_row) in delta.row_iter().zip(prev.chunks_exact_mut(in_dim)) {
                    for (o, d) in d_row.iter().enumerate() {
                        if *d == 0.0 {
                            continue;
                        }
                        for (p, wv) in p_row.iter_mut().zip(&w[o * in_dim..(o + 1) * in_dim]) {
                            *p += d * wv;
                        }
                    }
                }
                delta = Matrix::from_raw(delta.rows(), in_dim, prev);
            }
            grads.push(LayerParams {
                weights: Matrix::from_raw(out_dim, in_dim, gw),
                bias: gb,
            });
        }
        grads.reverse();
        let grads = ParamSet::new(grads);
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        Ok(grads)
    }

    /// Plain gradient descent, `theta <- theta - lr * g`. Refuses non-finite
    /// gradients and leaves the network untouched in that case.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        let snapshot = self.snapshot();
        snapshot.check_congruent(grads, "sgd_step")?;
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient in update".into()));
        }
        for (layer, g) in self.layers.iter_mut().zip(grads.layers()) {
            for (p, d) in layer.params.iter_mut().zip(g.iter()) {
                *p -= lr * d;
            }
        }
        Ok(())
    }

    pub fn snapshot(&self) -> ParameterSnapshot {
        ParamSet::new(self.layers.iter().map(|l| l.params.clone()).collect())
    }

    /// Copies the listed layers from `snapshot`; other layers are untouched.
    pub fn restore_layers(&mut self, snapshot: &ParameterSnapshot, indices: &[usize]) -> Result<()> {
        let len = self.layers.len();
        if let Some(&index) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::Index { index, len });
        }
        if snapshot.layer_count() != len {
            return Err(Error::Shape("snapshot depth does not match network".into()));
        }
        for &i in indices {
            let src = snapshot.layer(i);
            let dst = &self.layers[i].params;
            if src.weights.shape() != dst.weights.shape() || src.bias.len() != dst.bias.len() {
                return Err(Error::Shape(format!("snapshot layer {i} shape differs")));
            }
            if !src.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteInput(format!("snapshot layer {i}")));
            }
        }
        for &i in indices {
            self.layers[i].params = snapshot.layer(i).clone();
        }
        Ok(())
    }

    /// Replaces every parameter with `snapshot`.
    pub fn load(&mut self, snapshot: &ParameterSnapshot) -> Result<()> {
        let all: Vec<usize> = (0..self.layers.len()).collect();
        self.restore_layers(snapshot, &all)
    }
}
