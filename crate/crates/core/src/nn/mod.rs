//! Multilayer perceptron classifier with hand-written gradients.
//!
//! Layers compute `z = x·W + b` with `W` stored as `in × out`. Hidden layers
//! use ReLU; the last layer emits raw logits.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use optim::{LrSchedule, SgdState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{softmax_unchecked, Matrix, TargetWeights};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S> {
    pub weights: Matrix<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Layer<S> {
    pub fn new(weights: Matrix<S>, bias: Vec<S>) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::invalid(format!(
                "bias length {} does not match layer width {}",
                bias.len(),
                weights.cols()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("bias entries must be finite"));
        }
        Ok(Self { weights, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }
}

/// Feed-forward classifier over `C` classes.
///
/// Equality compares architecture and parameters only.
#[derive(Debug, Clone)]
pub struct Mlp<S> {
    layers: Vec<Layer<S>>,
    activation: Activation,
    // Bumped on every parameter change so stale caches can be rejected.
    version: u64,
}

impl<S: PartialEq> PartialEq for Mlp<S> {
    fn eq(&self, other: &Self) -> bool {
        self.activation == other.activation && self.layers == other.layers
    }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    /// Input to each layer; `inputs[0]` is the feature batch.
    inputs: Vec<Matrix<S>>,
    logits: Matrix<S>,
    version: u64,
}

impl<S: Scalar> ForwardCache<S> {
    pub fn logits(&self) -> &Matrix<S> {
        &self.logits
    }

    pub fn batch_size(&self) -> usize {
        self.logits.rows()
    }
}

/// Per-layer parameter gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub layers: Vec<Layer<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(model: &Mlp<S>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Matrix::zeros(l.inputs(), l.outputs()),
                    bias: vec![S::zero(); l.outputs()],
                })
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<S> {
        flatten(&self.layers)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

fn flatten<S: Scalar>(layers: &[Layer<S>]) -> Vec<S> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weights.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out
}

impl<S: Scalar> Mlp<S> {
    pub fn new(layers: Vec<Layer<S>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::invalid(format!(
                    "layer dimensions do not chain: {} -> {}",
                    pair[0].outputs(),
                    pair[1].inputs()
                )));
            }
        }
        if layers.last().map_or(0, Layer::outputs) < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        Ok(Self {
            layers,
            activation: Activation::Relu,
            version: 0,
        })
    }

    /// He-uniform weights `U(±sqrt(6 / fan_in))`, zero biases.
    ///
    /// `dims` lists every width: `[input, hidden.., classes]`.
    pub fn he_uniform(dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut rng = rng_from_seed(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| S::lit(rng.random_range(-bound..bound)))
                    .collect();
                Layer {
                    weights: Matrix::from_vec(fan_in, fan_out, data).expect("finite init"),
                    bias: vec![S::zero(); fan_out],
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weights: Matrix::zeros(w[0], w[1]),
                bias: vec![S::zero(); w[1]],
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs()];
        dims.extend(self.layers.iter().map(Layer::outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.inputs() * l.outputs() + l.outputs()).sum()
    }

    pub fn flat_params(&self) -> Vec<S> {
        flatten(&self.layers)
    }

    /// Overwrites every parameter from a flat vector in [`Self::flat_params`] order.
    pub fn set_flat_params(&mut self, params: &[S]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let w = l.weights.as_mut_slice();
            let n = w.len();
            w.copy_from_slice(&params[offset..offset + n]);
            offset += n;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        self.version += 1;
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<S>] {
        self.version += 1;
        &mut self.layers
    }

    /// Forward pass for a single feature vector.
    pub fn forward(&self, x: &[S]) -> Result<(Vec<S>, ForwardCache<S>)> {
        let batch = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let cache = self.forward_batch(&batch)?;
        Ok((cache.logits.row(0).to_vec(), cache))
    }

    /// Forward pass over a batch (one sample per row).
    pub fn forward_batch(&self, x: &Matrix<S>) -> Result<ForwardCache<S>> {
        if x.cols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "feature dimension {} does not match network input {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.matmul(&layer.weights)?;
            for r in 0..z.rows() {
                for (v, &b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                    if i < last && *v < S::zero() {
                        *v = S::zero();
                    }
                }
            }
            inputs.push(std::mem::replace(&mut current, z));
        }
        Ok(ForwardCache {
            inputs,
            logits: current,
            version: self.version,
        })
    }

    /// Logits for a batch without keeping a cache.
    pub fn predict_logits(&self, x: &Matrix<S>) -> Result<Matrix<S>> {
        Ok(self.forward_batch(x)?.logits)
    }

    /// Backpropagates `dL/dlogits` through the network.
    pub fn backward(&self, cache: &ForwardCache<S>, logit_grad: &Matrix<S>) -> Result<Gradients<S>> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::InvalidState(
                "forward cache does not belong to the current parameters".into(),
            ));
        }
        if logit_grad.rows() != cache.logits.rows() || logit_grad.cols() != self.classes() {
            return Err(Error::invalid("logit gradient shape does not match the cache"));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = logit_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let weights = input.t_matmul(&delta)?;
            let mut bias = vec![S::zero(); layer.outputs()];
            for r in 0..delta.rows() {
                for (b, &d) in bias.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
            if i > 0 {
                let mut upstream = delta.matmul_t(&layer.weights)?;
                // ReLU mask: the stored input is the post-activation of layer i-1.
                for (u, &a) in upstream.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if a <= S::zero() {
                        *u = S::zero();
                    }
                }
                delta = upstream;
            }
            grads.push(Layer { weights, bias });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Gradient of the batch-mean soft-target cross-entropy
    /// `(1/N) Σ_i H(target_i, p_i)`, targets held constant.
    pub fn backward_soft_ce(&self, cache: &ForwardCache<S>, targets: &[TargetWeights<S>]) -> Result<Gradients<S>> {
        let n = cache.batch_size();
        if targets.len() != n {
            return Err(Error::invalid(format!("{} targets for a batch of {n}", targets.len())));
        }
        let scale = S::one() / S::count(n.max(1));
        let mut grad = Matrix::zeros(n, self.classes());
        for (i, t) in targets.iter().enumerate() {
            let g = soft_ce_logit_grad(cache.logits.row(i), t)?;
            for (o, v) in grad.row_mut(i).iter_mut().zip(g) {
                *o = v * scale;
            }
        }
        self.backward(cache, &grad)
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::invalid(format!("invalid layer dimensions {dims:?}")));
    }
    Ok(())
}

/// `d/dz H(target, softmax(z)) = softmax(z)·Σtarget − target`.
pub fn soft_ce_logit_grad<S: Scalar>(logits: &[S], target: &TargetWeights<S>) -> Result<Vec<S>> {
    if logits.len() != target.len() {
        return Err(Error::invalid("target and logits differ in length"));
    }
    let p = softmax_unchecked(logits);
    let mass = target.sum();
    Ok(p.iter()
        .zip(target.weights())
        .map(|(&pi, &ti)| pi * mass - ti)
        .collect())
}
