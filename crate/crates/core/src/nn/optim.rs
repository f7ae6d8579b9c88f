use serde::{Deserialize, Serialize};

use super::{Gradients, Mlp};
use crate::error::{Error, Result};
use crate::ndmath::Matrix;
use crate::scalar::Scalar;

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
///
/// ```text
/// v ← momentum·v + grad + weight_decay·param
/// param ← param − lr·v
/// ```
#[derive(Debug, Clone)]
pub struct SgdState<S> {
    lr: S,
    momentum: S,
    weight_decay: S,
    velocity: Vec<(Matrix<S>, Vec<S>)>,
}

impl<S: Scalar> SgdState<S> {
    pub fn new(model: &Mlp<S>, lr: S, momentum: S, weight_decay: S) -> Result<Self> {
        check_lr(lr)?;
        if !momentum.is_finite() || momentum < S::zero() || !weight_decay.is_finite() || weight_decay < S::zero() {
            return Err(Error::invalid(
                "momentum and weight decay must be finite and non-negative",
            ));
        }
        let velocity = model
            .layers()
            .iter()
            .map(|l| (Matrix::zeros(l.inputs(), l.outputs()), vec![S::zero(); l.outputs()]))
            .collect();
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            velocity,
        })
    }

    pub fn lr(&self) -> S {
        self.lr
    }

    pub fn set_lr(&mut self, lr: S) -> Result<()> {
        check_lr(lr)?;
        self.lr = lr;
        Ok(())
    }

    pub fn momentum(&self) -> S {
        self.momentum
    }

    pub fn weight_decay(&self) -> S {
        self.weight_decay
    }

    /// Applies one update to `model` in place.
    pub fn step(&mut self, model: &mut Mlp<S>, grads: &Gradients<S>) -> Result<()> {
        let shapes_match = grads.layers.len() == self.velocity.len()
            && model.layers().len() == self.velocity.len()
            && grads.layers.iter().zip(model.layers()).all(|(g, l)| {
                g.weights.rows() == l.inputs() && g.weights.cols() == l.outputs() && g.bias.len() == l.outputs()
            });
        if !shapes_match {
            return Err(Error::invalid("gradient shapes do not match the model"));
        }
        let (lr, mom, wd) = (self.lr, self.momentum, self.weight_decay);
        let update = |v: &mut [S], p: &mut [S], g: &[S]| {
            for ((vi, pi), &gi) in v.iter_mut().zip(p.iter_mut()).zip(g) {
                *vi = mom * *vi + gi + wd * *pi;
                *pi -= lr * *vi;
            }
        };
        for ((layer, grad), (vw, vb)) in model.layers_mut().iter_mut().zip(&grads.layers).zip(&mut self.velocity) {
            update(vw.as_mut_slice(), layer.weights.as_mut_slice(), grad.weights.as_slice());
            update(vb, &mut layer.bias, &grad.bias);
        }
        Ok(())
    }
}

fn check_lr<S: Scalar>(lr: S) -> Result<()> {
    if !lr.is_finite() || lr <= S::zero() {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    Ok(())
}

/// Step decay: `initial · factor^(#milestones ≤ epoch)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn new(initial: f64, milestones: Vec<usize>, factor: f64) -> Result<Self> {
        let s = Self {
            initial,
            milestones,
            factor,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial.is_finite() && self.initial > 0.0) {
            return Err(Error::invalid("initial learning rate must be positive"));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::invalid("decay factor must lie in (0, 1)"));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("milestones must be strictly increasing"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.initial * self.factor.powi(passed as i32)
    }
}
