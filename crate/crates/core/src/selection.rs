//! Confident-knowledge selection. A peer prediction `p` is distilled iff
//! `H(p) < χ`, with the threshold scheduled per epoch as
//!
//! ```text
//! χ(t) = ln C / η · 2·h(t/Γ − 0.5, b2)
//! ```
//!
//! `Zero` and `All` are explicit modes for the degenerate cases: `χ = 0`
//! selects nothing and `χ = +∞` selects everything.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{entropy, uniform_entropy, ProbDist};
use crate::scalar::Scalar;
use crate::selfkd::logistic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Zero,
    All,
    Static,
    Progressive,
}

impl SelectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::Zero => "zero",
            SelectionMode::All => "all",
            SelectionMode::Static => "static",
            SelectionMode::Progressive => "progressive",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "all" => Ok(Self::All),
            "static" => Ok(Self::Static),
            "progressive" => Ok(Self::Progressive),
            other => Err(Error::invalid(format!("unknown selection mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionPolicy<S> {
    mode: SelectionMode,
    eta: S,
    b2: S,
    total_epochs: usize,
    classes: usize,
}

impl<S: Scalar> SelectionPolicy<S> {
    /// Validating constructor. `eta` and `b2` are ignored by `Zero`/`All`;
    /// `Static` forces `b2 = 0`.
    pub fn new(mode: SelectionMode, eta: S, b2: S, total_epochs: usize, classes: usize) -> Result<Self> {
        if total_epochs == 0 {
            return Err(Error::invalid("selection needs at least one epoch"));
        }
        uniform_entropy::<S>(classes)?;
        let needs_eta = matches!(mode, SelectionMode::Static | SelectionMode::Progressive);
        if needs_eta && !(eta.is_finite() && eta > S::zero()) {
            return Err(Error::invalid(format!("eta must be positive, got {eta}")));
        }
        if !b2.is_finite() {
            return Err(Error::invalid("b2 must be finite"));
        }
        let b2 = if mode == SelectionMode::Progressive {
            b2
        } else {
            S::zero()
        };
        Ok(Self {
            mode,
            eta: if needs_eta { eta } else { S::one() },
            b2,
            total_epochs,
            classes,
        })
    }

    pub fn zero(total_epochs: usize, classes: usize) -> Result<Self> {
        Self::new(SelectionMode::Zero, S::one(), S::zero(), total_epochs, classes)
    }

    pub fn all(total_epochs: usize, classes: usize) -> Result<Self> {
        Self::new(SelectionMode::All, S::one(), S::zero(), total_epochs, classes)
    }

    pub fn fixed(eta: S, total_epochs: usize, classes: usize) -> Result<Self> {
        Self::new(SelectionMode::Static, eta, S::zero(), total_epochs, classes)
    }

    pub fn progressive(eta: S, b2: S, total_epochs: usize, classes: usize) -> Result<Self> {
        Self::new(SelectionMode::Progressive, eta, b2, total_epochs, classes)
    }

    pub fn mode(&self) -> SelectionMode {
        self.mode
    }

    pub fn eta(&self) -> S {
        self.eta
    }

    pub fn b2(&self) -> S {
        self.b2
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// χ at epoch `t` (`0 ≤ t ≤ Γ`), constant within the epoch.
    pub fn threshold(&self, epoch: usize) -> Result<S> {
        if epoch > self.total_epochs {
            return Err(Error::invalid(format!(
                "epoch {epoch} beyond total {}",
                self.total_epochs
            )));
        }
        let base = || -> Result<S> { Ok(uniform_entropy::<S>(self.classes)? / self.eta) };
        Ok(match self.mode {
            SelectionMode::Zero => S::zero(),
            SelectionMode::All => S::infinity(),
            SelectionMode::Static => base()?,
            SelectionMode::Progressive => {
                let progress = S::count(epoch) / S::count(self.total_epochs) - S::lit(0.5);
                base()? * S::lit(2.0) * logistic(progress, self.b2)
            }
        })
    }
}

/// `H(p) < χ`, strictly.
pub fn is_confident<S: Scalar>(p: &ProbDist<S>, chi: S) -> bool {
    entropy(p) < chi
}

/// Indices whose prediction is confident under `chi`, in order.
pub fn select_batch<S: Scalar>(preds: &[ProbDist<S>], chi: S) -> Vec<usize> {
    preds
        .iter()
        .enumerate()
        .filter(|(_, p)| is_confident(p, chi))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::softmax;
    use proptest::prelude::*;

    #[test]
    #[allow(clippy::approx_constant)]
    fn static_threshold_is_ln_c_over_eta() {
        let p = SelectionPolicy::<f64>::fixed(2.0, 100, 100).unwrap();
        assert!((p.threshold(0).unwrap() - 2.302_585).abs() < 1e-6);
        assert_eq!(p.threshold(0).unwrap(), p.threshold(100).unwrap());
    }

    #[test]
    fn eta_one_admits_every_distribution() {
        let p = SelectionPolicy::<f64>::fixed(1.0, 10, 4).unwrap();
        let chi = p.threshold(3).unwrap();
        let nearly_uniform = ProbDist::new(vec![0.2501, 0.2499, 0.25, 0.25]).unwrap();
        assert!(is_confident(&nearly_uniform, chi));
    }

    #[test]
    fn progressive_midpoint_and_flat_gain() {
        let mid = SelectionPolicy::<f64>::progressive(3.0, -7.0, 100, 10).unwrap();
        let expected = 10f64.ln() / 3.0;
        assert!((mid.threshold(50).unwrap() - expected).abs() < 1e-12);
        let flat = SelectionPolicy::<f64>::progressive(3.0, 0.0, 100, 10).unwrap();
        for t in 0..=100 {
            assert!((flat.threshold(t).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_modes() {
        let zero = SelectionPolicy::<f64>::zero(5, 3).unwrap();
        let all = SelectionPolicy::<f64>::all(5, 3).unwrap();
        assert_eq!(zero.threshold(2).unwrap(), 0.0);
        assert!(all.threshold(2).unwrap().is_infinite());
        let oh = ProbDist::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(!is_confident(&oh, 0.0));
        assert_eq!(select_batch(&[oh.clone(), oh], f64::INFINITY), vec![0, 1]);
    }

    #[test]
    fn validation() {
        assert!(SelectionPolicy::<f64>::fixed(0.0, 10, 3).is_err());
        assert!(SelectionPolicy::<f64>::progressive(-1.0, 1.0, 10, 3).is_err());
        assert!(SelectionPolicy::<f64>::fixed(2.0, 0, 3).is_err());
        assert!(SelectionPolicy::<f64>::fixed(2.0, 10, 1).is_err());
        let p = SelectionPolicy::<f64>::fixed(2.0, 10, 3).unwrap();
        assert!(p.threshold(11).is_err());
        let s = SelectionPolicy::<f64>::new(SelectionMode::Static, 2.0, 5.0, 10, 3).unwrap();
        assert_eq!(s.b2(), 0.0);
    }

    #[test]
    fn confidence_examples() {
        let chi = 4f64.ln() / 2.0;
        assert!(is_confident(&ProbDist::new(vec![0.0, 1.0, 0.0, 0.0]).unwrap(), chi));
        assert!(!is_confident(&ProbDist::<f64>::uniform(4).unwrap(), chi));
        let batch = vec![ProbDist::<f64>::uniform(4).unwrap(); 3];
        assert!(select_batch(&batch, chi).is_empty());
    }

    fn dist(c: usize) -> impl Strategy<Value = ProbDist<f64>> {
        prop::collection::vec(-6.0f64..6.0, c).prop_map(|z| softmax(&z).unwrap())
    }

    proptest! {
        #[test]
        fn larger_eta_is_stricter(e1 in 0.1f64..10.0, e2 in 0.1f64..10.0, b2 in -10.0f64..10.0, t in 0usize..=40) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let a = SelectionPolicy::progressive(lo, b2, 40, 10).unwrap().threshold(t).unwrap();
            let b = SelectionPolicy::progressive(hi, b2, 40, 10).unwrap().threshold(t).unwrap();
            prop_assert!(a >= b);
        }

        #[test]
        fn selected_set_grows_with_chi(preds in prop::collection::vec(dist(5), 0..30), c1 in 0.0f64..2.0, c2 in 0.0f64..2.0) {
            let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            let small = select_batch(&preds, lo);
            let big = select_batch(&preds, hi);
            prop_assert!(small.iter().all(|i| big.contains(i)));
        }
    }
}
