//! Self label correction: each model refines its own annotated label by
//! mixing in its prediction (or the uniform distribution) with a self-trust
//! weight `ε`, then trains on the refined target.
//!
//! | method    | refined target        | ε                                   |
//! |-----------|-----------------------|-------------------------------------|
//! | CE        | `q`                   | 0                                   |
//! | LS        | `(1−ε)q + εu`         | fixed                               |
//! | CP        | `(1−ε)q − εp`         | fixed                               |
//! | Boot-soft | `(1−ε)q + εp`         | fixed                               |
//! | ProSelfLC | `(1−ε)q + εp`         | `h(t/Γ − 0.5, b1) · l(p)`           |
//! | MyLC      | `(1−ε)q + εp`         | `h(r − ρ, b1) · l(p)`, `r` from batch |
//!
//! Refined targets are constants for the backward pass.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::{one_hot, sample_confidence, HardLabel};
use crate::ndmath::{cross_entropy, entropy, uniform_entropy, ProbDist, TargetWeights};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Ce,
    Ls,
    Cp,
    #[serde(alias = "boot_soft")]
    BootSoft,
    #[serde(alias = "proself_lc")]
    ProSelfLc,
    #[serde(alias = "my_lc")]
    MyLc,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ce,
        Method::Ls,
        Method::Cp,
        Method::BootSoft,
        Method::ProSelfLc,
        Method::MyLc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ce => "ce",
            Method::Ls => "ls",
            Method::Cp => "cp",
            Method::BootSoft => "bootsoft",
            Method::ProSelfLc => "proselflc",
            Method::MyLc => "mylc",
        }
    }

    pub fn uses_fixed_epsilon(self) -> bool {
        matches!(self, Method::Ls | Method::Cp | Method::BootSoft)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown self-KD method `{s}`")))
    }
}

/// Self-trust configuration for one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustParams<S> {
    pub method: Method,
    /// Fixed ε for LS / CP / Boot-soft.
    pub epsilon: S,
    /// Logistic gain for ProSelfLC's time trust and MyLC's global trust.
    pub b1: S,
    /// Certainty midpoint for MyLC.
    pub rho: S,
}

impl<S: Scalar> TrustParams<S> {
    pub fn new(method: Method, epsilon: S, b1: S, rho: S) -> Result<Self> {
        if !(epsilon >= S::zero() && epsilon <= S::one()) {
            return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1]")));
        }
        if !(rho > S::zero() && rho < S::one()) {
            return Err(Error::invalid(format!("rho {rho} outside (0, 1)")));
        }
        if !b1.is_finite() {
            return Err(Error::invalid("b1 must be finite"));
        }
        Ok(Self {
            method,
            epsilon,
            b1,
            rho,
        })
    }

    pub fn ce() -> Self {
        Self {
            method: Method::Ce,
            epsilon: S::zero(),
            b1: S::zero(),
            rho: S::lit(0.5),
        }
    }
}

/// Position in training, used by time-dependent schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochContext {
    pub epoch: usize,
    pub total: usize,
}

impl EpochContext {
    pub fn new(epoch: usize, total: usize) -> Result<Self> {
        if total == 0 {
            return Err(Error::invalid("total epochs must be positive"));
        }
        Ok(Self { epoch, total })
    }

    pub(crate) fn progress<S: Scalar>(self) -> S {
        S::count(self.epoch) / S::count(self.total)
    }
}

/// Model-level certainty `r` and the trust weight `g = h(r − ρ, b1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalConfidence<S> {
    pub certainty: S,
    pub trust: S,
}

/// `h(λ, b) = 1 / (1 + exp(−λ·b))`.
pub fn logistic<S: Scalar>(lambda: S, b: S) -> S {
    S::one() / (S::one() + (-(lambda * b)).exp())
}

/// `r = 1 − Σ H(p_i) / (n · ln C)`, clamped to `[0, 1]`.
pub fn model_certainty<S: Scalar>(preds: &[ProbDist<S>], classes: usize) -> Result<S> {
    if preds.is_empty() {
        return Err(Error::invalid("model certainty of an empty prediction set"));
    }
    if preds.iter().any(|p| p.len() != classes) {
        return Err(Error::invalid("prediction length does not match class count"));
    }
    let total: S = preds.iter().map(entropy).sum();
    let r = S::one() - total / (S::count(preds.len()) * uniform_entropy::<S>(classes)?);
    Ok(r.max(S::zero()).min(S::one()))
}

pub fn global_confidence<S: Scalar>(
    preds: &[ProbDist<S>],
    classes: usize,
    params: &TrustParams<S>,
) -> Result<GlobalConfidence<S>> {
    let certainty = model_certainty(preds, classes)?;
    Ok(GlobalConfidence {
        certainty,
        trust: logistic(certainty - params.rho, params.b1),
    })
}

/// `ε = g · l(p)`.
pub fn my_lc_epsilon<S: Scalar>(p: &ProbDist<S>, g: S) -> S {
    g * sample_confidence(p)
}

/// Builds the refined target for `method` from annotation `q`, prediction `p`
/// and self-trust `ε`.
pub fn refine_label<S: Scalar>(method: Method, q: &ProbDist<S>, p: &ProbDist<S>, eps: S) -> Result<TargetWeights<S>> {
    if !(eps >= S::zero() && eps <= S::one()) {
        return Err(Error::invalid(format!("epsilon {eps} outside [0, 1]")));
    }
    if q.len() != p.len() {
        return Err(Error::invalid("annotation and prediction differ in length"));
    }
    let keep = S::one() - eps;
    let mix = |f: &dyn Fn(S, S) -> S| {
        TargetWeights::from_raw(q.probs().iter().zip(p.probs()).map(|(&qi, &pi)| f(qi, pi)).collect())
    };
    Ok(match method {
        Method::Ce => q.to_target(),
        Method::Ls => {
            let u = S::one() / S::count(q.len());
            mix(&|qi, _| keep * qi + eps * u)
        }
        Method::Cp => mix(&|qi, pi| keep * qi - eps * pi),
        Method::BootSoft | Method::ProSelfLc | Method::MyLc => mix(&|qi, pi| keep * qi + eps * pi),
    })
}

/// Result of one self-KD evaluation on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfKdOutput<S> {
    pub loss: S,
    pub refined: TargetWeights<S>,
    pub epsilon: S,
}

/// Self-trust for one sample given the batch's global trust (MyLC only).
fn resolve_epsilon<S: Scalar>(
    params: &TrustParams<S>,
    p: &ProbDist<S>,
    ctx: EpochContext,
    batch_trust: Option<S>,
) -> S {
    let eps = match params.method {
        Method::Ce => S::zero(),
        Method::Ls | Method::Cp | Method::BootSoft => params.epsilon,
        Method::ProSelfLc => logistic(ctx.progress::<S>() - S::lit(0.5), params.b1) * sample_confidence(p),
        Method::MyLc => my_lc_epsilon(p, batch_trust.unwrap_or_else(S::zero)),
    };
    eps.max(S::zero()).min(S::one())
}

/// Self-KD loss `H(q̃, p)` for one sample; `batch_preds` supplies MyLC's
/// global certainty estimate.
pub fn self_kd_loss<S: Scalar>(
    params: &TrustParams<S>,
    q: &ProbDist<S>,
    p: &ProbDist<S>,
    ctx: EpochContext,
    batch_preds: &[ProbDist<S>],
) -> Result<SelfKdOutput<S>> {
    if ctx.total == 0 {
        return Err(Error::invalid("total epochs must be positive"));
    }
    let trust = match params.method {
        Method::MyLc => Some(global_confidence(batch_preds, p.len(), params)?.trust),
        _ => None,
    };
    let epsilon = resolve_epsilon(params, p, ctx, trust);
    let refined = refine_label(params.method, q, p, epsilon)?;
    let loss = cross_entropy(&refined, p)?;
    Ok(SelfKdOutput { loss, refined, epsilon })
}

/// [`self_kd_loss`] for every sample of a batch, sharing one global-trust
/// estimate.
pub fn self_kd_batch<S: Scalar>(
    params: &TrustParams<S>,
    labels: &[HardLabel],
    preds: &[ProbDist<S>],
    ctx: EpochContext,
) -> Result<Vec<SelfKdOutput<S>>> {
    if ctx.total == 0 {
        return Err(Error::invalid("total epochs must be positive"));
    }
    if labels.len() != preds.len() {
        return Err(Error::invalid("labels and predictions differ in length"));
    }
    let Some(classes) = preds.first().map(ProbDist::len) else {
        return Ok(Vec::new());
    };
    let trust = match params.method {
        Method::MyLc => Some(global_confidence(preds, classes, params)?.trust),
        _ => None,
    };
    labels
        .iter()
        .zip(preds)
        .map(|(&y, p)| {
            let q = one_hot(y, classes)?;
            let epsilon = resolve_epsilon(params, p, ctx, trust);
            let refined = refine_label(params.method, &q, p, epsilon)?;
            let loss = cross_entropy(&refined, p)?;
            Ok(SelfKdOutput { loss, refined, epsilon })
        })
        .collect()
}
