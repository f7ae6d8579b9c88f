//! Two-model distillation.
//!
//! Every objective here is a batch-mean soft-target cross-entropy per model,
//! so each one reduces to a per-sample target `T_i` whose logit gradient is
//! `p_i·ΣT_i − T_i`. Objectives are computed from predictions alone
//! (`*_objective`), then the steppers run forward passes, build targets and
//! apply SGD. Peer knowledge is always a constant.
//!
//! CMD: model A trains on
//!
//! ```text
//! L_A = (1/N) Σ_i [ H(q̃_A,i, p_A,i) + 1{H(p_B,i) < χ} · H(q̃_B,i, p_A,i) ]
//! ```
//!
//! and model B symmetrically. Sync/Async MKD and teacher-to-student KD mix
//! the (refined) label with a KL term toward the peer:
//! `(1−ε)·H(q̃, p) + ε·KL(p_peer, p)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::HardLabel;
use crate::ndmath::{cross_entropy, entropy, kl_divergence, softmax_unchecked, Matrix, ProbDist, TargetWeights};
use crate::nn::{ForwardCache, Mlp, SgdState};
use crate::scalar::Scalar;
use crate::selection::SelectionPolicy;
use crate::selfkd::{self_kd_batch, EpochContext, TrustParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlgoKind {
    #[default]
    Cmd,
    SyncMkd,
    AsyncMkd,
    T2s,
    Independent,
}

impl AlgoKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgoKind::Cmd => "cmd",
            AlgoKind::SyncMkd => "sync_mkd",
            AlgoKind::AsyncMkd => "async_mkd",
            AlgoKind::T2s => "t2s",
            AlgoKind::Independent => "independent",
        }
    }
}

impl fmt::Display for AlgoKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlgoKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            AlgoKind::Cmd,
            AlgoKind::SyncMkd,
            AlgoKind::AsyncMkd,
            AlgoKind::T2s,
            AlgoKind::Independent,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::invalid(format!("unknown algorithm `{s}`")))
    }
}

/// What a CMD model distills into its peer when it is confident.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Knowledge {
    /// The model's self-KD refined label `q̃`.
    #[default]
    Refined,
    /// The model's raw prediction `p`.
    Prediction,
}

impl Knowledge {
    pub fn as_str(self) -> &'static str {
        match self {
            Knowledge::Refined => "refined",
            Knowledge::Prediction => "prediction",
        }
    }
}

impl fmt::Display for Knowledge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Knowledge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "refined" => Ok(Knowledge::Refined),
            "prediction" => Ok(Knowledge::Prediction),
            other => Err(Error::invalid(format!("unknown knowledge source `{other}`"))),
        }
    }
}

/// Two-model training algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MkdAlgo<S> {
    pub kind: AlgoKind,
    /// Mixing weight for Sync/Async MKD and T2S.
    pub mkd_epsilon: S,
    /// Used by CMD only.
    pub selection: SelectionPolicy<S>,
    /// Used by CMD only.
    pub knowledge: Knowledge,
}

impl<S: Scalar> MkdAlgo<S> {
    pub fn new(kind: AlgoKind, mkd_epsilon: S, selection: SelectionPolicy<S>) -> Result<Self> {
        check_unit(mkd_epsilon, "mkd epsilon")?;
        Ok(Self {
            kind,
            mkd_epsilon,
            selection,
            knowledge: Knowledge::Refined,
        })
    }
}

fn check_unit<S: Scalar>(v: S, what: &str) -> Result<()> {
    if !(v >= S::zero() && v <= S::one()) {
        return Err(Error::invalid(format!("{what} {v} outside [0, 1]")));
    }
    Ok(())
}

/// Losses and selection counts for one two-model batch.
///
/// Losses are batch means. `count_a2b` counts samples where A's knowledge was
/// distilled into B, i.e. where A was confident.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistillBatchResult<S> {
    pub batch_size: usize,
    pub loss_a: S,
    pub loss_b: S,
    pub self_a: S,
    pub self_b: S,
    pub distill_a: S,
    pub distill_b: S,
    pub count_a2b: usize,
    pub count_b2a: usize,
    /// Sum of per-sample self-trust ε over the batch.
    pub eps_sum_a: S,
    pub eps_sum_b: S,
    pub updated_a: bool,
    pub updated_b: bool,
}

/// Per-sample training targets for both models plus the reported losses.
#[derive(Debug, Clone)]
pub struct PairObjective<S> {
    pub targets_a: Vec<TargetWeights<S>>,
    pub targets_b: Vec<TargetWeights<S>>,
    pub result: DistillBatchResult<S>,
}

/// Model, optimizer and self-KD configuration of one peer.
#[derive(Debug, Clone)]
pub struct Learner<S> {
    pub model: Mlp<S>,
    pub sgd: SgdState<S>,
    pub trust: TrustParams<S>,
}

impl<S: Scalar> Learner<S> {
    pub fn new(model: Mlp<S>, sgd: SgdState<S>, trust: TrustParams<S>) -> Self {
        Self { model, sgd, trust }
    }
}

/// Features and (noisy) training labels of one mini-batch.
#[derive(Debug, Clone)]
pub struct Batch<S> {
    pub features: Matrix<S>,
    pub labels: Vec<HardLabel>,
}

impl<S: Scalar> Batch<S> {
    pub fn new(features: Matrix<S>, labels: Vec<HardLabel>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::invalid("batch features and labels differ in length"));
        }
        if labels.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `(1/N) Σ_{i : H_src,i < χ} H(q̃_src,i, p_dst,i)` and the selected count.
pub fn cmd_direction_loss<S: Scalar>(
    refined_src: &[TargetWeights<S>],
    p_dst: &[ProbDist<S>],
    h_src: &[S],
    chi: S,
) -> Result<(S, usize)> {
    let n = refined_src.len();
    if p_dst.len() != n || h_src.len() != n {
        return Err(Error::invalid("direction loss inputs differ in length"));
    }
    if n == 0 {
        return Ok((S::zero(), 0));
    }
    let mut total = S::zero();
    let mut count = 0;
    for ((t, p), &h) in refined_src.iter().zip(p_dst).zip(h_src) {
        if h < chi {
            total += cross_entropy(t, p)?;
            count += 1;
        }
    }
    Ok((total / S::count(n), count))
}

fn mean<S: Scalar>(values: impl Iterator<Item = S>, n: usize) -> S {
    values.fold(S::zero(), |a, b| a + b) / S::count(n.max(1))
}

fn check_pair<S: Scalar>(preds_a: &[ProbDist<S>], preds_b: &[ProbDist<S>], labels: &[HardLabel]) -> Result<()> {
    if preds_a.len() != labels.len() || preds_b.len() != labels.len() {
        return Err(Error::invalid("predictions and labels differ in length"));
    }
    if let (Some(a), Some(b)) = (preds_a.first(), preds_b.first()) {
        if a.len() != b.len() {
            return Err(Error::invalid(format!(
                "class-count mismatch between models: {} vs {}",
                a.len(),
                b.len()
            )));
        }
    }
    Ok(())
}

/// CMD objective for both models at threshold `chi`.
#[allow(clippy::too_many_arguments)]
pub fn cmd_objective<S: Scalar>(
    preds_a: &[ProbDist<S>],
    preds_b: &[ProbDist<S>],
    labels: &[HardLabel],
    trust_a: &TrustParams<S>,
    trust_b: &TrustParams<S>,
    chi: S,
    knowledge: Knowledge,
    ctx: EpochContext,
) -> Result<PairObjective<S>> {
    check_pair(preds_a, preds_b, labels)?;
    let n = labels.len();
    let self_a = self_kd_batch(trust_a, labels, preds_a, ctx)?;
    let self_b = self_kd_batch(trust_b, labels, preds_b, ctx)?;
    let refined_a: Vec<_> = self_a.iter().map(|o| o.refined.clone()).collect();
    let refined_b: Vec<_> = self_b.iter().map(|o| o.refined.clone()).collect();
    let h_a: Vec<S> = preds_a.iter().map(entropy).collect();
    let h_b: Vec<S> = preds_b.iter().map(entropy).collect();

    let (know_a, know_b) = match knowledge {
        Knowledge::Refined => (refined_a.clone(), refined_b.clone()),
        Knowledge::Prediction => (
            preds_a.iter().map(|p| p.to_target()).collect(),
            preds_b.iter().map(|p| p.to_target()).collect(),
        ),
    };

    let (distill_a, count_b2a) = cmd_direction_loss(&know_b, preds_a, &h_b, chi)?;
    let (distill_b, count_a2b) = cmd_direction_loss(&know_a, preds_b, &h_a, chi)?;

    let combine = |own: &[TargetWeights<S>], peer: &[TargetWeights<S>], peer_h: &[S]| -> Result<Vec<_>> {
        own.iter()
            .zip(peer)
            .zip(peer_h)
            .map(|((o, p), &h)| {
                if h < chi {
                    o.add_scaled(p, S::one())
                } else {
                    Ok(o.clone())
                }
            })
            .collect()
    };
    let targets_a = combine(&refined_a, &know_b, &h_b)?;
    let targets_b = combine(&refined_b, &know_a, &h_a)?;

    let self_loss_a = mean(self_a.iter().map(|o| o.loss), n);
    let self_loss_b = mean(self_b.iter().map(|o| o.loss), n);
    Ok(PairObjective {
        targets_a,
        targets_b,
        result: DistillBatchResult {
            batch_size: n,
            loss_a: self_loss_a + distill_a,
            loss_b: self_loss_b + distill_b,
            self_a: self_loss_a,
            self_b: self_loss_b,
            distill_a,
            distill_b,
            count_a2b,
            count_b2a,
            eps_sum_a: self_a.iter().map(|o| o.epsilon).sum(),
            eps_sum_b: self_b.iter().map(|o| o.epsilon).sum(),
            updated_a: true,
            updated_b: true,
        },
    })
}

/// One direction of KL-based distillation: targets and loss components for
/// the student `(1−ε)·H(q̃, p) + ε·KL(p_peer, p)`.
struct KlDirection<S> {
    targets: Vec<TargetWeights<S>>,
    self_loss: S,
    distill_loss: S,
    eps_sum: S,
}

fn kl_direction<S: Scalar>(
    preds: &[ProbDist<S>],
    peer: &[ProbDist<S>],
    labels: &[HardLabel],
    trust: &TrustParams<S>,
    eps: S,
    ctx: EpochContext,
) -> Result<KlDirection<S>> {
    let n = labels.len();
    let own = self_kd_batch(trust, labels, preds, ctx)?;
    let keep = S::one() - eps;
    let mut targets = Vec::with_capacity(n);
    let mut self_total = S::zero();
    let mut distill_total = S::zero();
    for ((o, p), pt) in own.iter().zip(preds).zip(peer) {
        self_total += keep * cross_entropy(&o.refined, p)?;
        distill_total += eps * kl_divergence(pt, p)?;
        let t: Vec<S> = o
            .refined
            .weights()
            .iter()
            .zip(pt.probs())
            .map(|(&q, &t)| keep * q + eps * t)
            .collect();
        targets.push(TargetWeights::from_raw(t));
    }
    Ok(KlDirection {
        targets,
        self_loss: self_total / S::count(n.max(1)),
        distill_loss: distill_total / S::count(n.max(1)),
        eps_sum: own.iter().map(|o| o.epsilon).sum(),
    })
}

/// Synchronous MKD objective: both models mix their label with a KL term
/// toward the other's prediction.
pub fn sync_mkd_objective<S: Scalar>(
    preds_a: &[ProbDist<S>],
    preds_b: &[ProbDist<S>],
    labels: &[HardLabel],
    trust_a: &TrustParams<S>,
    trust_b: &TrustParams<S>,
    eps: S,
    ctx: EpochContext,
) -> Result<PairObjective<S>> {
    check_unit(eps, "mkd epsilon")?;
    check_pair(preds_a, preds_b, labels)?;
    let n = labels.len();
    let a = kl_direction(preds_a, preds_b, labels, trust_a, eps, ctx)?;
    let b = kl_direction(preds_b, preds_a, labels, trust_b, eps, ctx)?;
    let count = if eps > S::zero() { n } else { 0 };
    Ok(PairObjective {
        result: DistillBatchResult {
            batch_size: n,
            loss_a: a.self_loss + a.distill_loss,
            loss_b: b.self_loss + b.distill_loss,
            self_a: a.self_loss,
            self_b: b.self_loss,
            distill_a: a.distill_loss,
            distill_b: b.distill_loss,
            count_a2b: count,
            count_b2a: count,
            eps_sum_a: a.eps_sum,
            eps_sum_b: b.eps_sum,
            updated_a: true,
            updated_b: true,
        },
        targets_a: a.targets,
        targets_b: b.targets,
    })
}

/// Teacher-to-student KD for one sample: `(1−ε)·H(q, p) + ε·KL(p_t, p)`.
pub fn t2s_loss<S: Scalar>(q: &ProbDist<S>, p_student: &ProbDist<S>, p_teacher: &ProbDist<S>, eps: S) -> Result<S> {
    check_unit(eps, "epsilon")?;
    Ok((S::one() - eps) * cross_entropy(&q.to_target(), p_student)? + eps * kl_divergence(p_teacher, p_student)?)
}

/// Label form of T2S KD: `H((1−ε)q + ε·p_t, p)`. Differs from
/// [`t2s_loss`] by the teacher-only constant `ε·H(p_t)`.
pub fn t2s_label_loss<S: Scalar>(
    q: &ProbDist<S>,
    p_student: &ProbDist<S>,
    p_teacher: &ProbDist<S>,
    eps: S,
) -> Result<S> {
    check_unit(eps, "epsilon")?;
    if q.len() != p_teacher.len() {
        return Err(Error::invalid("label and teacher differ in length"));
    }
    let target: Vec<S> = q
        .probs()
        .iter()
        .zip(p_teacher.probs())
        .map(|(&a, &b)| (S::one() - eps) * a + eps * b)
        .collect();
    cross_entropy(&TargetWeights::from_raw(target), p_student)
}

/// Runs a forward pass and turns logits into predictions. Non-finite logits
/// are reported as divergence at `ctx.epoch`.
pub fn predict<S: Scalar>(
    model: &Mlp<S>,
    features: &Matrix<S>,
    ctx: EpochContext,
) -> Result<(ForwardCache<S>, Vec<ProbDist<S>>)> {
    let cache = model.forward_batch(features)?;
    if !cache.logits().is_finite() {
        return Err(Error::Diverged {
            epoch: ctx.epoch,
            detail: "non-finite logits".into(),
        });
    }
    let logits = cache.logits();
    let preds = (0..logits.rows())
        .map(|i| ProbDist::from_raw(softmax_unchecked(logits.row(i))))
        .collect();
    Ok((cache, preds))
}

fn check_classes<S: Scalar>(a: &Mlp<S>, b: &Mlp<S>) -> Result<()> {
    if a.classes() != b.classes() {
        return Err(Error::invalid(format!(
            "class-count mismatch between models: {} vs {}",
            a.classes(),
            b.classes()
        )));
    }
    Ok(())
}

fn apply<S: Scalar>(
    learner: &mut Learner<S>,
    cache: &ForwardCache<S>,
    targets: &[TargetWeights<S>],
    loss: S,
    ctx: EpochContext,
) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Diverged {
            epoch: ctx.epoch,
            detail: format!("loss became {loss}"),
        });
    }
    let grads = learner.model.backward_soft_ce(cache, targets)?;
    learner.sgd.step(&mut learner.model, &grads)
}

type Forward<S> = (ForwardCache<S>, Vec<ProbDist<S>>);

fn forward_both<S: Scalar>(
    a: &Learner<S>,
    b: &Learner<S>,
    batch: &Batch<S>,
    ctx: EpochContext,
) -> Result<(Forward<S>, Forward<S>)> {
    check_classes(&a.model, &b.model)?;
    let (fa, fb) = rayon::join(
        || predict(&a.model, &batch.features, ctx),
        || predict(&b.model, &batch.features, ctx),
    );
    Ok((fa?, fb?))
}

/// One synchronized CMD step: both forwards, both objectives, then both
/// updates from the pre-update parameters.
pub fn cmd_batch<S: Scalar>(
    a: &mut Learner<S>,
    b: &mut Learner<S>,
    batch: &Batch<S>,
    policy: &SelectionPolicy<S>,
    knowledge: Knowledge,
    ctx: EpochContext,
) -> Result<DistillBatchResult<S>> {
    let ((cache_a, preds_a), (cache_b, preds_b)) = forward_both(a, b, batch, ctx)?;
    let chi = policy.threshold(ctx.epoch)?;
    let obj = cmd_objective(
        &preds_a,
        &preds_b,
        &batch.labels,
        &a.trust,
        &b.trust,
        chi,
        knowledge,
        ctx,
    )?;
    apply(a, &cache_a, &obj.targets_a, obj.result.loss_a, ctx)?;
    apply(b, &cache_b, &obj.targets_b, obj.result.loss_b, ctx)?;
    Ok(obj.result)
}

/// One synchronized SyncMKD step.
pub fn sync_mkd_batch<S: Scalar>(
    a: &mut Learner<S>,
    b: &mut Learner<S>,
    batch: &Batch<S>,
    eps: S,
    ctx: EpochContext,
) -> Result<DistillBatchResult<S>> {
    let ((cache_a, preds_a), (cache_b, preds_b)) = forward_both(a, b, batch, ctx)?;
    let obj = sync_mkd_objective(&preds_a, &preds_b, &batch.labels, &a.trust, &b.trust, eps, ctx)?;
    apply(a, &cache_a, &obj.targets_a, obj.result.loss_a, ctx)?;
    apply(b, &cache_b, &obj.targets_b, obj.result.loss_b, ctx)?;
    Ok(obj.result)
}

/// One AsyncMKD step. `iteration` counts from 1: odd iterations update only
/// A, even iterations update only B. Counts cover the updated direction.
pub fn async_mkd_step<S: Scalar>(
    a: &mut Learner<S>,
    b: &mut Learner<S>,
    batch: &Batch<S>,
    iteration: u64,
    eps: S,
    ctx: EpochContext,
) -> Result<DistillBatchResult<S>> {
    let ((cache_a, preds_a), (cache_b, preds_b)) = forward_both(a, b, batch, ctx)?;
    let mut obj = sync_mkd_objective(&preds_a, &preds_b, &batch.labels, &a.trust, &b.trust, eps, ctx)?;
    if iteration % 2 == 1 {
        apply(a, &cache_a, &obj.targets_a, obj.result.loss_a, ctx)?;
        obj.result.updated_b = false;
        obj.result.count_a2b = 0;
    } else {
        apply(b, &cache_b, &obj.targets_b, obj.result.loss_b, ctx)?;
        obj.result.updated_a = false;
        obj.result.count_b2a = 0;
    }
    Ok(obj.result)
}

/// Teacher-to-student objective for the student in slot A; the teacher
/// occupies slot B and receives no targets.
pub fn t2s_objective<S: Scalar>(
    preds_student: &[ProbDist<S>],
    preds_teacher: &[ProbDist<S>],
    labels: &[HardLabel],
    trust: &TrustParams<S>,
    eps: S,
    ctx: EpochContext,
) -> Result<PairObjective<S>> {
    check_unit(eps, "epsilon")?;
    check_pair(preds_student, preds_teacher, labels)?;
    let n = labels.len();
    let dir = kl_direction(preds_student, preds_teacher, labels, trust, eps, ctx)?;
    Ok(PairObjective {
        result: DistillBatchResult {
            batch_size: n,
            loss_a: dir.self_loss + dir.distill_loss,
            self_a: dir.self_loss,
            distill_a: dir.distill_loss,
            count_b2a: if eps > S::zero() { n } else { 0 },
            eps_sum_a: dir.eps_sum,
            updated_a: true,
            ..Default::default()
        },
        targets_a: dir.targets,
        targets_b: Vec::new(),
    })
}

/// One student step of teacher-to-student KD; the teacher is read-only.
/// Student and teacher occupy slots A and B of the result.
pub fn t2s_batch<S: Scalar>(
    student: &mut Learner<S>,
    teacher: &Mlp<S>,
    batch: &Batch<S>,
    eps: S,
    ctx: EpochContext,
) -> Result<DistillBatchResult<S>> {
    check_unit(eps, "epsilon")?;
    check_classes(&student.model, teacher)?;
    let (cache, preds) = predict(&student.model, &batch.features, ctx)?;
    let (_, teacher_preds) = predict(teacher, &batch.features, ctx)?;
    let obj = t2s_objective(&preds, &teacher_preds, &batch.labels, &student.trust, eps, ctx)?;
    apply(student, &cache, &obj.targets_a, obj.result.loss_a, ctx)?;
    Ok(obj.result)
}

/// Loss, self-trust sum and batch size of a single-model step.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfKdStep<S> {
    pub loss: S,
    pub eps_sum: S,
    pub batch_size: usize,
}

/// One self-KD step of a model trained on its own.
pub fn self_kd_step<S: Scalar>(learner: &mut Learner<S>, batch: &Batch<S>, ctx: EpochContext) -> Result<SelfKdStep<S>> {
    let (cache, preds) = predict(&learner.model, &batch.features, ctx)?;
    let out = self_kd_batch(&learner.trust, &batch.labels, &preds, ctx)?;
    let loss = mean(out.iter().map(|o| o.loss), out.len());
    let targets: Vec<_> = out.iter().map(|o| o.refined.clone()).collect();
    apply(learner, &cache, &targets, loss, ctx)?;
    Ok(SelfKdStep {
        loss,
        eps_sum: out.iter().map(|o| o.epsilon).sum(),
        batch_size: batch.len(),
    })
}

/// Unguarded batch-mean objective `(1/N) Σ −T_i · log softmax(z_i)` whose
/// exact gradient the steppers apply. Exposed for gradient checks.
pub fn soft_target_objective<S: Scalar>(logits: &Matrix<S>, targets: &[TargetWeights<S>]) -> Result<S> {
    if logits.rows() != targets.len() {
        return Err(Error::invalid("targets and logits differ in length"));
    }
    let mut total = S::zero();
    for (i, t) in targets.iter().enumerate() {
        let ls = crate::ndmath::log_softmax(logits.row(i));
        total -= t.weights().iter().zip(ls).fold(S::zero(), |a, (&w, l)| a + w * l);
    }
    Ok(total / S::count(targets.len().max(1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelspace::one_hot;
    use crate::ndmath::{guarded_cross_entropy, softmax};
    use crate::selfkd::Method;

    fn pd(v: &[f64]) -> ProbDist<f64> {
        ProbDist::new(v.to_vec()).unwrap()
    }

    fn ctx() -> EpochContext {
        EpochContext::new(0, 10).unwrap()
    }

    fn label(y: usize) -> HardLabel {
        HardLabel::new(y, 3).unwrap()
    }

    #[test]
    fn direction_loss_degenerate_thresholds() {
        let t = vec![pd(&[0.6, 0.3, 0.1]).to_target()];
        let p = vec![pd(&[0.2, 0.5, 0.3])];
        let h = vec![entropy(&pd(&[0.9, 0.05, 0.05]))];
        assert_eq!(cmd_direction_loss(&t, &p, &h, 0.0).unwrap(), (0.0, 0));
        let (loss, count) = cmd_direction_loss(&t, &p, &h, f64::INFINITY).unwrap();
        assert_eq!(count, 1);
        assert_eq!(loss, cross_entropy(&t[0], &p[0]).unwrap());
        assert!(cmd_direction_loss(&t, &p, &[], 1.0).is_err());
    }

    #[test]
    fn direction_loss_divides_by_full_batch() {
        let t: Vec<_> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
            .iter()
            .map(|v| TargetWeights::new(v.to_vec()).unwrap())
            .collect();
        let p = vec![pd(&[0.5, 0.3, 0.2]), pd(&[0.1, 0.8, 0.1]), pd(&[0.3, 0.3, 0.4])];
        let h = vec![1.0, 0.2, 1.0];
        let (loss, count) = cmd_direction_loss(&t, &p, &h, 0.5).unwrap();
        assert_eq!(count, 1);
        let expected = -(0.8f64 + 1e-6).ln() / 3.0;
        assert!((loss - expected).abs() < 1e-15);
    }

    #[test]
    fn t2s_examples() {
        let q = one_hot::<f64>(label(1), 3).unwrap();
        let p = pd(&[0.2, 0.5, 0.3]);
        let pt = pd(&[0.1, 0.7, 0.2]);
        let ce = cross_entropy(&q.to_target(), &p).unwrap();
        assert_eq!(t2s_loss(&q, &p, &pt, 0.0).unwrap(), ce);
        assert!(t2s_loss(&q, &p, &p, 1.0).unwrap().abs() < 1e-9);
        let diff = t2s_loss(&q, &p, &pt, 0.3).unwrap() - t2s_label_loss(&q, &p, &pt, 0.3).unwrap();
        assert!((diff + 0.3 * entropy(&pt)).abs() < 1e-9);
        assert!(t2s_loss(&q, &p, &pt, 1.5).is_err());
    }

    #[test]
    fn cmd_objective_on_toy_batch_matches_termwise_sum() {
        let preds_a = vec![
            pd(&[0.9, 0.05, 0.05]),
            pd(&[0.4, 0.3, 0.3]),
            pd(&[0.1, 0.1, 0.8]),
            pd(&[0.34, 0.33, 0.33]),
        ];
        let preds_b = vec![
            pd(&[0.8, 0.1, 0.1]),
            pd(&[0.05, 0.9, 0.05]),
            pd(&[0.3, 0.4, 0.3]),
            pd(&[0.2, 0.2, 0.6]),
        ];
        let labels = vec![label(0), label(1), label(2), label(0)];
        let ce = TrustParams::ce();
        let chi = 0.8;
        let obj = cmd_objective(&preds_a, &preds_b, &labels, &ce, &ce, chi, Knowledge::Refined, ctx()).unwrap();

        let mut la = 0.0;
        let mut lb = 0.0;
        let (mut ca, mut cb) = (0, 0);
        for i in 0..4 {
            let q = one_hot::<f64>(labels[i], 3).unwrap().into_inner();
            let pa = preds_a[i].probs();
            let pb = preds_b[i].probs();
            let ha: f64 = pa.iter().map(|p| -p * (p + 1e-6).ln()).sum();
            let hb: f64 = pb.iter().map(|p| -p * (p + 1e-6).ln()).sum();
            let ce_a: f64 = q.iter().zip(pa).map(|(t, p)| -t * (p + 1e-6).ln()).sum();
            let ce_b: f64 = q.iter().zip(pb).map(|(t, p)| -t * (p + 1e-6).ln()).sum();
            la += ce_a + if hb < chi { ce_a } else { 0.0 };
            lb += ce_b + if ha < chi { ce_b } else { 0.0 };
            if hb < chi {
                cb += 1;
            }
            if ha < chi {
                ca += 1;
            }
        }
        assert!((obj.result.loss_a - la / 4.0).abs() < 1e-12);
        assert!((obj.result.loss_b - lb / 4.0).abs() < 1e-12);
        assert_eq!(obj.result.count_b2a, cb);
        assert_eq!(obj.result.count_a2b, ca);
        assert!((obj.result.loss_a - obj.result.self_a - obj.result.distill_a).abs() < 1e-9);
    }

    #[test]
    fn sync_objective_matches_formula_and_symmetry() {
        let preds_a = vec![pd(&[0.7, 0.2, 0.1]), pd(&[0.2, 0.2, 0.6])];
        let preds_b = vec![pd(&[0.5, 0.4, 0.1]), pd(&[0.1, 0.3, 0.6])];
        let labels = vec![label(0), label(1)];
        let ce = TrustParams::ce();
        let obj = sync_mkd_objective(&preds_a, &preds_b, &labels, &ce, &ce, 0.5, ctx()).unwrap();
        let mut la = 0.0;
        for i in 0..2 {
            let q = one_hot(labels[i], 3).unwrap();
            la += t2s_loss(&q, &preds_a[i], &preds_b[i], 0.5).unwrap();
        }
        assert!((obj.result.loss_a - la / 2.0).abs() < 1e-12);
        let swapped = sync_mkd_objective(&preds_b, &preds_a, &labels, &ce, &ce, 0.5, ctx()).unwrap();
        assert_eq!(obj.result.loss_a, swapped.result.loss_b);

        let zero = sync_mkd_objective(&preds_a, &preds_b, &labels, &ce, &ce, 0.0, ctx()).unwrap();
        assert_eq!(zero.result.distill_a, 0.0);
        assert_eq!(zero.result.count_a2b, 0);
    }

    fn toy_batch() -> Batch<f64> {
        let x = Matrix::from_rows(&[vec![0.5, -1.0], vec![1.5, 0.2], vec![-0.3, 0.9]]).unwrap();
        Batch::new(x, vec![label(0), label(2), label(1)]).unwrap()
    }

    fn learner(seed: u64, method: Method) -> Learner<f64> {
        let model = Mlp::he_uniform(&[2, 6, 3], seed).unwrap();
        let sgd = SgdState::new(&model, 0.1, 0.9, 5e-4).unwrap();
        Learner::new(model, sgd, TrustParams::new(method, 0.2, 4.0, 0.5).unwrap())
    }

    #[test]
    fn zero_mode_matches_independent_steps() {
        for method in Method::ALL {
            let (mut a, mut b) = (learner(1, method), learner(2, method));
            let (mut a2, mut b2) = (a.clone(), b.clone());
            let zero = SelectionPolicy::zero(10, 3).unwrap();
            for epoch in 0..3 {
                let c = EpochContext::new(epoch, 10).unwrap();
                let r = cmd_batch(&mut a, &mut b, &toy_batch(), &zero, Knowledge::Refined, c).unwrap();
                let sa = self_kd_step(&mut a2, &toy_batch(), c).unwrap();
                let sb = self_kd_step(&mut b2, &toy_batch(), c).unwrap();
                assert_eq!(r.loss_a, sa.loss);
                assert_eq!(r.loss_b, sb.loss);
            }
            assert_eq!(a.model, a2.model);
            assert_eq!(b.model, b2.model);
        }
    }

    #[test]
    fn identical_models_give_symmetric_losses() {
        let (mut a, mut b) = (learner(5, Method::Ce), learner(5, Method::Ce));
        let all = SelectionPolicy::all(10, 3).unwrap();
        let r = cmd_batch(&mut a, &mut b, &toy_batch(), &all, Knowledge::Refined, ctx()).unwrap();
        assert_eq!(r.loss_a, r.loss_b);
        assert_eq!(a.model, b.model);
        let s = sync_mkd_batch(&mut a, &mut b, &toy_batch(), 0.5, ctx()).unwrap();
        assert_eq!(s.loss_a, s.loss_b);
    }

    #[test]
    fn async_updates_alternate() {
        let (mut a, mut b) = (learner(1, Method::Ce), learner(2, Method::Ce));
        let (a0, b0) = (a.model.clone(), b.model.clone());
        let r1 = async_mkd_step(&mut a, &mut b, &toy_batch(), 1, 0.5, ctx()).unwrap();
        assert!(r1.updated_a && !r1.updated_b);
        assert_ne!(a.model, a0);
        assert_eq!(b.model, b0);
        let a1 = a.model.clone();
        let r2 = async_mkd_step(&mut a, &mut b, &toy_batch(), 2, 0.5, ctx()).unwrap();
        assert!(!r2.updated_a && r2.updated_b);
        assert_eq!(a.model, a1);
        assert_ne!(b.model, b0);
    }

    #[test]
    fn class_mismatch_rejected() {
        let mut a = learner(1, Method::Ce);
        let model = Mlp::he_uniform(&[2, 4, 4], 3).unwrap();
        let sgd = SgdState::new(&model, 0.1, 0.9, 0.0).unwrap();
        let mut b = Learner::new(model, sgd, TrustParams::ce());
        let all = SelectionPolicy::all(10, 3).unwrap();
        assert!(matches!(
            cmd_batch(&mut a, &mut b, &toy_batch(), &all, Knowledge::Refined, ctx()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn soft_target_objective_matches_guarded_loss_closely() {
        let logits = Matrix::from_rows(&[vec![0.3, -0.2, 1.0]]).unwrap();
        let p = softmax(logits.row(0)).unwrap();
        let t = vec![pd(&[0.2, 0.3, 0.5]).to_target()];
        let exact = soft_target_objective(&logits, &t).unwrap();
        let guarded = guarded_cross_entropy(t[0].weights(), p.probs());
        assert!((exact - guarded).abs() < 1e-5);
    }
}
