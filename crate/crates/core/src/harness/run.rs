//! Single experiment runs.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::labelspace::{make_blobs, read_csv, HardLabel, NoisySplit};
use crate::mkd::{async_mkd_step, cmd_batch, self_kd_step, sync_mkd_batch, t2s_batch, AlgoKind, Batch, Learner};
use crate::ndmath::{argmax, Matrix};
use crate::nn::{save_checkpoint, LrSchedule, Mlp, SgdState};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;
use crate::selection::SelectionPolicy;
use crate::selfkd::{EpochContext, TrustParams};

use super::config::{DatasetConfig, ExperimentConfig};
use super::metrics::{EpochRecord, MetricsWriter, RunMetrics};

const STREAM_INIT_A: u64 = 1;
const STREAM_INIT_B: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_VALIDATION: u64 = 4;

/// Training data plus the clean-label set accuracy is reported on.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: NoisySplit<f64>,
    pub eval_features: Matrix<f64>,
    pub eval_labels: Vec<HardLabel>,
    pub classes: usize,
}

/// Which peer a single-model run stands in for. The slot fixes the
/// initialization seed so a single run can be compared with its counterpart
/// inside a two-model run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    A,
    B,
}

/// Final state of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub model_a: Mlp<f64>,
    pub model_b: Mlp<f64>,
}

/// Fraction of rows whose `argmax(softmax(logits))` equals the label, ties
/// going to the lowest class index.
pub fn evaluate<S: Scalar>(model: &Mlp<S>, features: &Matrix<S>, labels: &[HardLabel]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    if features.rows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let logits = model.predict_logits(features)?;
    Ok(accuracy(&predicted_classes(&logits)?, labels))
}

fn predicted_classes<S: Scalar>(logits: &Matrix<S>) -> Result<Vec<usize>> {
    (0..logits.rows())
        .map(|i| Ok(argmax(crate::ndmath::softmax(logits.row(i))?.probs())))
        .collect()
}

fn accuracy(pred: &[usize], labels: &[HardLabel]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, y)| **p == y.index()).count();
    hits as f64 / labels.len() as f64
}

/// Builds the training split (with noise applied) and the evaluation set.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (train, test) = match &cfg.dataset {
        DatasetConfig::Blobs {
            classes,
            train_per_class,
            test_per_class,
            dim,
            spread,
            seed,
        } => {
            let all = make_blobs::<f64>(*classes, train_per_class + test_per_class, *dim, *spread, *seed)?;
            let n_train = classes * train_per_class;
            let train_idx: Vec<usize> = (0..n_train).collect();
            let test_idx: Vec<usize> = (n_train..all.len()).collect();
            (all.subset(&train_idx), all.subset(&test_idx))
        }
        DatasetConfig::Csv { train, test, classes } => {
            let train = read_csv::<f64>(train, *classes)?;
            let test = read_csv::<f64>(test, Some(train.classes))?;
            (train, test)
        }
    };
    if train.dim() != test.dim() {
        return Err(Error::config(
            "dataset",
            format!("train has {} features, test has {}", train.dim(), test.dim()),
        ));
    }
    let from_file = matches!(cfg.dataset, DatasetConfig::Csv { .. });
    let train = if from_file && cfg.noise.rate == 0.0 {
        train
    } else {
        train.with_noise(cfg.noise)?
    };
    let classes = train.classes;
    let (train, eval_features, eval_labels) = match cfg.validation_fraction {
        None => (train, test.features, test.clean),
        Some(fraction) => {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, STREAM_VALIDATION)));
            let held = ((train.len() as f64) * fraction).round() as usize;
            if held == 0 || held == train.len() {
                return Err(Error::config("validation_fraction", "leaves an empty split"));
            }
            let val = train.subset(&order[..held]);
            (train.subset(&order[held..]), val.features, val.clean)
        }
    };
    if train.is_empty() || eval_labels.is_empty() {
        return Err(Error::config("dataset", "empty train or evaluation set"));
    }
    Ok(PreparedData {
        train,
        eval_features,
        eval_labels,
        classes,
    })
}

fn layer_dims(cfg: &ExperimentConfig, data: &PreparedData) -> Vec<usize> {
    let mut dims = vec![data.train.dim()];
    dims.extend(&cfg.model.hidden);
    dims.push(data.classes);
    dims
}

fn learner(cfg: &ExperimentConfig, data: &PreparedData, slot: Slot, trust: TrustParams<f64>) -> Result<Learner<f64>> {
    let stream = match slot {
        Slot::A => STREAM_INIT_A,
        Slot::B => STREAM_INIT_B,
    };
    let model = Mlp::he_uniform(&layer_dims(cfg, data), derive_seed(cfg.seed, stream))?;
    let o = &cfg.optimizer;
    let sgd = SgdState::new(&model, o.lr, o.momentum, o.weight_decay)?;
    Ok(Learner::new(model, sgd, trust))
}

/// Mini-batches of one epoch. The order depends only on `(seed, epoch)`.
fn epoch_batches(cfg: &ExperimentConfig, train: &NoisySplit<f64>, epoch: usize) -> Result<Vec<Batch<f64>>> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    let seed = derive_seed(derive_seed(cfg.seed, STREAM_SHUFFLE), epoch as u64);
    order.shuffle(&mut rng_from_seed(seed));
    order
        .chunks(cfg.batch_size)
        .map(|idx| {
            Batch::new(
                train.features.select_rows(idx),
                idx.iter().map(|&i| train.noisy[i]).collect(),
            )
        })
        .collect()
}

/// Re-labels a divergence with the 1-based epoch used in metrics.
fn at_epoch<T>(r: Result<T>, epoch: usize) -> Result<T> {
    r.map_err(|e| match e {
        Error::Diverged { detail, .. } => Error::Diverged { epoch, detail },
        other => other,
    })
}

#[derive(Default)]
struct Tally {
    loss: f64,
    loss_n: usize,
    eps: f64,
    count: usize,
}

impl Tally {
    fn add(&mut self, loss: f64, eps_sum: f64, n: usize) {
        self.loss += loss * n as f64;
        self.loss_n += n;
        self.eps += eps_sum;
    }

    fn mean_loss(&self) -> f64 {
        if self.loss_n == 0 {
            0.0
        } else {
            self.loss / self.loss_n as f64
        }
    }

    fn mean_eps(&self) -> f64 {
        if self.loss_n == 0 {
            0.0
        } else {
            self.eps / self.loss_n as f64
        }
    }
}

struct Evaluation {
    test: f64,
    noisy: f64,
    clean: f64,
}

fn evaluate_model(model: &Mlp<f64>, data: &PreparedData, epoch: usize) -> Result<Evaluation> {
    let test_logits = model.predict_logits(&data.eval_features)?;
    let train_logits = model.predict_logits(&data.train.features)?;
    if !(test_logits.is_finite() && train_logits.is_finite()) {
        return Err(Error::Diverged {
            epoch,
            detail: "non-finite logits at evaluation".into(),
        });
    }
    let train_pred = predicted_classes(&train_logits)?;
    Ok(Evaluation {
        test: accuracy(&predicted_classes(&test_logits)?, &data.eval_labels),
        noisy: accuracy(&train_pred, &data.train.noisy),
        clean: accuracy(&train_pred, &data.train.clean),
    })
}

fn prepare_output(cfg: &ExperimentConfig) -> Result<Option<MetricsWriter>> {
    let Some(dir) = &cfg.output_dir else {
        return Ok(None);
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), cfg.to_json()?)?;
    Ok(Some(MetricsWriter::create(&dir.join("metrics.csv"))?))
}

fn save_models(dir: Option<&Path>, a: &Mlp<f64>, b: &Mlp<f64>) -> Result<()> {
    if let Some(dir) = dir {
        save_checkpoint(a, &dir.join("model_a.json"))?;
        save_checkpoint(b, &dir.join("model_b.json"))?;
    }
    Ok(())
}

/// Runs the configured algorithm and returns per-epoch metrics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunMetrics> {
    Ok(run_experiment_with(cfg, &mut |_, _, _| {})?.metrics)
}

pub type EpochObserver<'a> = dyn FnMut(&EpochRecord, &Mlp<f64>, &Mlp<f64>) + 'a;

/// As [`run_experiment`], calling `observer` after every epoch with the
/// record and both models.
pub fn run_experiment_with(cfg: &ExperimentConfig, observer: &mut EpochObserver<'_>) -> Result<RunOutcome> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let algo = cfg.algo(data.classes)?;
    let schedule = cfg.optimizer.schedule()?;
    let mut a = learner(cfg, &data, Slot::A, cfg.trust_a()?)?;
    let mut b = match algo.kind {
        AlgoKind::T2s => {
            let teacher = train_single(cfg, &data, Slot::B, &mut |_, _| {})?;
            let sgd = SgdState::new(&teacher, cfg.optimizer.lr, 0.0, 0.0)?;
            Learner::new(teacher, sgd, cfg.trust_b()?)
        }
        _ => learner(cfg, &data, Slot::B, cfg.trust_b()?)?,
    };
    let mut writer = prepare_output(cfg)?;
    let mut metrics = RunMetrics::default();
    let mut iteration = 0u64;

    for t in 0..cfg.epochs {
        let epoch = t + 1;
        let ctx = EpochContext::new(t, cfg.epochs)?;
        let lr = set_lr(&schedule, t, &mut a)?;
        if algo.kind != AlgoKind::T2s {
            set_lr(&schedule, t, &mut b)?;
        }
        let chi = record_chi(algo.kind, &algo.selection, t)?;
        let (mut ta, mut tb) = (Tally::default(), Tally::default());
        for batch in epoch_batches(cfg, &data.train, t)? {
            let n = batch.len();
            let step = match algo.kind {
                AlgoKind::Cmd => cmd_batch(&mut a, &mut b, &batch, &algo.selection, algo.knowledge, ctx),
                AlgoKind::SyncMkd => sync_mkd_batch(&mut a, &mut b, &batch, algo.mkd_epsilon, ctx),
                AlgoKind::AsyncMkd => {
                    iteration += 1;
                    async_mkd_step(&mut a, &mut b, &batch, iteration, algo.mkd_epsilon, ctx)
                }
                AlgoKind::T2s => t2s_batch(&mut a, &b.model, &batch, algo.mkd_epsilon, ctx),
                AlgoKind::Independent => {
                    let sa = at_epoch(self_kd_step(&mut a, &batch, ctx), epoch)?;
                    let sb = at_epoch(self_kd_step(&mut b, &batch, ctx), epoch)?;
                    ta.add(sa.loss, sa.eps_sum, n);
                    tb.add(sb.loss, sb.eps_sum, n);
                    continue;
                }
            };
            let r = at_epoch(step, epoch)?;
            if r.updated_a {
                ta.add(r.loss_a, r.eps_sum_a, n);
            }
            if r.updated_b {
                tb.add(r.loss_b, r.eps_sum_b, n);
            }
            ta.count += r.count_a2b;
            tb.count += r.count_b2a;
        }
        let ea = evaluate_model(&a.model, &data, epoch)?;
        let eb = evaluate_model(&b.model, &data, epoch)?;
        let record = EpochRecord {
            epoch,
            lr,
            test_acc_a: ea.test,
            test_acc_b: eb.test,
            train_noisy_acc_a: ea.noisy,
            train_noisy_acc_b: eb.noisy,
            train_clean_acc_a: ea.clean,
            train_clean_acc_b: eb.clean,
            mean_eps_a: ta.mean_eps(),
            mean_eps_b: tb.mean_eps(),
            chi,
            count_a2b: ta.count,
            count_b2a: tb.count,
            loss_a: ta.mean_loss(),
            loss_b: tb.mean_loss(),
        };
        if !(record.loss_a.is_finite() && record.loss_b.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite epoch loss".into(),
            });
        }
        if let Some(w) = &mut writer {
            w.append(&record)?;
        }
        observer(&record, &a.model, &b.model);
        metrics.records.push(record);
    }
    save_models(cfg.output_dir.as_deref(), &a.model, &b.model)?;
    Ok(RunOutcome {
        metrics,
        model_a: a.model,
        model_b: b.model,
    })
}

fn set_lr(schedule: &LrSchedule, t: usize, learner: &mut Learner<f64>) -> Result<f64> {
    let lr = schedule.lr_at(t);
    learner.sgd.set_lr(lr)?;
    Ok(lr)
}

fn record_chi(kind: AlgoKind, policy: &SelectionPolicy<f64>, t: usize) -> Result<f64> {
    Ok(match kind {
        AlgoKind::Cmd => policy.threshold(t)?,
        AlgoKind::Independent => 0.0,
        AlgoKind::SyncMkd | AlgoKind::AsyncMkd | AlgoKind::T2s => f64::INFINITY,
    })
}

/// Trains the model of one slot on its own with self-KD only, using the same
/// data stream and initialization as in a two-model run. `observer` sees the
/// 1-based epoch and the model after every epoch.
pub fn run_single_with(
    cfg: &ExperimentConfig,
    slot: Slot,
    observer: &mut dyn FnMut(usize, &Mlp<f64>),
) -> Result<Mlp<f64>> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    train_single(cfg, &data, slot, observer)
}

fn train_single(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    slot: Slot,
    observer: &mut dyn FnMut(usize, &Mlp<f64>),
) -> Result<Mlp<f64>> {
    let trust = match slot {
        Slot::A => cfg.trust_a()?,
        Slot::B => cfg.trust_b()?,
    };
    let schedule = cfg.optimizer.schedule()?;
    let mut l = learner(cfg, data, slot, trust)?;
    for t in 0..cfg.epochs {
        let ctx = EpochContext::new(t, cfg.epochs)?;
        set_lr(&schedule, t, &mut l)?;
        for batch in epoch_batches(cfg, &data.train, t)? {
            at_epoch(self_kd_step(&mut l, &batch, ctx), t + 1)?;
        }
        observer(t + 1, &l.model);
    }
    Ok(l.model)
}
