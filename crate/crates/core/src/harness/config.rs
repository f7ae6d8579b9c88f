//! JSON experiment configuration.
//!
//! Every section except `dataset` has defaults. Unknown keys are rejected and
//! parse or validation failures carry the offending field path.
//!
//! ```json
//! {
//!   "dataset": {"kind": "blobs", "classes": 10, "train_per_class": 500,
//!               "test_per_class": 200, "dim": 8, "spread": 1.0, "seed": 7},
//!   "noise": {"kind": "symmetric", "rate": 0.4, "seed": 11},
//!   "algo": "cmd",
//!   "selection": {"mode": "progressive", "eta": 2.0, "b2": -3.0},
//!   "self_kd": {"method": "mylc", "b1": 8.0},
//!   "epochs": 100,
//!   "seed": 1,
//!   "output_dir": "runs/cmd_p"
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::NoiseSpec;
use crate::mkd::{AlgoKind, Knowledge, MkdAlgo};
use crate::nn::LrSchedule;
use crate::selection::{SelectionMode, SelectionPolicy};
use crate::selfkd::{Method, TrustParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "NoiseSpec::none")]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Self-KD of model A, and of model B unless `self_kd_b` is given.
    #[serde(default)]
    pub self_kd: SelfKdConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_kd_b: Option<SelfKdConfig>,
    #[serde(default)]
    pub algo: AlgoKind,
    /// Peer weight of SyncMKD, AsyncMKD and T2S.
    #[serde(default = "default_mkd_epsilon")]
    pub mkd_epsilon: f64,
    #[serde(default)]
    pub selection: SelectionConfig,
    /// What a confident CMD model distills into its peer.
    #[serde(default)]
    pub knowledge: Knowledge,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of the training set held out as a clean-label validation
    /// set. When set, per-epoch "test" accuracy is measured on it instead of
    /// the test split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_fraction: Option<f64>,
    /// Where `metrics.csv` is written. Nothing is written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Gaussian blobs; train and test are drawn from the same class means.
    Blobs {
        classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        dim: usize,
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Labelspace CSV files. The training file's `noisy_label` column is used
    /// unless `noise.rate > 0`, in which case noise is redrawn from the clean
    /// labels. The test file's clean labels are used for evaluation.
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: vec![50, 80],
            lr_factor: 0.1,
        }
    }
}

impl OptimizerConfig {
    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.lr, self.milestones.clone(), self.lr_factor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfKdConfig {
    pub method: Method,
    /// Fixed ε of LS, CP and Boot-soft.
    pub epsilon: f64,
    pub b1: f64,
    pub rho: f64,
}

impl Default for SelfKdConfig {
    fn default() -> Self {
        Self {
            method: Method::Ce,
            epsilon: 0.1,
            b1: 8.0,
            rho: 0.5,
        }
    }
}

impl SelfKdConfig {
    pub fn trust(&self) -> Result<TrustParams<f64>> {
        TrustParams::new(self.method, self.epsilon, self.b1, self.rho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub mode: SelectionMode,
    pub eta: f64,
    pub b2: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            mode: SelectionMode::Progressive,
            eta: 2.0,
            b2: -3.0,
        }
    }
}

fn default_mkd_epsilon() -> f64 {
    0.5
}

fn default_epochs() -> usize {
    100
}

fn default_batch_size() -> usize {
    128
}

fn field(path: &str, message: impl Into<String>) -> Error {
    Error::config(path, message)
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl ExperimentConfig {
    /// Parses and validates a JSON document.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| field("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.dataset {
            DatasetConfig::Blobs { classes, .. } => Some(*classes),
            DatasetConfig::Csv { classes, .. } => *classes,
        }
    }

    pub fn trust_a(&self) -> Result<TrustParams<f64>> {
        self.self_kd.trust()
    }

    pub fn trust_b(&self) -> Result<TrustParams<f64>> {
        self.self_kd_b.unwrap_or(self.self_kd).trust()
    }

    /// Sets the self-KD method of both models.
    pub fn set_method(&mut self, method: Method) {
        self.self_kd.method = method;
        if let Some(b) = &mut self.self_kd_b {
            b.method = method;
        }
    }

    pub fn selection_policy(&self, classes: usize) -> Result<SelectionPolicy<f64>> {
        let s = &self.selection;
        SelectionPolicy::new(s.mode, s.eta, s.b2, self.epochs, classes)
    }

    pub fn algo(&self, classes: usize) -> Result<MkdAlgo<f64>> {
        let mut algo = MkdAlgo::new(self.algo, self.mkd_epsilon, self.selection_policy(classes)?)?;
        algo.knowledge = self.knowledge;
        Ok(algo)
    }

    /// Checks every constraint not expressed by the types.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(field("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(field("batch_size", "must be at least 1"));
        }
        self.validate_dataset()?;
        if !in_unit(self.noise.rate) {
            return Err(field("noise.rate", format!("{} outside [0, 1]", self.noise.rate)));
        }
        if self.model.hidden.contains(&0) {
            return Err(field("model.hidden", "layer widths must be positive"));
        }
        let o = &self.optimizer;
        if !(o.lr.is_finite() && o.lr > 0.0) {
            return Err(field("optimizer.lr", "must be positive"));
        }
        if !(o.momentum.is_finite() && (0.0..1.0).contains(&o.momentum)) {
            return Err(field("optimizer.momentum", "must lie in [0, 1)"));
        }
        if !(o.weight_decay.is_finite() && o.weight_decay >= 0.0) {
            return Err(field("optimizer.weight_decay", "must be non-negative"));
        }
        o.schedule().map_err(|e| field("optimizer", e.to_string()))?;
        check_self_kd(&self.self_kd, "self_kd")?;
        if let Some(b) = &self.self_kd_b {
            check_self_kd(b, "self_kd_b")?;
        }
        if !in_unit(self.mkd_epsilon) {
            return Err(field("mkd_epsilon", format!("{} outside [0, 1]", self.mkd_epsilon)));
        }
        let s = &self.selection;
        if matches!(s.mode, SelectionMode::Static | SelectionMode::Progressive) && !(s.eta.is_finite() && s.eta > 0.0) {
            return Err(field("selection.eta", "must be positive"));
        }
        if !s.b2.is_finite() {
            return Err(field("selection.b2", "must be finite"));
        }
        if let Some(f) = self.validation_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(field("validation_fraction", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    fn validate_dataset(&self) -> Result<()> {
        match &self.dataset {
            DatasetConfig::Blobs {
                classes,
                train_per_class,
                test_per_class,
                dim,
                spread,
                ..
            } => {
                if *classes < 2 {
                    return Err(field("dataset.classes", "need at least 2 classes"));
                }
                if *train_per_class == 0 {
                    return Err(field("dataset.train_per_class", "must be positive"));
                }
                if *test_per_class == 0 {
                    return Err(field("dataset.test_per_class", "must be positive"));
                }
                if *dim == 0 {
                    return Err(field("dataset.dim", "must be positive"));
                }
                if !(spread.is_finite() && *spread >= 0.0) {
                    return Err(field("dataset.spread", "must be non-negative"));
                }
            }
            DatasetConfig::Csv { train, test, classes } => {
                if !train.is_file() {
                    return Err(field("dataset.train", format!("no such file: {}", train.display())));
                }
                if !test.is_file() {
                    return Err(field("dataset.test", format!("no such file: {}", test.display())));
                }
                if classes.is_some_and(|c| c < 2) {
                    return Err(field("dataset.classes", "need at least 2 classes"));
                }
            }
        }
        Ok(())
    }
}

fn check_self_kd(s: &SelfKdConfig, path: &str) -> Result<()> {
    if !in_unit(s.epsilon) {
        return Err(field(
            &format!("{path}.epsilon"),
            format!("{} outside [0, 1]", s.epsilon),
        ));
    }
    if !s.b1.is_finite() {
        return Err(field(&format!("{path}.b1"), "must be finite"));
    }
    if !(s.rho > 0.0 && s.rho < 1.0) {
        return Err(field(&format!("{path}.rho"), "must lie in (0, 1)"));
    }
    Ok(())
}
