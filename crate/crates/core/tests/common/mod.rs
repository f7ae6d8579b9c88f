#![allow(dead_code)]

use cmdistill::harness::{DatasetConfig, ExperimentConfig, OptimizerConfig, SelectionConfig};
use cmdistill::ndmath::softmax;
use cmdistill::{AlgoKind, Method, Mlp, NoiseKind, NoiseSpec, ProbDist, SelectionMode};
use rand::Rng;

pub const GOLDEN_TRAIN: usize = 5000;
pub const GOLDEN_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// The golden blobs task: 10 classes in 8 dimensions, 500/200 train/test
/// points per class, 40% symmetric noise, a 2×64 MLP trained for 100 epochs.
pub fn golden(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json_str(
        r#"{"dataset": {"kind": "blobs", "classes": 10, "train_per_class": 500,
            "test_per_class": 200, "dim": 8, "spread": 0.6, "seed": 7}}"#,
    )
    .unwrap();
    cfg.noise = NoiseSpec::new(NoiseKind::Symmetric, 0.4, 11).unwrap();
    cfg.optimizer = OptimizerConfig {
        weight_decay: 0.0,
        ..OptimizerConfig::default()
    };
    cfg.epochs = 100;
    cfg.batch_size = 128;
    cfg.seed = seed;
    cfg
}

/// A small blobs task for fast end-to-end checks.
pub fn small(seed: u64, epochs: usize) -> ExperimentConfig {
    let mut cfg = golden(seed);
    cfg.dataset = DatasetConfig::Blobs {
        classes: 4,
        train_per_class: 40,
        test_per_class: 20,
        dim: 3,
        spread: 0.5,
        seed: 3,
    };
    cfg.model.hidden = vec![16];
    cfg.epochs = epochs;
    cfg.batch_size = 32;
    cfg
}

pub fn with_algo(
    mut cfg: ExperimentConfig,
    algo: AlgoKind,
    mode: SelectionMode,
    eta: f64,
    b2: f64,
) -> ExperimentConfig {
    cfg.algo = algo;
    cfg.selection = SelectionConfig { mode, eta, b2 };
    cfg
}

pub fn with_method(mut cfg: ExperimentConfig, method: Method) -> ExperimentConfig {
    cfg.set_method(method);
    cfg
}

pub fn random_dist<R: Rng>(rng: &mut R, classes: usize, scale: f64) -> ProbDist<f64> {
    let z: Vec<f64> = (0..classes).map(|_| rng.random_range(-scale..scale)).collect();
    softmax(&z).unwrap()
}

/// `max(0, −Σ p ln(p + 1e-6))`, written out independently of the library.
pub fn oracle_entropy(p: &[f64]) -> f64 {
    (-p.iter().map(|&v| v * (v + 1e-6).ln()).sum::<f64>()).max(0.0)
}

/// `−Σ t ln(p + 1e-6)`.
pub fn oracle_cross_entropy(t: &[f64], p: &[f64]) -> f64 {
    -t.iter().zip(p).map(|(&a, &b)| a * (b + 1e-6).ln()).sum::<f64>()
}

pub fn flat_equal(a: &Mlp<f64>, b: &Mlp<f64>) -> bool {
    a.flat_params() == b.flat_params()
}
