//! Confident-knowledge mutual distillation.
//!
//! Two classifiers train side by side on noisily labelled data. Each refines
//! its own targets with a self label-correction method and distills into its
//! peer only the refined labels it is confident about (low prediction
//! entropy), under a static or progressive entropy threshold.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common case. The experiment harness runs in `f64`.

pub mod error;
pub mod harness;
pub mod labelspace;
pub mod mkd;
pub mod ndmath;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod selection;
pub mod selfkd;

pub use error::{Error, Result};
pub use labelspace::{HardLabel, NoiseKind, NoiseSpec, NoisySplit};
pub use mkd::{AlgoKind, Batch, DistillBatchResult, Knowledge, Learner, MkdAlgo};
pub use ndmath::{Matrix, ProbDist, TargetWeights};
pub use nn::{LrSchedule, Mlp, SgdState};
pub use scalar::Scalar;
pub use selection::{SelectionMode, SelectionPolicy};
pub use selfkd::{EpochContext, GlobalConfidence, Method, TrustParams};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type ProbDist64 = ProbDist<f64>;
pub type ProbDist32 = ProbDist<f32>;
pub type Mlp64 = Mlp<f64>;
pub type Mlp32 = Mlp<f32>;
pub type Learner64 = Learner<f64>;
pub type Learner32 = Learner<f32>;
pub type SelectionPolicy64 = SelectionPolicy<f64>;
pub type TrustParams64 = TrustParams<f64>;
pub type NoisySplit64 = NoisySplit<f64>;
