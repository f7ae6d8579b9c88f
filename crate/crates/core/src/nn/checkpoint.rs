//! JSON checkpoints. Values are written as `f64` using shortest round-trip
//! formatting, so `f32` and `f64` models reload bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Layer, Mlp};
use crate::error::{Error, Result};
use crate::ndmath::Matrix;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "cmdistill-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(model: &Mlp<S>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dims: model.dims(),
            activation: model.activation(),
            layers: model
                .layers()
                .iter()
                .map(|l| CheckpointLayer {
                    weights: l.weights.as_slice().iter().map(|v| v.as_f64()).collect(),
                    bias: l.bias.iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn to_model<S: Scalar>(&self) -> Result<Mlp<S>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!("unknown checkpoint format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.dims.len() != self.layers.len() + 1 {
            return Err(Error::invalid("checkpoint dims and layer count disagree"));
        }
        let layers = self
            .dims
            .windows(2)
            .zip(&self.layers)
            .map(|(d, l)| {
                let w = l.weights.iter().map(|&v| S::lit(v)).collect();
                Layer::new(
                    Matrix::from_vec(d[0], d[1], w)?,
                    l.bias.iter().map(|&v| S::lit(v)).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::new(layers)
    }
}

pub fn save_checkpoint<S: Scalar>(model: &Mlp<S>, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from_model(model))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Mlp<S>> {
    let ckpt: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
    ckpt.to_model()
}
