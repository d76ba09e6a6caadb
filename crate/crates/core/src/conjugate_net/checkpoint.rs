//! JSON checkpoints whose floats survive a write/read cycle bit for bit.
//!
//! Every `f64` is stored as the 16-digit hex form of its IEEE-754 bits.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedTensor {
    pub shape: Vec<usize>,
    pub bits: Vec<String>,
}

pub fn encode_f64(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

pub fn decode_f64(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|e| Error::Config(format!("bad float encoding {s:?}: {e}")))
}

impl EncodedTensor {
    pub fn encode(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            bits: t.data().iter().map(|x| encode_f64(*x)).collect(),
        }
    }

    pub fn decode(&self) -> Result<Tensor> {
        let data = self
            .bits
            .iter()
            .map(|s| decode_f64(s))
            .collect::<Result<Vec<_>>>()?;
        Tensor::new(self.shape.clone(), data)
    }
}

/// A model snapshot: `kind` names the model family, `architecture` is its
/// layout record and `params` its flat parameter list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: String,
    pub architecture: serde_json::Value,
    pub params: Vec<EncodedTensor>,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new<A: Serialize>(
        kind: &str,
        architecture: &A,
        params: &[Tensor],
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            kind: kind.to_string(),
            architecture: serde_json::to_value(architecture)?,
            params: params.iter().map(EncodedTensor::encode).collect(),
            seed,
        })
    }

    pub fn architecture<A: for<'de> Deserialize<'de>>(&self) -> Result<A> {
        Ok(serde_json::from_value(self.architecture.clone())?)
    }

    pub fn tensors(&self) -> Result<Vec<Tensor>> {
        self.params.iter().map(EncodedTensor::decode).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
