use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::conjugate_net::{Checkpoint, EncodedTensor, Mlp, MlpLayout};
use crate::error::{Error, Result};

use super::model::{Model, ModelKind};

/// How the network output is blended with the initial condition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcWrapper {
    /// `x⁰ + (1 − e^{−t})·net`
    #[default]
    Exponential,
    /// `x⁰ + t·net`
    Linear,
}

impl IcWrapper {
    fn gate(self, t: f64) -> f64 {
        match self {
            IcWrapper::Exponential => -(-t).exp_m1(),
            IcWrapper::Linear => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PinnConfig {
    /// Rows of the fixed frequency matrix; the feature width is twice this.
    pub frequencies: usize,
    pub sigma: f64,
    /// Trunk hidden widths.
    pub hidden: Vec<usize>,
    pub wrapper: IcWrapper,
}

impl Default for PinnConfig {
    fn default() -> Self {
        Self {
            frequencies: 16,
            sigma: 2.0,
            hidden: vec![32, 32],
            wrapper: IcWrapper::Exponential,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinnLayout {
    pub state_dim: usize,
    pub frequencies: EncodedTensor,
    pub trunk: MlpLayout,
    pub wrapper: IcWrapper,
}

/// Fourier-feature MLP over `(t, x⁰)` with a hard initial-condition
/// wrapper.
///
/// Features are `[cos(B·v), sin(B·v)]` for `v = (t, x⁰)` and a frequency
/// matrix `B ~ N(0, σ²)` drawn once at construction and never trained.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpPinn {
    state_dim: usize,
    frequencies: Tensor,
    pub trunk: Mlp,
    pub wrapper: IcWrapper,
}

impl MlpPinn {
    pub fn new(state_dim: usize, config: &PinnConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.frequencies == 0 || !(config.sigma > 0.0) {
            return Err(Error::Config(
                "Fourier layer needs frequencies and σ > 0".into(),
            ));
        }
        let normal = Normal::new(0.0, config.sigma).map_err(|e| Error::Config(e.to_string()))?;
        let k = config.frequencies;
        let freq: Vec<f64> = (0..k * (1 + state_dim))
            .map(|_| normal.sample(rng))
            .collect();
        let sizes: Vec<usize> = std::iter::once(2 * k)
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(state_dim))
            .collect();
        Ok(Self {
            state_dim,
            frequencies: Tensor::matrix(k, 1 + state_dim, freq)?,
            trunk: Mlp::new(&sizes, rng)?,
            wrapper: config.wrapper,
        })
    }

    pub fn from_layout(layout: &PinnLayout, params: Vec<Tensor>) -> Result<Self> {
        let frequencies = layout.frequencies.decode()?;
        let trunk = Mlp::from_params(&layout.trunk, params)?;
        if frequencies.shape() != [trunk.input_dim() / 2, 1 + layout.state_dim]
            || trunk.output_dim() != layout.state_dim
        {
            return Err(Error::dim(
                "mlp_pinn",
                "frequency matrix disagrees with trunk",
            ));
        }
        Ok(Self {
            state_dim: layout.state_dim,
            frequencies,
            trunk,
            wrapper: layout.wrapper,
        })
    }

    pub fn layout(&self) -> PinnLayout {
        PinnLayout {
            state_dim: self.state_dim,
            frequencies: EncodedTensor::encode(&self.frequencies),
            trunk: self.trunk.layout(),
            wrapper: self.wrapper,
        }
    }

    pub fn frequencies(&self) -> &Tensor {
        &self.frequencies
    }

    /// `[m, 2k]` Fourier features of `(tᵢ, x⁰)`.
    pub fn features(&self, x0: &[f64], times: &[f64]) -> Tensor {
        let k = self.frequencies.shape()[0];
        let mut out = Vec::with_capacity(times.len() * 2 * k);
        for &t in times {
            let proj: Vec<f64> = (0..k)
                .map(|j| {
                    let row = self.frequencies.row_slice(j);
                    row[0] * t + row[1..].iter().zip(x0).map(|(b, x)| b * x).sum::<f64>()
                })
                .collect();
            out.extend(proj.iter().map(|p| p.cos()));
            out.extend(proj.iter().map(|p| p.sin()));
        }
        Tensor::from_parts(vec![times.len(), 2 * k], out)
    }
}

impl Model for MlpPinn {
    fn kind(&self) -> ModelKind {
        ModelKind::Mlp
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn params(&self) -> Vec<Tensor> {
        self.trunk.params().to_vec()
    }

    fn set_params(&mut self, params: &[Tensor]) -> Result<()> {
        self.trunk.set_params(params.to_vec())
    }

    fn param_count(&self) -> usize {
        self.trunk.param_count()
    }

    fn solutions(&self, tape: &Tape, vars: &[Var], x0: &[f64], times: &[f64]) -> Result<Vec<Var>> {
        if x0.len() != self.state_dim {
            return Err(Error::dim("mlp_pinn", format!("x0 of length {}", x0.len())));
        }
        let n = self.state_dim;
        let feats = tape.constant(self.features(x0, times));
        let net = self.trunk.forward_with(tape, vars, feats)?;
        let gate: Vec<f64> = times
            .iter()
            .flat_map(|t| std::iter::repeat_n(self.wrapper.gate(*t), n))
            .collect();
        let gate = tape.constant(Tensor::new(vec![times.len(), n], gate)?);
        let shift = tape.mul(net, gate)?;
        let start = tape.constant(Tensor::vector(x0.to_vec()));
        Ok(vec![tape.add(shift, start)?])
    }

    fn checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        Checkpoint::new(
            ModelKind::Mlp.as_str(),
            &self.layout(),
            self.trunk.params(),
            seed,
        )
    }
}
