use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::conjugate_net::{Checkpoint, NcfLayout, NcfModel};
use crate::error::{Error, Result};
use crate::matrix_flow::TopologyMode;

use super::node::{NeuralOde, NodeLayout};
use super::pinn::{MlpPinn, PinnLayout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Ncf,
    NcfT,
    Node,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Mlp,
        ModelKind::Ncf,
        ModelKind::NcfT,
        ModelKind::Node,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Ncf => "ncf",
            ModelKind::NcfT => "ncf_t",
            ModelKind::Node => "node",
        }
    }

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Mlp => "MLP",
            ModelKind::Ncf => "NCF",
            ModelKind::NcfT => "NCF-T",
            ModelKind::Node => "NODE",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

/// A trainable surrogate `t ↦ x(t; x⁰)`.
///
/// `solutions` returns every trajectory that carries the training loss:
/// the two twins for conjugate flows, a single one otherwise. Metrics use
/// their average.
pub trait Model: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn state_dim(&self) -> usize;
    fn params(&self) -> Vec<Tensor>;
    fn set_params(&mut self, params: &[Tensor]) -> Result<()>;
    /// Trainable scalar count.
    fn param_count(&self) -> usize;

    /// Registers the parameters on `tape`, in [`Model::params`] order.
    fn bind(&self, tape: &Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.param(p)).collect()
    }

    /// `[m, n]` trajectories at `times`.
    fn solutions(&self, tape: &Tape, vars: &[Var], x0: &[f64], times: &[f64]) -> Result<Vec<Var>>;

    /// States at `times` and their centred finite-difference time
    /// derivatives with step `h`, one pair per solution.
    ///
    /// The default evaluates the batch `[t − h; t; t + h]` in one pass.
    fn states_and_rates(
        &self,
        tape: &Tape,
        vars: &[Var],
        x0: &[f64],
        times: &[f64],
        h: f64,
    ) -> Result<Vec<(Var, Var)>> {
        let m = times.len();
        let all: Vec<f64> = times
            .iter()
            .map(|t| t - h)
            .chain(times.iter().copied())
            .chain(times.iter().map(|t| t + h))
            .collect();
        self.solutions(tape, vars, x0, &all)?
            .into_iter()
            .map(|s| {
                let minus = tape.slice(s, 0, 0..m)?;
                let mid = tape.slice(s, 0, m..2 * m)?;
                let plus = tape.slice(s, 0, 2 * m..3 * m)?;
                Ok((mid, tape.scale(tape.sub(plus, minus)?, 0.5 / h)))
            })
            .collect()
    }

    /// Untracked averaged output `[m, n]`.
    fn predict(&self, x0: &[f64], times: &[f64]) -> Result<Tensor> {
        let tape = Tape::new();
        let vars: Vec<Var> = self
            .params()
            .into_iter()
            .map(|p| tape.constant(p))
            .collect();
        let sols = self.solutions(&tape, &vars, x0, times)?;
        Ok(tape.value(average(&tape, &sols)?))
    }

    fn checkpoint(&self, seed: u64) -> Result<Checkpoint>;
}

/// Elementwise mean of equally shaped trajectories.
pub fn average(tape: &Tape, sols: &[Var]) -> Result<Var> {
    let (first, rest) = sols
        .split_first()
        .ok_or_else(|| Error::Contract("model produced no solutions".into()))?;
    let mut acc = *first;
    for s in rest {
        acc = tape.add(acc, *s)?;
    }
    Ok(if rest.is_empty() {
        acc
    } else {
        tape.scale(acc, 1.0 / sols.len() as f64)
    })
}

impl Model for NcfModel {
    fn kind(&self) -> ModelKind {
        match self.flow.mode {
            TopologyMode::Free => ModelKind::Ncf,
            TopologyMode::Skew => ModelKind::NcfT,
        }
    }

    fn state_dim(&self) -> usize {
        NcfModel::state_dim(self)
    }

    fn params(&self) -> Vec<Tensor> {
        NcfModel::params(self)
    }

    fn set_params(&mut self, params: &[Tensor]) -> Result<()> {
        NcfModel::set_params(self, params)
    }

    fn param_count(&self) -> usize {
        NcfModel::param_count(self)
    }

    fn bind(&self, tape: &Tape) -> Vec<Var> {
        NcfModel::bind(self, tape)
    }

    fn solutions(&self, tape: &Tape, vars: &[Var], x0: &[f64], times: &[f64]) -> Result<Vec<Var>> {
        let out = self.forward_on(tape, vars, x0, times)?;
        Ok(vec![out.twin_a, out.twin_b])
    }

    fn states_and_rates(
        &self,
        tape: &Tape,
        vars: &[Var],
        x0: &[f64],
        times: &[f64],
        h: f64,
    ) -> Result<Vec<(Var, Var)>> {
        Ok(self.states_and_rates_on(tape, vars, x0, times, h)?.to_vec())
    }

    fn checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        Checkpoint::new(
            self.kind().as_str(),
            &self.layout(),
            &NcfModel::params(self),
            seed,
        )
    }
}

/// Rebuilds a model from a checkpoint written by [`Model::checkpoint`].
pub fn load_model(ck: &Checkpoint) -> Result<Box<dyn Model>> {
    let kind: ModelKind = ck.kind.parse()?;
    let params = ck.tensors()?;
    Ok(match kind {
        ModelKind::Ncf | ModelKind::NcfT => {
            let layout: NcfLayout = ck.architecture()?;
            Box::new(NcfModel::from_layout(&layout, params)?)
        }
        ModelKind::Mlp => {
            let layout: PinnLayout = ck.architecture()?;
            Box::new(MlpPinn::from_layout(&layout, params)?)
        }
        ModelKind::Node => {
            let layout: NodeLayout = ck.architecture()?;
            Box::new(NeuralOde::from_layout(&layout, params)?)
        }
    })
}
