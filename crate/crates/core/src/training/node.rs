use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::conjugate_net::{Checkpoint, Mlp, MlpLayout};
use crate::dynamics::{midpoint_solve_tape, midpoint_step_tape};
use crate::error::{Error, Result};

use super::model::{Model, ModelKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeConfig {
    pub hidden: Vec<usize>,
    /// Midpoint steps per interval of the training grid.
    pub substeps: usize,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            substeps: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeLayout {
    pub state_dim: usize,
    pub field: MlpLayout,
    pub dt: f64,
}

/// Neural vector field integrated by the explicit midpoint rule with a
/// fixed step; gradients flow through the unrolled steps.
///
/// The step is fixed at construction from the training grid, so evaluation
/// on other grids uses the same step (with a partial final step).
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralOde {
    state_dim: usize,
    pub field: Mlp,
    pub dt: f64,
}

impl NeuralOde {
    /// `grid_spacing` is the distance between training samples.
    pub fn new(
        state_dim: usize,
        config: &NodeConfig,
        grid_spacing: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.substeps == 0 || !(grid_spacing > 0.0) {
            return Err(Error::Config("neural ODE needs a positive step".into()));
        }
        let sizes: Vec<usize> = std::iter::once(state_dim)
            .chain(config.hidden.iter().copied())
            .chain(std::iter::once(state_dim))
            .collect();
        Ok(Self {
            state_dim,
            field: Mlp::new(&sizes, rng)?,
            dt: grid_spacing / config.substeps as f64,
        })
    }

    pub fn from_layout(layout: &NodeLayout, params: Vec<Tensor>) -> Result<Self> {
        let field = Mlp::from_params(&layout.field, params)?;
        if field.input_dim() != layout.state_dim || field.output_dim() != layout.state_dim {
            return Err(Error::dim("neural_ode", "field width disagrees with state"));
        }
        Ok(Self {
            state_dim: layout.state_dim,
            field,
            dt: layout.dt,
        })
    }

    pub fn layout(&self) -> NodeLayout {
        NodeLayout {
            state_dim: self.state_dim,
            field: self.field.layout(),
            dt: self.dt,
        }
    }
}

impl Model for NeuralOde {
    fn kind(&self) -> ModelKind {
        ModelKind::Node
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn params(&self) -> Vec<Tensor> {
        self.field.params().to_vec()
    }

    fn set_params(&mut self, params: &[Tensor]) -> Result<()> {
        self.field.set_params(params.to_vec())
    }

    fn param_count(&self) -> usize {
        self.field.param_count()
    }

    fn solutions(&self, tape: &Tape, vars: &[Var], x0: &[f64], times: &[f64]) -> Result<Vec<Var>> {
        if x0.len() != self.state_dim {
            return Err(Error::dim(
                "neural_ode",
                format!("x0 of length {}", x0.len()),
            ));
        }
        let field = |tp: &Tape, x: Var| self.field.forward_with(tp, vars, x);
        let start = tape.constant(Tensor::row(x0));
        Ok(vec![midpoint_solve_tape(
            tape, &field, start, times, self.dt,
        )?])
    }

    /// Derivatives come from one midpoint step of `±h` taken from every
    /// grid state as a single batch, so the solver never runs backwards
    /// from `t = 0`.
    fn states_and_rates(
        &self,
        tape: &Tape,
        vars: &[Var],
        x0: &[f64],
        times: &[f64],
        h: f64,
    ) -> Result<Vec<(Var, Var)>> {
        let states = self.solutions(tape, vars, x0, times)?[0];
        let field = |tp: &Tape, x: Var| self.field.forward_with(tp, vars, x);
        let plus = midpoint_step_tape(tape, &field, states, h)?;
        let minus = midpoint_step_tape(tape, &field, states, -h)?;
        let rate = tape.scale(tape.sub(plus, minus)?, 0.5 / h);
        Ok(vec![(states, rate)])
    }

    fn checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        Checkpoint::new(
            ModelKind::Node.as_str(),
            &self.layout(),
            self.field.params(),
            seed,
        )
    }
}
