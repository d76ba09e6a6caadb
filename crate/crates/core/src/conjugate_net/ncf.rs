use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::VectorField;
use crate::error::{Error, Result};
use crate::matrix_flow::{init_skew_fallback, AffineFlow, TopologyMode};

use super::coupling::{twin_augment, CouplingEnsemble, EnsembleLayout};

/// Architecture knobs for [`NcfModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NcfConfig {
    /// Hidden widths of every shift network.
    pub hidden: Vec<usize>,
    pub coupling_layers: usize,
    pub mode: TopologyMode,
    /// Factor applied once to the shift networks' output layers by
    /// [`NcfModel::init_from_field`].
    pub output_scale: f64,
    /// Whether `M` and `b` receive gradients.
    pub train_flow: bool,
}

impl Default for NcfConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            coupling_layers: 2,
            mode: TopologyMode::Free,
            output_scale: 1e-2,
            train_flow: true,
        }
    }
}

/// Result of a recorded forward pass: each `[m, n]`.
#[derive(Clone, Copy, Debug)]
pub struct NcfOutput {
    pub averaged: Var,
    pub twin_a: Var,
    pub twin_b: Var,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcfLayout {
    pub state_dim: usize,
    pub ensemble: EnsembleLayout,
    pub mode: TopologyMode,
    pub train_flow: bool,
}

/// `Φᵗ = 𝓗⁻¹ ∘ Ψᵗ ∘ 𝓗` acting on twin-augmented states.
///
/// Parameters are ordered `[ensemble..., M, b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NcfModel {
    state_dim: usize,
    pub ensemble: CouplingEnsemble,
    pub flow: AffineFlow,
    pub train_flow: bool,
}

impl NcfModel {
    /// Random shift networks and a zero affine flow.
    pub fn new(state_dim: usize, config: &NcfConfig, rng: &mut impl Rng) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::Config("state dimension must be positive".into()));
        }
        let d = 2 * state_dim;
        let ensemble = CouplingEnsemble::new(d, &config.hidden, config.coupling_layers, rng)?;
        let flow = AffineFlow::new(Tensor::zeros(&[d, d]), vec![0.0; d], config.mode)?;
        Ok(Self {
            state_dim,
            ensemble,
            flow,
            train_flow: config.train_flow,
        })
    }

    pub fn from_parts(
        state_dim: usize,
        ensemble: CouplingEnsemble,
        flow: AffineFlow,
    ) -> Result<Self> {
        if ensemble.dim() != 2 * state_dim || flow.dim() != 2 * state_dim {
            return Err(Error::dim(
                "ncf_model",
                format!(
                    "state {state_dim}, ensemble {}, flow {}",
                    ensemble.dim(),
                    flow.dim()
                ),
            ));
        }
        Ok(Self {
            state_dim,
            ensemble,
            flow,
            train_flow: true,
        })
    }

    pub fn from_layout(layout: &NcfLayout, params: Vec<Tensor>) -> Result<Self> {
        let k = params.len();
        if k < 2 {
            return Err(Error::Contract("missing flow parameters".into()));
        }
        let mut params = params;
        let b = params.pop().expect("checked");
        let m = params.pop().expect("checked");
        let ensemble = CouplingEnsemble::from_params(&layout.ensemble, params)?;
        let flow = AffineFlow::new(m, b.into_data(), layout.mode)?;
        let mut model = Self::from_parts(layout.state_dim, ensemble, flow)?;
        model.train_flow = layout.train_flow;
        Ok(model)
    }

    pub fn layout(&self) -> NcfLayout {
        NcfLayout {
            state_dim: self.state_dim,
            ensemble: self.ensemble.layout(),
            mode: self.flow.mode,
            train_flow: self.train_flow,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p = self.ensemble.params();
        p.push(self.flow.generator.clone());
        p.push(self.flow.offset.clone());
        p
    }

    pub fn set_params(&mut self, params: &[Tensor]) -> Result<()> {
        let k = self.ensemble.param_tensor_count();
        if params.len() != k + 2 {
            return Err(Error::Contract(format!(
                "model has {} parameter tensors, got {}",
                k + 2,
                params.len()
            )));
        }
        let (m, b) = (&params[k], &params[k + 1]);
        if m.shape() != self.flow.generator.shape() || b.shape() != self.flow.offset.shape() {
            return Err(Error::dim(
                "ncf_set_params",
                "flow parameter shapes changed",
            ));
        }
        self.ensemble.set_params(&params[..k])?;
        self.flow.generator = m.clone();
        self.flow.offset = b.clone();
        Ok(())
    }

    /// Stored parameter count (shift networks plus `M` and `b`).
    pub fn param_count(&self) -> usize {
        self.ensemble.param_count() + self.flow.generator.len() + self.flow.offset.len()
    }

    /// Registers parameters on `tape`; the flow is constant when
    /// `train_flow` is off.
    pub fn bind(&self, tape: &Tape) -> Vec<Var> {
        let mut vars: Vec<Var> = self
            .ensemble
            .params()
            .into_iter()
            .map(|p| tape.param(p))
            .collect();
        let register = |t: Tensor| {
            if self.train_flow {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        vars.push(register(self.flow.generator.clone()));
        vars.push(register(self.flow.offset.clone()));
        vars
    }

    fn split_vars<'a>(&self, vars: &'a [Var]) -> Result<(&'a [Var], Var, Var)> {
        let k = self.ensemble.param_tensor_count();
        if vars.len() != k + 2 {
            return Err(Error::Contract(format!(
                "model has {} parameter tensors, got {} handles",
                k + 2,
                vars.len()
            )));
        }
        Ok((&vars[..k], vars[k], vars[k + 1]))
    }

    /// `Φᵗ` on augmented starts: `z0` is `[1, 2n]` (one start for all
    /// times) or `[m, 2n]` (one per time). Returns `[m, 2n]`.
    pub fn flow_augmented_on(
        &self,
        tape: &Tape,
        vars: &[Var],
        z0: Var,
        times: &[f64],
    ) -> Result<Var> {
        let (ens, m, b) = self.split_vars(vars)?;
        let y0 = self.ensemble.forward_with(tape, ens, z0)?;
        let yt = self.flow.eval_on(tape, m, b, times, y0)?;
        self.ensemble.inverse_with(tape, ens, yt)
    }

    /// Twin-augments `x0`, flows it to every time and splits the result.
    pub fn forward_on(
        &self,
        tape: &Tape,
        vars: &[Var],
        x0: &[f64],
        times: &[f64],
    ) -> Result<NcfOutput> {
        if x0.len() != self.state_dim {
            return Err(Error::dim(
                "ncf_forward",
                format!(
                    "initial condition of length {} for state dimension {}",
                    x0.len(),
                    self.state_dim
                ),
            ));
        }
        let n = self.state_dim;
        let z0 = tape.constant(Tensor::row(&twin_augment(x0)));
        let x = self.flow_augmented_on(tape, vars, z0, times)?;
        let twin_a = tape.slice(x, 1, 0..n)?;
        let twin_b = tape.slice(x, 1, n..2 * n)?;
        let averaged = tape.scale(tape.add(twin_a, twin_b)?, 0.5);
        Ok(NcfOutput {
            averaged,
            twin_a,
            twin_b,
        })
    }

    /// Twin states at `times` and their centered differences with step `h`.
    ///
    /// The shifted points are `Ψ^{±h}` applied to the inner states at
    /// `times`, which equals `Ψ^{t±h}` by the group law, so only two extra
    /// exponentials are needed instead of one per shifted time.
    pub fn states_and_rates_on(
        &self,
        tape: &Tape,
        vars: &[Var],
        x0: &[f64],
        times: &[f64],
        h: f64,
    ) -> Result<[(Var, Var); 2]> {
        if x0.len() != self.state_dim {
            return Err(Error::dim(
                "ncf_forward",
                format!(
                    "initial condition of length {} for state dimension {}",
                    x0.len(),
                    self.state_dim
                ),
            ));
        }
        let (ens, m, b) = self.split_vars(vars)?;
        let z0 = tape.constant(Tensor::row(&twin_augment(x0)));
        let y0 = self.ensemble.forward_with(tape, ens, z0)?;
        let y = self.flow.eval_on(tape, m, b, times, y0)?;
        let minus = self.flow.step_on(tape, m, b, -h, y)?;
        let plus = self.flow.step_on(tape, m, b, h, y)?;
        let x = self
            .ensemble
            .inverse_with(tape, ens, tape.concat(&[minus, y, plus], 0)?)?;
        let (k, n) = (times.len(), self.state_dim);
        let twin = |cols: std::ops::Range<usize>| -> Result<(Var, Var)> {
            let x = tape.slice(x, 1, cols)?;
            let lo = tape.slice(x, 0, 0..k)?;
            let mid = tape.slice(x, 0, k..2 * k)?;
            let hi = tape.slice(x, 0, 2 * k..3 * k)?;
            Ok((mid, tape.scale(tape.sub(hi, lo)?, 0.5 / h)))
        };
        Ok([twin(0..n)?, twin(n..2 * n)?])
    }

    /// Untracked forward pass: `(averaged, twin_a, twin_b)`, each `[m, n]`.
    pub fn forward(&self, x0: &[f64], times: &[f64]) -> Result<(Tensor, Tensor, Tensor)> {
        let tape = Tape::new();
        let vars = self.constants(&tape);
        let out = self.forward_on(&tape, &vars, x0, times)?;
        Ok((
            tape.value(out.averaged),
            tape.value(out.twin_a),
            tape.value(out.twin_b),
        ))
    }

    /// Untracked `Φᵗ(z)` on the `2n`-dimensional augmented space.
    pub fn flow_augmented(&self, z: &[f64], t: f64) -> Result<Vec<f64>> {
        if z.len() != 2 * self.state_dim {
            return Err(Error::dim(
                "flow_augmented",
                format!("{} for {}", z.len(), 2 * self.state_dim),
            ));
        }
        let tape = Tape::new();
        let vars = self.constants(&tape);
        let z0 = tape.constant(Tensor::row(z));
        let out = self.flow_augmented_on(&tape, &vars, z0, &[t])?;
        Ok(tape.value(out).into_data())
    }

    fn constants(&self, tape: &Tape) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| tape.constant(p))
            .collect()
    }

    /// Near-identity homeomorphism (output layers shrunk by `output_scale`)
    /// and an affine flow matched to the field at `x0`: `(Ã, b)` from the skew fallback on the block-duplicated
    /// system, stored directly as `M` (its own skew part, so both topology
    /// modes start from the same generator).
    pub fn init_from_field(
        &mut self,
        field: &dyn VectorField,
        x0: &[f64],
        output_scale: f64,
    ) -> Result<()> {
        if field.dim() != self.state_dim || x0.len() != self.state_dim {
            return Err(Error::dim(
                "ncf_init",
                format!(
                    "field {}, x0 {}, model {}",
                    field.dim(),
                    x0.len(),
                    self.state_dim
                ),
            ));
        }
        let j2 = field.jacobian(x0).block_diag(2);
        let f2 = twin_augment(&field.eval(x0));
        let (a, b) = init_skew_fallback(&j2, &twin_augment(x0), &f2)?;
        self.flow.generator = a;
        self.flow.offset = Tensor::vector(b);
        self.ensemble.scale_output_layers(output_scale);
        Ok(())
    }
}
