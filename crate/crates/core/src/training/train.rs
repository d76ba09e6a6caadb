use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape, Tensor, Var};
use crate::dynamics::{fmt_float, VectorField};
use crate::error::{Error, Result};

use super::losses::{data_loss, pinn_loss, FD_STEP};
use super::model::Model;

/// Loss weights, component selection and optimizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub physics_weight: f64,
    pub data_weight: f64,
    /// Components entering the residue loss; all when absent.
    pub physics_components: Option<Vec<usize>>,
    /// Components compared against data samples.
    pub data_components: Vec<usize>,
    pub fd_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            adam: AdamConfig::default(),
            physics_weight: 1.0,
            data_weight: 1.0,
            physics_components: None,
            data_components: Vec::new(),
            fd_step: FD_STEP,
        }
    }
}

/// What a model is fitted to.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub field: &'a dyn VectorField,
    pub x0: &'a [f64],
    pub times: &'a [f64],
    /// Samples `[m, n]` on `times`; only the configured components are used.
    pub samples: Option<&'a Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub physics_loss: f64,
    pub data_loss: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<LossReport>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub best_total: f64,
    /// Optimizer-loop time only.
    pub wall_seconds: f64,
    /// First epoch with a non-finite loss or gradient.
    pub diverged: Option<usize>,
}

impl TrainOutcome {
    pub fn final_report(&self) -> Option<&LossReport> {
        self.history.last()
    }
}

/// Records the weighted training loss; returns `(total, physics, data)`.
pub fn training_loss(
    tape: &Tape,
    model: &dyn Model,
    vars: &[Var],
    problem: &Problem,
    config: &TrainConfig,
) -> Result<(Var, Var, Var)> {
    let pairs = model.states_and_rates(tape, vars, problem.x0, problem.times, config.fd_step)?;
    let physics = pinn_loss(
        tape,
        problem.field,
        &pairs,
        config.physics_components.as_deref(),
    )?;
    let data = match problem.samples {
        Some(s) if !config.data_components.is_empty() => {
            let states: Vec<Var> = pairs.iter().map(|p| p.0).collect();
            data_loss(tape, &states, s, &config.data_components)?
        }
        _ => tape.scalar(0.0),
    };
    let total = tape.add(
        tape.scale(physics, config.physics_weight),
        tape.scale(data, config.data_weight),
    )?;
    Ok((total, physics, data))
}

/// Full-batch Adam on the training loss. The parameters with the lowest
/// recorded total are restored at the end. A non-finite loss or gradient
/// stops training and is reported through [`TrainOutcome::diverged`].
pub fn train(
    model: &mut dyn Model,
    problem: &Problem,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut params = model.params();
    let mut adam = Adam::new(config.adam, &params);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;
    let mut diverged = None;
    let start = Instant::now();

    for epoch in 0..config.epochs {
        let tape = Tape::new();
        let vars = model.bind(&tape);
        let (total, physics, data) = training_loss(&tape, model, &vars, problem, config)?;
        let report = LossReport {
            epoch,
            physics_loss: tape.value_ref(physics).item(),
            data_loss: tape.value_ref(data).item(),
            total: tape.value_ref(total).item(),
        };
        history.push(report);
        if !report.total.is_finite() {
            diverged = Some(epoch);
            break;
        }
        if best.as_ref().is_none_or(|b| report.total < b.1) {
            best = Some((epoch, report.total, params.clone()));
        }
        let grads = tape.backward(total)?;
        let grads: Vec<Tensor> = vars
            .iter()
            .zip(&params)
            .map(|(v, p)| grads.get_or_zeros(*v, p))
            .collect();
        match adam.step(&mut params, &grads, epoch) {
            Ok(()) => {}
            Err(Error::Diverged { epoch }) => {
                diverged = Some(epoch);
                break;
            }
            Err(e) => return Err(e),
        }
        model.set_params(&params)?;
    }

    let wall_seconds = start.elapsed().as_secs_f64();
    let (best_epoch, best_total) = match best {
        Some((e, t, p)) => {
            model.set_params(&p)?;
            (Some(e), t)
        }
        None => (None, f64::NAN),
    };
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_total,
        wall_seconds,
        diverged,
    })
}

/// CSV `epoch,physics_loss,data_loss,total`.
pub fn write_history<W: Write>(history: &[LossReport], mut out: W) -> Result<()> {
    writeln!(out, "epoch,physics_loss,data_loss,total")?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{}",
            r.epoch,
            fmt_float(r.physics_loss),
            fmt_float(r.data_loss),
            fmt_float(r.total)
        )?;
    }
    Ok(())
}
