//! Physics and data losses, time derivatives and evaluation metrics.
//!
//! Both losses use the same convention: for each trajectory, the squared
//! Euclidean norm over the included components is averaged over the grid;
//! the result is then averaged over the trajectories a model trains (the two
//! twins of a conjugate flow). A constant offset `c` on three included
//! components therefore costs `3c²`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::{Trajectory, VectorField};
use crate::error::{Error, Result};

use super::model::Model;

/// Step of the centred difference used for time derivatives.
pub const FD_STEP: f64 = 1e-3;

/// `(f(t + h) − f(t − h)) / 2h` for every `t`, with `f` evaluated in two
/// batched calls. Returns `[m, n]`.
pub fn fd_time_derivative<F>(eval: F, times: &[f64], h: f64) -> Result<Tensor>
where
    F: Fn(&[f64]) -> Result<Tensor>,
{
    let plus: Vec<f64> = times.iter().map(|t| t + h).collect();
    let minus: Vec<f64> = times.iter().map(|t| t - h).collect();
    let (p, m) = (eval(&plus)?, eval(&minus)?);
    if p.shape() != m.shape() {
        return Err(Error::dim(
            "fd_time_derivative",
            format!("{:?} vs {:?}", p.shape(), m.shape()),
        ));
    }
    let data = p
        .data()
        .iter()
        .zip(m.data())
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect();
    Tensor::new(p.shape().to_vec(), data)
}

fn select(tape: &Tape, x: Var, components: Option<&[usize]>) -> Result<Var> {
    match components {
        None => Ok(x),
        Some(cols) => {
            let parts = cols
                .iter()
                .map(|&c| tape.slice(x, 1, c..c + 1))
                .collect::<Result<Vec<_>>>()?;
            tape.concat(&parts, 1)
        }
    }
}

/// Grid mean of the squared norm of `r` (`[m, k]`).
fn grid_mean_sq(tape: &Tape, r: Var) -> Var {
    let m = tape.shape(r)[0].max(1);
    tape.scale(tape.squared_norm(r), 1.0 / m as f64)
}

fn mean_of(tape: &Tape, terms: Vec<Var>) -> Result<Var> {
    let k = terms.len();
    let mut it = terms.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::Contract("loss over zero trajectories".into()))?;
    let mut acc = first;
    for t in it {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / k as f64))
}

/// Residue loss `mean_i ‖ẋ(tᵢ) − F(x(tᵢ))‖²` restricted to `components`,
/// averaged over trajectories. `pairs` holds `(states, rates)` per
/// trajectory.
pub fn pinn_loss(
    tape: &Tape,
    field: &dyn VectorField,
    pairs: &[(Var, Var)],
    components: Option<&[usize]>,
) -> Result<Var> {
    let terms = pairs
        .iter()
        .map(|&(x, dx)| {
            let r = tape.sub(dx, field.eval_tape(tape, x)?)?;
            Ok(grid_mean_sq(tape, select(tape, r, components)?))
        })
        .collect::<Result<Vec<_>>>()?;
    mean_of(tape, terms)
}

/// Squared error against `samples` (`[m, n]`, aligned with the grid) on
/// `components`, averaged over trajectories.
pub fn data_loss(
    tape: &Tape,
    states: &[Var],
    samples: &Tensor,
    components: &[usize],
) -> Result<Var> {
    let target = tape.constant(samples.clone());
    let terms = states
        .iter()
        .map(|&x| {
            if tape.shape(x) != samples.shape() {
                return Err(Error::Config(format!(
                    "samples {:?} are not aligned with the grid {:?}",
                    samples.shape(),
                    tape.shape(x)
                )));
            }
            let r = tape.sub(x, target)?;
            Ok(grid_mean_sq(tape, select(tape, r, Some(components))?))
        })
        .collect::<Result<Vec<_>>>()?;
    mean_of(tape, terms)
}

/// Untracked residue loss of `model` on a grid.
pub fn pinn_loss_value(
    model: &dyn Model,
    field: &dyn VectorField,
    x0: &[f64],
    times: &[f64],
    components: Option<&[usize]>,
) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var> = model
        .params()
        .into_iter()
        .map(|p| tape.constant(p))
        .collect();
    let pairs = model.states_and_rates(&tape, &vars, x0, times, FD_STEP)?;
    let loss = pinn_loss(&tape, field, &pairs, components)?;
    Ok(tape.value(loss).item())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub l_acc: f64,
    pub l_extrap: f64,
}

/// Grid mean of the squared Euclidean error between two `[m, n]` arrays.
pub fn mean_squared_error(a: &Tensor, b: &Tensor) -> f64 {
    let m = a.shape().first().copied().unwrap_or(1).max(1);
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / m as f64
}

/// Errors of the averaged output against reference trajectories on the
/// training horizon and on the extended horizon.
pub fn eval_metrics(
    model: &dyn Model,
    x0: &[f64],
    reference_acc: &Trajectory,
    reference_extrap: &Trajectory,
) -> Result<Metrics> {
    let score = |r: &Trajectory| -> Result<f64> {
        let pred = model.predict(x0, &r.times)?;
        Ok(mean_squared_error(&pred, &r.to_tensor()))
    };
    Ok(Metrics {
        l_acc: score(reference_acc)?,
        l_extrap: score(reference_extrap)?,
    })
}

/// `n` evenly spaced points covering `[a, b]` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| {
                if i + 1 == n {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}
