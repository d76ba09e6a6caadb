//! Matrix exponentials and closed-form affine flows.
//!
//! Everything here is built from recorded tape operations, so gradients reach
//! the generator and offset without any hand-written adjoint.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Taylor order used inside the scaled exponential.
pub const TAYLOR_ORDER: usize = 12;
/// Scaling target: the argument is halved until its 1-norm is at most this.
pub const SCALE_TARGET: f64 = 0.5;

/// Restriction applied to the trainable generator of an affine flow.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyMode {
    /// `A = M`.
    #[default]
    Free,
    /// `A = (M − Mᵀ)/2`; the flow is an isometry.
    Skew,
}

fn square_dims(op: &'static str, shape: &[usize]) -> Result<(Option<usize>, usize)> {
    match shape {
        [r, c] if r == c => Ok((None, *r)),
        [n, r, c] if r == c => Ok((Some(*n), *r)),
        _ => Err(Error::dim(
            op,
            format!("expected square matrix, got {shape:?}"),
        )),
    }
}

/// Largest induced 1-norm (max column sum) over the batch.
fn max_one_norm(t: &Tensor, d: usize) -> f64 {
    t.data()
        .chunks(d * d)
        .map(|m| {
            (0..d)
                .map(|j| (0..d).map(|i| m[i * d + j].abs()).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Number of squarings needed so that `norm / 2^s <= SCALE_TARGET`.
pub fn scaling_exponent(norm: f64) -> u32 {
    if !(norm > SCALE_TARGET) {
        return 0;
    }
    (norm / SCALE_TARGET).log2().ceil().max(0.0) as u32
}

/// `e^A` by scaling and squaring around a degree-12 Taylor polynomial.
///
/// Accepts a single `[d, d]` matrix or a batch `[m, d, d]`; one scaling
/// exponent is used for the whole batch.
pub fn expm(tape: &Tape, a: Var) -> Result<Var> {
    let (_, d) = square_dims("expm", &tape.shape(a))?;
    let norm = max_one_norm(&tape.value_ref(a), d);
    if !norm.is_finite() {
        return Err(Error::Contract("expm: non-finite entries".into()));
    }
    let s = scaling_exponent(norm);
    let y = tape.scale(a, 0.5f64.powi(s as i32));
    let eye = tape.constant(Tensor::eye(d));

    // Horner: I + Y(I + Y/2(I + ... (I + Y/12)))
    let mut p = tape.add(tape.scale(y, 1.0 / TAYLOR_ORDER as f64), eye)?;
    for k in (1..TAYLOR_ORDER).rev() {
        p = tape.add(tape.scale(tape.matmul(y, p)?, 1.0 / k as f64), eye)?;
    }
    for _ in 0..s {
        p = tape.matmul(p, p)?;
    }
    Ok(p)
}

/// Untracked `e^A` for a `[d, d]` matrix.
pub fn expm_value(a: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let v = tape.constant(a.clone());
    let e = expm(&tape, v)?;
    Ok(tape.value(e))
}

/// `(M − Mᵀ)/2`.
pub fn skew_project(tape: &Tape, m: Var) -> Result<Var> {
    square_dims("skew_project", &tape.shape(m))?;
    let mt = tape.transpose(m)?;
    Ok(tape.scale(tape.sub(m, mt)?, 0.5))
}

/// Effective generator for `mode`.
pub fn effective_generator(tape: &Tape, m: Var, mode: TopologyMode) -> Result<Var> {
    match mode {
        TopologyMode::Free => {
            square_dims("generator", &tape.shape(m))?;
            Ok(m)
        }
        TopologyMode::Skew => skew_project(tape, m),
    }
}

/// The augmented generator `[[A, b], [0, 0]]` of size `(d+1) × (d+1)`.
pub fn augmented_generator(tape: &Tape, a: Var, b: Var) -> Result<Var> {
    let (_, d) = square_dims("augmented_generator", &tape.shape(a))?;
    if tape.shape(b).iter().product::<usize>() != d {
        return Err(Error::dim(
            "augmented_generator",
            format!("offset {:?} for generator of size {d}", tape.shape(b)),
        ));
    }
    let b_col = tape.reshape(b, &[d, 1])?;
    let top = tape.concat(&[a, b_col], 1)?;
    let bottom = tape.constant(Tensor::zeros(&[1, d + 1]));
    tape.concat(&[top, bottom], 0)
}

/// Flow of `ẏ = Ay + b` at each of `times`.
///
/// `y0` is either a single start `[1, d]` shared by every time, or one start
/// per time `[m, d]`. Returns `[m, d]`. Evaluated as the first `d` entries of
/// `exp(t·[[A, b], [0, 0]]) · [y0; 1]`, one independent exponential per time.
pub fn affine_flow_eval(tape: &Tape, a: Var, b: Var, times: &[f64], y0: Var) -> Result<Var> {
    let block = augmented_generator(tape, a, b)?;
    let dd = tape.shape(block)[0];
    let d = dd - 1;
    let m = times.len();
    let y_shape = tape.shape(y0);
    let rows = match y_shape.as_slice() {
        [r, c] if *c == d && (*r == 1 || *r == m) => *r,
        _ => {
            return Err(Error::dim(
                "affine_flow_eval",
                format!("start {y_shape:?} for dimension {d} and {m} times"),
            ))
        }
    };

    let flat = tape.reshape(block, &[1, dd * dd])?;
    let t_col = tape.constant(Tensor::new(vec![m, 1], times.to_vec())?);
    let args = tape.reshape(tape.matmul(t_col, flat)?, &[m, dd, dd])?;
    let prop = expm(tape, args)?;

    let ones = tape.constant(Tensor::full(&[rows, 1], 1.0));
    let aug = tape.concat(&[y0, ones], 1)?;
    let col = if rows == 1 {
        tape.reshape(aug, &[dd, 1])?
    } else {
        tape.reshape(aug, &[m, dd, 1])?
    };
    let out = tape.reshape(tape.matmul(prop, col)?, &[m, dd])?;
    tape.slice(out, 1, 0..d)
}

/// Advances every row of `y` (`[m, d]`) by the same time `t`: one
/// exponential shared by all rows.
pub fn affine_flow_step(tape: &Tape, a: Var, b: Var, t: f64, y: Var) -> Result<Var> {
    let block = augmented_generator(tape, a, b)?;
    let dd = tape.shape(block)[0];
    let rows = match tape.shape(y).as_slice() {
        [r, c] if *c == dd - 1 => *r,
        other => {
            return Err(Error::dim(
                "affine_flow_step",
                format!("states {other:?} for dimension {}", dd - 1),
            ))
        }
    };
    let prop = expm(tape, tape.scale(block, t))?;
    let ones = tape.constant(Tensor::full(&[rows, 1], 1.0));
    let aug = tape.concat(&[y, ones], 1)?;
    let out = tape.matmul(aug, tape.transpose(prop)?)?;
    tape.slice(out, 1, 0..dd - 1)
}

/// A closed-form affine flow `ẏ = Ay + b` with a trainable generator
/// parameter `M` and offset `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineFlow {
    pub generator: Tensor,
    pub offset: Tensor,
    pub mode: TopologyMode,
}

impl AffineFlow {
    pub fn new(generator: Tensor, offset: Vec<f64>, mode: TopologyMode) -> Result<Self> {
        let (batch, d) = square_dims("affine_flow", generator.shape())?;
        if batch.is_some() || offset.len() != d {
            return Err(Error::dim(
                "affine_flow",
                format!(
                    "generator {:?}, offset [{}]",
                    generator.shape(),
                    offset.len()
                ),
            ));
        }
        Ok(Self {
            generator,
            offset: Tensor::vector(offset),
            mode,
        })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    /// Effective generator `A` as a plain matrix.
    pub fn effective(&self) -> Tensor {
        match self.mode {
            TopologyMode::Free => self.generator.clone(),
            TopologyMode::Skew => self.generator.skew_part().expect("square by construction"),
        }
    }

    /// Records the flow on `tape` with `m` and `b` bound to this flow's
    /// parameters.
    pub fn eval_on(&self, tape: &Tape, m: Var, b: Var, times: &[f64], y0: Var) -> Result<Var> {
        let a = effective_generator(tape, m, self.mode)?;
        affine_flow_eval(tape, a, b, times, y0)
    }

    /// [`affine_flow_step`] with this flow's topology mode.
    pub fn step_on(&self, tape: &Tape, m: Var, b: Var, t: f64, y: Var) -> Result<Var> {
        let a = effective_generator(tape, m, self.mode)?;
        affine_flow_step(tape, a, b, t, y)
    }

    /// Untracked evaluation from a single start; returns `[m, d]`.
    pub fn eval(&self, times: &[f64], y0: &[f64]) -> Result<Tensor> {
        let tape = Tape::new();
        let m = tape.constant(self.generator.clone());
        let b = tape.constant(self.offset.clone());
        let y = tape.constant(Tensor::row(y0));
        let out = self.eval_on(&tape, m, b, times, y)?;
        Ok(tape.value(out))
    }
}

/// `A = J₀ + (f₀ − J₀x₀)x₀ᵀ/‖x₀‖²`: the matrix nearest to `J₀` (Frobenius)
/// among those with `A·x₀ = f₀`.
pub fn init_constrained_linearization(j0: &Tensor, x0: &[f64], f0: &[f64]) -> Result<Tensor> {
    let (batch, d) = square_dims("init_constrained_linearization", j0.shape())?;
    if batch.is_some() || x0.len() != d || f0.len() != d {
        return Err(Error::dim(
            "init_constrained_linearization",
            format!("J0 {:?}, x0 [{}], f0 [{}]", j0.shape(), x0.len(), f0.len()),
        ));
    }
    let norm2: f64 = x0.iter().map(|x| x * x).sum();
    if norm2 == 0.0 {
        return Err(Error::DegenerateAnchor);
    }
    let jx = j0.matvec(x0)?;
    let mut a = j0.clone();
    for i in 0..d {
        let r = (f0[i] - jx[i]) / norm2;
        for j in 0..d {
            let v = a.at(i, j) + r * x0[j];
            a.set(i, j, v);
        }
    }
    Ok(a)
}

/// Skew generator plus constant drift matching `f₀` at `x₀`.
///
/// `Ã` is the skew part of the constrained linearization (or of `J₀` when
/// `x₀ = 0`), so its spectrum is purely imaginary; `b = f₀ − Ãx₀`.
pub fn init_skew_fallback(j0: &Tensor, x0: &[f64], f0: &[f64]) -> Result<(Tensor, Vec<f64>)> {
    let base = match init_constrained_linearization(j0, x0, f0) {
        Ok(a) => a,
        Err(Error::DegenerateAnchor) => j0.clone(),
        Err(e) => return Err(e),
    };
    let skew = base.skew_part()?;
    let ax = skew.matvec(x0)?;
    let b = f0.iter().zip(&ax).map(|(f, a)| f - a).collect();
    Ok((skew, b))
}
