//! Central finite-difference gradient checking.
//!
//! Only forward values are used here, so the check stays independent of the
//! backward rules it validates.

use rand::Rng;

use super::{seeded_rng, Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a denominator floor so that vanishing gradients are
/// compared absolutely.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks every entry (or the listed `(input, index)` pairs) of `inputs`
/// against central differences of the scalar function `f`.
pub fn check_gradients<F>(
    f: F,
    inputs: &[Tensor],
    entries: Option<&[(usize, usize)]>,
) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let all: Vec<(usize, usize)>;
    let entries = match entries {
        Some(e) => e,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
                .collect();
            &all
        }
    };

    let mut work = inputs.to_vec();
    let mut max_rel = 0.0f64;
    for &(i, j) in entries {
        let analytic = grads.get(vars[i]).map_or(0.0, |g| g.data()[j]);
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + FD_STEP;
        let plus = eval(&work)?;
        work[i].data_mut()[j] = orig - FD_STEP;
        let minus = eval(&work)?;
        work[i].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        max_rel = max_rel.max(rel_error(analytic, numeric, 1e-2));
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        checked: entries.len(),
    })
}

pub type OpFn = fn(&Tape, &[Var]) -> Result<Var>;

/// One case per recorded op kind, reduced to a scalar through a weighted sum so that the
/// upstream gradient is not uniform.
pub fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    fn weighted(t: &Tape, v: Var) -> Result<Var> {
        let shape = t.shape(v);
        let n: usize = shape.iter().product();
        let w = Tensor::new(shape, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect())?;
        let w = t.constant(w);
        Ok(t.sum(t.mul(v, w)?))
    }
    vec![
        ("add", vec![vec![3, 4], vec![3, 4]], |t, v| {
            weighted(t, t.add(v[0], v[1])?)
        }),
        ("add_broadcast", vec![vec![3, 4], vec![4]], |t, v| {
            weighted(t, t.add(v[0], v[1])?)
        }),
        ("sub", vec![vec![2, 3], vec![2, 3]], |t, v| {
            weighted(t, t.sub(v[0], v[1])?)
        }),
        ("sub_broadcast", vec![vec![3], vec![2, 3]], |t, v| {
            weighted(t, t.sub(v[0], v[1])?)
        }),
        ("mul", vec![vec![2, 3], vec![2, 3]], |t, v| {
            weighted(t, t.mul(v[0], v[1])?)
        }),
        ("mul_broadcast", vec![vec![5, 2], vec![2]], |t, v| {
            weighted(t, t.mul(v[0], v[1])?)
        }),
        ("scale", vec![vec![4]], |t, v| {
            weighted(t, t.scale(v[0], -1.7))
        }),
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| {
            weighted(t, t.matmul(v[0], v[1])?)
        }),
        (
            "matmul_batched_lhs",
            vec![vec![2, 3, 4], vec![4, 2]],
            |t, v| weighted(t, t.matmul(v[0], v[1])?),
        ),
        (
            "matmul_batched_both",
            vec![vec![2, 3, 3], vec![2, 3, 2]],
            |t, v| weighted(t, t.matmul(v[0], v[1])?),
        ),
        (
            "matmul_batched_rhs",
            vec![vec![2, 3], vec![4, 3, 2]],
            |t, v| weighted(t, t.matmul(v[0], v[1])?),
        ),
        ("tanh", vec![vec![6]], |t, v| weighted(t, t.tanh(v[0]))),
        ("exp", vec![vec![6]], |t, v| weighted(t, t.exp(v[0]))),
        ("power", vec![vec![5]], |t, v| weighted(t, t.pow(v[0], 3.0))),
        ("x_over_expm1", vec![vec![5]], |t, v| {
            weighted(t, t.x_over_expm1(v[0]))
        }),
        ("sum", vec![vec![2, 3]], |t, v| {
            let s = t.sum(v[0]);
            Ok(t.mul(s, s)?)
        }),
        ("mean", vec![vec![2, 3]], |t, v| {
            let s = t.mean(v[0]);
            Ok(t.mul(s, s)?)
        }),
        ("squared_norm", vec![vec![7]], |t, v| {
            Ok(t.squared_norm(v[0]))
        }),
        ("concat_last", vec![vec![2, 3], vec![2, 1]], |t, v| {
            weighted(t, t.concat(&[v[0], v[1]], 1)?)
        }),
        ("concat_first", vec![vec![2, 3], vec![1, 3]], |t, v| {
            weighted(t, t.concat(&[v[0], v[1]], 0)?)
        }),
        ("slice", vec![vec![3, 5]], |t, v| {
            weighted(t, t.slice(v[0], 1, 1..4)?)
        }),
        ("slice_rows", vec![vec![4, 2]], |t, v| {
            weighted(t, t.slice(v[0], 0, 1..3)?)
        }),
        ("transpose", vec![vec![2, 3, 4]], |t, v| {
            weighted(t, t.transpose(v[0])?)
        }),
        ("reshape", vec![vec![2, 6]], |t, v| {
            weighted(t, t.reshape(v[0], &[3, 4])?)
        }),
    ]
}

/// Runs every [`op_cases`] entry on `trials` random input sets drawn from
/// `[-2, 2]`, keeping the worst result per op.
pub fn check_all_ops(seed: u64, trials: usize) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut rng = seeded_rng(seed, 0);
    op_cases()
        .into_iter()
        .map(|(name, shapes, f)| {
            let mut worst = GradCheck {
                max_rel_error: 0.0,
                checked: 0,
            };
            for _ in 0..trials {
                let inputs: Vec<Tensor> = shapes
                    .iter()
                    .map(|s| {
                        let n = s.iter().product();
                        Tensor::from_parts(
                            s.clone(),
                            (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
                        )
                    })
                    .collect();
                let c = check_gradients(f, &inputs, None)?;
                worst.max_rel_error = worst.max_rel_error.max(c.max_rel_error);
                worst.checked += c.checked;
            }
            Ok((name, worst))
        })
        .collect()
}
