//! Numerical check of the explicit conjugation between any flow extended by
//! a clock coordinate and the unit translation in that coordinate.
//!
//! With `Φ` the flow of `ẋ = F(x)`, set `H(x, a) = (Φ⁻ᵃx, a)`. Then
//! `H⁻¹ ∘ Ψ̂ᵗ ∘ H = Φ̂ᵗ`, where `Ψ̂ᵗ(y, a) = (y, a + t)` and
//! `Φ̂ᵗ(x, a) = (Φᵗx, a + t)`. The clock coordinate agrees by construction,
//! so the defect is measured on the state part.

use serde::Serialize;

use crate::error::Result;

use super::{rk4_flow, step_schedule, VectorField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConjugacyReport {
    /// Largest deviation between both sides over the sample grid.
    pub max_defect: f64,
    /// Richardson estimate of the integrator error in either side, plus a
    /// roundoff floor proportional to the number of steps taken.
    pub integrator_error: f64,
    pub samples: usize,
}

impl ConjugacyReport {
    /// Defect within `factor` times the integrator error estimate.
    pub fn within(&self, factor: f64) -> bool {
        self.max_defect <= factor * self.integrator_error
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn sides(
    field: &dyn VectorField,
    x: &[f64],
    a: f64,
    t: f64,
    dt: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let y = rk4_flow(field, x, -a, dt)?;
    let lhs = rk4_flow(field, &y, a + t, dt)?;
    let rhs = rk4_flow(field, x, t, dt)?;
    Ok((lhs, rhs))
}

/// Checks `H⁻¹ ∘ Ψ̂ᵗ ∘ H = Φ̂ᵗ` for every `(x, a, t)` in the sample grid with
/// `Φ` realized by RK4 at step `dt`.
pub fn verify_theorem1_conjugation(
    field: &dyn VectorField,
    points: &[Vec<f64>],
    shifts: &[f64],
    times: &[f64],
    dt: f64,
) -> Result<ConjugacyReport> {
    let mut report = ConjugacyReport {
        max_defect: 0.0,
        integrator_error: 0.0,
        samples: 0,
    };
    for x in points {
        for &a in shifts {
            for &t in times {
                let (lhs, rhs) = sides(field, x, a, t, dt)?;
                let (lhs_fine, rhs_fine) = sides(field, x, a, t, dt / 2.0)?;
                let richardson =
                    max_diff(&lhs, &lhs_fine).max(max_diff(&rhs, &rhs_fine)) * 16.0 / 15.0;
                let steps = [-a, a + t, t]
                    .iter()
                    .map(|s| step_schedule(*s, dt).len())
                    .sum::<usize>();
                let scale = x.iter().chain(&lhs).map(|v| v.abs()).fold(1.0, f64::max);
                let floor = steps as f64 * f64::EPSILON * scale;
                report.max_defect = report.max_defect.max(max_diff(&lhs, &rhs));
                report.integrator_error = report.integrator_error.max(richardson + floor);
                report.samples += 1;
            }
        }
    }
    Ok(report)
}
