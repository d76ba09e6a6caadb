use std::io::Write;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

use super::VectorField;

/// States sampled at increasing times.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// States as an `[m, n]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_rows(&self.states)
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    /// CSV with header `t,x1,...,xn`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.dim()).map(|i| format!("x{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let row: Vec<String> = std::iter::once(*t)
                .chain(x.iter().copied())
                .map(fmt_float)
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Step sizes that carry the clock across `span`: whole steps of `dt`, then
/// one partial step for the remainder. A remainder below `1e-9·dt` is folded
/// into the last whole step so float noise never produces a sliver step.
pub fn step_schedule(span: f64, dt: f64) -> Vec<f64> {
    if span == 0.0 {
        return Vec::new();
    }
    let sign = span.signum();
    let span = span.abs();
    let whole = (span / dt + 1e-9).floor() as usize;
    let mut steps = vec![dt; whole];
    let rem = span - whole as f64 * dt;
    if rem > 1e-9 * dt {
        steps.push(rem);
    } else if let Some(last) = steps.last_mut() {
        *last += rem;
    } else {
        steps.push(span);
    }
    steps.into_iter().map(|h| sign * h).collect()
}

fn axpy(x: &[f64], a: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(p, q)| p + a * q).collect()
}

pub fn rk4_step(field: &dyn VectorField, x: &[f64], h: f64) -> Vec<f64> {
    let k1 = field.eval(x);
    let k2 = field.eval(&axpy(x, 0.5 * h, &k1));
    let k3 = field.eval(&axpy(x, 0.5 * h, &k2));
    let k4 = field.eval(&axpy(x, h, &k3));
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

pub fn midpoint_step(field: &dyn VectorField, x: &[f64], h: f64) -> Vec<f64> {
    let k1 = field.eval(x);
    let k2 = field.eval(&axpy(x, 0.5 * h, &k1));
    axpy(x, h, &k2)
}

type Stepper = fn(&dyn VectorField, &[f64], f64) -> Vec<f64>;

fn advance(
    field: &dyn VectorField,
    step: Stepper,
    mut x: Vec<f64>,
    from: f64,
    to: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let mut t = from;
    for h in step_schedule(to - from, dt) {
        x = step(field, &x, h);
        t += h;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: t });
        }
    }
    Ok(x)
}

fn check_grid(times: &[f64], dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!(
            "step size must be positive, got {dt}"
        )));
    }
    if times.iter().any(|t| !t.is_finite()) || times.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::Config(
            "times must be finite and start at or after 0".into(),
        ));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("times must be sorted ascending".into()));
    }
    Ok(())
}

fn solve(
    field: &dyn VectorField,
    step: Stepper,
    x0: &[f64],
    times: &[f64],
    dt: f64,
) -> Result<Trajectory> {
    check_grid(times, dt)?;
    if x0.len() != field.dim() {
        return Err(Error::dim(
            "solve",
            format!(
                "state of length {} for a {}-dimensional field",
                x0.len(),
                field.dim()
            ),
        ));
    }
    let mut states = Vec::with_capacity(times.len());
    let mut x = x0.to_vec();
    let mut t = 0.0;
    for &target in times {
        x = advance(field, step, x, t, target, dt)?;
        t = target;
        states.push(x.clone());
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
    })
}

/// Classical fixed-step RK4 from `t = 0`, landing exactly on every requested
/// time.
pub fn rk4_solve(
    field: &dyn VectorField,
    x0: &[f64],
    times: &[f64],
    dt: f64,
) -> Result<Trajectory> {
    solve(field, rk4_step, x0, times, dt)
}

/// RK4 flow map `Φᵗ(x)` for either sign of `t`.
pub fn rk4_flow(field: &dyn VectorField, x: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!(
            "step size must be positive, got {dt}"
        )));
    }
    advance(field, rk4_step, x.to_vec(), 0.0, t, dt)
}

/// Explicit midpoint rule with the same stepping contract as [`rk4_solve`].
pub fn midpoint_solve(
    field: &dyn VectorField,
    x0: &[f64],
    times: &[f64],
    dt: f64,
) -> Result<Trajectory> {
    solve(field, midpoint_step, x0, times, dt)
}

/// One midpoint step of a batch of states `[k, n]` under a recorded field.
pub fn midpoint_step_tape<F>(tape: &Tape, field: &F, x: Var, h: f64) -> Result<Var>
where
    F: Fn(&Tape, Var) -> Result<Var> + ?Sized,
{
    let k1 = field(tape, x)?;
    let mid = tape.add(x, tape.scale(k1, 0.5 * h))?;
    let k2 = field(tape, mid)?;
    tape.add(x, tape.scale(k2, h))
}

/// Differentiable midpoint integration of a recorded field from `x0`
/// (`[1, n]`). Returns the `[m, n]` states at `times`.
pub fn midpoint_solve_tape<F>(
    tape: &Tape,
    field: &F,
    x0: Var,
    times: &[f64],
    dt: f64,
) -> Result<Var>
where
    F: Fn(&Tape, Var) -> Result<Var> + ?Sized,
{
    check_grid(times, dt)?;
    let mut x = x0;
    let mut t = 0.0;
    let mut rows = Vec::with_capacity(times.len());
    for &target in times {
        for h in step_schedule(target - t, dt) {
            x = midpoint_step_tape(tape, field, x, h)?;
        }
        t = target;
        rows.push(x);
    }
    if rows.is_empty() {
        return Err(Error::Contract(
            "midpoint_solve_tape needs at least one time".into(),
        ));
    }
    let out = tape.concat(&rows, 0)?;
    if !tape.value_ref(out).is_finite() {
        return Err(Error::BlowUp { time: t });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::dynamics::{FitzHughNagumo, LinearField, LotkaVolterra};

    #[test]
    fn equilibrium_stays_put() {
        let lv = LotkaVolterra::default();
        let times: Vec<f64> = (0..=10).map(f64::from).collect();
        let traj = rk4_solve(&lv, &[1.0, 1.0], &times, 1e-2).unwrap();
        for x in &traj.states {
            assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn harmonic_oscillator_full_turn() {
        let f = LinearField::harmonic();
        let traj = rk4_solve(&f, &[1.0, 0.0], &[2.0 * PI], 1e-3).unwrap();
        let x = traj.final_state().unwrap();
        assert!((x[0] - 1.0).abs() < 1e-8 && x[1].abs() < 1e-8, "{x:?}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let f = LinearField::harmonic();
        let run = |dt: f64| rk4_solve(&f, &[1.0, 0.0], &[2.0], dt).unwrap().states[0].clone();
        let fine = run(0.1 / 4.0);
        let err = |x: &[f64]| ((x[0] - fine[0]).powi(2) + (x[1] - fine[1]).powi(2)).sqrt();
        let ratio = err(&run(0.2)) / err(&run(0.1));
        // against a dt/4 reference the ratio is (1 - 4^-4)/(2^-4 - 4^-4) ~ 17
        assert!((14.0..19.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn midpoint_single_step() {
        let f = LinearField::scalar(1.0);
        let traj = midpoint_solve(&f, &[1.0], &[0.1], 0.1).unwrap();
        assert!((traj.states[0][0] - 1.105).abs() < 1e-15);
    }

    #[test]
    fn midpoint_linear_decay() {
        let f = LinearField::scalar(-1.0);
        let traj = midpoint_solve(&f, &[1.0], &[1.0], 1e-3).unwrap();
        assert!((traj.states[0][0] - (-1.0f64).exp()).abs() < 1e-5);
    }

    #[test]
    fn zero_field_is_constant() {
        let f = LinearField::new(Tensor::zeros(&[2, 2]), vec![0.0, 0.0]).unwrap();
        let traj = midpoint_solve(&f, &[0.3, -0.4], &[0.0, 0.5, 2.0], 0.1).unwrap();
        assert!(traj.states.iter().all(|x| x == &[0.3, -0.4]));
    }

    #[test]
    fn schedule_hits_target_exactly() {
        for (span, dt) in [(1.0, 0.3), (0.1, 1e-3), (-0.7, 0.2), (1e-3, 0.1)] {
            let s = step_schedule(span, dt);
            let total: f64 = s.iter().sum();
            assert!((total - span).abs() < 1e-12, "{span} {dt}");
            assert!(s.iter().all(|h| h.abs() <= dt * (1.0 + 1e-8)));
        }
        assert!(step_schedule(0.0, 0.1).is_empty());
    }

    #[test]
    fn signed_flow_inverts() {
        let f = FitzHughNagumo::default();
        let x = [0.4, -0.3];
        let fwd = rk4_flow(&f, &x, 0.8, 1e-3).unwrap();
        let back = rk4_flow(&f, &fwd, -0.8, 1e-3).unwrap();
        assert!((back[0] - x[0]).abs() < 1e-10 && (back[1] - x[1]).abs() < 1e-10);
    }

    #[test]
    fn blow_up_reports_time() {
        // ẋ = x² style growth via the FH cubic run backwards
        let f = FitzHughNagumo::default();
        match rk4_solve(&f, &[0.0, 1e6], &[10.0], 0.1) {
            Err(Error::BlowUp { time }) => assert!(time > 0.0 && time <= 10.0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_grids() {
        let f = LinearField::scalar(1.0);
        assert!(matches!(
            rk4_solve(&f, &[1.0], &[1.0, 0.5], 0.1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            rk4_solve(&f, &[1.0], &[1.0], 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            rk4_solve(&f, &[1.0], &[-1.0], 0.1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tape_midpoint_matches_plain() {
        let f = FitzHughNagumo::default();
        let times = [0.0, 0.25, 0.6, 1.0];
        let plain = midpoint_solve(&f, &[2.0, -2.0 / 3.0], &times, 0.05).unwrap();
        let tape = Tape::new();
        let x0 = tape.constant(Tensor::row(&[2.0, -2.0 / 3.0]));
        let field = |tp: &Tape, x: Var| f.eval_tape(tp, x);
        let out = midpoint_solve_tape(&tape, &field, x0, &times, 0.05).unwrap();
        let got = tape.value(out);
        for (i, row) in plain.states.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                assert!((got.at(i, k) - v).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn csv_has_header_and_round_trips() {
        let traj = Trajectory {
            times: vec![0.0, 0.1],
            states: vec![vec![1.0, 2.0], vec![1.0 / 3.0, -0.1]],
        };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x1,x2"));
        let second: Vec<f64> = lines
            .nth(1)
            .unwrap()
            .split(',')
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(second, vec![0.1, 1.0 / 3.0, -0.1]);
    }
}
