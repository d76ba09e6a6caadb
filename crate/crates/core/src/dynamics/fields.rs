use serde::{Deserialize, Serialize};

use crate::autodiff::{x_over_expm1, x_over_expm1_deriv, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Autonomous dynamics `ẋ = F(x)` with an analytic Jacobian.
///
/// `eval_tape` evaluates `F` row-wise on a batch `[m, n]` of states recorded
/// on a tape, so physics losses can differentiate through it.
pub trait VectorField: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;
    fn jacobian(&self, x: &[f64]) -> Tensor;
    fn eval_tape(&self, tape: &Tape, x: Var) -> Result<Var>;
}

fn column(tape: &Tape, x: Var, j: usize) -> Result<Var> {
    tape.slice(x, 1, j..j + 1)
}

fn check_batch(tape: &Tape, x: Var, n: usize, name: &'static str) -> Result<()> {
    match tape.shape(x).as_slice() {
        [_, c] if *c == n => Ok(()),
        s => Err(Error::dim(
            name,
            format!("expected [m, {n}] states, got {s:?}"),
        )),
    }
}

/// `V̇ = V − V³/3 − r + I`, `ṙ = ε(V + a − b·r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitzHughNagumo {
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    pub current: f64,
}

impl Default for FitzHughNagumo {
    fn default() -> Self {
        Self {
            a: 0.0,
            b: 0.0,
            eps: 1.0,
            current: 0.0,
        }
    }
}

impl VectorField for FitzHughNagumo {
    fn name(&self) -> &str {
        "fitzhugh_nagumo"
    }

    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let (v, r) = (x[0], x[1]);
        vec![
            v - v * v * v / 3.0 - r + self.current,
            self.eps * (v + self.a - self.b * r),
        ]
    }

    fn jacobian(&self, x: &[f64]) -> Tensor {
        let v = x[0];
        Tensor::from_rows(&[vec![1.0 - v * v, -1.0], vec![self.eps, -self.eps * self.b]])
    }

    fn eval_tape(&self, tape: &Tape, x: Var) -> Result<Var> {
        check_batch(tape, x, 2, "fitzhugh_nagumo")?;
        let v = column(tape, x, 0)?;
        let r = column(tape, x, 1)?;
        let cubic = tape.scale(tape.pow(v, 3.0), -1.0 / 3.0);
        let mut dv = tape.sub(tape.add(v, cubic)?, r)?;
        if self.current != 0.0 {
            dv = tape.add(dv, tape.scalar(self.current))?;
        }
        let mut inner = tape.sub(v, tape.scale(r, self.b))?;
        if self.a != 0.0 {
            inner = tape.add(inner, tape.scalar(self.a))?;
        }
        let dr = tape.scale(inner, self.eps);
        tape.concat(&[dv, dr], 1)
    }
}

/// `ẋ = αx − βxy`, `ẏ = −γy + δxy`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LotkaVolterra {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for LotkaVolterra {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 1.0,
        }
    }
}

impl VectorField for LotkaVolterra {
    fn name(&self) -> &str {
        "lotka_volterra"
    }

    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let (p, q) = (x[0], x[1]);
        vec![
            self.alpha * p - self.beta * p * q,
            -self.gamma * q + self.delta * p * q,
        ]
    }

    fn jacobian(&self, x: &[f64]) -> Tensor {
        let (p, q) = (x[0], x[1]);
        Tensor::from_rows(&[
            vec![self.alpha - self.beta * q, -self.beta * p],
            vec![self.delta * q, -self.gamma + self.delta * p],
        ])
    }

    fn eval_tape(&self, tape: &Tape, x: Var) -> Result<Var> {
        check_batch(tape, x, 2, "lotka_volterra")?;
        let p = column(tape, x, 0)?;
        let q = column(tape, x, 1)?;
        let pq = tape.mul(p, q)?;
        let dp = tape.sub(tape.scale(p, self.alpha), tape.scale(pq, self.beta))?;
        let dq = tape.sub(tape.scale(pq, self.delta), tape.scale(q, self.gamma))?;
        tape.concat(&[dp, dq], 1)
    }
}

/// Hodgkin-Huxley membrane with the shifted-voltage convention (rest at
/// `V = 0`), optionally expressed in rescaled coordinates `z = S·x` with
/// `S = diag(scale)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HodgkinHuxley {
    pub c_m: f64,
    pub g_na: f64,
    pub g_k: f64,
    pub g_l: f64,
    pub e_na: f64,
    pub e_k: f64,
    pub e_l: f64,
    pub current: f64,
    /// Per-coordinate factors for `(V, n, m, h)`.
    pub scale: [f64; 4],
}

pub const HH_RESCALE: [f64; 4] = [0.1, 10.0, 10.0, 10.0];

impl Default for HodgkinHuxley {
    fn default() -> Self {
        Self {
            c_m: 1.0,
            g_na: 120.0,
            g_k: 36.0,
            g_l: 0.3,
            e_na: 115.0,
            e_k: -12.0,
            e_l: 10.613,
            current: 10.0,
            scale: HH_RESCALE,
        }
    }
}

/// Gating rates at membrane potential `v` (raw units).
#[derive(Clone, Copy, Debug)]
pub struct GatingRates {
    pub alpha_n: f64,
    pub beta_n: f64,
    pub alpha_m: f64,
    pub beta_m: f64,
    pub alpha_h: f64,
    pub beta_h: f64,
}

impl GatingRates {
    pub fn at(v: f64) -> Self {
        Self {
            alpha_n: 0.1 * x_over_expm1((10.0 - v) / 10.0),
            beta_n: 0.125 * (-v / 80.0).exp(),
            alpha_m: x_over_expm1((25.0 - v) / 10.0),
            beta_m: 4.0 * (-v / 18.0).exp(),
            alpha_h: 0.07 * (-v / 20.0).exp(),
            beta_h: 1.0 / (((30.0 - v) / 10.0).exp() + 1.0),
        }
    }

    /// Derivatives of each rate with respect to `v`.
    fn derivatives(v: f64) -> Self {
        let r = Self::at(v);
        let w = ((30.0 - v) / 10.0).exp();
        Self {
            alpha_n: -0.01 * x_over_expm1_deriv((10.0 - v) / 10.0),
            beta_n: -r.beta_n / 80.0,
            alpha_m: -0.1 * x_over_expm1_deriv((25.0 - v) / 10.0),
            beta_m: -r.beta_m / 18.0,
            alpha_h: -r.alpha_h / 20.0,
            beta_h: w / ((w + 1.0) * (w + 1.0)) / 10.0,
        }
    }
}

impl HodgkinHuxley {
    /// Same membrane in raw (unscaled) coordinates.
    pub fn raw(&self) -> Self {
        Self {
            scale: [1.0; 4],
            ..*self
        }
    }

    pub fn to_scaled(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.scale).map(|(x, s)| x * s).collect()
    }

    pub fn to_raw(&self, scaled: &[f64]) -> Vec<f64> {
        scaled.iter().zip(&self.scale).map(|(x, s)| x / s).collect()
    }

    /// Gating variables at their steady state for `v`, with `v` itself;
    /// raw coordinates.
    pub fn resting_state(v: f64) -> Vec<f64> {
        let r = GatingRates::at(v);
        vec![
            v,
            r.alpha_n / (r.alpha_n + r.beta_n),
            r.alpha_m / (r.alpha_m + r.beta_m),
            r.alpha_h / (r.alpha_h + r.beta_h),
        ]
    }

    fn raw_eval(&self, x: &[f64]) -> Vec<f64> {
        let (v, n, m, h) = (x[0], x[1], x[2], x[3]);
        let r = GatingRates::at(v);
        let i_na = self.g_na * m.powi(3) * h * (v - self.e_na);
        let i_k = self.g_k * n.powi(4) * (v - self.e_k);
        let i_l = self.g_l * (v - self.e_l);
        vec![
            (self.current - i_na - i_k - i_l) / self.c_m,
            r.alpha_n * (1.0 - n) - r.beta_n * n,
            r.alpha_m * (1.0 - m) - r.beta_m * m,
            r.alpha_h * (1.0 - h) - r.beta_h * h,
        ]
    }

    fn raw_jacobian(&self, x: &[f64]) -> [[f64; 4]; 4] {
        let (v, n, m, h) = (x[0], x[1], x[2], x[3]);
        let r = GatingRates::at(v);
        let d = GatingRates::derivatives(v);
        let c = self.c_m;
        [
            [
                -(self.g_na * m.powi(3) * h + self.g_k * n.powi(4) + self.g_l) / c,
                -4.0 * self.g_k * n.powi(3) * (v - self.e_k) / c,
                -3.0 * self.g_na * m * m * h * (v - self.e_na) / c,
                -self.g_na * m.powi(3) * (v - self.e_na) / c,
            ],
            [
                d.alpha_n * (1.0 - n) - d.beta_n * n,
                -(r.alpha_n + r.beta_n),
                0.0,
                0.0,
            ],
            [
                d.alpha_m * (1.0 - m) - d.beta_m * m,
                0.0,
                -(r.alpha_m + r.beta_m),
                0.0,
            ],
            [
                d.alpha_h * (1.0 - h) - d.beta_h * h,
                0.0,
                0.0,
                -(r.alpha_h + r.beta_h),
            ],
        ]
    }
}

impl VectorField for HodgkinHuxley {
    fn name(&self) -> &str {
        "hodgkin_huxley"
    }

    fn dim(&self) -> usize {
        4
    }

    fn eval(&self, z: &[f64]) -> Vec<f64> {
        let x = self.to_raw(z);
        self.to_scaled(&self.raw_eval(&x))
    }

    fn jacobian(&self, z: &[f64]) -> Tensor {
        let x = self.to_raw(z);
        let j = self.raw_jacobian(&x);
        let mut out = Tensor::zeros(&[4, 4]);
        for (i, row) in j.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                out.set(i, k, self.scale[i] * v / self.scale[k]);
            }
        }
        out
    }

    fn eval_tape(&self, tape: &Tape, z: Var) -> Result<Var> {
        check_batch(tape, z, 4, "hodgkin_huxley")?;
        let raw =
            |j: usize| -> Result<Var> { Ok(tape.scale(column(tape, z, j)?, 1.0 / self.scale[j])) };
        let (v, n, m, h) = (raw(0)?, raw(1)?, raw(2)?, raw(3)?);
        let c = |x: f64| tape.scalar(x);
        // (shift − v)/10 for the singular rate forms
        let shifted = |shift: f64| -> Result<Var> { Ok(tape.scale(tape.sub(c(shift), v)?, 0.1)) };
        let exp_lin = |k: f64| tape.exp(tape.scale(v, k));

        let i_na = tape.mul(tape.mul(tape.pow(m, 3.0), h)?, tape.sub(v, c(self.e_na))?)?;
        let i_k = tape.mul(tape.pow(n, 4.0), tape.sub(v, c(self.e_k))?)?;
        let i_l = tape.sub(v, c(self.e_l))?;
        let total = tape.add(
            tape.add(tape.scale(i_na, self.g_na), tape.scale(i_k, self.g_k))?,
            tape.scale(i_l, self.g_l),
        )?;
        let dv = tape.scale(tape.sub(c(self.current), total)?, 1.0 / self.c_m);

        let alpha_n = tape.scale(tape.x_over_expm1(shifted(10.0)?), 0.1);
        let beta_n = tape.scale(exp_lin(-1.0 / 80.0), 0.125);
        let alpha_m = tape.x_over_expm1(shifted(25.0)?);
        let beta_m = tape.scale(exp_lin(-1.0 / 18.0), 4.0);
        let alpha_h = tape.scale(exp_lin(-1.0 / 20.0), 0.07);
        let beta_h = tape.pow(tape.add(tape.exp(shifted(30.0)?), c(1.0))?, -1.0);

        let gate = |alpha: Var, beta: Var, g: Var| -> Result<Var> {
            let open = tape.mul(alpha, tape.sub(c(1.0), g)?)?;
            tape.sub(open, tape.mul(beta, g)?)
        };
        let dn = gate(alpha_n, beta_n, n)?;
        let dm = gate(alpha_m, beta_m, m)?;
        let dh = gate(alpha_h, beta_h, h)?;

        let parts = [dv, dn, dm, dh]
            .iter()
            .zip(&self.scale)
            .map(|(d, s)| tape.scale(*d, *s))
            .collect::<Vec<_>>();
        tape.concat(&parts, 1)
    }
}

/// `ẋ = Ax + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearField {
    pub a: Tensor,
    pub b: Vec<f64>,
}

impl LinearField {
    pub fn new(a: Tensor, b: Vec<f64>) -> Result<Self> {
        let d = b.len();
        if a.shape() != [d, d] {
            return Err(Error::dim(
                "linear_field",
                format!("{:?} with offset [{d}]", a.shape()),
            ));
        }
        Ok(Self { a, b })
    }

    /// `ẋ = −y, ẏ = x`.
    pub fn harmonic() -> Self {
        Self {
            a: Tensor::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]),
            b: vec![0.0, 0.0],
        }
    }

    /// `ẋ = λx` in one dimension.
    pub fn scalar(lambda: f64) -> Self {
        Self {
            a: Tensor::from_rows(&[vec![lambda]]),
            b: vec![0.0],
        }
    }
}

impl VectorField for LinearField {
    fn name(&self) -> &str {
        "linear"
    }

    fn dim(&self) -> usize {
        self.b.len()
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let ax = self.a.matvec(x).expect("dimension checked at construction");
        ax.iter().zip(&self.b).map(|(p, q)| p + q).collect()
    }

    fn jacobian(&self, _x: &[f64]) -> Tensor {
        self.a.clone()
    }

    fn eval_tape(&self, tape: &Tape, x: Var) -> Result<Var> {
        check_batch(tape, x, self.dim(), "linear")?;
        let at = tape.constant(self.a.t());
        let b = tape.constant(Tensor::vector(self.b.clone()));
        tape.add(tape.matmul(x, at)?, b)
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::autodiff::seeded_rng;

    fn fd_jacobian(f: &dyn VectorField, x: &[f64]) -> Tensor {
        let n = f.dim();
        let mut j = Tensor::zeros(&[n, n]);
        for k in 0..n {
            let h = 1e-6 * x[k].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            let (fp, fm) = (f.eval(&xp), f.eval(&xm));
            for i in 0..n {
                j.set(i, k, (fp[i] - fm[i]) / (2.0 * h));
            }
        }
        j
    }

    fn assert_jacobian(f: &dyn VectorField, x: &[f64]) {
        let analytic = f.jacobian(x);
        let numeric = fd_jacobian(f, x);
        let scale = numeric.frobenius_norm().max(1.0);
        for (a, b) in analytic.data().iter().zip(numeric.data()) {
            assert!(
                (a - b).abs() <= 1e-5 * scale,
                "{}: {a} vs {b} at {x:?}",
                f.name()
            );
        }
    }

    fn assert_tape_matches(f: &dyn VectorField, xs: &[Vec<f64>]) {
        let tape = Tape::new();
        let batch = tape.constant(Tensor::from_rows(xs));
        let out = tape.value(f.eval_tape(&tape, batch).unwrap());
        for (i, x) in xs.iter().enumerate() {
            let expect = f.eval(x);
            for (k, e) in expect.iter().enumerate() {
                assert!((out.at(i, k) - e).abs() <= 1e-12 * e.abs().max(1.0));
            }
        }
    }

    #[test]
    fn fitzhugh_nagumo_reference_point() {
        let f = FitzHughNagumo::default();
        let v = f.eval(&[2.0, -2.0 / 3.0]);
        assert!(v[0].abs() < 1e-15 && (v[1] - 2.0).abs() < 1e-15);
        assert_eq!(f.eval(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(
            f.jacobian(&[2.0, -2.0 / 3.0]),
            Tensor::from_rows(&[vec![-3.0, -1.0], vec![1.0, 0.0]])
        );
    }

    #[test]
    fn lotka_volterra_equilibrium_and_axes() {
        let f = LotkaVolterra::default();
        assert_eq!(f.eval(&[1.0, 1.0]), vec![0.0, 0.0]);
        assert_eq!(f.eval(&[0.0, 2.5])[0], 0.0);
        assert_eq!(f.eval(&[1.5, 0.0])[1], 0.0);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = seeded_rng(21, 0);
        let planar: Vec<Box<dyn VectorField>> = vec![
            Box::new(FitzHughNagumo {
                a: 0.7,
                b: 0.8,
                eps: 0.08,
                current: 0.5,
            }),
            Box::new(LotkaVolterra {
                alpha: 1.1,
                beta: 0.4,
                gamma: 0.9,
                delta: 0.3,
            }),
            Box::new(LinearField::harmonic()),
        ];
        for f in &planar {
            for _ in 0..20 {
                let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                assert_jacobian(f.as_ref(), &x);
            }
        }
        let hh = HodgkinHuxley::default();
        for f in [hh, hh.raw()] {
            for _ in 0..20 {
                let raw = [
                    rng.random_range(-20.0..110.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                ];
                assert_jacobian(&f, &f.to_scaled(&raw));
            }
        }
        // removable singularities of the rate functions
        assert_jacobian(&hh.raw(), &[10.0, 0.3, 0.05, 0.6]);
        assert_jacobian(&hh.raw(), &[25.0, 0.3, 0.05, 0.6]);
    }

    #[test]
    fn tape_evaluation_matches_plain() {
        let mut rng = seeded_rng(22, 0);
        let hh = HodgkinHuxley::default();
        let fh_pts: Vec<Vec<f64>> = (0..5)
            .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        assert_tape_matches(
            &FitzHughNagumo {
                a: 0.3,
                b: 0.2,
                eps: 0.5,
                current: 0.1,
            },
            &fh_pts,
        );
        assert_tape_matches(&LotkaVolterra::default(), &fh_pts);
        assert_tape_matches(&LinearField::harmonic(), &fh_pts);
        let hh_pts: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                hh.to_scaled(&[
                    rng.random_range(-20.0..110.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                ])
            })
            .chain([
                hh.to_scaled(&[10.0, 0.3, 0.1, 0.5]),
                hh.to_scaled(&[25.0, 0.3, 0.1, 0.5]),
            ])
            .collect();
        assert_tape_matches(&hh, &hh_pts);
    }

    #[test]
    fn rate_singularities_take_limits() {
        let r = GatingRates::at(10.0);
        assert!((r.alpha_n - 0.1).abs() < 1e-15);
        let r = GatingRates::at(25.0);
        assert!((r.alpha_m - 1.0).abs() < 1e-15);
        let near = GatingRates::at(10.0 + 1e-9);
        assert!((near.alpha_n - 0.1).abs() < 1e-10);
    }

    #[test]
    fn rescaled_voltage_is_tenth_of_raw() {
        let hh = HodgkinHuxley::default();
        let raw = [37.0, 0.4, 0.3, 0.5];
        let scaled = hh.eval(&hh.to_scaled(&raw));
        let unscaled = hh.raw().eval(&raw);
        assert!((scaled[0] - 0.1 * unscaled[0]).abs() < 1e-12);
        assert!((scaled[1] - 10.0 * unscaled[1]).abs() < 1e-12);
    }

    #[test]
    fn hodgkin_huxley_rest_is_near_equilibrium_without_current() {
        let hh = HodgkinHuxley {
            current: 0.0,
            ..HodgkinHuxley::default()
        }
        .raw();
        let rest = HodgkinHuxley::resting_state(0.0);
        let f = hh.eval(&rest);
        assert!(f[1..].iter().all(|v| v.abs() < 1e-12));
        // leak reversal is tuned so the resting potential sits at V = 0
        assert!(f[0].abs() < 0.05, "{f:?}");
    }
}
