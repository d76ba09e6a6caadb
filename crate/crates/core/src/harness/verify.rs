//! Invariant suites behind `conjflow verify`.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::autodiff::gradcheck::{check_all_ops, check_gradients};
use crate::autodiff::{seeded_rng, SeededRng, Tensor};
use crate::conjugate_net::{CouplingEnsemble, NcfConfig, NcfModel};
use crate::dynamics::{
    verify_theorem1_conjugation, FitzHughNagumo, HodgkinHuxley, LinearField, LotkaVolterra,
    VectorField,
};
use crate::error::Result;
use crate::matrix_flow::{
    expm_value, init_constrained_linearization, init_skew_fallback, TopologyMode,
};
use crate::training::{
    linspace, training_loss, MlpPinn, Model, NeuralOde, NodeConfig, PinnConfig, Problem,
    TrainConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
        }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn summary(&self) -> String {
        let worst = self
            .checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| format!("{} = {:.3e} > {:.1e}", c.name, c.value, c.bound))
            .collect::<Vec<_>>();
        if worst.is_empty() {
            let detail = self
                .checks
                .iter()
                .map(|c| format!("{} {:.2e} <= {:.0e}", c.name, c.value, c.bound))
                .collect::<Vec<_>>()
                .join("; ");
            format!("{} ({:.2}s): {detail}", self.suite, self.seconds)
        } else {
            format!(
                "{} ({:.2}s) FAILED: {}",
                self.suite,
                self.seconds,
                worst.join("; ")
            )
        }
    }
}

fn timed(suite: &'static str, body: impl FnOnce() -> Result<Vec<Check>>) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = body()?;
    Ok(SuiteReport {
        suite,
        checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn uniform(rng: &mut SeededRng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// A conjugate flow with random shift networks (no output damping) and a
/// random affine generator and offset.
pub fn random_ncf(n: usize, mode: TopologyMode, rng: &mut SeededRng) -> Result<NcfModel> {
    let config = NcfConfig {
        hidden: vec![16, 16],
        mode,
        output_scale: 1.0,
        ..NcfConfig::default()
    };
    let mut model = NcfModel::new(n, &config, rng)?;
    model.ensemble.set_output_scale(1.0);
    let d = 2 * n;
    model.flow.generator = Tensor::matrix(d, d, uniform(rng, d * d, 0.5))?;
    model.flow.offset = Tensor::vector(uniform(rng, d, 0.5));
    Ok(model)
}

/// Identity, associativity and inversion of `Φᵗ` on the augmented space
/// for `count` random models per state dimension in `{2, 4}`.
pub fn group_properties(count: usize, seed: u64) -> Result<SuiteReport> {
    timed("group properties", || {
        let mut rng = seeded_rng(seed, 0);
        let (mut identity, mut assoc, mut inverse) = (0.0f64, 0.0f64, 0.0f64);
        for n in [2, 4] {
            for k in 0..count {
                let mode = if k % 2 == 0 {
                    TopologyMode::Free
                } else {
                    TopologyMode::Skew
                };
                let model = random_ncf(n, mode, &mut rng)?;
                let z = uniform(&mut rng, 2 * n, 2.0);
                identity = identity.max(max_rel(&model.flow_augmented(&z, 0.0)?, &z));
                for t in [0.3, 1.1] {
                    let once = model.flow_augmented(&z, t)?;
                    let twice = model.flow_augmented(&once, t)?;
                    let direct = model.flow_augmented(&z, 2.0 * t)?;
                    assoc = assoc.max(max_rel(&twice, &direct));
                    let back = model.flow_augmented(&once, -t)?;
                    inverse = inverse.max(max_rel(&back, &z));
                }
            }
        }
        Ok(vec![
            Check::new("identity", identity, 1e-10),
            Check::new("associativity", assoc, 1e-7),
            Check::new("inversion", inverse, 1e-7),
        ])
    })
}

/// Forward/inverse round trips of random coupling ensembles.
pub fn coupling_round_trips(count: usize, seed: u64) -> Result<SuiteReport> {
    timed("coupling round trips", || {
        let mut rng = seeded_rng(seed, 0);
        let (mut fwd, mut inv) = (0.0f64, 0.0f64);
        for k in 0..count {
            let dim = 2 * (1 + k % 4);
            let mut ens = CouplingEnsemble::new(dim, &[16, 16], 2 + k % 3, &mut rng)?;
            ens.set_output_scale(rng.random_range(0.1..3.0));
            let z = uniform(&mut rng, dim, 3.0);
            fwd = fwd.max(max_rel(&ens.inverse(&ens.forward(&z)?)?, &z));
            inv = inv.max(max_rel(&ens.forward(&ens.inverse(&z)?)?, &z));
        }
        Ok(vec![
            Check::new("inverse after forward", fwd, 1e-10),
            Check::new("forward after inverse", inv, 1e-10),
        ])
    })
}

fn loss_check(
    name: &str,
    model: &dyn Model,
    problem: &Problem,
    config: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<Check> {
    let params = model.params();
    let entries: Vec<(usize, usize)> = (0..20)
        .map(|_| {
            let i = rng.random_range(0..params.len());
            (i, rng.random_range(0..params[i].len()))
        })
        .collect();
    let c = check_gradients(
        |tape, vars| Ok(training_loss(tape, model, vars, problem, config)?.0),
        &params,
        Some(&entries),
    )?;
    Ok(Check::new(name, c.max_rel_error, 1e-4))
}

/// Finite-difference checks of every tape op and of both training losses
/// on every model family.
pub fn gradients(seed: u64) -> Result<SuiteReport> {
    timed("gradients", || {
        let mut checks: Vec<Check> = check_all_ops(seed, 3)?
            .into_iter()
            .map(|(name, c)| Check::new(format!("op {name}"), c.max_rel_error, 1e-4))
            .collect();
        let mut rng = seeded_rng(seed, 1);
        let fh = FitzHughNagumo::default();
        let x0 = [2.0, -2.0 / 3.0];
        let times = linspace(0.0, 2.0, 12);
        let physics = Problem {
            field: &fh,
            x0: &x0,
            times: &times,
            samples: None,
        };
        let cfg = TrainConfig::default();
        for mode in [TopologyMode::Free, TopologyMode::Skew] {
            let mut ncf = random_ncf(2, mode, &mut rng)?;
            ncf.init_from_field(&fh, &x0, 1.0)?;
            checks.push(loss_check(
                &format!("physics loss {}", ncf.kind()),
                &ncf,
                &physics,
                &cfg,
                &mut rng,
            )?);
        }
        let mlp = MlpPinn::new(
            2,
            &PinnConfig {
                frequencies: 4,
                hidden: vec![8],
                ..PinnConfig::default()
            },
            &mut rng,
        )?;
        checks.push(loss_check(
            "physics loss mlp",
            &mlp,
            &physics,
            &cfg,
            &mut rng,
        )?);

        let hh = HodgkinHuxley::default();
        let hx0 = hh.to_scaled(&HodgkinHuxley::resting_state(5.0));
        let htimes = linspace(0.0, 1.0, 8);
        let samples = Tensor::from_rows(&vec![hx0.clone(); 8]).map(|v| v * 1.01);
        let inverse = Problem {
            field: &hh,
            x0: &hx0,
            times: &htimes,
            samples: Some(&samples),
        };
        let icfg = TrainConfig {
            physics_components: Some(vec![0]),
            data_components: vec![1, 2, 3],
            ..TrainConfig::default()
        };
        let node = NeuralOde::new(
            4,
            &NodeConfig {
                hidden: vec![8, 8],
                substeps: 2,
            },
            1.0 / 7.0,
            &mut rng,
        )?;
        checks.push(loss_check(
            "physics+data loss node",
            &node,
            &inverse,
            &icfg,
            &mut rng,
        )?);
        let mut ncf = random_ncf(4, TopologyMode::Skew, &mut rng)?;
        ncf.init_from_field(&hh, &hx0, 1.0)?;
        checks.push(loss_check(
            "physics+data loss ncf_t",
            &ncf,
            &inverse,
            &icfg,
            &mut rng,
        )?);
        Ok(checks)
    })
}

/// Defect of the clock-coordinate conjugation against ten times the
/// integrator's own error estimate, on a linear and a nonlinear field.
pub fn theorem1_conjugation() -> Result<SuiteReport> {
    timed("conjugation demo", || {
        let mut checks = Vec::new();
        let linear = LinearField::scalar(-1.0);
        let r = verify_theorem1_conjugation(
            &linear,
            &[vec![1.0], vec![2.5]],
            &[0.0, 0.5],
            &[0.3, 1.0],
            1e-4,
        )?;
        checks.push(Check::new(
            "linear defect / (10 x estimate)",
            r.max_defect / (10.0 * r.integrator_error),
            1.0,
        ));
        checks.push(Check::new("linear defect", r.max_defect, 1e-6));
        let fh = FitzHughNagumo::default();
        let r = verify_theorem1_conjugation(
            &fh,
            &[vec![2.0, -2.0 / 3.0], vec![-1.9, 0.6]],
            &[0.0, 0.5],
            &[0.5, 1.0],
            1e-3,
        )?;
        checks.push(Check::new(
            "fitzhugh-nagumo defect / (10 x estimate)",
            r.max_defect / (10.0 * r.integrator_error),
            1.0,
        ));
        let zero =
            verify_theorem1_conjugation(&fh, &[vec![2.0, -2.0 / 3.0]], &[0.0], &[0.0], 1e-3)?;
        checks.push(Check::new("zero-time defect", zero.max_defect, 1e-12));
        Ok(checks)
    })
}

/// Constraint satisfaction of both initializers at random anchors of the
/// benchmark fields, and isometry of the skew generator's exponential.
pub fn initializers(count: usize, seed: u64) -> Result<SuiteReport> {
    timed("initializers", || {
        let mut rng = seeded_rng(seed, 0);
        let hh = HodgkinHuxley::default();
        let fields: Vec<Box<dyn VectorField>> = vec![
            Box::new(FitzHughNagumo::default()),
            Box::new(LotkaVolterra::default()),
            Box::new(hh),
        ];
        let (mut constrained, mut drift, mut isometry) = (0.0f64, 0.0f64, 0.0f64);
        for k in 0..count {
            let field = fields[k % fields.len()].as_ref();
            let x0 = if field.dim() == 4 {
                hh.to_scaled(&[
                    rng.random_range(-10.0..100.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                ])
            } else {
                uniform(&mut rng, 2, 2.0)
            };
            let (j0, f0) = (field.jacobian(&x0), field.eval(&x0));
            let scale = f0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let a = init_constrained_linearization(&j0, &x0, &f0)?;
            constrained = constrained.max(max_abs(&a.matvec(&x0)?, &f0) / scale);
            let (skew, b) = init_skew_fallback(&j0, &x0, &f0)?;
            let ax: Vec<f64> = skew
                .matvec(&x0)?
                .iter()
                .zip(&b)
                .map(|(p, q)| p + q)
                .collect();
            drift = drift.max(max_abs(&ax, &f0) / scale);
            let t = rng.random_range(-3.0..3.0);
            let prop = expm_value(&skew.map(|v| v * t))?;
            let y = uniform(&mut rng, field.dim(), 2.0);
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            isometry = isometry.max((norm(&prop.matvec(&y)?) - norm(&y)).abs());
        }
        Ok(vec![
            Check::new("A x0 - F(x0)", constrained, 1e-12),
            Check::new("skew A x0 + b - F(x0)", drift, 1e-12),
            Check::new("| |exp(tA) y| - |y| |", isometry, 1e-8),
        ])
    })
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Every suite with the sizes used by `conjflow verify`.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        group_properties(100, seed)?,
        coupling_round_trips(1000, seed)?,
        gradients(seed)?,
        theorem1_conjugation()?,
        initializers(100, seed)?,
    ])
}
