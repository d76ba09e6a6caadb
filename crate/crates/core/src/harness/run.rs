use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{seeded_rng, Tensor};
use crate::conjugate_net::NcfModel;
use crate::dynamics::{rk4_flow, rk4_solve, Trajectory, VectorField};
use crate::error::{Error, Result};
use crate::matrix_flow::TopologyMode;
use crate::training::{
    eval_metrics, linspace, train, write_history, LossReport, MlpPinn, Model, ModelKind, NeuralOde,
    Problem,
};

use super::spec::ExperimentSpec;

/// Points per horizon in the evaluation grids.
pub const METRIC_POINTS: usize = 100;

/// RNG streams derived from a run seed.
const STREAM_INIT: u64 = 0;
const STREAM_NOISE: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub spec_hash: String,
    pub seed: u64,
    pub l_acc: f64,
    pub l_extrap: f64,
    pub wall_seconds: f64,
    pub final_losses: Option<LossReport>,
    pub best_total: f64,
    pub best_epoch: Option<usize>,
    /// Epoch at which training stopped on a non-finite value.
    pub diverged: Option<usize>,
    pub param_count: usize,
    pub checkpoint: PathBuf,
}

impl RunResult {
    pub fn is_usable(&self) -> bool {
        self.diverged.is_none() && self.l_acc.is_finite() && self.l_extrap.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self { mean, std })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub l_acc: Stat,
    pub l_extrap: Stat,
    pub wall_seconds: Stat,
    pub runs: usize,
    pub diverged: usize,
}

impl Aggregate {
    /// Statistics over usable runs; `None` when every run diverged.
    pub fn of(runs: &[RunResult]) -> Option<Self> {
        let ok: Vec<&RunResult> = runs.iter().filter(|r| r.is_usable()).collect();
        let col = |f: fn(&RunResult) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
        Some(Self {
            l_acc: Stat::of(&col(|r| r.l_acc))?,
            l_extrap: Stat::of(&col(|r| r.l_extrap))?,
            wall_seconds: Stat::of(&col(|r| r.wall_seconds))?,
            runs: ok.len(),
            diverged: runs.len() - ok.len(),
        })
    }
}

/// Persisted per `(spec, seed set)`: what `conjflow table` reads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub spec_hash: String,
    pub param_count: usize,
    pub runs: Vec<RunResult>,
    pub aggregate: Option<Aggregate>,
}

/// Shared inputs of every seed: the field, the start after burn-in and the
/// reference trajectories.
pub struct Setup {
    pub field: Box<dyn VectorField>,
    pub x0: Vec<f64>,
    pub train_times: Vec<f64>,
    pub reference_train: Trajectory,
    pub reference_acc: Trajectory,
    pub reference_extrap: Trajectory,
}

impl Setup {
    pub fn new(spec: &ExperimentSpec) -> Result<Self> {
        let field = spec.field.build();
        let x0 = Self::initial_state(spec, field.as_ref())?;
        let train_times = linspace(0.0, spec.horizon, spec.grid);
        let reference = |times: &[f64]| rk4_solve(field.as_ref(), &x0, times, spec.reference_dt);
        let reference_train = reference(&train_times)?;
        let reference_acc = reference(&linspace(0.0, spec.horizon, METRIC_POINTS))?;
        let reference_extrap = reference(&linspace(0.0, 2.0 * spec.horizon, METRIC_POINTS))?;
        Ok(Self {
            field,
            x0,
            train_times,
            reference_train,
            reference_acc,
            reference_extrap,
        })
    }

    /// `x⁰` after the burn-in.
    pub fn initial_state(spec: &ExperimentSpec, field: &dyn VectorField) -> Result<Vec<f64>> {
        if spec.burn_in > 0.0 {
            rk4_flow(field, &spec.x0, spec.burn_in, spec.reference_dt)
        } else {
            Ok(spec.x0.clone())
        }
    }

    /// Reference states on the training grid with Gaussian noise on the
    /// data components.
    pub fn samples(&self, spec: &ExperimentSpec, seed: u64) -> Result<Tensor> {
        let mut samples = self.reference_train.to_tensor();
        if spec.noise_sigma > 0.0 {
            let normal =
                Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
            let mut rng = seeded_rng(seed, STREAM_NOISE);
            for i in 0..spec.grid {
                for &c in &spec.train.data_components {
                    let v = samples.at(i, c) + normal.sample(&mut rng);
                    samples.set(i, c, v);
                }
            }
        }
        Ok(samples)
    }
}

/// Fresh model for `seed`, initialized as its family prescribes.
pub fn build_model(spec: &ExperimentSpec, setup: &Setup, seed: u64) -> Result<Box<dyn Model>> {
    let mut rng = seeded_rng(seed, STREAM_INIT);
    let n = setup.field.dim();
    Ok(match spec.model {
        ModelKind::Mlp => Box::new(MlpPinn::new(n, &spec.pinn, &mut rng)?),
        ModelKind::Ncf | ModelKind::NcfT => {
            let mut config = spec.ncf.clone();
            config.mode = if spec.model == ModelKind::NcfT {
                TopologyMode::Skew
            } else {
                TopologyMode::Free
            };
            let mut model = NcfModel::new(n, &config, &mut rng)?;
            model.init_from_field(setup.field.as_ref(), &setup.x0, config.output_scale)?;
            Box::new(model)
        }
        ModelKind::Node => {
            let spacing = spec.horizon / (spec.grid - 1) as f64;
            Box::new(NeuralOde::new(n, &spec.node, spacing, &mut rng)?)
        }
    })
}

fn write_csv(path: &Path, write: impl FnOnce(BufWriter<File>) -> Result<()>) -> Result<()> {
    write(BufWriter::new(File::create(path)?))
}

fn prediction(model: &dyn Model, x0: &[f64], times: &[f64]) -> Result<Trajectory> {
    let pred = model.predict(x0, times)?;
    Ok(Trajectory {
        times: times.to_vec(),
        states: pred.rows(),
    })
}

/// Trains one seed and writes its artifacts under `dir`.
pub fn run_seed(spec: &ExperimentSpec, setup: &Setup, seed: u64, dir: &Path) -> Result<RunResult> {
    fs::create_dir_all(dir)?;
    let mut model = build_model(spec, setup, seed)?;
    let samples = setup.samples(spec, seed)?;
    let problem = Problem {
        field: setup.field.as_ref(),
        x0: &setup.x0,
        times: &setup.train_times,
        samples: Some(&samples),
    };
    let outcome = train(model.as_mut(), &problem, &spec.train)?;
    let metrics = eval_metrics(
        model.as_ref(),
        &setup.x0,
        &setup.reference_acc,
        &setup.reference_extrap,
    );
    let (l_acc, l_extrap) = match metrics {
        Ok(m) => (m.l_acc, m.l_extrap),
        Err(Error::BlowUp { .. }) => (f64::NAN, f64::NAN),
        Err(e) => return Err(e),
    };

    let checkpoint = dir.join("checkpoint.json");
    model.checkpoint(seed)?.save(&checkpoint)?;
    write_csv(&dir.join("history.csv"), |w| {
        write_history(&outcome.history, w)
    })?;
    for (name, reference) in [
        ("train", &setup.reference_acc),
        ("extrap", &setup.reference_extrap),
    ] {
        if let Ok(traj) = prediction(model.as_ref(), &setup.x0, &reference.times) {
            write_csv(&dir.join(format!("trajectory_{name}.csv")), |w| {
                traj.write_csv(w)
            })?;
        }
    }
    let result = RunResult {
        spec_hash: spec.hash(),
        seed,
        l_acc,
        l_extrap,
        wall_seconds: outcome.wall_seconds,
        final_losses: outcome.final_report().copied(),
        best_total: outcome.best_total,
        best_epoch: outcome.best_epoch,
        diverged: outcome.diverged,
        param_count: model.param_count(),
        checkpoint,
    };
    fs::write(
        dir.join("result.json"),
        serde_json::to_string_pretty(&result)?,
    )?;
    Ok(result)
}

/// Runs every seed of `spec` (fanned out per `spec.execution`), writes the
/// shared artifacts and the summary, and aggregates the usable runs.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let setup = Setup::new(spec)?;
    let dir = spec.run_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("spec.json"), serde_json::to_string_pretty(spec)?)?;
    write_csv(&dir.join("reference_train.csv"), |w| {
        setup.reference_acc.write_csv(w)
    })?;
    write_csv(&dir.join("reference_extrap.csv"), |w| {
        setup.reference_extrap.write_csv(w)
    })?;

    let runs = spec
        .execution
        .map(&spec.seeds, |&seed| {
            run_seed(spec, &setup, seed, &dir.join(format!("seed{seed}")))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let param_count = runs.first().map_or(0, |r| r.param_count);
    let report = ExperimentReport {
        spec: spec.clone(),
        spec_hash: spec.hash(),
        param_count,
        aggregate: Aggregate::of(&runs),
        runs,
    };
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentId;

    #[test]
    fn sample_std_and_single_run() {
        let s = Stat::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(Stat::of(&[4.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn tiny_run_is_deterministic_and_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let overrides = serde_json::json!({
            "train": {"epochs": 3},
            "grid": 10,
            "seeds": [0, 1],
            "ncf": {"hidden": [4, 4]},
            "out_dir": dir.path(),
        });
        let spec =
            ExperimentSpec::with_overrides(ExperimentId::FhForward, ModelKind::NcfT, &overrides)
                .unwrap();
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.l_acc.to_bits(), y.l_acc.to_bits());
            assert_eq!(x.l_extrap.to_bits(), y.l_extrap.to_bits());
        }
        let run_dir = spec.run_dir();
        assert!(run_dir.to_string_lossy().contains(&spec.hash()));
        for f in [
            "spec.json",
            "summary.json",
            "reference_extrap.csv",
            "seed1/checkpoint.json",
            "seed1/history.csv",
            "seed0/result.json",
        ] {
            assert!(run_dir.join(f).exists(), "{f}");
        }
        assert_eq!(a.aggregate.unwrap().runs, 2);
    }

    #[test]
    fn noise_only_touches_data_components() {
        let spec = ExperimentSpec::with_overrides(
            ExperimentId::HhInverse,
            ModelKind::Mlp,
            &serde_json::json!({"grid": 5, "burn_in": 1.0}),
        )
        .unwrap();
        let setup = Setup::new(&spec).unwrap();
        let clean = setup.reference_train.to_tensor();
        let noisy = setup.samples(&spec, 3).unwrap();
        for i in 0..5 {
            assert_eq!(noisy.at(i, 0), clean.at(i, 0));
            assert_ne!(noisy.at(i, 1), clean.at(i, 1));
        }
        assert_eq!(noisy, setup.samples(&spec, 3).unwrap());
    }
}
