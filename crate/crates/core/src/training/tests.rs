use rand::Rng;

use super::*;
use crate::autodiff::gradcheck::check_gradients;
use crate::autodiff::{seeded_rng, AdamConfig, Tape, Tensor, Var};
use crate::conjugate_net::{Checkpoint, NcfConfig, NcfModel};
use crate::dynamics::{
    rk4_flow, FitzHughNagumo, HodgkinHuxley, LinearField, LotkaVolterra, Trajectory,
};
use crate::error::{Error, Result};
use crate::matrix_flow::TopologyMode;

/// Ignores its parameters and returns fixed states.
struct Lookup<F: Fn(f64) -> Vec<f64> + Send + Sync> {
    n: usize,
    f: F,
}

impl<F: Fn(f64) -> Vec<f64> + Send + Sync> Model for Lookup<F> {
    fn kind(&self) -> ModelKind {
        ModelKind::Mlp
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn params(&self) -> Vec<Tensor> {
        vec![Tensor::scalar(0.0)]
    }
    fn set_params(&mut self, _: &[Tensor]) -> Result<()> {
        Ok(())
    }
    fn param_count(&self) -> usize {
        0
    }
    fn solutions(&self, tape: &Tape, _: &[Var], _: &[f64], times: &[f64]) -> Result<Vec<Var>> {
        let rows: Vec<Vec<f64>> = times.iter().map(|t| (self.f)(*t)).collect();
        Ok(vec![tape.constant(Tensor::from_rows(&rows))])
    }
    fn checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        Checkpoint::new("mlp", &(), &[], seed)
    }
}

/// `x(t) = c + w·t`.
struct Affine {
    params: Vec<Tensor>,
}

impl Model for Affine {
    fn kind(&self) -> ModelKind {
        ModelKind::Mlp
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn params(&self) -> Vec<Tensor> {
        self.params.clone()
    }
    fn set_params(&mut self, p: &[Tensor]) -> Result<()> {
        self.params = p.to_vec();
        Ok(())
    }
    fn param_count(&self) -> usize {
        2
    }
    fn solutions(&self, tape: &Tape, vars: &[Var], _: &[f64], times: &[f64]) -> Result<Vec<Var>> {
        let t = tape.constant(Tensor::new(vec![times.len(), 1], times.to_vec())?);
        Ok(vec![tape.add(tape.mul(t, vars[1])?, vars[0])?])
    }
    fn checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        Checkpoint::new("mlp", &(), &self.params, seed)
    }
}

#[test]
fn fd_derivative_examples() {
    let sq = fd_time_derivative(
        |ts| {
            Ok(Tensor::new(
                vec![ts.len(), 1],
                ts.iter().map(|t| t * t).collect(),
            )?)
        },
        &[3.0],
        FD_STEP,
    )
    .unwrap();
    assert!((sq.item() - 6.0).abs() < 1e-6);
    let sin = fd_time_derivative(
        |ts| {
            Ok(Tensor::new(
                vec![ts.len(), 1],
                ts.iter().map(|t| t.sin()).collect(),
            )?)
        },
        &[0.0],
        FD_STEP,
    )
    .unwrap();
    assert!((sin.item() - 1.0).abs() <= FD_STEP * FD_STEP / 6.0);
    let c = fd_time_derivative(
        |ts| Ok(Tensor::full(&[ts.len(), 2], 4.2)),
        &[0.0, 1.0],
        FD_STEP,
    )
    .unwrap();
    assert!(c.data().iter().all(|v| *v == 0.0));
}

#[test]
fn residue_of_reference_trajectory_is_tiny() {
    let field = FitzHughNagumo::default();
    let x0 = [2.0, -2.0 / 3.0];
    let model = Lookup {
        n: 2,
        f: |t: f64| rk4_flow(&field, &x0, t, 1e-4).unwrap(),
    };
    let times = linspace(0.0, 10.0, 100);
    let loss = pinn_loss_value(&model, &field, &x0, &times, None).unwrap();
    assert!(loss <= 1e-6, "{loss}");
}

#[test]
fn residue_of_constant_models() {
    let times = linspace(0.0, 10.0, 100);
    let lv = Lookup {
        n: 2,
        f: |_| vec![1.0, 1.0],
    };
    let loss = pinn_loss_value(&lv, &LotkaVolterra::default(), &[1.0, 1.0], &times, None).unwrap();
    assert!(loss <= 1e-20);
    let fh = Lookup {
        n: 2,
        f: |_| vec![2.0, -2.0 / 3.0],
    };
    let loss = pinn_loss_value(
        &fh,
        &FitzHughNagumo::default(),
        &[2.0, -2.0 / 3.0],
        &times,
        None,
    )
    .unwrap();
    assert!((loss - 4.0).abs() < 1e-12, "{loss}");
    // only the second component carries residue here
    let v_only = pinn_loss_value(
        &fh,
        &FitzHughNagumo::default(),
        &[2.0, -2.0 / 3.0],
        &times,
        Some(&[0]),
    )
    .unwrap();
    assert!(v_only < 1e-20);
}

#[test]
fn data_loss_conventions() {
    let tape = Tape::new();
    let samples = Tensor::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![0.5, 0.6, 0.7, 0.8]]);
    let own = tape.constant(samples.clone());
    let zero = data_loss(&tape, &[own, own], &samples, &[1, 2, 3]).unwrap();
    assert_eq!(tape.value(zero).item(), 0.0);

    let c = 0.25;
    let shifted = tape.constant(samples.map(|v| v + c));
    let loss = data_loss(&tape, &[shifted, own], &samples, &[1, 2, 3]).unwrap();
    // one twin off by c in three components, the other exact
    assert!((tape.value(loss).item() - 0.5 * 3.0 * c * c).abs() < 1e-15);
    let loss = data_loss(&tape, &[shifted], &samples, &[1, 2, 3]).unwrap();
    assert!((tape.value(loss).item() - 3.0 * c * c).abs() < 1e-15);

    let short = tape.constant(Tensor::zeros(&[1, 4]));
    assert!(matches!(
        data_loss(&tape, &[short], &samples, &[1]),
        Err(Error::Config(_))
    ));
}

#[test]
fn metrics_against_reference() {
    let x0 = [1.0, 0.0];
    let exact = |t: f64| vec![t.cos(), t.sin()];
    let reference = |a: f64, b: f64| {
        let times = linspace(a, b, 100);
        Trajectory {
            states: times.iter().map(|t| exact(*t)).collect(),
            times,
        }
    };
    let (acc, ext) = (reference(0.0, 5.0), reference(0.0, 10.0));
    let perfect = Lookup { n: 2, f: exact };
    let m = eval_metrics(&perfect, &x0, &acc, &ext).unwrap();
    assert_eq!((m.l_acc, m.l_extrap), (0.0, 0.0));
    let frozen = Lookup {
        n: 2,
        f: |t: f64| exact(t.min(5.0)),
    };
    let m = eval_metrics(&frozen, &x0, &acc, &ext).unwrap();
    assert_eq!(m.l_acc, 0.0);
    assert!(m.l_extrap > 0.1);
}

#[test]
fn zero_epochs_leave_model_unchanged() {
    let mut rng = seeded_rng(0, 0);
    let mut model = NcfModel::new(2, &NcfConfig::default(), &mut rng).unwrap();
    let before = model.clone();
    let field = FitzHughNagumo::default();
    let times = linspace(0.0, 1.0, 10);
    let problem = Problem {
        field: &field,
        x0: &[2.0, -2.0 / 3.0],
        times: &times,
        samples: None,
    };
    let out = train(
        &mut model,
        &problem,
        &TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert!(out.history.is_empty() && out.diverged.is_none());
    assert_eq!(model, before);
}

#[test]
fn affine_regression_converges() {
    let times = linspace(0.0, 1.0, 100);
    let samples = Tensor::new(vec![100, 1], times.iter().map(|t| 2.0 * t - 1.0).collect()).unwrap();
    let field = LinearField::scalar(0.0);
    let mut model = Affine {
        params: vec![Tensor::vector(vec![0.0]), Tensor::vector(vec![0.0])],
    };
    let problem = Problem {
        field: &field,
        x0: &[0.0],
        times: &times,
        samples: Some(&samples),
    };
    let config = TrainConfig {
        epochs: 2000,
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        physics_weight: 0.0,
        data_components: vec![0],
        ..TrainConfig::default()
    };
    let out = train(&mut model, &problem, &config).unwrap();
    assert!(out.best_total <= 1e-6, "{}", out.best_total);
    let final_loss = out.final_report().unwrap().total;
    assert!(out.best_total <= final_loss);
    assert_eq!(out.history.len(), 2000);
}

#[test]
fn divergence_is_reported_not_raised() {
    let times = linspace(0.0, 1.0, 5);
    let samples = Tensor::full(&[5, 1], f64::NAN);
    let field = LinearField::scalar(0.0);
    let mut model = Affine {
        params: vec![Tensor::vector(vec![0.0]), Tensor::vector(vec![0.0])],
    };
    let problem = Problem {
        field: &field,
        x0: &[0.0],
        times: &times,
        samples: Some(&samples),
    };
    let config = TrainConfig {
        epochs: 10,
        data_components: vec![0],
        ..TrainConfig::default()
    };
    let out = train(&mut model, &problem, &config).unwrap();
    assert_eq!(out.diverged, Some(0));
    assert_eq!(out.history.len(), 1);
    assert_eq!(model.params[0].item(), 0.0);
}

#[test]
fn ncf_rates_match_direct_shifted_evaluation() {
    let mut rng = seeded_rng(8, 0);
    let field = FitzHughNagumo::default();
    let x0 = [2.0, -2.0 / 3.0];
    let mut model = NcfModel::new(2, &NcfConfig::default(), &mut rng).unwrap();
    model.init_from_field(&field, &x0, 1.0).unwrap();
    let times = linspace(0.0, 3.0, 7);
    let h = 1e-3;
    let tape = Tape::new();
    let vars = model.bind(&tape);
    let fast = model
        .states_and_rates(&tape, &vars, &x0, &times, h)
        .unwrap();
    let direct = |shift: f64| {
        let ts: Vec<f64> = times.iter().map(|t| t + shift).collect();
        model.forward(&x0, &ts).unwrap()
    };
    let ((_, a_lo, b_lo), (_, a_mid, b_mid), (_, a_hi, b_hi)) =
        (direct(-h), direct(0.0), direct(h));
    for ((state, rate), (lo, mid, hi)) in
        fast.iter().zip([(a_lo, a_mid, a_hi), (b_lo, b_mid, b_hi)])
    {
        let state = tape.value(*state);
        let rate = tape.value(*rate);
        for i in 0..mid.len() {
            assert!((state.data()[i] - mid.data()[i]).abs() < 1e-12);
            let fd = (hi.data()[i] - lo.data()[i]) / (2.0 * h);
            assert!(
                (rate.data()[i] - fd).abs() < 1e-8,
                "{} vs {fd}",
                rate.data()[i]
            );
        }
    }
}

fn random_entries(params: &[Tensor], count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = seeded_rng(seed, 7);
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..params.len());
            (i, rng.random_range(0..params[i].len()))
        })
        .collect()
}

fn check_loss_gradients(model: &dyn Model, problem: &Problem, config: &TrainConfig, seed: u64) {
    let params = model.params();
    let entries = random_entries(&params, 20, seed);
    let check = check_gradients(
        |tape, vars| Ok(training_loss(tape, model, vars, problem, config)?.0),
        &params,
        Some(&entries),
    )
    .unwrap();
    assert!(check.passes(1e-4), "{:?} for {}", check, model.kind());
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = seeded_rng(3, 0);
    let fh = FitzHughNagumo::default();
    let x0 = [2.0, -2.0 / 3.0];
    let times = linspace(0.0, 2.0, 12);
    let problem = Problem {
        field: &fh,
        x0: &x0,
        times: &times,
        samples: None,
    };
    let physics = TrainConfig::default();
    for mode in [TopologyMode::Free, TopologyMode::Skew] {
        let mut ncf = NcfModel::new(
            2,
            &NcfConfig {
                hidden: vec![8, 8],
                mode,
                ..NcfConfig::default()
            },
            &mut rng,
        )
        .unwrap();
        ncf.init_from_field(&fh, &x0, 1.0).unwrap();
        check_loss_gradients(&ncf, &problem, &physics, 1);
    }
    let mlp = MlpPinn::new(
        2,
        &PinnConfig {
            frequencies: 4,
            hidden: vec![8],
            ..PinnConfig::default()
        },
        &mut rng,
    )
    .unwrap();
    check_loss_gradients(&mlp, &problem, &physics, 2);

    // voltage residue plus gating data, as in the inverse problem
    let hh = HodgkinHuxley::default();
    let hx0 = hh.to_scaled(&HodgkinHuxley::resting_state(5.0));
    let htimes = linspace(0.0, 1.0, 8);
    let samples = Tensor::from_rows(&vec![hx0.clone(); 8]).map(|v| v * 1.01);
    let hproblem = Problem {
        field: &hh,
        x0: &hx0,
        times: &htimes,
        samples: Some(&samples),
    };
    let inverse = TrainConfig {
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
    )
    .unwrap();
    check_loss_gradients(&node, &hproblem, &inverse, 3);
    let mut ncf = NcfModel::new(
        4,
        &NcfConfig {
            hidden: vec![6, 6],
            mode: TopologyMode::Skew,
            ..NcfConfig::default()
        },
        &mut rng,
    )
    .unwrap();
    ncf.init_from_field(&hh, &hx0, 1.0).unwrap();
    check_loss_gradients(&ncf, &hproblem, &inverse, 4);
}

#[test]
fn history_csv_layout() {
    let mut buf = Vec::new();
    let h = [LossReport {
        epoch: 3,
        physics_loss: 0.5,
        data_loss: 0.0,
        total: 0.5,
    }];
    write_history(&h, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,physics_loss,data_loss,total");
    assert!(lines[1].starts_with("3,5.0000000000000000e-1,"));
}

#[test]
fn checkpoints_restore_every_model_kind() {
    let mut rng = seeded_rng(5, 0);
    let models: Vec<Box<dyn Model>> = vec![
        Box::new(MlpPinn::new(2, &PinnConfig::default(), &mut rng).unwrap()),
        Box::new(NeuralOde::new(2, &NodeConfig::default(), 0.1, &mut rng).unwrap()),
        Box::new(NcfModel::new(2, &NcfConfig::default(), &mut rng).unwrap()),
    ];
    let times = [0.0, 0.7, 1.3];
    for m in models {
        let restored = load_model(&m.checkpoint(5).unwrap()).unwrap();
        assert_eq!(restored.kind(), m.kind());
        let (a, b) = (
            m.predict(&[0.2, 0.1], &times).unwrap(),
            restored.predict(&[0.2, 0.1], &times).unwrap(),
        );
        assert_eq!(a, b);
    }
}
