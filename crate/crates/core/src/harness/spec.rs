use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::autodiff::AdamConfig;
use crate::conjugate_net::NcfConfig;
use crate::dynamics::{FitzHughNagumo, HodgkinHuxley, LotkaVolterra, VectorField};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::training::{ModelKind, NodeConfig, PinnConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    FhForward,
    HhInverse,
    LvForward,
    FhNonlinear,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [
        ExperimentId::FhForward,
        ExperimentId::HhInverse,
        ExperimentId::LvForward,
        ExperimentId::FhNonlinear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::FhForward => "fh_forward",
            ExperimentId::HhInverse => "hh_inverse",
            ExperimentId::LvForward => "lv_forward",
            ExperimentId::FhNonlinear => "fh_nonlinear",
        }
    }

    /// Models that may be run on this experiment. Neural ODEs only make a
    /// fair comparison on the inverse problem, where every model sees data.
    pub fn models(self) -> &'static [ModelKind] {
        match self {
            ExperimentId::HhInverse => &[
                ModelKind::Mlp,
                ModelKind::Ncf,
                ModelKind::NcfT,
                ModelKind::Node,
            ],
            _ => &[ModelKind::Mlp, ModelKind::Ncf, ModelKind::NcfT],
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldConfig {
    FitzhughNagumo(FitzHughNagumo),
    HodgkinHuxley(HodgkinHuxley),
    LotkaVolterra(LotkaVolterra),
}

impl FieldConfig {
    pub fn build(&self) -> Box<dyn VectorField> {
        match self {
            FieldConfig::FitzhughNagumo(f) => Box::new(*f),
            FieldConfig::HodgkinHuxley(f) => Box::new(*f),
            FieldConfig::LotkaVolterra(f) => Box::new(*f),
        }
    }
}

/// Everything that determines a run, apart from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment: ExperimentId,
    pub model: ModelKind,
    pub field: FieldConfig,
    /// Initial state; advanced by `burn_in` time units before the clock
    /// starts.
    pub x0: Vec<f64>,
    pub burn_in: f64,
    /// Training horizon `T`; extrapolation is scored on `[0, 2T]`.
    pub horizon: f64,
    pub grid: usize,
    pub reference_dt: f64,
    /// Standard deviation of the Gaussian noise on data samples.
    pub noise_sigma: f64,
    pub train: TrainConfig,
    pub ncf: NcfConfig,
    pub pinn: PinnConfig,
    pub node: NodeConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub execution: Execution,
}

fn adam(lr: f64, beta2: f64) -> AdamConfig {
    AdamConfig {
        lr,
        beta1: 0.9,
        beta2,
        ..AdamConfig::default()
    }
}

impl ExperimentSpec {
    pub fn defaults(experiment: ExperimentId, model: ModelKind) -> Result<Self> {
        let mut spec = Self {
            experiment,
            model,
            field: FieldConfig::FitzhughNagumo(FitzHughNagumo::default()),
            x0: vec![2.0, -2.0 / 3.0],
            burn_in: 0.0,
            horizon: 10.0,
            grid: 100,
            reference_dt: 1e-4,
            noise_sigma: 0.0,
            train: TrainConfig {
                adam: adam(1e-3, 0.99),
                ..TrainConfig::default()
            },
            ncf: NcfConfig::default(),
            pinn: PinnConfig::default(),
            node: NodeConfig::default(),
            seeds: (0..5).collect(),
            out_dir: PathBuf::from("runs"),
            execution: Execution::default(),
        };
        match experiment {
            ExperimentId::FhForward => {}
            ExperimentId::FhNonlinear => spec.x0 = vec![0.5, 0.0],
            ExperimentId::LvForward => {
                spec.field = FieldConfig::LotkaVolterra(LotkaVolterra::default());
                spec.x0 = vec![2.0, 0.4];
            }
            ExperimentId::HhInverse => {
                let hh = HodgkinHuxley::default();
                spec.field = FieldConfig::HodgkinHuxley(hh);
                spec.x0 = hh.to_scaled(&HodgkinHuxley::resting_state(0.0));
                spec.burn_in = 30.0;
                spec.horizon = 14.0;
                spec.reference_dt = 1e-3;
                spec.noise_sigma = 0.01;
                spec.train.adam = adam(2.5e-3, 0.95);
                spec.train.physics_components = Some(vec![0]);
                spec.train.data_components = vec![1, 2, 3];
                spec.ncf.hidden = vec![90, 90];
                spec.pinn.frequencies = 64;
                spec.pinn.hidden = vec![128];
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Defaults for `(experiment, model)` with `overrides` (a partial JSON
    /// document) merged on top.
    pub fn with_overrides(
        experiment: ExperimentId,
        model: ModelKind,
        overrides: &Value,
    ) -> Result<Self> {
        let mut base = serde_json::to_value(Self::defaults(experiment, model)?)?;
        merge(&mut base, overrides);
        let spec: Self = serde_json::from_value(base)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.experiment.models().contains(&self.model) {
            return Err(Error::Config(format!(
                "model {} is not run on experiment {}",
                self.model, self.experiment
            )));
        }
        let dim = self.field.build().dim();
        if self.x0.len() != dim {
            return Err(Error::Config(format!(
                "x0 has {} entries for a {dim}-dimensional field",
                self.x0.len()
            )));
        }
        if self.grid < 2
            || !(self.horizon > 0.0)
            || !(self.reference_dt > 0.0)
            || self.burn_in < 0.0
        {
            return Err(Error::Config(
                "grid, horizon and reference step must be positive".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds requested".into()));
        }
        let bad_component = self
            .train
            .data_components
            .iter()
            .chain(self.train.physics_components.iter().flatten())
            .any(|c| *c >= dim);
        if bad_component {
            return Err(Error::Config("loss component out of range".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of every field that affects results
    /// (seeds, output directory and execution mode excluded); 16 hex digits.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("spec serializes");
        if let Value::Object(map) = &mut v {
            for k in ["seeds", "out_dir", "execution"] {
                map.remove(k);
            }
        }
        // serde_json's default map is ordered, so this text is canonical
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `<out>/<experiment>/<model>/<hash>`.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir
            .join(self.experiment.as_str())
            .join(self.model.as_str())
            .join(self.hash())
    }
}

/// Recursive object merge; non-object values in `patch` replace.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn defaults_follow_experiment_setup() {
        let fh = ExperimentSpec::defaults(ExperimentId::FhForward, ModelKind::NcfT).unwrap();
        assert_eq!(fh.x0, vec![2.0, -2.0 / 3.0]);
        assert_eq!(fh.horizon, 10.0);
        assert_eq!(
            fh.field,
            FieldConfig::FitzhughNagumo(FitzHughNagumo::default())
        );
        let lv = ExperimentSpec::defaults(ExperimentId::LvForward, ModelKind::Mlp).unwrap();
        assert_eq!(
            lv.field,
            FieldConfig::LotkaVolterra(LotkaVolterra::default())
        );
        let hh = ExperimentSpec::defaults(ExperimentId::HhInverse, ModelKind::Node).unwrap();
        assert_eq!((hh.horizon, hh.grid), (14.0, 100));
        assert_eq!(hh.train.adam.lr, 2.5e-3);
        assert_eq!(fh.seeds, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn node_only_on_inverse_problem() {
        for e in [
            ExperimentId::FhForward,
            ExperimentId::LvForward,
            ExperimentId::FhNonlinear,
        ] {
            assert!(ExperimentSpec::defaults(e, ModelKind::Node).is_err());
        }
    }

    #[test]
    fn overrides_merge_and_change_hash() {
        let base = ExperimentSpec::defaults(ExperimentId::FhForward, ModelKind::Mlp).unwrap();
        let same = ExperimentSpec::with_overrides(
            ExperimentId::FhForward,
            ModelKind::Mlp,
            &json!({"seeds": [7]}),
        )
        .unwrap();
        assert_eq!(same.seeds, vec![7]);
        assert_eq!(same.hash(), base.hash());
        let changed = ExperimentSpec::with_overrides(
            ExperimentId::FhForward,
            ModelKind::Mlp,
            &json!({"train": {"epochs": 5}}),
        )
        .unwrap();
        assert_eq!(changed.train.epochs, 5);
        assert_eq!(changed.train.adam.lr, 1e-3);
        assert_ne!(changed.hash(), base.hash());
        assert_eq!(changed.hash().len(), 16);
    }

    #[test]
    fn invalid_overrides_are_rejected() {
        let bad = ExperimentSpec::with_overrides(
            ExperimentId::FhForward,
            ModelKind::Mlp,
            &json!({"x0": [1.0]}),
        );
        assert!(matches!(bad, Err(Error::Config(_))));
        let bad = ExperimentSpec::with_overrides(
            ExperimentId::FhForward,
            ModelKind::Mlp,
            &json!({"grid": "many"}),
        );
        assert!(matches!(bad, Err(Error::Json(_))));
    }
}
