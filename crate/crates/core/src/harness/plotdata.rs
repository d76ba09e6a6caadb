use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::conjugate_net::Checkpoint;
use crate::dynamics::{fmt_float, rk4_solve};
use crate::error::{Error, Result};
use crate::training::{linspace, load_model};

use super::run::Setup;
use super::spec::ExperimentSpec;

pub const PLOT_POINTS: usize = 200;

/// Model against reference on `[0, 2T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotData {
    pub horizon: f64,
    pub times: Vec<f64>,
    pub reference: Vec<Vec<f64>>,
    pub model: Vec<Vec<f64>>,
}

impl PlotData {
    /// `t, ref_x1.., model_x1.., in_horizon` where the last column is 1 on
    /// the training horizon and 0 beyond it.
    pub fn to_csv(&self) -> String {
        let n = self.reference.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",ref_x{i}");
        }
        for i in 1..=n {
            let _ = write!(out, ",model_x{i}");
        }
        out.push_str(",in_horizon\n");
        for ((t, r), m) in self.times.iter().zip(&self.reference).zip(&self.model) {
            out.push_str(&fmt_float(*t));
            for v in r.iter().chain(m) {
                out.push(',');
                out.push_str(&fmt_float(*v));
            }
            let _ = writeln!(out, ",{}", u8::from(*t <= self.horizon));
        }
        out
    }
}

fn unreadable(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::new(
        std::io::ErrorKind::InvalidData,
        format!("{}: {e}", path.display()),
    ))
}

/// Recomputes the reference for the run in `run_dir` (a `seed<k>`
/// directory) and evaluates its checkpoint on 200 points over `[0, 2T]`.
pub fn plotdata(run_dir: &Path) -> Result<PlotData> {
    let ck_path = run_dir.join("checkpoint.json");
    let spec_path = run_dir.parent().unwrap_or(run_dir).join("spec.json");
    let ck = Checkpoint::load(&ck_path)?;
    let spec: ExperimentSpec = serde_json::from_str(&fs::read_to_string(&spec_path)?)
        .map_err(|e| unreadable(&spec_path, e))?;
    let model = load_model(&ck).map_err(|e| unreadable(&ck_path, e))?;
    let field = spec.field.build();
    let x0 = Setup::initial_state(&spec, field.as_ref())?;
    let times = linspace(0.0, 2.0 * spec.horizon, PLOT_POINTS);
    let reference = rk4_solve(field.as_ref(), &x0, &times, spec.reference_dt)?.states;
    let model = model.predict(&x0, &times)?.rows();
    Ok(PlotData {
        horizon: spec.horizon,
        times,
        reference,
        model,
    })
}

/// Writes `plotdata.csv` into `run_dir` and returns its path.
pub fn emit_plotdata(run_dir: &Path) -> Result<PathBuf> {
    let data = plotdata(run_dir)?;
    let path = run_dir.join("plotdata.csv");
    fs::write(&path, data.to_csv())?;
    Ok(path)
}
