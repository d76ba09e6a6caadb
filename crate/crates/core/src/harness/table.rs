use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::training::ModelKind;

use super::run::{Aggregate, ExperimentReport, Stat};
use super::spec::ExperimentId;

/// Printed in place of a value for a cell with no usable runs.
pub const GAP: &str = "--";

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub experiment: ExperimentId,
    pub model: ModelKind,
    pub spec_hash: Option<String>,
    pub params: Option<usize>,
    pub aggregate: Option<Aggregate>,
    pub runs: usize,
}

impl TableRow {
    pub fn is_gap(&self) -> bool {
        self.aggregate.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub rows: Vec<TableRow>,
}

/// Every `summary.json` below `dir`, in path order.
pub fn collect_reports(dir: &Path) -> Result<Vec<ExperimentReport>> {
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", dir.display()),
        )));
    }
    let mut paths: Vec<_> = WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name() == "summary.json")
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok(serde_json::from_str(&fs::read_to_string(p)?)?))
        .collect()
}

fn sci(s: Stat) -> String {
    format!("{:.1e} ± {:.1e}", s.mean, s.std)
}

fn params(n: usize) -> String {
    if n >= 1000 {
        format!("{:.1}K", n as f64 / 1000.0)
    } else {
        n.to_string()
    }
}

/// One row per `(experiment, model, spec)` found, plus a gap row for every
/// model the experiment expects but no report covers.
pub fn emit_table(reports: &[ExperimentReport]) -> Result<Table> {
    if reports.is_empty() {
        return Err(Error::Config("no experiment results to tabulate".into()));
    }
    let mut cells: BTreeMap<(ExperimentId, ModelKind), Vec<&ExperimentReport>> = BTreeMap::new();
    for r in reports {
        cells
            .entry((r.spec.experiment, r.spec.model))
            .or_default()
            .push(r);
    }
    let experiments: Vec<ExperimentId> = {
        let mut e: Vec<_> = cells.keys().map(|k| k.0).collect();
        e.dedup();
        e
    };
    let mut rows = Vec::new();
    for e in experiments {
        for &m in e.models() {
            match cells.get(&(e, m)) {
                Some(found) => rows.extend(found.iter().map(|r| TableRow {
                    experiment: e,
                    model: m,
                    spec_hash: Some(r.spec_hash.clone()),
                    params: Some(r.param_count),
                    aggregate: r.aggregate,
                    runs: r.runs.len(),
                })),
                None => rows.push(TableRow {
                    experiment: e,
                    model: m,
                    spec_hash: None,
                    params: None,
                    aggregate: None,
                    runs: 0,
                }),
            }
        }
    }
    Ok(Table { rows })
}

impl Table {
    pub fn has_gaps(&self) -> bool {
        self.rows.iter().any(TableRow::is_gap)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = None;
        for r in &self.rows {
            if current != Some(r.experiment) {
                current = Some(r.experiment);
                let _ = writeln!(out, "\n{}", r.experiment);
                let _ = writeln!(
                    out,
                    "{:<7} {:>7} {:>20} {:>20} {:>16} {:>5}",
                    "Model", "Params", "L_acc", "L_extrap", "Time(s)", "div"
                );
            }
            let (acc, ext, time, div) = match &r.aggregate {
                Some(a) => (
                    sci(a.l_acc),
                    sci(a.l_extrap),
                    format!("{:.1} ± {:.1}", a.wall_seconds.mean, a.wall_seconds.std),
                    a.diverged.to_string(),
                ),
                None => (GAP.into(), GAP.into(), GAP.into(), r.runs.to_string()),
            };
            let _ = writeln!(
                out,
                "{:<7} {:>7} {:>20} {:>20} {:>16} {:>5}",
                r.model.label(),
                r.params.map_or(GAP.to_string(), params),
                acc,
                ext,
                time,
                div
            );
        }
        out
    }

    /// Machine-readable mirror of [`Table::render`]; gaps are empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "experiment,model,spec_hash,params,l_acc_mean,l_acc_std,l_extrap_mean,l_extrap_std,time_mean,time_std,runs,diverged\n",
        );
        for r in &self.rows {
            let stats = match &r.aggregate {
                Some(a) => format!(
                    "{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                    a.l_acc.mean,
                    a.l_acc.std,
                    a.l_extrap.mean,
                    a.l_extrap.std,
                    a.wall_seconds.mean,
                    a.wall_seconds.std,
                    a.runs,
                    a.diverged
                ),
                None => format!(",,,,,,0,{}", r.runs),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.experiment,
                r.model,
                r.spec_hash.as_deref().unwrap_or(""),
                r.params.map_or(String::new(), |p| p.to_string()),
                stats
            );
        }
        out
    }
}
