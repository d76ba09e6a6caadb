//! Experiment orchestration: specs, seed fan-out, persistence, tables, plot
//! data and the invariant suites.

mod plotdata;
mod run;
mod spec;
mod table;
pub mod verify;

pub use plotdata::{emit_plotdata, plotdata, PlotData, PLOT_POINTS};
pub use run::{
    build_model, run_experiment, run_seed, Aggregate, ExperimentReport, RunResult, Setup, Stat,
    METRIC_POINTS,
};
pub use spec::{merge, ExperimentId, ExperimentSpec, FieldConfig};
pub use table::{collect_reports, emit_table, Table, TableRow, GAP};
