//! Benchmark vector fields, reference integrators and the clock-coordinate
//! conjugation check.

mod conjugacy;
mod fields;
mod integrate;

pub use conjugacy::{verify_theorem1_conjugation, ConjugacyReport};
pub use fields::{
    FitzHughNagumo, GatingRates, HodgkinHuxley, LinearField, LotkaVolterra, VectorField, HH_RESCALE,
};
pub use integrate::{
    fmt_float, midpoint_solve, midpoint_solve_tape, midpoint_step, midpoint_step_tape, rk4_flow,
    rk4_solve, rk4_step, step_schedule, Trajectory,
};
