//! Evaluation and tooling around trained checkpoints: pairwise win rates,
//! finite-difference gradient checks, metrics-to-CSV export and the command
//! line front end.

pub mod cli;
mod eval;
mod export;
mod gradcheck;

pub use eval::{
    evaluate_checkpoints, evaluate_win_rate, Answerer, OracleAnswerer, Tally, WinRateReport,
};
pub use export::{export_curves, CurveExport, LineWarning};
pub use gradcheck::{gradcheck, GradcheckCase, GradcheckReport, GRADCHECK_TOLERANCE};
