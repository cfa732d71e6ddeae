//! Experiment configuration, the two station sessions, and output files.

mod config;
mod output;
mod session;

pub use config::{ExperimentConfig, DEFAULT_CENTERING};
pub use output::{
    cfi_from_tables, read_estimates_csv, read_rho_hat, read_sweep_csv, write_cfi_csv, write_estimates_csv, write_outputs,
    write_eve_report, write_rho_hat, write_sweep_csv, write_tomography, EstimateRow, SweepRow,
};
pub use session::{
    analyze, bob_session, calibrate_locally, run_sweep_local, simulate_tomography, AliceStation, BobExit, BobOptions, Calibration,
    tap_report, PhasePoint, SweepOutcome,
};
