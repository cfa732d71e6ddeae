//! Simulation of secure quantum remote sensing over shared singlets.
//!
//! Alice and Bob share entangled photon pairs. Alice measures her half in a
//! randomly chosen basis, which steers Bob's half into one of four known
//! probe states. Bob's probe picks up an unknown phase and he publishes his
//! σ_y outcome. Only Alice, who knows which probe each round used, can turn
//! the published bits into a phase estimate.
//!
//! Module map:
//!
//! * [`qcore`]: states, operators, partial trace, fidelity
//! * [`source`]: singlet source and noise model
//! * [`tomography`]: two-qubit tomography counts and reconstruction
//! * [`protocol`]: steering, phase channel, readout, round transcripts
//! * [`estimation`]: grouping, phase inversion, Fisher information
//! * [`transport`]: framed binary link between the stations
//! * [`experiment`]: configuration, sweeps and output files

pub mod error;
pub mod estimation;
pub mod experiment;
pub mod protocol;
pub mod qcore;
pub mod rng;
pub mod source;
pub mod tomography;
pub mod transport;

pub use error::{Error, Result};
