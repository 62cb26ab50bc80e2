//! Optimal-control toolkit for RF state preparation in the ⁸⁷Rb F = 2 manifold.
//!
//! The crate is organised bottom-up: [`spin_system`] builds the Hamiltonian,
//! [`dynamics`] integrates the master equation, [`pulse`] holds the CRAB
//! drive, [`optimizer`] searches pulse coefficients and [`interferometer`]
//! simulates Ramsey sequences built from prepared pulses.

pub mod dynamics;
pub mod error;
pub mod interferometer;
pub mod optimizer;
pub mod pulse;
pub mod spin_system;
pub mod target;

pub use error::{Error, Result};
pub use pulse::{CrabPulse, FrequencyBand};
pub use spin_system::{khz, to_khz, DensityMatrix, Eigenstate, HamiltonianTerm, SystemParams};
pub use target::{builtin_target, builtin_targets, TargetSpec};
