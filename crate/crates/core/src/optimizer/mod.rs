//! Pulse search: error metrics, the Subplex minimizer and the state-preparation
//! drivers built on them.

pub mod metrics;
pub mod preparation;
pub mod subplex;

pub use metrics::{population_error, state_error, uhlmann_fidelity};
pub use preparation::{
    constant_pulse_error, initial_state, optimize_from, optimize_preparation, robustness_envelope,
    sweep_pulse_length, Evaluation, NoiseGrid, OptimizationRecord, PreparationOptions, PreparationProblem,
    RobustnessEnvelope, SweepPoint,
};
pub use subplex::{box_samples, start_points, subplex_with_probe, subplex_from_starts, subplex_minimize, SearchResult, SubplexOptions, Termination};
