//! State preparation: objective, multi-start search over CRAB coefficients,
//! pulse-length sweeps and noise envelopes.

use std::io::Write;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{state_error, uhlmann_fidelity};
use super::subplex::{box_samples, subplex_from_starts, subplex_with_probe, SearchResult, StartSummary, SubplexOptions};
use crate::dynamics::{evolve, ConstantDrive, Drive, IntegratorSettings};
use crate::error::{Error, Result};
use crate::pulse::{default_carrier, CrabPulse, FrequencyBand};
use crate::spin_system::{khz, DensityMatrix, SystemParams};
use crate::target::TargetSpec;

/// Initial state ρ₀ = |1⟩⟨1| (m_F = +2).
pub fn initial_state() -> DensityMatrix {
    DensityMatrix::basis(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreparationOptions {
    pub n_f: usize,
    /// Include the real A₀ term as a search parameter.
    pub with_offset: bool,
    /// Carrier f₀ (rad/s).
    pub carrier: f64,
    pub band: FrequencyBand,
    /// Band excursion (rad/s) that costs one unit of objective.
    pub penalty_scale: f64,
    /// Grid points on which ω(t) is checked against the band.
    pub band_samples: usize,
    pub solver: SubplexOptions,
    pub integrator: IntegratorSettings,
}

impl Default for PreparationOptions {
    fn default() -> Self {
        Self {
            n_f: 7,
            with_offset: false,
            carrier: default_carrier(),
            band: FrequencyBand::reference(),
            penalty_scale: khz(100.0),
            band_samples: 201,
            solver: SubplexOptions {
                simplex_scale: 0.04,
                init_radius: 0.1,
                stop_below: Some(0.005),
                ..SubplexOptions::default()
            },
            integrator: IntegratorSettings::default(),
        }
    }
}

/// Everything the objective depends on besides the coefficients.
#[derive(Debug, Clone)]
pub struct PreparationProblem {
    pub target: TargetSpec,
    pub duration: f64,
    pub system: SystemParams,
    pub options: PreparationOptions,
}

/// Breakdown of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// population error ε
    pub error: f64,
    /// 1 − F² against the full target, 0 without one
    pub infidelity: f64,
    pub penalty: f64,
    /// infidelity + penalty with a full target, ε + penalty otherwise
    pub value: f64,
}

impl PreparationProblem {
    pub fn new(target: TargetSpec, duration: f64, system: SystemParams, options: PreparationOptions) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Domain {
                quantity: "pulse duration (s)",
                value: duration,
                domain: "(0, ∞)".into(),
            });
        }
        options.integrator.validate()?;
        Ok(Self {
            target,
            duration,
            system,
            options,
        })
    }

    pub fn parameter_count(&self) -> usize {
        CrabPulse::parameter_count(self.options.n_f, self.options.with_offset)
    }

    pub fn pulse(&self, params: &[f64]) -> Result<CrabPulse> {
        CrabPulse::from_parameters(self.options.carrier, self.duration, params, self.options.with_offset)
    }

    pub fn penalty(&self, pulse: &CrabPulse) -> f64 {
        pulse.band_violation(&self.options.band, self.options.band_samples) / self.options.penalty_scale
    }

    pub fn final_state(&self, pulse: &CrabPulse) -> Result<DensityMatrix> {
        evolve(&initial_state(), pulse, &self.system, self.duration, &self.options.integrator)
    }

    pub fn evaluate_pulse(&self, pulse: &CrabPulse) -> Result<Evaluation> {
        let penalty = self.penalty(pulse);
        let rho = self.final_state(pulse)?;
        let error = state_error(&rho, &self.target);
        // with a full target the fidelity alone is minimized: ε ≤ √(1 − F²)
        let (infidelity, value) = match &self.target.full_target {
            Some(full) => {
                let infidelity = 1.0 - uhlmann_fidelity(&rho, full)?.powi(2);
                (infidelity, infidelity + penalty)
            }
            None => (0.0, error + penalty),
        };
        Ok(Evaluation {
            error,
            infidelity,
            penalty,
            value,
        })
    }

    /// Objective value; a failed propagation scores 1 + penalty.
    pub fn objective(&self, params: &[f64]) -> f64 {
        let pulse = match self.pulse(params) {
            Ok(p) => p,
            Err(e) => {
                warn!("objective: {e}");
                return f64::INFINITY;
            }
        };
        match self.evaluate_pulse(&pulse) {
            Ok(eval) => eval.value,
            Err(e) => {
                let penalty = self.penalty(&pulse);
                warn!("objective: propagation failed ({e}); scoring as 1 + {penalty:.3e}");
                1.0 + penalty
            }
        }
    }
}

/// Result of one preparation search with enough context to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationRecord {
    pub target: TargetSpec,
    pub duration_us: f64,
    pub best_pulse: CrabPulse,
    /// objective value of `best_pulse`
    pub best_objective: f64,
    /// population error ε of `best_pulse`
    pub best_error: f64,
    pub eval_count: usize,
    pub history: Vec<(usize, f64)>,
    pub starts: Vec<StartSummary>,
    pub rng_seed: u64,
    pub options: PreparationOptions,
    pub system: SystemParams,
}

impl OptimizationRecord {
    pub fn problem(&self) -> Result<PreparationProblem> {
        PreparationProblem::new(self.target.clone(), self.duration_us * 1e-6, self.system, self.options.clone())
    }

    /// Re-propagates `best_pulse` and returns the largest deviation from the stored values.
    pub fn revalidate(&self) -> Result<f64> {
        let eval = self.problem()?.evaluate_pulse(&self.best_pulse)?;
        Ok((eval.value - self.best_objective).abs().max((eval.error - self.best_error).abs()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record is always serialisable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::PulseParse {
            location: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }
}

fn finish(problem: &PreparationProblem, search: SearchResult) -> Result<OptimizationRecord> {
    let best_pulse = problem.pulse(&search.best_x)?;
    let eval = problem.evaluate_pulse(&best_pulse)?;
    Ok(OptimizationRecord {
        target: problem.target.clone(),
        duration_us: problem.duration * 1e6,
        best_objective: eval.value,
        best_error: eval.error,
        best_pulse,
        eval_count: search.evals,
        history: search.history,
        starts: search.starts,
        rng_seed: problem.options.solver.rng_seed,
        options: problem.options.clone(),
        system: problem.system,
    })
}

/// Multi-start search without a warm start (see [`optimize_from`]).
pub fn optimize_preparation(
    target: &TargetSpec,
    duration: f64,
    system: &SystemParams,
    options: &PreparationOptions,
) -> Result<OptimizationRecord> {
    let problem = PreparationProblem::new(target.clone(), duration, *system, options.clone())?;
    optimize_from(&problem, None)
}

/// Multi-start Subplex search over the CRAB coefficients.
///
/// Random starts are drawn uniformly from the box ±`init_radius` around the
/// zero pulse (or around `warm_start`), keeping only pulses whose ω(t) lies in
/// the band. With a warm start that point is the first start; without one the
/// zero pulse is evaluated once and accepted if it already meets `stop_below`.
pub fn optimize_from(problem: &PreparationProblem, warm_start: Option<&[f64]>) -> Result<OptimizationRecord> {
    let n = problem.parameter_count();
    if let Some(x0) = warm_start {
        if x0.len() != n {
            return Err(Error::InvalidState(format!(
                "warm start has {} entries, expected {n}",
                x0.len()
            )));
        }
    }
    let solver = &problem.options.solver;
    let in_band = |x: &[f64]| problem.pulse(x).is_ok_and(|p| problem.penalty(&p) == 0.0);
    let restarts = solver.restarts.max(1);
    info!(
        "optimizing target {} at T = {:.3} us ({restarts} starts x {} evals)",
        problem.target.name,
        problem.duration * 1e6,
        solver.max_evals
    );
    let objective = |x: &[f64]| problem.objective(x);
    let search = match warm_start {
        Some(x0) => {
            let mut starts = vec![x0.to_vec()];
            starts.extend(box_samples(x0, restarts - 1, solver, in_band));
            subplex_from_starts(objective, &starts, solver)
        }
        None => {
            let zero = vec![0.0; n];
            let starts = box_samples(&zero, restarts, solver, in_band);
            subplex_with_probe(objective, &zero, &starts, solver)
        }
    };
    debug!("search finished after {} evaluations, best {:.3e}", search.evals, search.best_value);
    finish(problem, search)
}

/// Spread of ε for a fixed pulse over a grid of noise settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessEnvelope {
    pub epsilon_nominal: f64,
    pub epsilon_min: f64,
    pub epsilon_max: f64,
    /// (γ in rad/s, B in G, ε) for every grid point
    pub samples: Vec<(f64, f64, f64)>,
}

impl RobustnessEnvelope {
    pub fn spread(&self) -> f64 {
        self.epsilon_max - self.epsilon_min
    }

    /// CSV with columns gamma_hz, b_gauss, epsilon (γ/2π in Hz).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["gamma_hz", "b_gauss", "epsilon"])?;
        for &(gamma, b, eps) in &self.samples {
            w.write_record([
                format!("{:.16e}", gamma / (2.0 * std::f64::consts::PI)),
                format!("{b:.16e}"),
                format!("{eps:.16e}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// ε of the state reached by `drive` after `duration` for every (γ, B) pair.
/// The nominal point is `system` itself and is included in min and max.
pub fn robustness_envelope(
    drive: &(dyn Drive + Sync),
    duration: f64,
    target: &TargetSpec,
    system: &SystemParams,
    gamma_grid: &[f64],
    b_field_grid: &[f64],
    integrator: &IntegratorSettings,
) -> Result<RobustnessEnvelope> {
    if gamma_grid.is_empty() || b_field_grid.is_empty() {
        return Err(Error::InvalidState("noise grids must be non-empty".into()));
    }
    let error_at = |params: &SystemParams| -> Result<f64> {
        let rho = evolve(&initial_state(), drive, params, duration, integrator)?;
        Ok(state_error(&rho, target))
    };
    let epsilon_nominal = error_at(system)?;
    let grid: Vec<(f64, f64)> = gamma_grid
        .iter()
        .flat_map(|&g| b_field_grid.iter().map(move |&b| (g, b)))
        .collect();
    let samples = grid
        .par_iter()
        .map(|&(g, b)| {
            let params = system.with_bias_field(b)?.with_dephasing(g)?;
            Ok((g, b, error_at(&params)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (lo, hi) = samples
        .iter()
        .fold((epsilon_nominal, epsilon_nominal), |(lo, hi), s| (lo.min(s.2), hi.max(s.2)));
    Ok(RobustnessEnvelope {
        epsilon_nominal,
        epsilon_min: lo,
        epsilon_max: hi,
        samples,
    })
}

/// Noise grid used for envelopes: γ ∈ 2π·{20, 60, 110, 200} Hz and B = B₀ + {−1, −0.5, 0, 0.5, 1} mG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseGrid {
    pub gamma: Vec<f64>,
    pub b_field: Vec<f64>,
}

impl NoiseGrid {
    pub fn reference(b0_gauss: f64) -> Self {
        let two_pi = 2.0 * std::f64::consts::PI;
        Self {
            gamma: [20.0, 60.0, 110.0, 200.0].iter().map(|g| two_pi * g).collect(),
            b_field: [-1e-3, -0.5e-3, 0.0, 0.5e-3, 1e-3].iter().map(|d| b0_gauss + d).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub duration_us: f64,
    pub record: OptimizationRecord,
    pub envelope: Option<RobustnessEnvelope>,
}

/// Optimizes `target` for each duration in ascending order. With `warm_start`
/// the best coefficients of the previous duration seed the next search.
pub fn sweep_pulse_length(
    target: &TargetSpec,
    durations: &[f64],
    system: &SystemParams,
    options: &PreparationOptions,
    warm_start: bool,
    noise: Option<&NoiseGrid>,
) -> Result<Vec<SweepPoint>> {
    if durations.is_empty() || durations.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidState("durations must be non-empty and strictly ascending".into()));
    }
    let mut points: Vec<SweepPoint> = Vec::with_capacity(durations.len());
    for &t in durations {
        let problem = PreparationProblem::new(target.clone(), t, *system, options.clone())?;
        let x0 = match points.last() {
            Some(prev) if warm_start => Some(prev.record.best_pulse.parameters(options.with_offset)),
            _ => None,
        };
        let record = optimize_from(&problem, x0.as_deref())?;
        info!("T = {:.1} us: eps = {:.4e}", t * 1e6, record.best_error);
        let envelope = noise
            .map(|grid| {
                robustness_envelope(
                    &record.best_pulse,
                    t,
                    target,
                    system,
                    &grid.gamma,
                    &grid.b_field,
                    &options.integrator,
                )
            })
            .transpose()?;
        points.push(SweepPoint {
            duration_us: t * 1e6,
            record,
            envelope,
        });
    }
    Ok(points)
}

/// ε(T) under the unmodulated drive f = `f_const`, read off a single
/// trajectory at each requested duration.
pub fn constant_pulse_error(
    target: &TargetSpec,
    f_const: f64,
    durations: &[f64],
    system: &SystemParams,
    integrator: &IntegratorSettings,
) -> Result<Vec<(f64, f64)>> {
    durations
        .par_iter()
        .map(|&t| {
            let rho = evolve(&initial_state(), &ConstantDrive(f_const), system, t, integrator)?;
            Ok((t, state_error(&rho, target)))
        })
        .collect()
}
