//! Experiment kinds: each takes a validated config and writes its outputs
//! into a run directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use crabctl_core::dynamics::{evolve, propagate, ConstantDrive, Drive, IntegratorSettings, Trajectory};
use crabctl_core::interferometer::{sensitivity_study, tau_grid, LabeledDrive, RamseyOptions, SensitivityStudy};
use crabctl_core::optimizer::{
    constant_pulse_error, initial_state, optimize_preparation, robustness_envelope, state_error,
    sweep_pulse_length, uhlmann_fidelity, OptimizationRecord, PreparationOptions, SweepPoint,
};
use crabctl_core::spin_system::{breit_rabi_energies, DIM};
use crabctl_core::{khz, to_khz, CrabPulse, SystemParams, TargetSpec};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind, TauConfig};
use crate::error::RunError;
use crate::manifest::{with_sink, RunManifest, RunSink};

/// Samples in exported pulse traces.
pub const TRACE_SAMPLES: usize = 1001;

pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Validates `config` and runs it into `out` (or `config.output_dir`).
pub fn run(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunManifest, RunError> {
    config.validate()?;
    let dir: PathBuf = match (out, &config.output_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => d.clone(),
        (None, None) => PathBuf::from("runs").join(config.kind.name()),
    };
    let snapshot = serde_json::to_value(config)?;
    with_sink(&dir, config.kind.name(), snapshot, |sink| dispatch(config, sink))
}

fn dispatch(config: &ExperimentConfig, sink: &mut RunSink) -> Result<(), RunError> {
    match config.kind {
        ExperimentKind::Simulate => simulate(config, sink),
        ExperimentKind::Optimize => optimize(config, sink),
        ExperimentKind::SweepTime => sweep_time(config, sink),
        ExperimentKind::ConstantBaseline => constant_baseline(config, sink),
        ExperimentKind::HoldTest => hold(config, sink),
        ExperimentKind::Envelope => envelope(config, sink),
        ExperimentKind::Interferometer => interferometer(config, sink),
        ExperimentKind::BreitRabi => breit_rabi(config, sink),
    }
}

struct Context {
    system: SystemParams,
    options: PreparationOptions,
    target: Option<TargetSpec>,
    drive: f64,
}

fn context(config: &ExperimentConfig) -> Result<Context, RunError> {
    let system = config.system.params()?;
    let drive = khz(config.drive_khz());
    let target = config.target.as_ref().map(|t| t.resolve(&system, drive)).transpose()?;
    Ok(Context {
        system,
        options: config.solver.options(config.rng_seed)?,
        target,
        drive,
    })
}

/// The drive given by `pulse_file`, or a constant one.
fn replay_drive(config: &ExperimentConfig, drive: f64) -> Result<(Box<dyn Drive + Sync>, f64), RunError> {
    match &config.pulse_file {
        Some(path) => {
            let pulse = load_pulse(path)?;
            let t = pulse.duration;
            Ok((Box::new(pulse), t))
        }
        None => Ok((Box::new(ConstantDrive(drive)), config.duration_us.unwrap_or(0.0) * 1e-6)),
    }
}

/// Reads a pulse file or the `best_pulse` of an optimization record.
pub fn load_pulse(path: &Path) -> Result<CrabPulse, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    match CrabPulse::from_json(&text) {
        Ok(p) => Ok(p),
        Err(pulse_err) => OptimizationRecord::from_json(&text)
            .map(|r| r.best_pulse)
            .map_err(|_| RunError::Runtime(format!("{}: {pulse_err}", path.display()))),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimulateSummary {
    duration_us: f64,
    final_populations: [f64; DIM],
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
}

fn write_trajectory(sink: &mut RunSink, name: &str, traj: &Trajectory, coherences: bool) -> Result<(), RunError> {
    sink.write(name, |w| Ok(traj.write_csv(w, coherences)?))
}

fn simulate(config: &ExperimentConfig, sink: &mut RunSink) -> Result<(), RunError> {
    let ctx = context(config)?;
    let (drive, duration) = replay_drive(config, ctx.drive)?;
    let traj = propagate(&initial_state(), &*drive, &ctx.system, duration, &ctx.options.integrator)?;
    write_trajectory(sink, "trajectory.csv", &traj, true)?;
    let final_state = traj.final_state();
    sink.write_json(
        "summary.json",
        &SimulateSummary {
            duration_us: duration * 1e6,
            final_populations: final_state.populations(),
            epsilon: ctx.target.as_ref().map(|t| state_error(final_state, t)),
        },
    )
}

pub fn write_pulse(sink: &mut RunSink, stem: &str, pulse: &CrabPulse) -> Result<(), RunError> {
    sink.write_text(&format!("{stem}.json"), &(pulse.to_json(Some(TRACE_SAMPLES)) + "\n"))?;
    sink.write(&format!("{stem}_trace.csv"), |w| Ok(pulse.write_trace_csv(TRACE_SAMPLES, w)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizeSummary {
    target: String,
    duration_us: f64,
    epsilon: f64,
    objective: f64,
    evaluations: usize,
    revalidation_deviation: f64,
}

fn optimize(config: &ExperimentConfig, sink: &mut RunSink) -> Result<(), RunError> {
    let ctx = context(config)?;
    let target = ctx.target.expect("validated");
    let duration = config.duration_us.expect("validated") * 1e-6;
    let record = optimize_preparation(&target, duration, &ctx.system, &ctx.options)?;
    sink.write_text("record.json", &(record.to_json() + "\n"))?;
    write_pulse(sink, "pulse", &record.best_pulse)?;
    let traj = propagate(&initial_state(), &record.best_pulse, &ctx.system, duration, &ctx.options.integrator)?;
    write_trajectory(sink, "trajectory.csv", &traj, false)?;
    sink.write_json(
        "summary.json",
        &OptimizeSummary {
            target: target.name.clone(),
            duration_us: duration * 1e6,
            epsilon: record.best_error,
            objective: record.best_objective,
            evaluations: record.eval_count,
            revalidation_deviation: record.revalidate()?,
        },
    )
}

/// Running minimum of ε over ascending durations.
pub fn running_minimum(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(f64::INFINITY, |m, &v| {
            *m = m.min(v);
            Some(*m)
        })
        .collect()
}

pub fn write_sweep(sink: &mut RunSink, points: &[SweepPoint]) -> Result<(), RunError> {
    let eps: Vec<f64> = points.iter().map(|p| p.record.best_error).collect();
    let run_min = running_minimum(&eps);
    sink.write("sweep.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["T_us", "epsilon", "running_min", "epsilon_nominal", "epsilon_min", "epsilon_max"])?;
        for (p, m) in points.iter().zip(&run_min) {
            let env = p.envelope.as_ref();
            c.write_record([
                fmt(p.duration_us),
                fmt(p.record.best_error),
                fmt(*m),
                env.map_or(String::new(), |e| fmt(e.epsilon_nominal)),
                env.map_or(String::new(), |e| fmt(e.epsilon_min)),
                env.map_or(String::new(), |e| fmt(e.epsilon_max)),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    for p in points {
        let stem = format!("T{:05.1}us", p.duration_us);
        sink.write_text(&format!("records/{stem}.json"), &(p.record.to_json() + "\n"))?;
        if let Some(env) = &p.envelope {
            sink.write(&format!("envelopes/{stem}.csv"), |w| Ok(env.write_csv(w)?))?;
        }
    }
    Ok(())
}

fn sweep_time(config: &ExperimentConfig, sink: &mut RunSink) -> Result<(), RunError> {
    let ctx = context(config)?;
    let target = ctx.target.expect("validated");
    let durations: Vec<f64> = config.durations_us.as_ref().expect("validated").iter().map(|t| t * 1e-6).collect();
    let grid = config.noise_config().grid(config.system.b_gauss);
    let points = sweep_pulse_length(&target, &durations, &ctx.system, &ctx.options, config.warm_start, Some(&grid))?;
    write_sweep(sink, &points)
}

pub fn write_baseline(sink: &mut RunSink, rows: &[(f64, f64)]) -> Result<(), RunError> {
    sink.write("baseline.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["T_us", "epsilon"])?;
        for &(t, e) in rows {
            c.write_record([fmt(t * 1e6), fmt(e)])?;
        }
        c.flush()?;
        Ok(())
    })
}

fn constant_baseline(config: &ExperimentConfig, sink: &mut RunSink) -> Result<(), RunError> {
    let ctx = context(config)?;
    let target = ctx.target.expect("validated");
    let durations: Vec<f64> = config.durations_us.as_ref().expect("validated").iter().map(|t| t * 1e-6).collect();
    let rows = constant_pulse_error(&target, ctx.drive, &durations, &ctx.system, &ctx.options.integrator)?;
    write_baseline(sink, &rows)?;
    let (t_min, e_min) = rows.iter().copied().fold((f64::NAN, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    sink.write_json(
        "summary.json",
        &serde_json::json!({ "f_const_khz": to_khz(ctx.drive), "min_epsilon": e_min, "min_at_T_us": t_min * 1e6 }),
    )
}

/// Preparation followed by a constant drive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HoldResult {
    pub record: OptimizationRecord,
    pub hold_us: f64,
    /// s, covering pulse and hold
    pub times: Vec<f64>,
    pub populations: Vec<[f64; DIM]>,
    pub epsilon: Vec<f64>,
    /// max_i,t≥T |p_i(t) − p_i(T)|
    pub max_drift: f64,
}

impl HoldResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), RunError> {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["t_us", "p1", "p2", "p3", "p4", "p5", "epsilon"])?;
        for ((t, p), e) in self.times.iter().zip(&self.populations).zip(&self.epsilon) {
            let mut row = vec![fmt(t * 1e6)];
            row.extend(p.iter().map(|v| fmt(*v)));
            row.push(fmt(*e));
            c.write_record(&row)?;
        }
        c.flush()?;
        Ok(())
    }
}

/// Optimizes `target` for `duration`, then holds the drive at `f_hold` for `hold`.
pub fn hold_test(
    target: &TargetSpec,
    duration: f64,
    hold: f64,
    f_hold: f64,
    system: &SystemParams,
    options: &PreparationOptions,
) -> Result<HoldResult, RunError> {
    let record = optimize_preparation(target, duration, system, options)?;
    hold_after(record, hold, f_hold, system, &options.integrator)
}

pub fn hold_after(
    record: OptimizationRecord,
    hold: f64,
    f_hold: f64,
    system: &SystemParams,
    integrator: &IntegratorSettings,
) -> Result<HoldResult, RunError> {
    let pulse = &record.best_pulse;
    let duration = pulse.duration;
    let prep = propagate(&initial_state(), pulse, system, duration, integrator)?;
    let after = propagate(prep.final_state(), &ConstantDrive(f_hold), system, hold, integrator)?;
    let mut times = prep.times.clone();
    let mut populations = prep.populations.clone();
    times.extend(after.times.iter().skip(1).map(|t| t + duration));
    populations.extend(after.populations.iter().skip(1).copied());
    let at_t = prep.final_state().populations();
    let max_drift = after
        .populations
        .iter()
        .flat_map(|p| p.iter().zip(&at_t).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let epsilon = populations
        .iter()
        .map(|p| 0.5 * p.iter().zip(&record.target.populations).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .collect();
    Ok(HoldResult {
        record,
        hold_us: hold * 1e6,
        times,
        populations,
        epsilon,
        max_drift,
    })
}

pub fn write_hold(sink: &mut RunSink, stem: &str, result: &HoldResult) -> Result<(), RunError> {
    sink.write(&format!("{stem}.csv"), |w| result.write_csv(w))?;
    sink.write_text(&format!("{stem}_record.json"), &(result.record.to_json() + "\n"))?;
    write_pulse(sink, &format!("{stem}_pulse"), &result.record.best_pulse)
}

fn hold(config: &ExperimentConfig, sink: &mut RunSink) -> Result<(), RunError> {
    let ctx = context(config)?;
    let target = ctx.target.expect("validated");
    let duration = config.duration_us.expect("validated") * 1e-6;
    let hold = config.hold_us.unwrap_or(80.0) * 1e-6;
    let result = hold_test(&target, duration, hold, ctx.drive, &ctx.system, &ctx.options)?;
    write_hold(sink, "hold", &result)?;
    sink.write_json(
        "summary.json",
        &serde_json::json!({
            "target": target.name,
            "T_us": duration * 1e6,
            "hold_us": hold * 1e6,
            "epsilon_T": result.record.best_error,
            "max_population_drift": result.max_drift,
        }),
    )
}

fn envelope(config: &ExperimentConfig, sink: &mut RunSink) -> Result<(), RunError> {
    let ctx = context(config)?;
    let target = ctx.target.expect("validated");
    let (drive, duration) = replay_drive(config, ctx.drive)?;
    let grid = config.noise_config().grid(config.system.b_gauss);
    let env = robustness_envelope(&*drive, duration, &target, &ctx.system, &grid.gamma, &grid.b_field, &ctx.options.integrator)?;
    sink.write("envelope.csv", |w| Ok(env.write_csv(w)?))?;
    sink.write_json(
        "summary.json",
        &serde_json::json!({
            "target": target.name,
            "epsilon_nominal": env.epsilon_nominal,
            "epsilon_min": env.epsilon_min,
            "epsilon_max": env.epsilon_max,
        }),
    )
}

pub fn ramsey_options(tau: &TauConfig, integrator: IntegratorSettings) -> (Vec<f64>, RamseyOptions) {
    (
        tau_grid(tau.step_ns * 1e-9, tau.count),
        RamseyOptions {
            integrator,
            free_dephasing: tau.free_dephasing,
        },
    )
}

/// Runs the study on labelled pulses and writes one fringe file per pulse plus `study.json`.
pub fn run_study(
    sink: &mut RunSink,
    pulses: &[(String, CrabPulse)],
    system: &SystemParams,
    tau: &TauConfig,
    integrator: IntegratorSettings,
) -> Result<SensitivityStudy, RunError> {
    let (taus, options) = ramsey_options(tau, integrator);
    let preps: Vec<LabeledDrive<'_>> = pulses
        .iter()
        .map(|(label, p)| LabeledDrive {
            label: label.clone(),
            drive: p,
            duration: p.duration,
        })
        .collect();
    let (study, scans) = sensitivity_study(&preps, system, &taus, &options)?;
    for ((label, _), scan) in pulses.iter().zip(&scans) {
        sink.write(&format!("fringe_{label}.csv"), |w| Ok(scan.write_csv(w)?))?;
    }
    sink.write_json("study.json", &study)?;
    Ok(study)
}

fn interferometer(config: &ExperimentConfig, sink: &mut RunSink) -> Result<(), RunError> {
    let ctx = context(config)?;
    let pulses = config
        .pulse_files
        .as_ref()
        .expect("validated")
        .iter()
        .map(|lp| Ok((lp.label.clone(), load_pulse(&lp.path)?)))
        .collect::<Result<Vec<_>, RunError>>()?;
    run_study(sink, &pulses, &ctx.system, &config.tau.clone().unwrap_or_default(), ctx.options.integrator)?;
    Ok(())
}

pub fn write_breit_rabi(sink: &mut RunSink, fields: &[f64]) -> Result<(), RunError> {
    let rows = fields
        .iter()
        .map(|&b| Ok((b, breit_rabi_energies(b)?)))
        .collect::<Result<Vec<_>, RunError>>()?;
    sink.write("breit_rabi.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["B_gauss", "E1_khz", "E2_khz", "E3_khz", "E4_khz", "E5_khz"])?;
        for (b, e) in &rows {
            let mut row = vec![fmt(*b)];
            row.extend(e.iter().map(|w| fmt(to_khz(*w))));
            c.write_record(&row)?;
        }
        c.flush()?;
        Ok(())
    })
}

fn breit_rabi(config: &ExperimentConfig, sink: &mut RunSink) -> Result<(), RunError> {
    let fields = config.b_list_gauss.clone().unwrap_or_else(|| vec![config.system.b_gauss]);
    write_breit_rabi(sink, &fields)
}

/// F(ρ₀, diag(b)) for the initial state ρ₀ = |1⟩⟨1|.
pub fn initial_fidelity(target: &TargetSpec) -> Result<f64, RunError> {
    Ok(uhlmann_fidelity(&initial_state(), &target.diagonal_state())?)
}

/// ε of the state reached by `pulse`.
pub fn replay_error(pulse: &CrabPulse, target: &TargetSpec, system: &SystemParams, integrator: &IntegratorSettings) -> Result<f64, RunError> {
    let rho = evolve(&initial_state(), pulse, system, pulse.duration, integrator)?;
    Ok(state_error(&rho, target))
}
