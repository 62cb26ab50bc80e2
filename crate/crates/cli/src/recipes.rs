//! Composite runs behind `reproduce <tag>`. Each recipe returns its results
//! in memory and has a matching writer for the run directory.

use std::path::Path;

use crabctl_core::interferometer::SensitivityStudy;
use crabctl_core::optimizer::{
    constant_pulse_error, optimize_preparation, robustness_envelope, sweep_pulse_length, OptimizationRecord,
    PreparationOptions, RobustnessEnvelope, SweepPoint,
};
use crabctl_core::spin_system::{eigenstate_target, DIM};
use crabctl_core::{builtin_targets, khz, CrabPulse, Eigenstate, SystemParams};
use serde::{Deserialize, Serialize};

use crate::config::{NoiseConfig, TauConfig, DEFAULT_DRIVE_KHZ};
use crate::error::RunError;
use crate::experiments::{
    fmt, hold_test, initial_fidelity, run_study, running_minimum, write_baseline, write_breit_rabi, write_hold,
    write_pulse, write_sweep, HoldResult,
};
use crate::manifest::{with_sink, RunManifest, RunSink};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Fig2,
    Fig3,
    Fig4,
    Table1,
}

impl std::str::FromStr for Tag {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, RunError> {
        match s.to_ascii_lowercase().as_str() {
            "fig2" => Ok(Self::Fig2),
            "fig3" => Ok(Self::Fig3),
            "fig4" => Ok(Self::Fig4),
            "table1" => Ok(Self::Table1),
            other => Err(RunError::Validation(vec![format!(
                "unknown tag {other:?} (expected fig2, fig3, fig4 or table1)"
            )])),
        }
    }
}

impl Tag {
    pub fn name(self) -> &'static str {
        match self {
            Self::Fig2 => "fig2",
            Self::Fig3 => "fig3",
            Self::Fig4 => "fig4",
            Self::Table1 => "table1",
        }
    }
}

/// Shared inputs of every recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeSettings {
    pub system: SystemParams,
    pub options: PreparationOptions,
    pub noise: NoiseConfig,
    pub tau: TauConfig,
    /// reference drive f̄ (rad/s)
    pub drive: f64,
}

impl RecipeSettings {
    pub fn reference(rng_seed: u64) -> Self {
        let mut options = PreparationOptions::default();
        options.solver.rng_seed = rng_seed;
        Self {
            system: SystemParams::reference(),
            options,
            noise: NoiseConfig::reference(),
            tau: TauConfig::default(),
            drive: khz(DEFAULT_DRIVE_KHZ),
        }
    }

    pub fn noiseless(&self) -> SystemParams {
        self.system.with_dephasing(0.0).expect("zero is a valid rate")
    }
}

pub const TABLE1_DURATION: f64 = 100e-6;
pub const FIG3_DURATIONS_US: [f64; 6] = [20.0, 40.0, 60.0, 80.0, 90.0, 100.0];
pub const FIG2_DURATION: f64 = 20e-6;
pub const FIG2_HOLD: f64 = 80e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table1Row {
    pub name: String,
    pub populations: [f64; DIM],
    pub epsilon: f64,
    pub envelope: RobustnessEnvelope,
    /// F(ρ₀, diag(b))
    pub initial_fidelity: f64,
    pub record: OptimizationRecord,
}

/// Optimizes every built-in target at 100 μs and measures its noise envelope.
pub fn table1(settings: &RecipeSettings) -> Result<Vec<Table1Row>, RunError> {
    let system = settings.noiseless();
    let grid = settings.noise.grid(system.bias_field_gauss);
    builtin_targets()
        .into_iter()
        .map(|target| {
            let record = optimize_preparation(&target, TABLE1_DURATION, &system, &settings.options)?;
            log::info!("table1 {}: eps = {:.4e} after {} evaluations", target.name, record.best_error, record.eval_count);
            let envelope = robustness_envelope(
                &record.best_pulse,
                TABLE1_DURATION,
                &target,
                &system,
                &grid.gamma,
                &grid.b_field,
                &settings.options.integrator,
            )?;
            Ok(Table1Row {
                name: target.name.clone(),
                populations: target.populations,
                epsilon: record.best_error,
                initial_fidelity: initial_fidelity(&target)?,
                envelope,
                record,
            })
        })
        .collect()
}

pub fn write_table1(sink: &mut RunSink, rows: &[Table1Row]) -> Result<(), RunError> {
    sink.write("table1.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            "target", "b1", "b2", "b3", "b4", "b5", "epsilon_T", "epsilon_min", "epsilon_max", "fidelity_initial",
            "evaluations",
        ])?;
        for r in rows {
            let mut row = vec![r.name.clone()];
            row.extend(r.populations.iter().map(|b| fmt(*b)));
            row.extend([
                fmt(r.epsilon),
                fmt(r.envelope.epsilon_min),
                fmt(r.envelope.epsilon_max),
                fmt(r.initial_fidelity),
                r.record.eval_count.to_string(),
            ]);
            c.write_record(&row)?;
        }
        c.flush()?;
        Ok(())
    })?;
    for r in rows {
        sink.write_text(&format!("records/{}.json", r.name), &(r.record.to_json() + "\n"))?;
        write_pulse(sink, &format!("pulses/{}", r.name), &r.record.best_pulse)?;
        sink.write(&format!("envelopes/{}.csv", r.name), |w| Ok(r.envelope.write_csv(w)?))?;
    }
    let max_eps = rows.iter().map(|r| r.epsilon).fold(0.0, f64::max);
    sink.write_json(
        "summary.json",
        &serde_json::json!({
            "reference_bound": 0.02,
            "max_epsilon_T": max_eps,
            "all_below_bound": rows.iter().all(|r| r.epsilon < 0.02),
            "fidelity_A": rows.iter().find(|r| r.name == "A").map(|r| r.initial_fidelity),
            "fidelity_D": rows.iter().find(|r| r.name == "D").map(|r| r.initial_fidelity),
            "reference_fidelity_A_D": 0.71,
        }),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fig3 {
    pub points: Vec<SweepPoint>,
    pub running_min: Vec<f64>,
    /// (T in s, ε) for the constant drive on a 1 μs grid
    pub baseline: Vec<(f64, f64)>,
}

impl Fig3 {
    pub fn epsilon_at(&self, t_us: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.duration_us - t_us).abs() < 1e-9)
            .map(|p| p.record.best_error)
    }
}

/// Target-A sweep over pulse length with envelopes, plus the constant-drive baseline.
pub fn fig3(settings: &RecipeSettings) -> Result<Fig3, RunError> {
    let system = settings.noiseless();
    let target = builtin_targets().into_iter().next().expect("A is the first target");
    let durations: Vec<f64> = FIG3_DURATIONS_US.iter().map(|t| t * 1e-6).collect();
    let grid = settings.noise.grid(system.bias_field_gauss);
    let points = sweep_pulse_length(&target, &durations, &system, &settings.options, true, Some(&grid))?;
    let eps: Vec<f64> = points.iter().map(|p| p.record.best_error).collect();
    let baseline_grid: Vec<f64> = (0..=100).map(|j| j as f64 * 1e-6).collect();
    let baseline = constant_pulse_error(&target, settings.drive, &baseline_grid, &system, &settings.options.integrator)?;
    Ok(Fig3 {
        running_min: running_minimum(&eps),
        points,
        baseline,
    })
}

pub fn write_fig3(sink: &mut RunSink, fig: &Fig3) -> Result<(), RunError> {
    write_sweep(sink, &fig.points)?;
    write_baseline(sink, &fig.baseline)?;
    let baseline_min = fig.baseline.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
    sink.write_json(
        "summary.json",
        &serde_json::json!({
            "epsilon_90us": fig.epsilon_at(90.0),
            "epsilon_100us": fig.epsilon_at(100.0),
            "reference_bound_90us": 0.02,
            "baseline_min_epsilon": baseline_min,
            "running_min": fig.running_min,
        }),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fig2 {
    pub ground: HoldResult,
    pub highest: HoldResult,
}

/// Solver settings for eigenstate preparation: a tighter start box and a
/// stop on 1 − F² instead of ε.
pub fn hold_options(options: &PreparationOptions) -> PreparationOptions {
    let mut o = options.clone();
    o.solver.init_radius = 0.01;
    o.solver.simplex_scale = 0.02;
    o.solver.stop_below = Some(2e-5);
    o
}

/// Eigenstate preparation in 20 μs followed by an 80 μs hold at f̄.
pub fn fig2(settings: &RecipeSettings) -> Result<Fig2, RunError> {
    let system = settings.noiseless();
    let options = hold_options(&settings.options);
    let run = |which| -> Result<HoldResult, RunError> {
        let target = eigenstate_target(&system, settings.drive, which)?;
        hold_test(&target, FIG2_DURATION, FIG2_HOLD, settings.drive, &system, &options)
    };
    Ok(Fig2 {
        ground: run(Eigenstate::Ground)?,
        highest: run(Eigenstate::Highest)?,
    })
}

pub fn write_fig2(sink: &mut RunSink, fig: &Fig2) -> Result<(), RunError> {
    write_hold(sink, "hold_ground", &fig.ground)?;
    write_hold(sink, "hold_highest", &fig.highest)?;
    sink.write_json(
        "summary.json",
        &serde_json::json!({
            "ground": { "epsilon_T": fig.ground.record.best_error, "max_population_drift": fig.ground.max_drift },
            "highest": { "epsilon_T": fig.highest.record.best_error, "max_population_drift": fig.highest.max_drift },
            "reference_bound": 0.02,
        }),
    )
}

/// Labels of the two-level targets used for the interferometer.
pub const FIG4_TARGETS: [&str; 4] = ["A", "B", "C", "D"];

/// Optimizes targets A–D at 100 μs (noiseless).
pub fn fig4_pulses(settings: &RecipeSettings) -> Result<Vec<(String, CrabPulse)>, RunError> {
    let system = settings.noiseless();
    builtin_targets()
        .into_iter()
        .filter(|t| FIG4_TARGETS.contains(&t.name.as_str()))
        .map(|t| {
            let record = optimize_preparation(&t, TABLE1_DURATION, &system, &settings.options)?;
            Ok((t.name.clone(), record.best_pulse))
        })
        .collect()
}

pub fn fig4(sink: &mut RunSink, settings: &RecipeSettings, pulses: &[(String, CrabPulse)]) -> Result<SensitivityStudy, RunError> {
    let system = settings.noiseless();
    for (label, p) in pulses {
        write_pulse(sink, &format!("pulses/{label}"), p)?;
    }
    let study = run_study(sink, pulses, &system, &settings.tau, settings.options.integrator)?;
    let sa = |l: &str| study.row(l).and_then(|r| r.metrics.s_over_a);
    sink.write_json(
        "summary.json",
        &serde_json::json!({
            "fit_slope": study.fit.as_ref().map(|f| f.slope),
            "fit_r_squared": study.fit.as_ref().map(|f| f.r_squared),
            "ratio_A_over_D": sa("A").zip(sa("D")).map(|(a, d)| a / d),
            "reference_ratio": 4.0,
        }),
    )?;
    Ok(study)
}

/// Runs the recipe for `tag` into `out`.
pub fn reproduce(tag: Tag, out: &Path, settings: &RecipeSettings) -> Result<RunManifest, RunError> {
    let snapshot = serde_json::json!({ "tag": tag.name(), "settings": settings });
    with_sink(out, &format!("reproduce-{}", tag.name()), snapshot, |sink| {
        match tag {
            Tag::Table1 => write_table1(sink, &table1(settings)?)?,
            Tag::Fig3 => write_fig3(sink, &fig3(settings)?)?,
            Tag::Fig2 => write_fig2(sink, &fig2(settings)?)?,
            Tag::Fig4 => {
                let pulses = fig4_pulses(settings)?;
                fig4(sink, settings, &pulses)?;
            }
        }
        write_breit_rabi(sink, &[settings.system.bias_field_gauss])
    })
}
