//! Declarative experiment descriptions. Every physical quantity carries its
//! unit in the field name; frequencies are ordinary frequencies (kHz or Hz)
//! and are converted to angular units on use.

use std::path::{Path, PathBuf};

use crabctl_core::dynamics::{IntegratorSettings, Method};
use crabctl_core::optimizer::{NoiseGrid, PreparationOptions, SubplexOptions};
use crabctl_core::pulse::FrequencyBand;
use crabctl_core::spin_system::{eigenstate_target, MAX_BIAS_FIELD_GAUSS};
use crabctl_core::{builtin_target, khz, CrabPulse, Eigenstate, SystemParams, TargetSpec};
use serde::{Deserialize, Serialize};

use crate::error::RunError;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Optimize,
    SweepTime,
    ConstantBaseline,
    HoldTest,
    Envelope,
    Interferometer,
    BreitRabi,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Optimize => "optimize",
            Self::SweepTime => "sweep-time",
            Self::ConstantBaseline => "constant-baseline",
            Self::HoldTest => "hold-test",
            Self::Envelope => "envelope",
            Self::Interferometer => "interferometer",
            Self::BreitRabi => "breit-rabi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    #[serde(rename = "B_gauss")]
    pub b_gauss: f64,
    pub rabi_khz: f64,
    pub gamma_hz: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            b_gauss: 6.179,
            rabi_khz: 60.0,
            gamma_hz: 0.0,
        }
    }
}

impl SystemConfig {
    pub fn params(&self) -> crabctl_core::Result<SystemParams> {
        SystemParams::new(self.b_gauss, khz(self.rabi_khz), TWO_PI * self.gamma_hz)
    }

    fn check(&self, out: &mut Vec<String>) {
        if !(0.0..=MAX_BIAS_FIELD_GAUSS).contains(&self.b_gauss) {
            out.push(format!("system.B_gauss must lie in [0, {MAX_BIAS_FIELD_GAUSS}], got {}", self.b_gauss));
        }
        if !(self.rabi_khz >= 0.0 && self.rabi_khz.is_finite()) {
            out.push(format!("system.rabi_khz must be a non-negative number, got {}", self.rabi_khz));
        }
        if !(self.gamma_hz >= 0.0 && self.gamma_hz.is_finite()) {
            out.push(format!("system.gamma_hz must be a non-negative number, got {}", self.gamma_hz));
        }
    }
}

/// A built-in target name (`A`–`I`, `ground`, `highest`) or explicit populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetConfig {
    Named(String),
    Explicit { name: String, populations: [f64; 5] },
}

impl TargetConfig {
    /// Eigenstate targets are taken at the drive frequency `f_bar` (rad/s).
    pub fn resolve(&self, system: &SystemParams, f_bar: f64) -> crabctl_core::Result<TargetSpec> {
        match self {
            Self::Named(name) => match name.to_ascii_lowercase().as_str() {
                "ground" => eigenstate_target(system, f_bar, Eigenstate::Ground),
                "highest" => eigenstate_target(system, f_bar, Eigenstate::Highest),
                _ => builtin_target(name).ok_or_else(|| {
                    crabctl_core::Error::InvalidState(format!("unknown target {name:?}"))
                }),
            },
            Self::Explicit { name, populations } => TargetSpec::new(name.clone(), *populations),
        }
    }

    fn check(&self, out: &mut Vec<String>) {
        match self {
            Self::Named(name) => {
                let lower = name.to_ascii_lowercase();
                if lower != "ground" && lower != "highest" && builtin_target(name).is_none() {
                    out.push(format!("target: unknown name {name:?} (expected A-I, ground or highest)"));
                }
            }
            Self::Explicit { populations, .. } => {
                if let Err(e) = TargetSpec::new("check", *populations) {
                    out.push(format!("target.populations: {e}"));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub n_f: usize,
    pub with_offset: bool,
    pub carrier_khz: f64,
    pub band_khz: [f64; 2],
    pub penalty_khz: f64,
    pub band_samples: usize,
    pub max_evals: usize,
    pub restarts: usize,
    pub simplex_scale: f64,
    pub init_radius: f64,
    pub xtol: f64,
    pub stop_below: Option<f64>,
    pub step_ns: f64,
    pub sample_stride: usize,
    pub method: Method,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::from_options(&PreparationOptions::default())
    }
}

impl SolverConfig {
    pub fn from_options(o: &PreparationOptions) -> Self {
        Self {
            n_f: o.n_f,
            with_offset: o.with_offset,
            carrier_khz: o.carrier / khz(1.0),
            band_khz: [o.band.omega_min / khz(1.0), o.band.omega_max / khz(1.0)],
            penalty_khz: o.penalty_scale / khz(1.0),
            band_samples: o.band_samples,
            max_evals: o.solver.max_evals,
            restarts: o.solver.restarts,
            simplex_scale: o.solver.simplex_scale,
            init_radius: o.solver.init_radius,
            xtol: o.solver.xtol,
            stop_below: o.solver.stop_below,
            step_ns: o.integrator.step_size * 1e9,
            sample_stride: o.integrator.sample_stride,
            method: o.integrator.method,
        }
    }

    pub fn integrator(&self) -> IntegratorSettings {
        IntegratorSettings {
            step_size: self.step_ns * 1e-9,
            sample_stride: self.sample_stride,
            method: self.method,
        }
    }

    pub fn options(&self, rng_seed: u64) -> crabctl_core::Result<PreparationOptions> {
        Ok(PreparationOptions {
            n_f: self.n_f,
            with_offset: self.with_offset,
            carrier: khz(self.carrier_khz),
            band: FrequencyBand::new(khz(self.band_khz[0]), khz(self.band_khz[1]))?,
            penalty_scale: khz(self.penalty_khz),
            band_samples: self.band_samples,
            solver: SubplexOptions {
                max_evals: self.max_evals,
                simplex_scale: self.simplex_scale,
                restarts: self.restarts,
                rng_seed,
                init_radius: self.init_radius,
                xtol: self.xtol,
                stop_below: self.stop_below,
                ..SubplexOptions::default()
            },
            integrator: self.integrator(),
        })
    }

    fn check(&self, out: &mut Vec<String>) {
        if self.max_evals == 0 {
            out.push("solver.max_evals must be at least 1".into());
        }
        if self.restarts == 0 {
            out.push("solver.restarts must be at least 1".into());
        }
        if !(self.band_khz[0] < self.band_khz[1]) {
            out.push(format!("solver.band_khz must be increasing, got {:?}", self.band_khz));
        }
        if !(self.carrier_khz > 0.0 && self.carrier_khz.is_finite()) {
            out.push(format!("solver.carrier_khz must be positive, got {}", self.carrier_khz));
        }
        if !(self.penalty_khz > 0.0) {
            out.push(format!("solver.penalty_khz must be positive, got {}", self.penalty_khz));
        }
        if self.band_samples < 2 {
            out.push("solver.band_samples must be at least 2".into());
        }
        if !(self.step_ns > 0.0 && self.step_ns.is_finite()) {
            out.push(format!("solver.step_ns must be positive, got {}", self.step_ns));
        }
        if self.sample_stride == 0 {
            out.push("solver.sample_stride must be at least 1".into());
        }
        if !(self.simplex_scale > 0.0) || !(self.init_radius >= 0.0) {
            out.push("solver.simplex_scale must be positive and solver.init_radius non-negative".into());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub gamma_hz: Vec<f64>,
    /// offsets from system.B_gauss
    pub b_offsets_mgauss: Vec<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            gamma_hz: vec![20.0, 60.0, 110.0, 200.0],
            b_offsets_mgauss: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
        }
    }
}

impl NoiseConfig {
    pub fn grid(&self, b0_gauss: f64) -> NoiseGrid {
        NoiseGrid {
            gamma: self.gamma_hz.iter().map(|g| TWO_PI * g).collect(),
            b_field: self.b_offsets_mgauss.iter().map(|d| b0_gauss + 1e-3 * d).collect(),
        }
    }

    /// The reference grid of [`NoiseGrid::reference`].
    pub fn reference() -> Self {
        Self::default()
    }

    fn check(&self, b0: f64, out: &mut Vec<String>) {
        if self.gamma_hz.is_empty() || self.b_offsets_mgauss.is_empty() {
            out.push("noise.gamma_hz and noise.b_offsets_mgauss must be non-empty".into());
        }
        if self.gamma_hz.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            out.push("noise.gamma_hz entries must be non-negative".into());
        }
        if self.b_offsets_mgauss.iter().any(|d| !(0.0..=MAX_BIAS_FIELD_GAUSS).contains(&(b0 + 1e-3 * d))) {
            out.push("noise.b_offsets_mgauss moves the field out of range".into());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TauConfig {
    pub step_ns: f64,
    pub count: usize,
    /// apply system.gamma_hz during free evolution
    pub free_dephasing: bool,
}

impl Default for TauConfig {
    fn default() -> Self {
        Self {
            step_ns: 2.0,
            count: 1001,
            free_dephasing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledPath {
    pub label: String,
    pub path: PathBuf,
}

fn default_true() -> bool {
    true
}

fn default_seed() -> u64 {
    1
}

/// One experiment. Which optional fields are required depends on `kind`
/// (see [`ExperimentConfig::validate`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetConfig>,
    #[serde(rename = "T_us", default, skip_serializing_if = "Option::is_none")]
    pub duration_us: Option<f64>,
    #[serde(rename = "T_list_us", default, skip_serializing_if = "Option::is_none")]
    pub durations_us: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse_files: Option<Vec<LabeledPath>>,
    /// constant drive (simulate, constant-baseline) and reference drive for eigenstate targets and holds
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_const_khz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_us: Option<f64>,
    #[serde(rename = "B_list_gauss", default, skip_serializing_if = "Option::is_none")]
    pub b_list_gauss: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<TauConfig>,
    #[serde(default = "default_true")]
    pub warm_start: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub rng_seed: u64,
}

/// 2π·4323 kHz expressed in kHz.
pub const DEFAULT_DRIVE_KHZ: f64 = 4323.0;

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            system: SystemConfig::default(),
            target: None,
            duration_us: None,
            durations_us: None,
            pulse_file: None,
            pulse_files: None,
            f_const_khz: None,
            hold_us: None,
            b_list_gauss: None,
            solver: SolverConfig::default(),
            noise: None,
            tau: None,
            warm_start: true,
            output_dir: None,
            rng_seed: 1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text)
            .map_err(|e| RunError::Validation(vec![format!("config line {}, column {}: {e}", e.line(), e.column())]))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Validation(vec![format!("cannot read config {}: {e}", path.display())]))?;
        let mut config = Self::from_json(&text)?;
        // relative pulse paths are taken relative to the config file
        if let Some(dir) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            if let Some(p) = config.pulse_file.as_mut() {
                fix(p);
            }
            for lp in config.pulse_files.iter_mut().flatten() {
                fix(&mut lp.path);
            }
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serialisable")
    }

    pub fn drive_khz(&self) -> f64 {
        self.f_const_khz.unwrap_or(DEFAULT_DRIVE_KHZ)
    }

    pub fn noise_config(&self) -> NoiseConfig {
        self.noise.clone().unwrap_or_default()
    }

    /// Collects every violation instead of stopping at the first.
    pub fn validate(&self) -> Result<(), RunError> {
        use ExperimentKind::*;
        let mut v = Vec::new();
        self.system.check(&mut v);
        self.solver.check(&mut v);
        if let Some(t) = &self.target {
            t.check(&mut v);
        }
        if let Some(n) = &self.noise {
            n.check(self.system.b_gauss, &mut v);
        }
        let needs_target = matches!(self.kind, Optimize | SweepTime | ConstantBaseline | HoldTest | Envelope);
        if needs_target && self.target.is_none() {
            v.push(format!("target is required for kind {}", self.kind.name()));
        }
        let needs_duration = matches!(self.kind, Optimize | HoldTest);
        if needs_duration && self.duration_us.is_none() {
            v.push(format!("T_us is required for kind {}", self.kind.name()));
        }
        if let Some(t) = self.duration_us {
            if !(t > 0.0 && t.is_finite()) {
                v.push(format!("T_us must be positive, got {t}"));
            }
        }
        if matches!(self.kind, SweepTime | ConstantBaseline) {
            match &self.durations_us {
                None => v.push(format!("T_list_us is required for kind {}", self.kind.name())),
                Some(list) => {
                    if list.is_empty() {
                        v.push("T_list_us must be non-empty".into());
                    }
                    if list.windows(2).any(|w| !(w[0] < w[1])) {
                        v.push("T_list_us must be strictly ascending".into());
                    }
                    let floor = if self.kind == SweepTime { 0.0 } else { -1.0 };
                    if list.iter().any(|t| !(*t > floor && t.is_finite())) {
                        v.push("T_list_us entries must be positive (zero allowed for constant-baseline)".into());
                    }
                }
            }
        }
        if matches!(self.kind, Simulate | Envelope) && self.pulse_file.is_none() && self.f_const_khz.is_none() {
            v.push(format!("kind {} needs pulse_file or f_const_khz", self.kind.name()));
        }
        if matches!(self.kind, Simulate | Envelope) && self.pulse_file.is_none() && self.duration_us.is_none() {
            v.push(format!("kind {} with a constant drive needs T_us", self.kind.name()));
        }
        if let Some(p) = &self.pulse_file {
            if !p.is_file() {
                v.push(format!("pulse_file {} does not exist", p.display()));
            }
        }
        if self.kind == Interferometer {
            match &self.pulse_files {
                None => v.push("pulse_files is required for kind interferometer".into()),
                Some(list) if list.is_empty() => v.push("pulse_files must be non-empty".into()),
                Some(list) => {
                    for lp in list {
                        if !lp.path.is_file() {
                            v.push(format!("pulse_files: {} does not exist", lp.path.display()));
                        }
                    }
                }
            }
            if let Some(t) = &self.tau {
                if !(t.step_ns > 0.0) || t.count < 3 {
                    v.push("tau.step_ns must be positive and tau.count at least 3".into());
                }
            }
        }
        if self.kind == HoldTest {
            if let Some(h) = self.hold_us {
                if !(h >= 0.0 && h.is_finite()) {
                    v.push(format!("hold_us must be non-negative, got {h}"));
                }
            }
        }
        if self.kind == BreitRabi {
            if let Some(list) = &self.b_list_gauss {
                if list.is_empty() || list.iter().any(|b| !(0.0..=MAX_BIAS_FIELD_GAUSS).contains(b)) {
                    v.push(format!("B_list_gauss entries must lie in [0, {MAX_BIAS_FIELD_GAUSS}]"));
                }
            }
        }
        if let Some(f) = self.f_const_khz {
            if !(f.is_finite()) {
                v.push("f_const_khz must be finite".into());
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(RunError::Validation(v))
        }
    }

    pub fn load_pulse(path: &Path) -> Result<CrabPulse, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        CrabPulse::from_json(&text).map_err(|e| RunError::Runtime(format!("{}: {e}", path.display())))
    }
}
