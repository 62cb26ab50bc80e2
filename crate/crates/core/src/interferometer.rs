//! Ramsey sequences: preparation pulse, free evolution for τ, the same pulse
//! again, then population readout.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate_free, propagator, Drive, IntegratorSettings};
use crate::error::{Error, Result};
use crate::optimizer::initial_state;
use crate::spin_system::{SystemParams, DIM};

/// Readout populations as a function of the free-evolution time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeSeries {
    /// s
    pub tau_values: Vec<f64>,
    pub populations: Vec<[f64; DIM]>,
}

impl FringeSeries {
    pub fn channel(&self, i: usize) -> Vec<f64> {
        self.populations.iter().map(|p| p[i]).collect()
    }

    /// CSV with columns tau_us, p1..p5.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["tau_us", "p1", "p2", "p3", "p4", "p5"])?;
        for (tau, p) in self.tau_values.iter().zip(&self.populations) {
            let mut row = vec![format!("{:.16e}", tau * 1e6)];
            row.extend(p.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RamseyOptions {
    pub integrator: IntegratorSettings,
    /// Apply the system's dephasing rate during free evolution as well.
    pub free_dephasing: bool,
}

impl Default for RamseyOptions {
    fn default() -> Self {
        Self {
            integrator: IntegratorSettings::default(),
            free_dephasing: true,
        }
    }
}

/// Uniform τ grid `0, step, …` with `count` points.
pub fn tau_grid(step: f64, count: usize) -> Vec<f64> {
    (0..count).map(|j| j as f64 * step).collect()
}

/// Runs the sequence for every τ. The pulse map is computed once and reused.
pub fn ramsey_scan(
    prep: &(dyn Drive + Sync),
    duration: f64,
    system: &SystemParams,
    tau_values: &[f64],
    options: &RamseyOptions,
) -> Result<FringeSeries> {
    if let Some(&bad) = tau_values.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::Domain {
            quantity: "free-evolution time (s)",
            value: bad,
            domain: "[0, ∞)".into(),
        });
    }
    if tau_values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidState("τ values must be ascending".into()));
    }
    let pulse_map = propagator(prep, system, duration, &options.integrator)?;
    let prepared = pulse_map.apply(&initial_state());
    let free_system = if options.free_dephasing {
        *system
    } else {
        system.with_dephasing(0.0)?
    };
    let populations = tau_values
        .par_iter()
        .map(|&tau| {
            let evolved = propagate_free(&prepared, &free_system, tau)?;
            Ok(pulse_map.apply(&evolved).populations())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FringeSeries {
        tau_values: tau_values.to_vec(),
        populations,
    })
}

/// Fringe amplitude, slope and dominant frequency of the strongest channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeMetrics {
    pub channel_index: usize,
    /// (max − min)/2
    pub amplitude: f64,
    /// largest point-to-point |Δp/Δτ| (1/s)
    pub max_slope: f64,
    /// S/A (1/s); `None` when the channel is flat
    pub s_over_a: Option<f64>,
    /// Fourier peak of the channel (rad/s); `None` for flat or non-uniform series
    pub dominant_gap: Option<f64>,
    /// angular width of one Fourier bin (rad/s)
    pub frequency_resolution: Option<f64>,
}

impl FringeMetrics {
    pub fn is_flat(&self) -> bool {
        self.s_over_a.is_none()
    }
}

/// Amplitudes below this are treated as no fringe at all.
const FLAT_AMPLITUDE: f64 = 1e-12;

pub fn fringe_metrics(series: &FringeSeries) -> Result<FringeMetrics> {
    let n = series.tau_values.len();
    if n < 3 || series.populations.len() != n {
        return Err(Error::InvalidState(format!(
            "fringe analysis needs at least 3 matching samples, got {n}"
        )));
    }
    let amplitude_of = |i: usize| {
        let (lo, hi) = series
            .populations
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[i]), hi.max(p[i])));
        0.5 * (hi - lo)
    };
    let channel_index = (0..DIM)
        .max_by(|&a, &b| amplitude_of(a).total_cmp(&amplitude_of(b)))
        .expect("DIM > 0");
    let amplitude = amplitude_of(channel_index);
    let p = series.channel(channel_index);
    let tau = &series.tau_values;
    let max_slope = (1..n)
        .filter(|&j| tau[j] > tau[j - 1])
        .map(|j| ((p[j] - p[j - 1]) / (tau[j] - tau[j - 1])).abs())
        .fold(0.0, f64::max);
    if amplitude <= FLAT_AMPLITUDE {
        return Ok(FringeMetrics {
            channel_index,
            amplitude,
            max_slope,
            s_over_a: None,
            dominant_gap: None,
            frequency_resolution: None,
        });
    }
    let spectrum = uniform_step(tau).map(|dt| (dominant_frequency(&p, dt), 2.0 * PI / (n as f64 * dt)));
    Ok(FringeMetrics {
        channel_index,
        amplitude,
        max_slope,
        s_over_a: Some(max_slope / amplitude),
        dominant_gap: spectrum.map(|s| s.0),
        frequency_resolution: spectrum.map(|s| s.1),
    })
}

fn uniform_step(tau: &[f64]) -> Option<f64> {
    let dt = (tau[tau.len() - 1] - tau[0]) / (tau.len() - 1) as f64;
    let uniform = dt > 0.0 && tau.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt);
    uniform.then_some(dt)
}

/// Angular frequency of the largest non-DC bin of `samples`.
fn dominant_frequency(samples: &[f64], dt: f64) -> f64 {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<C64> = samples.iter().map(|&x| C64::new(x - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let k = (1..=n / 2)
        .max_by(|&a, &b| buf[a].norm_sqr().total_cmp(&buf[b].norm_sqr()))
        .unwrap_or(0);
    2.0 * PI * k as f64 / (n as f64 * dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub label: String,
    pub metrics: FringeMetrics,
}

/// Least-squares line through the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginFit {
    pub slope: f64,
    /// 1 − SS_res/SS_tot with SS_tot taken about the mean
    pub r_squared: f64,
    pub residuals: Vec<f64>,
}

pub fn fit_through_origin(x: &[f64], y: &[f64]) -> Option<OriginFit> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - slope * a).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { f64::NAN };
    Some(OriginFit {
        slope,
        r_squared,
        residuals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityStudy {
    pub rows: Vec<SensitivityRow>,
    /// S/A against the Fourier gap; absent with fewer than two usable rows
    pub fit: Option<OriginFit>,
}

impl SensitivityStudy {
    pub fn row(&self, label: &str) -> Option<&SensitivityRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// One labelled preparation pulse with its duration.
pub struct LabeledDrive<'a> {
    pub label: String,
    pub drive: &'a (dyn Drive + Sync),
    pub duration: f64,
}

/// Scans every pulse, extracts metrics and fits S/A against ΔE.
pub fn sensitivity_study(
    preps: &[LabeledDrive<'_>],
    system: &SystemParams,
    tau_values: &[f64],
    options: &RamseyOptions,
) -> Result<(SensitivityStudy, Vec<FringeSeries>)> {
    let mut rows = Vec::with_capacity(preps.len());
    let mut scans = Vec::with_capacity(preps.len());
    for prep in preps {
        let series = ramsey_scan(prep.drive, prep.duration, system, tau_values, options)?;
        rows.push(SensitivityRow {
            label: prep.label.clone(),
            metrics: fringe_metrics(&series)?,
        });
        scans.push(series);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| Some((r.metrics.dominant_gap?, r.metrics.s_over_a?)))
        .unzip();
    let fit = fit_through_origin(&x, &y);
    Ok((SensitivityStudy { rows, fit }, scans))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::{default_carrier, CrabPulse};

    fn cosine_series(amplitude: f64, omega: f64, dt: f64, n: usize) -> FringeSeries {
        let tau_values = tau_grid(dt, n);
        let populations = tau_values
            .iter()
            .map(|t| {
                let p = 0.5 + amplitude * (omega * t).cos();
                [p, 1.0 - p, 0.0, 0.0, 0.0]
            })
            .collect();
        FringeSeries {
            tau_values,
            populations,
        }
    }

    #[test]
    fn synthetic_cosine_metrics() {
        let omega = 2.0 * PI * 1e6;
        let m = fringe_metrics(&cosine_series(0.25, omega, 50e-9, 81)).unwrap();
        assert!((m.amplitude - 0.25).abs() < 1e-12);
        let sa = m.s_over_a.unwrap();
        assert!((sa / omega - 1.0).abs() < 0.05, "{sa}");
        let gap = m.dominant_gap.unwrap();
        assert!((gap - omega).abs() <= m.frequency_resolution.unwrap());
    }

    #[test]
    fn constant_series_is_flagged() {
        let series = FringeSeries {
            tau_values: tau_grid(1e-9, 10),
            populations: vec![[1.0, 0.0, 0.0, 0.0, 0.0]; 10],
        };
        let m = fringe_metrics(&series).unwrap();
        assert_eq!(m.amplitude, 0.0);
        assert!(m.is_flat());
        assert!(fringe_metrics(&FringeSeries {
            tau_values: vec![0.0, 1.0],
            populations: vec![[1.0, 0.0, 0.0, 0.0, 0.0]; 2],
        })
        .is_err());
    }

    #[test]
    fn origin_fit_exact_line() {
        let fit = fit_through_origin(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-15);
        assert!((fit.r_squared - 1.0).abs() < 1e-15);
        assert!(fit_through_origin(&[1.0], &[2.0]).is_none());
    }

    #[test]
    fn zero_length_prep_leaves_populations_constant() {
        let system = SystemParams::reference();
        let series = ramsey_scan(
            &CrabPulse::constant(default_carrier(), 1e-6).unwrap(),
            0.0,
            &system,
            &tau_grid(5e-9, 20),
            &RamseyOptions::default(),
        )
        .unwrap();
        assert!(series.populations.iter().all(|p| p == &[1.0, 0.0, 0.0, 0.0, 0.0]));
        assert!(fringe_metrics(&series).unwrap().is_flat());
    }

    #[test]
    fn populations_stay_normalised() {
        let system = SystemParams::reference();
        let pulse = CrabPulse::constant(default_carrier(), 3e-6).unwrap();
        let series = ramsey_scan(&pulse, 3e-6, &system, &tau_grid(7e-9, 30), &RamseyOptions::default()).unwrap();
        for p in &series.populations {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
