//! CRAB parametrisation of the RF drive.
//!
//! The modulation is the two-sided sum f(t) = f₀(1 + Σ_{k=−n..n} A_k e^{iν_k t}),
//! ν_k = 2πk/T. Only A_0 (real) and A_1..A_n are stored; A_{−k} = conj(A_k),
//! so f(t) is real for every coefficient choice.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin_system::{khz, to_khz};

/// Frequency-modulated drive built from a truncated Fourier basis.
#[derive(Debug, Clone, PartialEq)]
pub struct CrabPulse {
    /// carrier f₀ (rad/s)
    pub f0: f64,
    /// T (s)
    pub duration: f64,
    /// A_1..A_{n_f}
    pub coefficients: Vec<C64>,
    /// real A_0
    pub offset: f64,
}

/// Allowed window for the running-average frequency ω(t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub omega_min: f64,
    pub omega_max: f64,
}

impl FrequencyBand {
    pub fn new(omega_min: f64, omega_max: f64) -> Result<Self> {
        if !(omega_min < omega_max) {
            return Err(Error::Domain {
                quantity: "band lower edge",
                value: omega_min,
                domain: format!("(-∞, {omega_max})"),
            });
        }
        Ok(Self { omega_min, omega_max })
    }

    /// 2π·[4000, 4700] kHz.
    pub fn reference() -> Self {
        Self {
            omega_min: khz(4000.0),
            omega_max: khz(4700.0),
        }
    }

    pub fn distance(&self, omega: f64) -> f64 {
        (self.omega_min - omega).max(omega - self.omega_max).max(0.0)
    }
}

/// 2π·4323 kHz, the unmodulated working point.
pub fn default_carrier() -> f64 {
    khz(4323.0)
}

impl CrabPulse {
    pub fn new(f0: f64, duration: f64, coefficients: Vec<C64>) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Domain {
                quantity: "pulse duration (s)",
                value: duration,
                domain: "(0, ∞)".into(),
            });
        }
        Ok(Self {
            f0,
            duration,
            coefficients,
            offset: 0.0,
        })
    }

    /// Unmodulated drive f(t) = f₀.
    pub fn constant(f0: f64, duration: f64) -> Result<Self> {
        Self::new(f0, duration, Vec::new())
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn n_f(&self) -> usize {
        self.coefficients.len()
    }

    /// Number of real search parameters for `n_f` harmonics.
    pub fn parameter_count(n_f: usize, with_offset: bool) -> usize {
        2 * n_f + usize::from(with_offset)
    }

    /// Builds a pulse from the flat layout `[Re A₁, Im A₁, …, Re A_n, Im A_n, (A₀)]`.
    pub fn from_parameters(f0: f64, duration: f64, params: &[f64], with_offset: bool) -> Result<Self> {
        let n_f = params.len().saturating_sub(usize::from(with_offset)) / 2;
        if Self::parameter_count(n_f, with_offset) != params.len() {
            return Err(Error::InvalidState(format!(
                "parameter vector of length {} does not match any harmonic count",
                params.len()
            )));
        }
        let coefficients = params[..2 * n_f]
            .chunks_exact(2)
            .map(|c| C64::new(c[0], c[1]))
            .collect();
        let offset = if with_offset { params[2 * n_f] } else { 0.0 };
        Ok(Self::new(f0, duration, coefficients)?.with_offset(offset))
    }

    pub fn parameters(&self, with_offset: bool) -> Vec<f64> {
        let mut p: Vec<f64> = self.coefficients.iter().flat_map(|a| [a.re, a.im]).collect();
        if with_offset {
            p.push(self.offset);
        }
        p
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=self.duration).contains(&t) {
            Ok(())
        } else {
            Err(Error::Domain {
                quantity: "pulse time (s)",
                value: t,
                domain: format!("[0, {}]", self.duration),
            })
        }
    }

    fn base_rate(&self) -> f64 {
        2.0 * PI / self.duration
    }

    /// f(t) in rad/s.
    pub fn eval_f(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.f_unchecked(t))
    }

    pub(crate) fn f_unchecked(&self, t: f64) -> f64 {
        let nu = self.base_rate();
        let modulation: f64 = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(k, a)| 2.0 * (a * C64::from_polar(1.0, nu * (k + 1) as f64 * t)).re)
            .sum();
        self.f0 * (1.0 + self.offset + modulation)
    }

    /// Running-average frequency ω(t) = (1/t)∫₀ᵗ f, with ω(0) = f(0).
    pub fn omega_from_f(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.omega_unchecked(t))
    }

    pub(crate) fn omega_unchecked(&self, t: f64) -> f64 {
        let nu = self.base_rate();
        // (1/t)∫₀ᵗ e^{iνs} ds = sinc(νt/2) e^{iνt/2}
        let modulation: f64 = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let half = 0.5 * nu * (k + 1) as f64 * t;
                let sinc = if half.abs() < 1e-8 { 1.0 - half * half / 6.0 } else { half.sin() / half };
                2.0 * sinc * (a * C64::from_polar(1.0, half)).re
            })
            .sum();
        self.f0 * (1.0 + self.offset + modulation)
    }

    /// f on the uniform grid t_j = t0 + j·dt, j = 0..count, written into `out`.
    ///
    /// Uses a phasor recurrence that is re-anchored every 256 samples; the
    /// grid may extend beyond [0, T] (the basis is periodic).
    pub fn sample_f(&self, t0: f64, dt: f64, count: usize, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(count);
        let n_f = self.n_f();
        if n_f == 0 {
            out.resize(count, self.f0 * (1.0 + self.offset));
            return;
        }
        let nu = self.base_rate();
        let step = C64::from_polar(1.0, nu * dt);
        let mut base = C64::new(1.0, 0.0);
        for j in 0..count {
            if j % 256 == 0 {
                base = C64::from_polar(1.0, nu * (t0 + j as f64 * dt));
            }
            let mut z = base;
            let mut modulation = 0.0;
            for a in &self.coefficients {
                modulation += a.re * z.re - a.im * z.im;
                z *= base;
            }
            out.push(self.f0 * (1.0 + self.offset + 2.0 * modulation));
            base *= step;
        }
    }

    /// Largest distance of ω(t) outside `band` on a uniform grid of `n_samples` points.
    pub fn band_violation(&self, band: &FrequencyBand, n_samples: usize) -> f64 {
        let n = n_samples.max(2);
        (0..n)
            .map(|j| {
                let t = self.duration * j as f64 / (n - 1) as f64;
                band.distance(self.omega_unchecked(t))
            })
            .fold(0.0, f64::max)
    }

    /// Tabulated (t, f, ω) on `n_samples` uniformly spaced points in [0, T].
    pub fn trace(&self, n_samples: usize) -> Vec<TracePoint> {
        let n = n_samples.max(2);
        (0..n)
            .map(|j| {
                let t = self.duration * j as f64 / (n - 1) as f64;
                TracePoint {
                    t_us: t * 1e6,
                    f_khz: to_khz(self.f_unchecked(t)),
                    omega_khz: to_khz(self.omega_unchecked(t)),
                }
            })
            .collect()
    }

    pub fn write_trace_csv<W: Write>(&self, n_samples: usize, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t_us", "f_khz", "omega_khz"])?;
        for p in self.trace(n_samples) {
            w.write_record([
                format!("{:.16e}", p.t_us),
                format!("{:.16e}", p.f_khz),
                format!("{:.16e}", p.omega_khz),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_record(&self, trace_samples: Option<usize>) -> PulseRecord {
        PulseRecord {
            f0_khz: to_khz(self.f0),
            t_us: self.duration * 1e6,
            n_f: self.n_f(),
            coeffs: self.coefficients.iter().map(|a| [a.re, a.im]).collect(),
            a0: self.offset,
            trace: trace_samples.map(|n| self.trace(n)),
        }
    }

    pub fn from_record(record: &PulseRecord) -> Result<Self> {
        let parse_err = |location: &str, message: String| Error::PulseParse {
            location: location.into(),
            message,
        };
        if record.coeffs.len() != record.n_f {
            return Err(parse_err(
                "coeffs",
                format!("n_f = {} but {} coefficient pairs given", record.n_f, record.coeffs.len()),
            ));
        }
        if let Some(i) = record
            .coeffs
            .iter()
            .position(|c| !c[0].is_finite() || !c[1].is_finite())
        {
            return Err(parse_err(&format!("coeffs[{i}]"), "non-finite coefficient".into()));
        }
        if !record.f0_khz.is_finite() {
            return Err(parse_err("f0_khz", "non-finite carrier".into()));
        }
        if !(record.t_us > 0.0 && record.t_us.is_finite()) {
            return Err(parse_err("T_us", format!("duration must be positive, got {}", record.t_us)));
        }
        let coefficients = record.coeffs.iter().map(|c| C64::new(c[0], c[1])).collect();
        Ok(Self::new(khz(record.f0_khz), record.t_us / 1e6, coefficients)?.with_offset(record.a0))
    }

    pub fn to_json(&self, trace_samples: Option<usize>) -> String {
        serde_json::to_string_pretty(&self.to_record(trace_samples)).expect("pulse record serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: PulseRecord = serde_json::from_str(text).map_err(|e| Error::PulseParse {
            location: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        Self::from_record(&record)
    }
}

impl Serialize for CrabPulse {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_record(None).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CrabPulse {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let record = PulseRecord::deserialize(deserializer)?;
        CrabPulse::from_record(&record).map_err(serde::de::Error::custom)
    }
}

/// One row of a tabulated pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t_us: f64,
    pub f_khz: f64,
    pub omega_khz: f64,
}

/// On-disk pulse description; frequencies in kHz (divided by 2π), duration in μs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseRecord {
    pub f0_khz: f64,
    #[serde(rename = "T_us")]
    pub t_us: f64,
    pub n_f: usize,
    pub coeffs: Vec<[f64; 2]>,
    #[serde(rename = "A0", default, skip_serializing_if = "is_zero")]
    pub a0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TracePoint>>,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}
