//! The F = 2 Zeeman manifold of the ⁸⁷Rb ground state.
//!
//! Basis index 0..5 corresponds to m_F = +2, +1, 0, −1, −2. All energies are
//! stored as angular frequencies (rad/s), i.e. H/ħ.

use std::f64::consts::PI;
use std::ops::{Add, Mul};

use nalgebra::{Matrix5, Vector5};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::target::TargetSpec;

pub const DIM: usize = 5;

/// Magnetic quantum number of each basis state.
pub const M_F: [f64; DIM] = [2.0, 1.0, 0.0, -1.0, -2.0];

/// Diagonal of the RF detuning term, V(t) = f(t) · diag(−2, −1, 0, 1, 2).
pub const DETUNING_WEIGHTS: [f64; DIM] = [-2.0, -1.0, 0.0, 1.0, 2.0];

/// Standard ⁸⁷Rb 5²S₁/₂ constants used by the Breit-Rabi formula.
pub mod rb87 {
    /// Zero-field hyperfine splitting (Hz).
    pub const HYPERFINE_SPLITTING_HZ: f64 = 6_834_682_610.904;
    pub const G_J: f64 = 2.002_331_13;
    pub const G_I: f64 = -0.000_995_141_4;
    pub const NUCLEAR_SPIN: f64 = 1.5;
    /// Bohr magneton (J/T).
    pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
    /// Planck constant (J·s).
    pub const PLANCK: f64 = 6.626_070_15e-34;
}

pub const MAX_BIAS_FIELD_GAUSS: f64 = 100.0;

/// Convert a frequency in kHz to an angular frequency in rad/s.
#[inline]
pub fn khz(value: f64) -> f64 {
    2.0 * PI * 1e3 * value
}

/// Convert an angular frequency in rad/s to a frequency in kHz.
#[inline]
pub fn to_khz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e3)
}

/// F = 2, m_F = +2 … −2 level energies from the Breit-Rabi formula,
/// returned in rad/s and shifted so that the m_F = 0 level sits at zero.
pub fn breit_rabi_energies(bias_field_gauss: f64) -> Result<[f64; DIM]> {
    if !(0.0..=MAX_BIAS_FIELD_GAUSS).contains(&bias_field_gauss) {
        return Err(Error::Domain {
            quantity: "bias field (G)",
            value: bias_field_gauss,
            domain: format!("[0, {MAX_BIAS_FIELD_GAUSS}]"),
        });
    }
    use rb87::*;
    let field_tesla = bias_field_gauss * 1e-4;
    let two_i_plus_one = 2.0 * NUCLEAR_SPIN + 1.0;
    let x = (G_J - G_I) * BOHR_MAGNETON * field_tesla / (PLANCK * HYPERFINE_SPLITTING_HZ);
    let nuclear = G_I * BOHR_MAGNETON * field_tesla / PLANCK;

    // E(m)/h up to the common offset −ΔE/(2(2I+1)) + ΔE/2, which cancels in the shift.
    let level_hz = |m: f64| -> f64 {
        let root_minus_one = if m == -(NUCLEAR_SPIN + 0.5) {
            // stretched state: the square root is exactly (1 − x)
            -x
        } else {
            let a = 4.0 * m * x / two_i_plus_one + x * x;
            a / ((1.0 + a).sqrt() + 1.0)
        };
        nuclear * m + 0.5 * HYPERFINE_SPLITTING_HZ * root_minus_one
    };

    let reference = level_hz(0.0);
    let mut energies = [0.0; DIM];
    for (e, &m) in energies.iter_mut().zip(M_F.iter()) {
        *e = 2.0 * PI * (level_hz(m) - reference);
    }
    energies[2] = 0.0;
    Ok(energies)
}

/// Physical parameters of the driven spin system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub bias_field_gauss: f64,
    /// Ω (rad/s)
    pub rabi_rate: f64,
    /// γ (rad/s), equal for all five sublevels
    pub dephasing_rate: f64,
    /// ω₁..ω₅ (rad/s), with ω₃ = 0
    pub level_energies: [f64; DIM],
}

impl SystemParams {
    pub fn new(bias_field_gauss: f64, rabi_rate: f64, dephasing_rate: f64) -> Result<Self> {
        check_non_negative("rabi rate", rabi_rate)?;
        check_non_negative("dephasing rate", dephasing_rate)?;
        Ok(Self {
            bias_field_gauss,
            rabi_rate,
            dephasing_rate,
            level_energies: breit_rabi_energies(bias_field_gauss)?,
        })
    }

    /// Builds a system with explicitly given level energies (rad/s). The
    /// middle level must be zero and the ladder must be non-increasing.
    pub fn with_level_energies(
        level_energies: [f64; DIM],
        rabi_rate: f64,
        dephasing_rate: f64,
    ) -> Result<Self> {
        check_non_negative("rabi rate", rabi_rate)?;
        check_non_negative("dephasing rate", dephasing_rate)?;
        if level_energies[2] != 0.0 {
            return Err(Error::Domain {
                quantity: "ω₃",
                value: level_energies[2],
                domain: "{0}".into(),
            });
        }
        if level_energies.windows(2).any(|w| w[1] > w[0] || !w[0].is_finite()) {
            return Err(Error::InvalidState(
                "level energies must be finite and non-increasing in basis order".into(),
            ));
        }
        // the field is not meaningful for a hand-written ladder
        Ok(Self {
            bias_field_gauss: 0.0,
            rabi_rate,
            dephasing_rate,
            level_energies,
        })
    }

    /// B = 6.179 G, Ω = 2π·60 kHz, noiseless.
    pub fn reference() -> Self {
        Self::new(6.179, khz(60.0), 0.0).expect("reference parameters are valid")
    }

    pub fn with_dephasing(mut self, dephasing_rate: f64) -> Result<Self> {
        check_non_negative("dephasing rate", dephasing_rate)?;
        self.dephasing_rate = dephasing_rate;
        Ok(self)
    }

    pub fn with_rabi_rate(mut self, rabi_rate: f64) -> Result<Self> {
        check_non_negative("rabi rate", rabi_rate)?;
        self.rabi_rate = rabi_rate;
        Ok(self)
    }

    pub fn with_bias_field(mut self, bias_field_gauss: f64) -> Result<Self> {
        self.level_energies = breit_rabi_energies(bias_field_gauss)?;
        self.bias_field_gauss = bias_field_gauss;
        Ok(self)
    }

    /// Off-diagonal couplings of H₁ between neighbouring levels.
    pub fn couplings(&self) -> [f64; DIM - 1] {
        let side = 1.5f64.sqrt() * self.rabi_rate;
        [self.rabi_rate, side, side, self.rabi_rate]
    }

    /// Diagonal of H₀ + V(f).
    pub fn diagonal(&self, f_value: f64) -> [f64; DIM] {
        let mut d = self.level_energies;
        for (d, w) in d.iter_mut().zip(DETUNING_WEIGHTS) {
            *d += w * f_value;
        }
        d
    }

    /// H₀ + H₁ + V(f) as a dense matrix.
    pub fn total_hamiltonian(&self, f_value: f64) -> HamiltonianTerm {
        build_h0(self) + build_h1(self.rabi_rate) + build_detuning(f_value)
    }
}

fn check_non_negative(quantity: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            quantity,
            value,
            domain: "[0, ∞)".into(),
        })
    }
}

/// A Hermitian 5×5 term of the Hamiltonian in units of rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianTerm(Matrix5<C64>);

impl HamiltonianTerm {
    pub fn zero() -> Self {
        Self(Matrix5::zeros())
    }

    pub fn from_diagonal(diag: &[f64; DIM]) -> Self {
        Self(Matrix5::from_diagonal(&Vector5::from_fn(|i, _| {
            C64::new(diag[i], 0.0)
        })))
    }

    /// Real symmetric tridiagonal matrix with the given diagonal and
    /// nearest-neighbour couplings.
    pub fn tridiagonal(diag: &[f64; DIM], off: &[f64; DIM - 1]) -> Self {
        let mut m = Self::from_diagonal(diag).0;
        for (i, &c) in off.iter().enumerate() {
            m[(i, i + 1)] = C64::new(c, 0.0);
            m[(i + 1, i)] = C64::new(c, 0.0);
        }
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix5<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix5<C64> {
        self.0
    }

    /// Largest |H − H†| element.
    pub fn hermiticity_defect(&self) -> f64 {
        max_abs(&(self.0 - self.0.adjoint()))
    }
}

impl Add for HamiltonianTerm {
    type Output = HamiltonianTerm;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl Mul<f64> for HamiltonianTerm {
    type Output = HamiltonianTerm;
    fn mul(self, rhs: f64) -> Self {
        Self(self.0 * C64::new(rhs, 0.0))
    }
}

/// H₀ = diag(ω₁, …, ω₅).
pub fn build_h0(system: &SystemParams) -> HamiltonianTerm {
    HamiltonianTerm::from_diagonal(&system.level_energies)
}

/// The RF coupling H₁ for Rabi rate Ω.
pub fn build_h1(rabi_rate: f64) -> HamiltonianTerm {
    let side = 1.5f64.sqrt() * rabi_rate;
    HamiltonianTerm::tridiagonal(&[0.0; DIM], &[rabi_rate, side, side, rabi_rate])
}

/// V = f · diag(−2, −1, 0, 1, 2).
pub fn build_detuning(f_value: f64) -> HamiltonianTerm {
    HamiltonianTerm::from_diagonal(&DETUNING_WEIGHTS.map(|w| w * f_value))
}

pub(crate) fn max_abs(m: &Matrix5<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Tolerances used when checking density-matrix invariants.
#[derive(Debug, Clone, Copy)]
pub struct StateTolerance {
    pub hermiticity: f64,
    pub trace: f64,
    pub positivity: f64,
}

impl Default for StateTolerance {
    fn default() -> Self {
        Self {
            hermiticity: 1e-10,
            trace: 1e-9,
            positivity: 1e-8,
        }
    }
}

/// Hermitian, unit-trace, positive semidefinite 5×5 density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(Matrix5<C64>);

impl DensityMatrix {
    /// Validates `m` against the default tolerances.
    pub fn new(m: Matrix5<C64>) -> Result<Self> {
        Self::with_tolerance(m, StateTolerance::default())
    }

    pub fn with_tolerance(m: Matrix5<C64>, tol: StateTolerance) -> Result<Self> {
        check_state(&m, tol)?;
        Ok(Self(m))
    }

    /// Wraps a matrix without checking the invariants.
    pub(crate) fn new_unchecked(m: Matrix5<C64>) -> Self {
        Self(m)
    }

    /// |i⟩⟨i| for basis index `i` (0-based, 0 ↔ m_F = +2).
    pub fn basis(i: usize) -> Self {
        assert!(i < DIM, "basis index {i} out of range");
        let mut m = Matrix5::zeros();
        m[(i, i)] = C64::new(1.0, 0.0);
        Self(m)
    }

    /// |ψ⟩⟨ψ| for a (not necessarily normalised) non-zero vector.
    pub fn pure(psi: &Vector5<C64>) -> Result<Self> {
        let norm = psi.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidState("state vector has zero norm".into()));
        }
        let psi = psi / C64::new(norm, 0.0);
        Ok(Self(psi * psi.adjoint()))
    }

    /// diag(p) for a population vector summing to one.
    pub fn diagonal(populations: &[f64; DIM]) -> Result<Self> {
        Self::new(Matrix5::from_diagonal(&Vector5::from_fn(|i, _| {
            C64::new(populations[i], 0.0)
        })))
    }

    pub fn matrix(&self) -> &Matrix5<C64> {
        &self.0
    }

    pub fn populations(&self) -> [f64; DIM] {
        std::array::from_fn(|i| self.0[(i, i)].re)
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        max_abs(&(self.0 - self.0.adjoint()))
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> [f64; DIM] {
        let h = (self.0 + self.0.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        std::array::from_fn(|i| ev[i])
    }

    /// Tr ρ².
    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }
}

#[derive(Serialize, Deserialize)]
struct DensityMatrixRecord {
    re: [[f64; DIM]; DIM],
    im: [[f64; DIM]; DIM],
}

impl Serialize for DensityMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        DensityMatrixRecord {
            re: std::array::from_fn(|i| std::array::from_fn(|j| self.0[(i, j)].re)),
            im: std::array::from_fn(|i| std::array::from_fn(|j| self.0[(i, j)].im)),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = DensityMatrixRecord::deserialize(deserializer)?;
        let m = Matrix5::from_fn(|i, j| C64::new(r.re[i][j], r.im[i][j]));
        DensityMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

fn check_state(m: &Matrix5<C64>, tol: StateTolerance) -> Result<()> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidState("non-finite entry".into()));
    }
    let herm = max_abs(&(m - m.adjoint()));
    if herm > tol.hermiticity {
        return Err(Error::InvalidState(format!(
            "Hermiticity defect {herm:e} exceeds {:e}",
            tol.hermiticity
        )));
    }
    let tr = m.trace();
    if (tr - C64::new(1.0, 0.0)).norm() > tol.trace {
        return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
    }
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let min_ev = h
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    if min_ev < -tol.positivity {
        return Err(Error::InvalidState(format!(
            "negative eigenvalue {min_ev:e}"
        )));
    }
    Ok(())
}

/// Which extremal eigenvector of H₀ + H₁ + V(f̄) to target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eigenstate {
    Ground,
    Highest,
}

/// Relative eigenvalue gap below which an extremal eigenvalue counts as degenerate.
pub const DEGENERACY_TOLERANCE: f64 = 1e-9;

/// Pure-state target given by the ground or highest eigenvector of the total
/// Hamiltonian at constant drive `f_bar` (rad/s).
pub fn eigenstate_target(system: &SystemParams, f_bar: f64, which: Eigenstate) -> Result<TargetSpec> {
    let h = system.total_hamiltonian(f_bar);
    let eig = h.matrix().symmetric_eigen();
    let mut order: Vec<usize> = (0..DIM).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (pick, next) = match which {
        Eigenstate::Ground => (order[0], order[1]),
        Eigenstate::Highest => (order[DIM - 1], order[DIM - 2]),
    };
    let (lo, hi) = (eig.eigenvalues[pick], eig.eigenvalues[next]);
    let scale = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(f64::MIN_POSITIVE);
    let gap = (hi - lo).abs() / scale;
    if gap < DEGENERACY_TOLERANCE {
        return Err(Error::DegenerateEigenvalue { gap });
    }
    let psi: Vector5<C64> = eig.eigenvectors.column(pick).into_owned();
    let rho = DensityMatrix::pure(&psi)?;
    let name = match which {
        Eigenstate::Ground => "ground",
        Eigenstate::Highest => "highest",
    };
    TargetSpec::with_full_target(name, rho)
}
