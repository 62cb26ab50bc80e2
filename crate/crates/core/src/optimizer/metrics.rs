use nalgebra::Matrix5;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::spin_system::{DensityMatrix, DIM};
use crate::target::TargetSpec;

/// ε = Σ_i |ρ_ii − b_i| / 2.
pub fn state_error(state: &DensityMatrix, target: &TargetSpec) -> f64 {
    population_error(&state.populations(), &target.populations)
}

pub fn population_error(populations: &[f64; DIM], target: &[f64; DIM]) -> f64 {
    0.5 * populations.iter().zip(target).map(|(p, b)| (p - b).abs()).sum::<f64>()
}

const POSITIVITY_TOLERANCE: f64 = 1e-8;

/// Principal square root of a positive semidefinite Hermitian matrix.
fn psd_sqrt(m: &Matrix5<C64>, label: &'static str) -> Result<Matrix5<C64>> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    if let Some(&min) = eig.eigenvalues.iter().min_by(|a, b| a.total_cmp(b)) {
        if min < -POSITIVITY_TOLERANCE {
            return Err(Error::Domain {
                quantity: label,
                value: min,
                domain: format!("eigenvalues ≥ −{POSITIVITY_TOLERANCE:e}"),
            });
        }
    }
    let roots = eig.eigenvalues.map(|l| C64::new(l.max(0.0).sqrt(), 0.0));
    let v = &eig.eigenvectors;
    Ok(v * Matrix5::from_diagonal(&roots) * v.adjoint())
}

/// Uhlmann fidelity F(a, b) = Tr √(√a b √a), clamped to [0, 1].
pub fn uhlmann_fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    let sa = psd_sqrt(a.matrix(), "smallest eigenvalue of the first state")?;
    // validates b as well
    psd_sqrt(b.matrix(), "smallest eigenvalue of the second state")?;
    let inner = sa * b.matrix() * sa;
    let inner = (inner + inner.adjoint()) * C64::new(0.5, 0.0);
    let f: f64 = inner
        .symmetric_eigenvalues()
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    Ok(f.clamp(0.0, 1.0))
}
