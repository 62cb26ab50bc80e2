use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin_system::{DensityMatrix, DIM};

/// Desired final populations b₁..b₅, optionally with a full target state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub name: String,
    pub populations: [f64; DIM],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_target: Option<DensityMatrix>,
}

impl TargetSpec {
    pub fn new(name: impl Into<String>, populations: [f64; DIM]) -> Result<Self> {
        if populations.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(Error::InvalidState(format!(
                "target populations must be non-negative, got {populations:?}"
            )));
        }
        let total: f64 = populations.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!(
                "target populations sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            name: name.into(),
            populations,
            full_target: None,
        })
    }

    pub fn with_full_target(name: impl Into<String>, state: DensityMatrix) -> Result<Self> {
        let mut populations = state.populations();
        // absorb rounding so that the sum is exactly representable as 1
        let total: f64 = populations.iter().sum();
        populations.iter_mut().for_each(|p| *p = p.max(0.0) / total);
        let mut spec = Self::new(name, populations)?;
        spec.full_target = Some(state);
        Ok(spec)
    }

    /// diag(b) as a density matrix.
    pub fn diagonal_state(&self) -> DensityMatrix {
        DensityMatrix::diagonal(&self.populations).expect("validated at construction")
    }
}

const THIRD: f64 = 1.0 / 3.0;

/// The nine population targets A–I.
pub fn builtin_targets() -> Vec<TargetSpec> {
    let rows: [(&str, [f64; DIM]); 9] = [
        ("A", [0.5, 0.0, 0.0, 0.0, 0.5]),
        ("B", [0.5, 0.0, 0.0, 0.5, 0.0]),
        ("C", [0.0, 0.5, 0.0, 0.5, 0.0]),
        ("D", [0.5, 0.5, 0.0, 0.0, 0.0]),
        ("E", [0.0, THIRD, THIRD, THIRD, 0.0]),
        ("F", [0.2; DIM]),
        ("G", [0.0, 1.0, 0.0, 0.0, 0.0]),
        ("H", [0.0, 0.0, 0.0, 1.0, 0.0]),
        ("I", [0.0, 0.0, 1.0, 0.0, 0.0]),
    ];
    rows.into_iter()
        .map(|(name, b)| TargetSpec::new(name, b).expect("built-in rows are normalised"))
        .collect()
}

/// Looks up one of the built-in targets by its letter (case-insensitive).
pub fn builtin_target(name: &str) -> Option<TargetSpec> {
    builtin_targets()
        .into_iter()
        .find(|t| t.name.eq_ignore_ascii_case(name))
}
