use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Interlaminar strength allowables, MPa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allowables {
    /// Transverse shear, 1-3 plane.
    pub s13: f64,
    /// Transverse shear, 2-3 plane.
    pub s23: f64,
    /// Through-thickness tension.
    pub s33: f64,
}

impl Default for Allowables {
    /// Carbon/epoxy corner-bend values.
    fn default() -> Self {
        Self {
            s13: 97.0,
            s23: 97.0,
            s33: 61.0,
        }
    }
}

impl Allowables {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.s13 > 0.0 && self.s23 > 0.0 && self.s33 > 0.0,
            Parameter,
            "allowables must be positive, got {self:?}"
        );
        Ok(())
    }
}

/// Camanho failure index. Through-thickness compression does not contribute;
/// the laminate fails where the index reaches one.
pub fn camanho(sigma_33: f64, sigma_23: f64, sigma_13: f64, allow: &Allowables) -> Result<f64> {
    allow.validate()?;
    ensure!(
        sigma_33.is_finite() && sigma_23.is_finite() && sigma_13.is_finite(),
        Parameter,
        "stresses must be finite"
    );
    let t = sigma_33.max(0.0) / allow.s33;
    let a = sigma_23 / allow.s23;
    let b = sigma_13 / allow.s13;
    Ok((t * t + a * a + b * b).sqrt())
}
