use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Localising envelopes `g_i(x) = exp(-((x - x_i*) / eta_i)^n)` along the
/// arc (`x_1`) and through the thickness (`x_3`).
///
/// `extent` is the cross-section `[0, L] x [0, T]` on which wrinkles live.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySpec {
    pub center: [f64; 2],
    pub eta: [f64; 2],
    pub exponent: u32,
    pub floor: f64,
    pub extent: [f64; 2],
}

impl DecaySpec {
    /// Picks each `eta_i` so the envelope equals `floor` at distance
    /// `center_i` from the centre, i.e. at the `x_i = 0` boundary.
    pub fn new(center: [f64; 2], extent: [f64; 2], exponent: u32, floor: f64) -> Result<Self> {
        ensure!(
            exponent >= 2 && exponent.is_multiple_of(2),
            Parameter,
            "decay exponent must be even and at least 2, got {exponent}"
        );
        ensure!(
            floor > 0.0 && floor < 1.0,
            Parameter,
            "decay floor must lie in (0, 1), got {floor}"
        );
        ensure!(
            center.iter().all(|c| *c > 0.0),
            Parameter,
            "decay centres must be positive"
        );
        let root = (-floor.ln()).powf(1.0 / exponent as f64);
        Self::with_eta(center, [center[0] / root, center[1] / root], exponent, floor, extent)
    }

    pub fn with_eta(
        center: [f64; 2],
        eta: [f64; 2],
        exponent: u32,
        floor: f64,
        extent: [f64; 2],
    ) -> Result<Self> {
        ensure!(
            exponent >= 2 && exponent.is_multiple_of(2),
            Parameter,
            "decay exponent must be even and at least 2, got {exponent}"
        );
        ensure!(
            eta.iter().all(|e| e.is_finite() && *e > 0.0),
            Parameter,
            "decay scales must be positive"
        );
        ensure!(
            extent.iter().all(|e| e.is_finite() && *e > 0.0),
            Parameter,
            "section extent must be positive"
        );
        Ok(Self {
            center,
            eta,
            exponent,
            floor,
            extent,
        })
    }

    /// Envelope of `axis` (0 for `x_1`, 1 for `x_3`) at signed offset
    /// `d = x - x*` from its centre.
    #[inline]
    pub fn at_offset(&self, axis: usize, d: f64) -> f64 {
        let u = d / self.eta[axis];
        (-u.powi(self.exponent as i32)).exp()
    }

    #[inline]
    pub fn value(&self, axis: usize, x: f64) -> f64 {
        self.at_offset(axis, x - self.center[axis])
    }

    #[inline]
    pub fn derivative(&self, axis: usize, x: f64) -> f64 {
        let n = self.exponent as i32;
        let u = (x - self.center[axis]) / self.eta[axis];
        -(n as f64) / self.eta[axis] * u.powi(n - 1) * (-u.powi(n)).exp()
    }
}
