use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{ensure, Error, Result};
use crate::optim::golden_section;

/// Trial fibre used to probe the local ply direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialFibreConfig {
    /// Fibre length in pixels.
    pub length: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    /// Spacing of the interpolated samples along the fibre, pixels.
    pub step: f64,
    /// Coarse scan spacing, radians.
    pub coarse_step: f64,
    /// Bracket width at which golden-section refinement stops, radians.
    pub refine_tol: f64,
    /// Fraction of the fibre that must remain inside the image.
    pub min_coverage: f64,
}

impl Default for TrialFibreConfig {
    fn default() -> Self {
        Self {
            length: 15.0,
            theta_min: -std::f64::consts::FRAC_PI_4,
            theta_max: std::f64::consts::FRAC_PI_4,
            step: 0.5,
            coarse_step: 1f64.to_radians(),
            refine_tol: 0.05f64.to_radians(),
            min_coverage: 0.6,
        }
    }
}

impl TrialFibreConfig {
    /// Fibre three ply thicknesses long, `ply_px` being the ply thickness
    /// in pixels.
    pub fn for_ply_thickness(ply_px: f64) -> Result<Self> {
        let cfg = Self {
            length: 3.0 * ply_px,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.length.is_finite() && self.length >= 3.0,
            Parameter,
            "fibre length must be at least 3 px, got {}",
            self.length
        );
        ensure!(
            -FRAC_PI_2 < self.theta_min && self.theta_min < self.theta_max && self.theta_max < FRAC_PI_2,
            Parameter,
            "angle range [{}, {}] must be an interval inside (-pi/2, pi/2)",
            self.theta_min,
            self.theta_max
        );
        ensure!(
            self.step > 0.0 && self.step <= self.length / 2.0,
            Parameter,
            "integration step must be in (0, H/2]"
        );
        ensure!(
            self.coarse_step > 0.0 && self.refine_tol > 0.0,
            Parameter,
            "angle steps must be positive"
        );
        ensure!(
            (0.0..=1.0).contains(&self.min_coverage),
            Parameter,
            "coverage fraction must lie in [0, 1]"
        );
        Ok(())
    }

    fn sample_count(&self) -> usize {
        (self.length / self.step).round() as usize + 1
    }

    /// Half-width of the column band in which even a horizontal fibre
    /// cannot reach the required coverage.
    pub fn edge_margin(&self) -> usize {
        ((self.min_coverage - 0.5) * self.length).max(0.0).ceil() as usize
    }
}

/// Gray-level variance along a fibre through `(x, y)` (pixel coordinates)
/// at angle `theta` from the image rows. Samples falling outside the image
/// are dropped and the variance is taken over those that remain.
pub fn fibre_variance(img: &GrayImage, x: (f64, f64), theta: f64, cfg: &TrialFibreConfig) -> Result<f64> {
    let n = cfg.sample_count();
    let (s, c) = theta.sin_cos();
    let half = 0.5 * (n - 1) as f64 * cfg.step;
    let mut count = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..n {
        let h = k as f64 * cfg.step - half;
        if let Some(g) = img.bilinear(x.0 + h * c, x.1 + h * s) {
            count += 1;
            let d = g - mean;
            mean += d / count as f64;
            m2 += d * (g - mean);
        }
    }
    ensure!(
        count > 0,
        Domain,
        "fibre at ({}, {}) lies entirely outside the image",
        x.0,
        x.1
    );
    let covered = count as f64 / n as f64;
    ensure!(
        covered + 1e-12 >= cfg.min_coverage,
        Domain,
        "fibre at ({}, {}), theta {theta} keeps only {:.0}% of its length",
        x.0,
        x.1,
        100.0 * covered
    );
    Ok(m2 / count as f64)
}

/// Coarse-scan minima rescanned on the fine grid.
const FINE_CANDIDATES: usize = 5;

/// Fine steps scanned either side of each candidate: two coarse steps.
const FINE_REACH: i32 = 20;

/// Pixel-space angle minimising [`fibre_variance`]: coarse scan over the
/// range, then a fine scan and golden-section refinement around each of the
/// best coarse minima.
///
/// Angles whose fibre is clipped below the coverage limit are skipped.
/// Among exactly equal variances the smaller `|theta|` wins.
pub fn estimate_angle(img: &GrayImage, x: (f64, f64), cfg: &TrialFibreConfig) -> Result<f64> {
    let n = ((cfg.theta_max - cfg.theta_min) / cfg.coarse_step).floor() as usize;
    let mut grid: Vec<f64> = (0..=n)
        .map(|k| cfg.theta_min + k as f64 * cfg.coarse_step)
        .collect();
    if cfg.theta_max - grid[n] > 1e-12 {
        grid.push(cfg.theta_max);
    }
    // visiting by |theta| makes strict improvement implement the tie-break
    grid.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(b.total_cmp(a)));

    let mut scanned: Vec<(f64, f64)> = Vec::with_capacity(grid.len());
    let mut last_err = None;
    for &theta in &grid {
        match fibre_variance(img, x, theta, cfg) {
            Ok(v) => scanned.push((theta, v)),
            Err(e) => last_err = Some(e),
        }
    }
    let Some(&(theta0, v0)) = scanned.iter().fold(None, |best: Option<&(f64, f64)>, p| match best {
        Some(b) if b.1 <= p.1 => Some(b),
        _ => Some(p),
    }) else {
        return Err(last_err.unwrap_or_else(|| Error::Domain("no admissible fibre angle".into())));
    };
    if v0 == 0.0 {
        return Ok(theta0);
    }

    // interpolation ripple can hide the true minimum next to a coarse one,
    // so the best few coarse minima are rescanned at a tenth of the step
    let variance = |t: f64| fibre_variance(img, x, t, cfg).unwrap_or(f64::INFINITY);
    let mut by_angle = scanned.clone();
    by_angle.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut minima: Vec<(f64, f64)> = (0..by_angle.len())
        .filter(|&i| {
            let v = by_angle[i].1;
            (i == 0 || by_angle[i - 1].1 >= v) && (i + 1 == by_angle.len() || by_angle[i + 1].1 >= v)
        })
        .map(|i| by_angle[i])
        .collect();
    minima.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.abs().total_cmp(&b.0.abs())));
    let fine = cfg.coarse_step / 10.0;
    let (mut theta1, mut v1) = (theta0, v0);
    for &(centre, _) in minima.iter().take(FINE_CANDIDATES) {
        let (mut tc, mut vc) = (centre, variance(centre));
        for k in -FINE_REACH..=FINE_REACH {
            let t = centre + k as f64 * fine;
            if t < cfg.theta_min || t > cfg.theta_max {
                continue;
            }
            let v = variance(t);
            if v < vc || (v == vc && t.abs() < tc.abs()) {
                (tc, vc) = (t, v);
            }
        }
        let lo = (tc - 2.0 * fine).max(cfg.theta_min);
        let hi = (tc + 2.0 * fine).min(cfg.theta_max);
        let (tg, vg) = golden_section(variance, lo, hi, cfg.refine_tol);
        if vg < vc {
            (tc, vc) = (tg, vg);
        }
        if vc < v1 || (vc == v1 && tc.abs() < theta1.abs()) {
            (theta1, v1) = (tc, vc);
        }
    }
    Ok(theta1)
}

/// [`estimate_angle`] converted to a physical angle.
pub fn estimate_physical_angle(img: &GrayImage, x: (f64, f64), cfg: &TrialFibreConfig) -> Result<f64> {
    Ok(img.physical_angle(estimate_angle(img, x, cfg)?))
}
