use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{ensure, Error, Result};
use crate::klfield::WrinkleParams;

/// Variance given to components on which every fit agrees exactly.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Two-sided Student-t quantile `t_{(1+confidence)/2, n-1}` for `n` samples.
pub fn student_t_factor(n: usize, confidence: f64) -> Result<f64> {
    ensure!(n >= 2, Parameter, "student t factor needs at least 2 samples, got {n}");
    ensure!(
        confidence > 0.0 && confidence < 1.0,
        Parameter,
        "confidence must lie in (0, 1)"
    );
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(t.inverse_cdf(0.5 + 0.5 * confidence))
}

/// Independent Gaussian prior over `[a_1, ..., a_N, lambda]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    pub mean: Vec<f64>,
    /// Inflated variances.
    pub variance: Vec<f64>,
    pub inflation: f64,
    /// Components whose sample variance was zero and got [`VARIANCE_FLOOR`].
    #[serde(default)]
    pub floored: Vec<usize>,
}

impl PriorModel {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        let p = Self {
            mean,
            variance,
            inflation: 1.0,
            floored: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Standard normal in every component.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
            inflation: 1.0,
            floored: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.mean.is_empty() && self.mean.len() == self.variance.len(),
            Data,
            "prior mean and variance lengths differ"
        );
        ensure!(
            self.variance.iter().all(|v| v.is_finite() && *v > 0.0),
            Parameter,
            "prior variances must be positive"
        );
        ensure!(self.mean.iter().all(|m| m.is_finite()), Parameter, "prior mean must be finite");
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self, i: usize) -> f64 {
        self.variance[i].sqrt()
    }

    /// `(xi - mean) / std`.
    pub fn whiten(&self, xi: &[f64]) -> Vec<f64> {
        xi.iter()
            .enumerate()
            .map(|(i, x)| (x - self.mean[i]) / self.std(i))
            .collect()
    }

    pub fn colour(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, z)| self.mean[i] + self.std(i) * z)
            .collect()
    }

    /// Log density up to the normalising constant: `-|z|^2 / 2`.
    pub fn log_density(&self, xi: &[f64]) -> f64 {
        -0.5 * self.whiten(xi).iter().map(|z| z * z).sum::<f64>()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.colour(&z)
    }
}

/// Prior from per-observation fits: component means and sample variances
/// (`n - 1` denominator) inflated by the two-sided Student-t factor.
///
/// Components with zero spread get [`VARIANCE_FLOOR`]; if every component is
/// degenerate the prior is rejected.
pub fn build_prior(fits: &[WrinkleParams], confidence: f64) -> Result<PriorModel> {
    ensure!(fits.len() >= 2, Parameter, "prior needs at least 2 fits, got {}", fits.len());
    let dim = fits[0].dim();
    ensure!(
        fits.iter().all(|f| f.dim() == dim),
        Data,
        "fits have different numbers of modes"
    );
    let rows: Vec<Vec<f64>> = fits.iter().map(WrinkleParams::to_vec).collect();
    let n = rows.len() as f64;
    let tau = student_t_factor(fits.len(), confidence)?;
    let mut mean = vec![0.0; dim];
    let mut variance = vec![0.0; dim];
    let mut floored = Vec::new();
    for k in 0..dim {
        let m = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        let v = rows.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / (n - 1.0);
        mean[k] = m;
        variance[k] = if v > 0.0 {
            tau * v
        } else {
            floored.push(k);
            VARIANCE_FLOOR
        };
    }
    ensure!(
        floored.len() < dim,
        Parameter,
        "degenerate prior: all fits are identical"
    );
    Ok(PriorModel {
        mean,
        variance,
        inflation: tau,
        floored,
    })
}
