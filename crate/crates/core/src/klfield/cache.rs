use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use super::{build_kl_basis, CovarianceSpec, KlBasis};
use crate::error::{ensure, Result};

/// Bases keyed by correlation length rounded to a fixed quantum.
///
/// A lookup for `lambda` returns the basis built at the nearest multiple of
/// the quantum. Safe to share between chains.
#[derive(Debug)]
pub struct BasisCache {
    template: CovarianceSpec,
    n_modes: usize,
    quantum: f64,
    bases: RwLock<HashMap<i64, Arc<KlBasis>>>,
}

impl BasisCache {
    pub fn new(template: CovarianceSpec, n_modes: usize, quantum: f64) -> Result<Self> {
        template.validate()?;
        ensure!(
            quantum.is_finite() && quantum > 0.0,
            Parameter,
            "lambda quantum must be positive"
        );
        ensure!(
            2 * n_modes <= template.grid_n,
            Parameter,
            "grid too coarse for {n_modes} modes"
        );
        Ok(Self {
            template,
            n_modes,
            quantum,
            bases: RwLock::new(HashMap::new()),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn quantum(&self) -> f64 {
        self.quantum
    }

    pub fn template(&self) -> &CovarianceSpec {
        &self.template
    }

    /// Correlation length the basis for `lambda` is actually built with.
    pub fn quantize(&self, lambda: f64) -> f64 {
        self.key(lambda) as f64 * self.quantum
    }

    fn key(&self, lambda: f64) -> i64 {
        (lambda / self.quantum).round() as i64
    }

    pub fn get(&self, lambda: f64) -> Result<Arc<KlBasis>> {
        ensure!(
            lambda.is_finite() && lambda > 0.0,
            Parameter,
            "correlation length must be positive, got {lambda}"
        );
        let key = self.key(lambda);
        ensure!(
            key > 0,
            Parameter,
            "correlation length {lambda} rounds to zero"
        );
        if let Some(b) = self.bases.read().expect("basis cache poisoned").get(&key) {
            return Ok(Arc::clone(b));
        }
        // Built outside the lock; a concurrent miss on the same key just
        // produces an identical basis.
        let cov = self.template.with_lambda(key as f64 * self.quantum);
        let basis = Arc::new(
            build_kl_basis(&cov, self.n_modes)?.with_lambda_tolerance(0.5 * self.quantum + 1e-12),
        );
        let mut map = self.bases.write().expect("basis cache poisoned");
        Ok(Arc::clone(map.entry(key).or_insert(basis)))
    }

    pub fn len(&self) -> usize {
        self.bases.read().expect("basis cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
