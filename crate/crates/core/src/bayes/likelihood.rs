use serde::{Deserialize, Serialize};

use super::prior::{student_t_factor, PriorModel};
use crate::error::{ensure, Result};
use crate::klfield::{BasisCache, DecaySpec, KlBasis, Point, SectionGrid, WrinkleField, WrinkleParams};
use crate::mfia::MisalignmentSamples;

/// Misalignment data from `n` independently observed wrinkles.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    observations: Vec<MisalignmentSamples>,
}

impl ObservationSet {
    pub fn new(observations: Vec<MisalignmentSamples>) -> Result<Self> {
        ensure!(!observations.is_empty(), Data, "need at least one observation");
        for (i, o) in observations.iter().enumerate() {
            ensure!(!o.is_empty(), Data, "observation {i} ({}) has no points", o.source);
            o.validate()?;
        }
        Ok(Self { observations })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn get(&self, i: usize) -> &MisalignmentSamples {
        &self.observations[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &MisalignmentSamples> {
        self.observations.iter()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.observations.iter().map(|o| o.source.as_str()).collect()
    }

    /// Fewest points in any observation.
    pub fn min_points(&self) -> usize {
        self.observations.iter().map(|o| o.len()).min().unwrap_or(0)
    }
}

/// Measurement noise `Sigma = scale * I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub scale: f64,
}

/// Angular accuracy the extraction is trusted to, radians.
pub const BASE_ACCURACY: f64 = 0.044;

impl NoiseModel {
    pub fn new(scale: f64) -> Result<Self> {
        ensure!(
            scale.is_finite() && scale > 0.0,
            Parameter,
            "noise scale must be positive"
        );
        Ok(Self { scale })
    }

    /// `tau * base`, with `tau` the Student-t factor for `n_points`
    /// measurements at `confidence`.
    pub fn student_scaled(base: f64, n_points: usize, confidence: f64) -> Result<Self> {
        Self::new(student_t_factor(n_points, confidence)? * base)
    }
}

/// How residual norms enter the misfit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisfitNorm {
    /// `|r|^2 / 2`, a Gaussian likelihood.
    #[default]
    Squared,
    /// `|r| / 2`.
    AsWritten,
}

/// Predicted misalignment `atan(dW/dx1)` at every point of `obs`.
pub fn forward_model(field: &WrinkleField<'_>, obs: &MisalignmentSamples) -> Result<Vec<f64>> {
    obs.points
        .iter()
        .map(|p| Ok(field.slope_x1(Point::new(p.x1_mm, p.x3_mm))?.atan()))
        .collect()
}

fn norm_misfit(sum_sq: f64, noise: &NoiseModel, norm: MisfitNorm) -> f64 {
    let weighted = sum_sq / noise.scale;
    match norm {
        MisfitNorm::Squared => 0.5 * weighted,
        MisfitNorm::AsWritten => 0.5 * weighted.sqrt(),
    }
}

/// Noise-weighted residual size between predictions and one observation.
pub fn misfit_from_predictions(
    predicted: &[f64],
    obs: &MisalignmentSamples,
    noise: &NoiseModel,
    norm: MisfitNorm,
) -> Result<f64> {
    ensure!(
        predicted.len() == obs.len(),
        Data,
        "{} predictions for {} measured angles",
        predicted.len(),
        obs.len()
    );
    let sum_sq: f64 = predicted
        .iter()
        .zip(&obs.points)
        .map(|(f, p)| (f - p.phi_rad).powi(2))
        .sum();
    Ok(norm_misfit(sum_sq, noise, norm))
}

/// Misfit of `xi` against one observation.
pub fn misfit(
    xi: &WrinkleParams,
    obs: &MisalignmentSamples,
    noise: &NoiseModel,
    basis: &KlBasis,
    decay: &DecaySpec,
    norm: MisfitNorm,
) -> Result<f64> {
    let field = WrinkleField::new(xi, basis, decay)?;
    misfit_from_predictions(&forward_model(&field, obs)?, obs, noise, norm)
}

/// Smallest misfit over the observations, with the index attaining it.
pub fn data_misfit(
    xi: &WrinkleParams,
    data: &ObservationSet,
    noise: &NoiseModel,
    basis: &KlBasis,
    decay: &DecaySpec,
    norm: MisfitNorm,
) -> Result<(f64, usize)> {
    let field = WrinkleField::new(xi, basis, decay)?;
    let mut best = (f64::INFINITY, 0);
    for (i, obs) in data.iter().enumerate() {
        let d = misfit_from_predictions(&forward_model(&field, obs)?, obs, noise, norm)?;
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best)
}

/// Unnormalised log posterior `-Delta(xi) + log prior(xi)`; `-inf` when
/// the wrinkle folds the laminate or the correlation length is not
/// positive.
#[allow(clippy::too_many_arguments)]
pub fn log_posterior(
    xi: &WrinkleParams,
    data: &ObservationSet,
    prior: &PriorModel,
    noise: &NoiseModel,
    basis: &KlBasis,
    decay: &DecaySpec,
    grid: &SectionGrid,
    norm: MisfitNorm,
) -> Result<f64> {
    if !(xi.length_scale > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let field = WrinkleField::new(xi, basis, decay)?;
    if !field.is_admissible(grid) {
        return Ok(f64::NEG_INFINITY);
    }
    let (delta, _) = data_misfit(xi, data, noise, basis, decay, norm)?;
    Ok(-delta + prior.log_density(&xi.to_vec()))
}

/// Density an MCMC chain can target: a Gaussian prior times a likelihood.
pub trait Target: Sync {
    fn prior(&self) -> &PriorModel;

    /// Log likelihood, `-inf` for inadmissible parameters.
    fn log_likelihood(&self, xi: &[f64]) -> f64;

    fn dim(&self) -> usize {
        self.prior().dim()
    }

    fn log_posterior(&self, xi: &[f64]) -> f64 {
        self.log_likelihood(xi) + self.prior().log_density(xi)
    }
}

/// Angles of one observation with its fixed depth envelope values.
#[derive(Debug, Clone)]
struct Prepared {
    x1: Vec<f64>,
    g3: Vec<f64>,
    phi: Vec<f64>,
}

/// Wrinkle posterior given extracted misalignment data. Bases for each
/// proposed correlation length come from a shared cache.
pub struct WrinklePosterior<'a> {
    prior: PriorModel,
    noise: NoiseModel,
    norm: MisfitNorm,
    cache: &'a BasisCache,
    decay: &'a DecaySpec,
    grid: SectionGrid,
    data: Vec<Prepared>,
}

impl<'a> WrinklePosterior<'a> {
    pub fn new(
        data: &ObservationSet,
        prior: PriorModel,
        noise: NoiseModel,
        norm: MisfitNorm,
        cache: &'a BasisCache,
        decay: &'a DecaySpec,
        grid: SectionGrid,
    ) -> Result<Self> {
        prior.validate()?;
        ensure!(
            prior.dim() == cache.n_modes() + 1,
            Data,
            "prior has {} components, wrinkles have {}",
            prior.dim(),
            cache.n_modes() + 1
        );
        let [l, t] = decay.extent;
        let mut prepared = Vec::with_capacity(data.len());
        for obs in data.iter() {
            for p in &obs.points {
                ensure!(
                    (0.0..=l).contains(&p.x1_mm) && (0.0..=t).contains(&p.x3_mm),
                    Domain,
                    "observation point ({}, {}) outside the section",
                    p.x1_mm,
                    p.x3_mm
                );
            }
            prepared.push(Prepared {
                x1: obs.points.iter().map(|p| p.x1_mm).collect(),
                g3: obs.points.iter().map(|p| decay.value(1, p.x3_mm)).collect(),
                phi: obs.points.iter().map(|p| p.phi_rad).collect(),
            });
        }
        Ok(Self {
            prior,
            noise,
            norm,
            cache,
            decay,
            grid,
            data: prepared,
        })
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn norm(&self) -> MisfitNorm {
        self.norm
    }

    /// Per-observation misfits, or `None` when `xi` is inadmissible.
    pub fn misfits(&self, xi: &[f64]) -> Option<Vec<f64>> {
        let params = WrinkleParams::from_slice(xi).ok()?;
        if !(params.length_scale > 0.0) || params.amplitudes.len() != self.cache.n_modes() {
            return None;
        }
        let basis = self.cache.get(params.length_scale).ok()?;
        let field = WrinkleField::new(&params, &basis, self.decay).ok()?;
        if !field.is_admissible(&self.grid) {
            return None;
        }
        Some(
            self.data
                .iter()
                .map(|d| {
                    let sum_sq: f64 = d
                        .x1
                        .iter()
                        .zip(&d.g3)
                        .zip(&d.phi)
                        .map(|((&x1, &g3), &phi)| {
                            let f = (field.arc_factor(x1).1 * g3).atan();
                            (f - phi).powi(2)
                        })
                        .sum();
                    norm_misfit(sum_sq, &self.noise, self.norm)
                })
                .collect(),
        )
    }
}

impl Target for WrinklePosterior<'_> {
    fn prior(&self) -> &PriorModel {
        &self.prior
    }

    fn log_likelihood(&self, xi: &[f64]) -> f64 {
        match self.misfits(xi) {
            Some(m) => -m.into_iter().fold(f64::INFINITY, f64::min),
            None => f64::NEG_INFINITY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::klfield::{CovarianceSpec, GeometrySpec};
    use crate::mfia::MisalignmentSample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fx {
        cache: BasisCache,
        decay: DecaySpec,
        geom: GeometrySpec,
    }

    fn fx() -> Fx {
        let geom = GeometrySpec::default();
        let cov = CovarianceSpec::new(0.1425, 12.9, geom.arc_length(), 128).unwrap();
        Fx {
            cache: BasisCache::new(cov, 8, 0.05).unwrap(),
            decay: geom.decay(4.8, 4, 1e-6).unwrap(),
            geom,
        }
    }

    fn observe(f: &Fx, xi: &WrinkleParams, n: usize, seed: u64) -> MisalignmentSamples {
        let basis = f.cache.get(xi.length_scale).unwrap();
        let field = WrinkleField::new(xi, &basis, &f.decay).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                let x1 = rng.random_range(0.0..f.geom.arc_length());
                let x3 = rng.random_range(3.0..6.5);
                MisalignmentSample {
                    x1_mm: x1,
                    x3_mm: x3,
                    phi_rad: field.slope_x1(Point::new(x1, x3)).unwrap().atan(),
                }
            })
            .collect();
        MisalignmentSamples::new(format!("obs{seed}"), pts).unwrap()
    }

    fn xi(k: f64) -> WrinkleParams {
        WrinkleParams::new((0..8).map(|i| k * (i as f64 - 3.0) / 2.0).collect(), 12.9)
    }

    #[test]
    fn misfit_closed_forms() {
        let f = fx();
        let basis = f.cache.get(12.9).unwrap();
        let truth = xi(1.0);
        let obs = observe(&f, &truth, 50, 1);
        let noise = NoiseModel::new(0.3).unwrap();
        assert_eq!(misfit(&truth, &obs, &noise, &basis, &f.decay, MisfitNorm::Squared).unwrap(), 0.0);

        let one = MisalignmentSamples::new("p", vec![MisalignmentSample { x1_mm: 3.0, x3_mm: 4.0, phi_rad: 0.05 }]).unwrap();
        let zero = WrinkleParams::zeros(8, 12.9);
        let c = 0.2f64;
        let noise = NoiseModel::new(c * c).unwrap();
        let d = misfit(&zero, &one, &noise, &basis, &f.decay, MisfitNorm::Squared).unwrap();
        assert!((d - 0.05f64.powi(2) / (2.0 * c * c)).abs() < 1e-15);
        let d = misfit(&zero, &one, &noise, &basis, &f.decay, MisfitNorm::AsWritten).unwrap();
        assert!((d - 0.05 / (2.0 * c)).abs() < 1e-15);
    }

    #[test]
    fn mismatched_lengths_are_data_errors() {
        let obs = MisalignmentSamples::new("p", vec![MisalignmentSample { x1_mm: 1.0, x3_mm: 1.0, phi_rad: 0.0 }]).unwrap();
        let noise = NoiseModel::new(1.0).unwrap();
        assert!(matches!(
            misfit_from_predictions(&[0.0, 1.0], &obs, &noise, MisfitNorm::Squared),
            Err(crate::Error::Data(_))
        ));
    }

    #[test]
    fn prepared_and_direct_misfits_agree() {
        let f = fx();
        let obs: Vec<_> = (0..3).map(|k| observe(&f, &xi(0.5 * k as f64 + 0.5), 80, k)).collect();
        let data = ObservationSet::new(obs).unwrap();
        let noise = NoiseModel::new(0.05).unwrap();
        let post = WrinklePosterior::new(
            &data,
            PriorModel::standard(9),
            noise,
            MisfitNorm::Squared,
            &f.cache,
            &f.decay,
            SectionGrid::for_geometry(&f.geom),
        )
        .unwrap();
        let probe = xi(0.8);
        let basis = f.cache.get(12.9).unwrap();
        let fast = post.misfits(&probe.to_vec()).unwrap();
        for (i, o) in data.iter().enumerate() {
            let slow = misfit(&probe, o, &noise, &basis, &f.decay, MisfitNorm::Squared).unwrap();
            assert!((fast[i] - slow).abs() <= 1e-12 * slow.max(1.0));
        }
        let (delta, at) = data_misfit(&probe, &data, &noise, &basis, &f.decay, MisfitNorm::Squared).unwrap();
        assert!(fast.iter().all(|&d| delta <= d));
        assert_eq!(at, 1);
        assert!((post.log_likelihood(&probe.to_vec()) + delta).abs() < 1e-9 * delta);

        let mut reordered: Vec<_> = data.iter().cloned().collect();
        reordered.reverse();
        let rev = ObservationSet::new(reordered).unwrap();
        let (d2, _) = data_misfit(&probe, &rev, &noise, &basis, &f.decay, MisfitNorm::Squared).unwrap();
        assert_eq!(delta, d2);
    }

    #[test]
    fn posterior_rejects_folds_and_bad_lengths() {
        let f = fx();
        let data = ObservationSet::new(vec![observe(&f, &xi(1.0), 20, 3)]).unwrap();
        let noise = NoiseModel::new(0.1).unwrap();
        let post = WrinklePosterior::new(
            &data,
            PriorModel::standard(9),
            noise,
            MisfitNorm::Squared,
            &f.cache,
            &f.decay,
            SectionGrid::for_geometry(&f.geom),
        )
        .unwrap();
        let mut bad = xi(1.0).to_vec();
        bad[8] = -1.0;
        assert_eq!(post.log_likelihood(&bad), f64::NEG_INFINITY);
        let folded = xi(500.0).to_vec();
        assert_eq!(post.log_likelihood(&folded), f64::NEG_INFINITY);

        let basis = f.cache.get(12.9).unwrap();
        let grid = SectionGrid::for_geometry(&f.geom);
        let prior = PriorModel::new(xi(1.0).to_vec(), vec![1.0; 9]).unwrap();
        let lp = log_posterior(&xi(1.0), &data, &prior, &noise, &basis, &f.decay, &grid, MisfitNorm::Squared).unwrap();
        assert_eq!(lp, 0.0);
        let lp = log_posterior(&xi(500.0), &data, &prior, &noise, &basis, &f.decay, &grid, MisfitNorm::Squared).unwrap();
        assert_eq!(lp, f64::NEG_INFINITY);
    }

    #[test]
    fn noise_scale_uses_student_factor() {
        let n = NoiseModel::student_scaled(BASE_ACCURACY, 4, 0.95).unwrap();
        assert!((n.scale - 3.182446 * 0.044).abs() < 1e-6);
        assert!(NoiseModel::new(0.0).is_err());
    }
}
