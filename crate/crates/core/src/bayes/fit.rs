use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::klfield::{BasisCache, DecaySpec, KlBasis, SectionGrid, WrinkleField, WrinkleParams};
use crate::mfia::MisalignmentSamples;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Correlation lengths scanned before the simplex search, mm.
    pub lambda_range: [f64; 2],
    pub lambda_scan_step: f64,
    /// Singular values below `rcond * s_max` are treated as zero when
    /// solving for amplitudes.
    pub rcond: f64,
    pub gauss_newton_iters: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda_range: [4.0, 30.0],
            lambda_scan_step: 1.0,
            rcond: 1e-3,
            gauss_newton_iters: 8,
        }
    }
}

/// Best fit of a wrinkle to one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFit {
    pub params: WrinkleParams,
    /// Sum of squared angle residuals, rad².
    pub sse: f64,
    pub rms: f64,
    /// Objective evaluations in the lattice refinement.
    pub evaluations: usize,
}

/// Design matrix of `tan(phi)` against amplitudes at fixed `lambda`:
/// `B[j, i] = d(g1 f_i)/dx1 (x1_j) g3(x3_j)`.
fn design(obs: &MisalignmentSamples, basis: &KlBasis, decay: &DecaySpec) -> Result<DMatrix<f64>> {
    let n = basis.n_modes();
    let mut b = DMatrix::zeros(obs.len(), n);
    let mut unit = vec![0.0; n];
    for i in 0..n {
        unit.iter_mut().for_each(|u| *u = 0.0);
        unit[i] = 1.0;
        let xi = WrinkleParams::new(unit.clone(), basis.lambda());
        let field = WrinkleField::new(&xi, basis, decay)?;
        for (j, p) in obs.points.iter().enumerate() {
            b[(j, i)] = field.arc_factor(p.x1_mm).1 * decay.value(1, p.x3_mm);
        }
    }
    Ok(b)
}

fn truncated_solve(a: &DMatrix<f64>, y: &DVector<f64>, rcond: f64) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(DVector::zeros(a.ncols()));
    }
    svd.solve(y, rcond * smax)
        .map_err(|e| Error::Numerical(e.to_string()))
}

/// Amplitudes minimising the angle residual at fixed basis, with the
/// residual sum of squares.
fn fit_amplitudes(
    b: &DMatrix<f64>,
    phi: &DVector<f64>,
    cfg: &FitConfig,
) -> Result<(DVector<f64>, f64)> {
    let sse = |a: &DVector<f64>| -> f64 {
        (b * a)
            .iter()
            .zip(phi.iter())
            .map(|(t, p)| (t.atan() - p).powi(2))
            .sum()
    };
    let tan_phi = phi.map(f64::tan);
    let mut a = truncated_solve(b, &tan_phi, cfg.rcond)?;
    let mut best = sse(&a);
    for _ in 0..cfg.gauss_newton_iters {
        let t = b * &a;
        let r = DVector::from_iterator(t.len(), t.iter().zip(phi.iter()).map(|(t, p)| t.atan() - p));
        let mut j = b.clone();
        for (row, tv) in t.iter().enumerate() {
            let w = 1.0 / (1.0 + tv * tv);
            j.row_mut(row).scale_mut(w);
        }
        let step = truncated_solve(&j, &r, cfg.rcond)?;
        let trial = &a - &step;
        let s = sse(&trial);
        if s < best {
            let gain = best - s;
            a = trial;
            best = s;
            if gain <= 1e-14 * (1.0 + best) {
                break;
            }
        } else {
            break;
        }
    }
    Ok((a, best))
}

/// Least-squares wrinkle for one observation: the correlation length is
/// searched by a coarse scan refined on the basis cache lattice, and amplitudes are
/// solved exactly for each candidate length.
pub fn fit_map_observation(
    obs: &MisalignmentSamples,
    cache: &BasisCache,
    decay: &DecaySpec,
    grid: &SectionGrid,
    cfg: &FitConfig,
) -> Result<MapFit> {
    let n_modes = cache.n_modes();
    ensure!(
        obs.len() > n_modes,
        Parameter,
        "{} points cannot fit {} parameters",
        obs.len(),
        n_modes + 1
    );
    ensure!(
        cfg.lambda_range[0] > 0.0 && cfg.lambda_range[0] < cfg.lambda_range[1] && cfg.lambda_scan_step > 0.0,
        Parameter,
        "invalid correlation length search range"
    );
    let phi = DVector::from_iterator(obs.len(), obs.points.iter().map(|p| p.phi_rad));

    let solve_at = |lambda: f64| -> Result<(WrinkleParams, f64)> {
        let basis = cache.get(lambda)?;
        let b = design(obs, &basis, decay)?;
        let (a, sse) = fit_amplitudes(&b, &phi, cfg)?;
        Ok((WrinkleParams::new(a.iter().copied().collect(), basis.lambda()), sse))
    };
    let objective = |lambda: f64| -> f64 {
        if lambda < cfg.lambda_range[0] || lambda > cfg.lambda_range[1] {
            return f64::INFINITY;
        }
        solve_at(lambda).map(|(_, s)| s).unwrap_or(f64::INFINITY)
    };

    let mut start = (cfg.lambda_range[0], f64::INFINITY);
    let mut lambda = cfg.lambda_range[0];
    while lambda <= cfg.lambda_range[1] + 1e-12 {
        let s = objective(lambda);
        if s < start.1 {
            start = (lambda, s);
        }
        lambda += cfg.lambda_scan_step;
    }
    ensure!(start.1.is_finite(), Numerical, "no correlation length gives a finite fit");

    // the basis is quantised, so the refinement is an exhaustive search of
    // the quantum lattice around the scan minimum
    let q = cache.quantum();
    let lo = ((start.0 - cfg.lambda_scan_step) / q).ceil() as i64;
    let hi = ((start.0 + cfg.lambda_scan_step) / q).floor() as i64;
    let mut best_lambda = start;
    let mut evaluations = 0;
    for k in lo..=hi {
        let s = objective(k as f64 * q);
        evaluations += 1;
        if s < best_lambda.1 {
            best_lambda = (k as f64 * q, s);
        }
    }
    let (params, sse) = solve_at(best_lambda.0)?;
    let best = Some(params.to_vec());
    let basis = cache.get(params.length_scale)?;
    if !WrinkleField::new(&params, &basis, decay)?.is_admissible(grid) {
        return Err(Error::Fit {
            reason: "best fit folds the laminate".into(),
            best,
        });
    }
    Ok(MapFit {
        rms: (sse / obs.len() as f64).sqrt(),
        params,
        sse,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::klfield::{CovarianceSpec, GeometrySpec, Point};
    use crate::mfia::MisalignmentSample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn setup() -> (GeometrySpec, BasisCache, DecaySpec, SectionGrid) {
        let geom = GeometrySpec::default();
        let cov = CovarianceSpec::new(0.1425, 12.9, geom.arc_length(), 128).unwrap();
        (
            geom,
            BasisCache::new(cov, 10, 0.05).unwrap(),
            geom.decay(4.8, 4, 1e-6).unwrap(),
            SectionGrid::for_geometry(&geom),
        )
    }

    fn observe(geom: &GeometrySpec, field: &WrinkleField, n: usize, noise: f64, seed: u64) -> MisalignmentSamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let pts = (0..n)
            .map(|_| {
                let x1 = rng.random_range(0.0..geom.arc_length());
                let x3 = rng.random_range(0.0..geom.thickness());
                let e = if noise > 0.0 { eps.sample(&mut rng) } else { 0.0 };
                MisalignmentSample {
                    x1_mm: x1,
                    x3_mm: x3,
                    phi_rad: field.slope_x1(Point::new(x1, x3)).unwrap().atan() + e,
                }
            })
            .collect();
        MisalignmentSamples::new("t", pts).unwrap()
    }

    #[test]
    fn zero_angles_fit_zero_wrinkle() {
        let (geom, cache, decay, grid) = setup();
        let pts = (0..60)
            .map(|k| MisalignmentSample {
                x1_mm: 0.5 * k as f64,
                x3_mm: 4.0 + 0.01 * k as f64,
                phi_rad: 0.0,
            })
            .collect();
        let obs = MisalignmentSamples::new("z", pts).unwrap();
        let fit = fit_map_observation(&obs, &cache, &decay, &grid, &FitConfig::default()).unwrap();
        assert!(fit.params.amplitudes.iter().all(|a| *a == 0.0));
        assert_eq!(fit.sse, 0.0);
        let _ = geom;
    }

    #[test]
    fn recovers_noiseless_wrinkle() {
        let (geom, cache, decay, grid) = setup();
        let truth = WrinkleParams::new(vec![2.0, -3.0, 1.5, 2.5, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 12.9);
        let basis = cache.get(12.9).unwrap();
        let field = WrinkleField::new(&truth, &basis, &decay).unwrap();
        let obs = observe(&geom, &field, 400, 0.0, 2);
        // exact data needs no regularising truncation
        let cfg = FitConfig {
            rcond: 1e-10,
            ..FitConfig::default()
        };
        let fit = fit_map_observation(&obs, &cache, &decay, &grid, &cfg).unwrap();
        assert!((fit.params.length_scale - 12.9).abs() / 12.9 < 0.02, "{fit:?}");
        let err: f64 = fit
            .params
            .amplitudes
            .iter()
            .zip(&truth.amplitudes)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = truth.amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / norm < 1e-3, "relative amplitude error {}", err / norm);
    }

    #[test]
    fn noisy_fit_residual_matches_noise() {
        let (geom, cache, decay, grid) = setup();
        let truth = WrinkleParams::new(vec![2.0, -3.0, 1.5, 2.5, -1.0, 0.5, 0.0, 0.0, 0.0, 0.0], 12.9);
        let basis = cache.get(12.9).unwrap();
        let field = WrinkleField::new(&truth, &basis, &decay).unwrap();
        let obs = observe(&geom, &field, 600, 0.01, 3);
        let fit = fit_map_observation(&obs, &cache, &decay, &grid, &FitConfig::default()).unwrap();
        assert!(fit.rms <= 0.012, "rms {}", fit.rms);
    }

    #[test]
    fn fit_of_one_observation_is_its_closest() {
        use crate::bayes::{data_misfit, MisfitNorm, NoiseModel, ObservationSet};
        let (geom, cache, decay, grid) = setup();
        let obs: Vec<_> = (0..4)
            .map(|k| {
                let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                let mut a = vec![0.0; 10];
                a[k] = 3.0 * s;
                a[(k + 2) % 10] = 1.5;
                let truth = WrinkleParams::new(a, 10.0 + 2.0 * k as f64);
                let basis = cache.get(truth.length_scale).unwrap();
                let field = WrinkleField::new(&truth, &basis, &decay).unwrap();
                observe(&geom, &field, 300, 0.005, 20 + k as u64)
            })
            .collect();
        let data = ObservationSet::new(obs).unwrap();
        let fit = fit_map_observation(data.get(2), &cache, &decay, &grid, &FitConfig::default()).unwrap();
        let basis = cache.get(fit.params.length_scale).unwrap();
        let noise = NoiseModel::new(0.01).unwrap();
        let (_, at) = data_misfit(&fit.params, &data, &noise, &basis, &decay, MisfitNorm::Squared).unwrap();
        assert_eq!(at, 2);
    }

    #[test]
    fn too_few_points_rejected() {
        let (_, cache, decay, grid) = setup();
        let obs = MisalignmentSamples::new(
            "few",
            vec![MisalignmentSample { x1_mm: 1.0, x3_mm: 1.0, phi_rad: 0.0 }; 5],
        )
        .unwrap();
        assert!(fit_map_observation(&obs, &cache, &decay, &grid, &FitConfig::default()).is_err());
    }
}
