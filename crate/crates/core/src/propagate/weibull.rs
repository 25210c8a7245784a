use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Two-parameter Weibull law `P(M) = 1 - exp(-(M / M_S)^M_W)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullFit {
    /// Shape, the Weibull modulus `M_W`.
    pub modulus: f64,
    /// Scale `M_S`, in the units of the data.
    pub scale: f64,
    pub n: usize,
    pub log_likelihood: f64,
    pub iterations: usize,
}

impl WeibullFit {
    pub fn cdf(&self, m: f64) -> f64 {
        if m <= 0.0 {
            return 0.0;
        }
        -(-(m / self.scale).powf(self.modulus)).exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub value: f64,
    /// Plotting position `(i - 1/2) / n`.
    pub empirical: f64,
    pub fitted: f64,
}

/// Profile score `sum x^k ln x / sum x^k - 1/k - mean(ln x)` and its
/// derivative in `k`, with powers computed relative to the largest sample.
fn profile(ln_x: &[f64], max_ln: f64, k: f64) -> (f64, f64) {
    let mean_ln = ln_x.iter().sum::<f64>() / ln_x.len() as f64;
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &l in ln_x {
        let w = (k * (l - max_ln)).exp();
        s0 += w;
        s1 += w * l;
        s2 += w * l * l;
    }
    let m1 = s1 / s0;
    let g = m1 - 1.0 / k - mean_ln;
    let dg = s2 / s0 - m1 * m1 + 1.0 / (k * k);
    (g, dg)
}

/// Maximum-likelihood Weibull fit. The modulus solves the profile score
/// equation by safeguarded Newton; the scale then follows in closed form.
pub fn weibull_fit(strengths: &[f64]) -> Result<WeibullFit> {
    let n = strengths.len();
    ensure!(n >= 10, Parameter, "need at least 10 samples for a Weibull fit, got {n}");
    ensure!(
        strengths.iter().all(|&x| x > 0.0 && x.is_finite()),
        Parameter,
        "Weibull data must be positive and finite"
    );
    let mean = strengths.iter().sum::<f64>() / n as f64;
    // work in units of the mean so the fit is exactly scale equivariant
    let ln_x: Vec<f64> = strengths.iter().map(|x| (x / mean).ln()).collect();
    let max_ln = ln_x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_ln = ln_x.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_ln = ln_x.iter().sum::<f64>() / n as f64;
    let sd = (ln_x.iter().map(|l| (l - mean_ln).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if max_ln - min_ln <= 1e-14 || sd == 0.0 {
        return Err(Error::Fit {
            reason: "all samples are equal".into(),
            best: None,
        });
    }

    // g is increasing in k; bracket the root then refine
    let mut k = std::f64::consts::PI / (6f64.sqrt() * sd);
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 200 {
        iterations += 1;
        let (g, dg) = profile(&ln_x, max_ln, k);
        if g < 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let mut next = k - g / dg;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * k };
        }
        if (next - k).abs() <= 1e-13 * k {
            k = next;
            converged = true;
            break;
        }
        k = next;
    }
    if !converged {
        return Err(Error::Fit {
            reason: "Weibull modulus iteration did not converge".into(),
            best: Some(vec![k]),
        });
    }
    let s0: f64 = ln_x.iter().map(|l| (k * (l - max_ln)).exp()).sum();
    let ln_scale = max_ln + (s0 / n as f64).ln() / k;
    let scale = mean * ln_scale.exp();
    let log_likelihood = ln_x
        .iter()
        .map(|&l| {
            let z = k * (l - ln_scale);
            k.ln() + z - l - z.exp() - mean.ln()
        })
        .sum();
    Ok(WeibullFit {
        modulus: k,
        scale,
        n,
        log_likelihood,
        iterations,
    })
}

/// Sorted samples with plotting positions and the fitted CDF.
pub fn cdf_points(strengths: &[f64], fit: Option<&WeibullFit>) -> Vec<CdfPoint> {
    let mut sorted = strengths.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| CdfPoint {
            value: v,
            empirical: (i as f64 + 0.5) / n,
            fitted: fit.map_or(f64::NAN, |f| f.cdf(v)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Weibull};

    fn draws(shape: f64, scale: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Weibull::new(scale, shape).unwrap();
        (0..n).map(|_| w.sample(&mut rng)).collect()
    }

    #[test]
    fn recovers_parameters() {
        let x = draws(62.9, 8.8, 200, 1);
        let f = weibull_fit(&x).unwrap();
        assert!((f.modulus / 62.9 - 1.0).abs() < 0.15, "{f:?}");
        assert!((f.scale / 8.8 - 1.0).abs() < 0.02);
        assert!((f.cdf(f.scale) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn scale_equivariance() {
        let x = draws(5.0, 2.0, 100, 2);
        let a = weibull_fit(&x).unwrap();
        let b = weibull_fit(&x.iter().map(|v| 3.7 * v).collect::<Vec<_>>()).unwrap();
        assert!((a.modulus / b.modulus - 1.0).abs() < 1e-6);
        assert!((3.7 * a.scale / b.scale - 1.0).abs() < 1e-6);
    }

    #[test]
    fn likelihood_is_maximal() {
        let x = draws(3.0, 1.0, 300, 3);
        let f = weibull_fit(&x).unwrap();
        let ll = |k: f64, s: f64| -> f64 {
            x.iter()
                .map(|&v| (k / s).ln() + (k - 1.0) * (v / s).ln() - (v / s).powf(k))
                .sum()
        };
        assert!((ll(f.modulus, f.scale) - f.log_likelihood).abs() < 1e-8 * f.log_likelihood.abs());
        for (dk, ds) in [(0.01, 0.0), (-0.01, 0.0), (0.0, 0.001), (0.0, -0.001)] {
            assert!(ll(f.modulus + dk, f.scale + ds) < f.log_likelihood);
        }
    }

    #[test]
    fn median_sanity_envelope() {
        for seed in 0..10 {
            let x = draws(10.0 + 10.0 * seed as f64, 8.0, 60, 10 + seed);
            let f = weibull_fit(&x).unwrap();
            let mut s = x.clone();
            s.sort_by(f64::total_cmp);
            let med = 0.5 * (s[29] + s[30]);
            assert!((0.35..=0.65).contains(&f.cdf(med)));
        }
    }

    #[test]
    fn degenerate_data() {
        assert!(matches!(weibull_fit(&[8.93; 20]), Err(Error::Fit { .. })));
        assert!(weibull_fit(&[1.0; 5]).is_err());
        let mut x = draws(5.0, 1.0, 20, 4);
        x[3] = -1.0;
        assert!(weibull_fit(&x).is_err());
    }

    #[test]
    fn cdf_points_are_sorted() {
        let x = draws(5.0, 1.0, 20, 5);
        let f = weibull_fit(&x).unwrap();
        let p = cdf_points(&x, Some(&f));
        assert!(p.windows(2).all(|w| w[0].value <= w[1].value && w[0].fitted <= w[1].fitted));
        assert_eq!(p[0].empirical, 0.025);
    }
}
