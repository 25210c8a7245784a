use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Pristine corner-bend strength of the reference coupon, kN·mm/mm.
pub const PRISTINE_STRENGTH: f64 = 8.93;

/// Floor applied to `ln(M_star / M_c)` before taking logarithms.
pub const RESIDUAL_FLOOR: f64 = 1e-9;

/// Quantile of the positive residuals that the lower bound passes through.
pub const BOUND_QUANTILE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateBound {
    pub q: f64,
    pub lambda_q: f64,
}

/// Strength knockdown as a function of the largest wrinkle slope,
/// `M_c = M_star exp(-slope^q / lambda_q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub m_star: f64,
    pub q: f64,
    pub lambda_q: f64,
    /// Lower confidence curve, when one was fitted.
    pub lower: Option<SurrogateBound>,
}

impl Default for SurrogateModel {
    fn default() -> Self {
        Self {
            m_star: PRISTINE_STRENGTH,
            q: 2.867,
            lambda_q: 4.212,
            lower: Some(SurrogateBound { q: 2.587, lambda_q: 3.834 }),
        }
    }
}

impl SurrogateModel {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        ensure!(
            ok(self.m_star) && ok(self.q) && ok(self.lambda_q),
            Parameter,
            "surrogate parameters must be positive: {self:?}"
        );
        if let Some(b) = self.lower {
            ensure!(ok(b.q) && ok(b.lambda_q), Parameter, "bound parameters must be positive: {b:?}");
        }
        Ok(())
    }

    pub fn strength(&self, slope: f64) -> Result<f64> {
        surrogate_strength(slope, self)
    }

    /// Strength on the lower confidence curve.
    pub fn lower_strength(&self, slope: f64) -> Result<Option<f64>> {
        ensure!(slope >= 0.0, Parameter, "slope must be non-negative, got {slope}");
        Ok(self
            .lower
            .map(|b| self.m_star * (-slope.powf(b.q) / b.lambda_q).exp()))
    }
}

pub fn surrogate_strength(slope: f64, model: &SurrogateModel) -> Result<f64> {
    ensure!(slope >= 0.0, Parameter, "slope must be non-negative, got {slope}");
    Ok(model.m_star * (-slope.powf(model.q) / model.lambda_q).exp())
}

/// Fitted surrogate with goodness-of-fit figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateFit {
    pub model: SurrogateModel,
    pub n: usize,
    /// Pairs whose log knockdown was raised to the floor.
    pub floored: usize,
    /// Root-mean-square of `M_fit / M_c - 1`.
    pub rms_relative: f64,
    /// Offset in `ln(M_star / M_c)` that the lower curve passes through.
    pub bound_offset: f64,
}

/// Levenberg-Marquardt on `y_j - exp(q ln s_j - mu)` with `mu = ln lambda_q`.
fn power_law_lm(ln_s: &[f64], y: &[f64], mut q: f64, mut mu: f64) -> Result<(f64, f64)> {
    let sse = |q: f64, mu: f64| -> f64 {
        ln_s.iter()
            .zip(y)
            .map(|(l, y)| (y - (q * l - mu).exp()).powi(2))
            .sum()
    };
    let mut cost = sse(q, mu);
    let mut damping = 1e-3;
    for _ in 0..500 {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for (l, yv) in ln_s.iter().zip(y) {
            let p = (q * l - mu).exp();
            let g = Vector2::new(p * l, -p);
            jtj += g * g.transpose();
            jtr += g * (yv - p);
        }
        let mut improved = false;
        while damping < 1e12 {
            let mut a = jtj;
            a[(0, 0)] *= 1.0 + damping;
            a[(1, 1)] *= 1.0 + damping;
            let Some(step) = a.lu().solve(&jtr) else {
                damping *= 10.0;
                continue;
            };
            let (qn, mun) = (q + step[0], mu + step[1]);
            let c = sse(qn, mun);
            if c.is_finite() && c <= cost {
                let rel = (step[0].abs() / q.abs().max(1e-12)).max(step[1].abs() / mu.abs().max(1.0));
                q = qn;
                mu = mun;
                let gain = cost - c;
                cost = c;
                damping = (damping / 10.0).max(1e-15);
                improved = true;
                if rel < 1e-14 || gain <= 1e-30 {
                    return Ok((q, mu));
                }
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            return Ok((q, mu));
        }
    }
    Ok((q, mu))
}

/// Least-squares fit of `(q, lambda_q)` to `(slope, M_c)` pairs in the
/// log-knockdown variable `ln(M_star / M_c)`, plus a lower curve through
/// the 99th percentile of the positive residuals.
pub fn fit_surrogate(pairs: &[(f64, f64)], m_star: f64) -> Result<SurrogateFit> {
    ensure!(pairs.len() >= 5, Parameter, "need at least 5 pairs, got {}", pairs.len());
    ensure!(m_star > 0.0 && m_star.is_finite(), Parameter, "pristine strength must be positive");
    ensure!(
        pairs.iter().all(|&(s, m)| s > 0.0 && s.is_finite() && m > 0.0 && m.is_finite()),
        Parameter,
        "slopes and strengths must be positive and finite"
    );
    let ln_s: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let raw: Vec<f64> = pairs.iter().map(|&(_, m)| (m_star / m).ln()).collect();
    let floored = raw.iter().filter(|&&d| d < RESIDUAL_FLOOR).count();
    let y: Vec<f64> = raw.iter().map(|d| d.max(RESIDUAL_FLOOR)).collect();

    // log-log regression on the unfloored pairs gives the starting point
    let (xs, ys): (Vec<f64>, Vec<f64>) = ln_s
        .iter()
        .zip(&y)
        .zip(&raw)
        .filter(|(_, &r)| r >= RESIDUAL_FLOOR)
        .map(|((l, y), _)| (*l, y.ln()))
        .unzip();
    let degenerate = || Error::Fit {
        reason: "slopes do not vary enough to fit an exponent".into(),
        best: None,
    };
    if xs.len() < 2 {
        return Err(degenerate());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-12 * (1.0 + mx * mx) * n {
        return Err(degenerate());
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let q0 = sxy / sxx;
    let mu0 = q0 * mx - my;

    let (q, mu) = power_law_lm(&ln_s, &y, q0, mu0)?;
    ensure!(
        q > 0.0 && q.is_finite() && mu.is_finite(),
        Numerical,
        "fitted exponent {q} is not positive"
    );
    let fitted: Vec<f64> = ln_s.iter().map(|l| (q * l - mu).exp()).collect();

    let mut positive: Vec<f64> = y.iter().zip(&fitted).map(|(y, f)| y - f).filter(|r| *r > 0.0).collect();
    let offset = if positive.is_empty() {
        0.0
    } else {
        positive.sort_by(f64::total_cmp);
        let k = ((BOUND_QUANTILE * positive.len() as f64).ceil() as usize).clamp(1, positive.len()) - 1;
        positive[k]
    };
    let lower = if offset > 0.0 {
        let shifted: Vec<f64> = fitted.iter().map(|f| f + offset).collect();
        let (qb, mub) = power_law_lm(&ln_s, &shifted, q, mu)?;
        (qb > 0.0 && qb.is_finite() && mub.is_finite()).then(|| SurrogateBound {
            q: qb,
            lambda_q: mub.exp(),
        })
    } else {
        Some(SurrogateBound { q, lambda_q: mu.exp() })
    };

    let rms_relative = (pairs
        .iter()
        .zip(&fitted)
        .map(|(&(_, m), f)| (m_star * (-f).exp() / m - 1.0).powi(2))
        .sum::<f64>()
        / pairs.len() as f64)
        .sqrt();
    Ok(SurrogateFit {
        model: SurrogateModel {
            m_star,
            q,
            lambda_q: mu.exp(),
            lower,
        },
        n: pairs.len(),
        floored,
        rms_relative,
        bound_offset: offset,
    })
}
