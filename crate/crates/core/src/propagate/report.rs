use serde::{Deserialize, Serialize};

use super::montecarlo::StrengthDistribution;
use super::surrogate::{fit_surrogate, SurrogateFit};
use super::weibull::WeibullFit;
use crate::error::{ensure, Result};

/// Tail probabilities reported by default; `1/200` matches a 200-sample run.
pub const REPORT_QUANTILES: [f64; 4] = [0.005, 0.01, 0.05, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub probability: f64,
    pub mc: f64,
    /// `1 - M_c / M_star`.
    pub knockdown: f64,
    /// `M_c / M_star`.
    pub retained: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockdownReport {
    pub m_star: f64,
    pub n: usize,
    pub failed: usize,
    pub mean_mc: f64,
    pub mean_knockdown: f64,
    pub half_width_95: f64,
    pub worst_mc: f64,
    pub worst_knockdown: f64,
    pub worst_retained: f64,
    pub quantiles: Vec<QuantileRow>,
    pub weibull: Option<WeibullFit>,
    pub weibull_error: Option<String>,
    pub surrogate: Option<SurrogateFit>,
    pub surrogate_error: Option<String>,
}

/// Lower empirical quantile: the `ceil(p n)`-th smallest value.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

pub fn knockdown_report(dist: &StrengthDistribution, m_star: f64) -> Result<KnockdownReport> {
    ensure!(m_star > 0.0, Parameter, "pristine strength must be positive");
    let mut mc = dist.strengths();
    ensure!(!mc.is_empty(), Data, "distribution has no successful samples");
    mc.sort_by(f64::total_cmp);
    let kd = |m: f64| 1.0 - m / m_star;
    let worst = mc[0];
    let quantiles = REPORT_QUANTILES
        .iter()
        .map(|&p| {
            let m = empirical_quantile(&mc, p);
            QuantileRow {
                probability: p,
                mc: m,
                knockdown: kd(m),
                retained: m / m_star,
            }
        })
        .collect();
    let pairs = dist.slope_pairs();
    let (surrogate, surrogate_error) = if pairs.is_empty() {
        (None, Some("no slopes recorded".to_string()))
    } else {
        match fit_surrogate(&pairs, m_star) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    Ok(KnockdownReport {
        m_star,
        n: mc.len(),
        failed: dist.failed,
        mean_mc: dist.estimate.mean,
        mean_knockdown: kd(dist.estimate.mean),
        half_width_95: dist.estimate.half_width_95,
        worst_mc: worst,
        worst_knockdown: kd(worst),
        worst_retained: worst / m_star,
        quantiles,
        weibull: dist.weibull,
        weibull_error: dist.weibull_error.clone(),
        surrogate,
        surrogate_error,
    })
}
