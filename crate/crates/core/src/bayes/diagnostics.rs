use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Window constant of the automatic truncation rule.
pub const IACT_WINDOW: f64 = 5.0;

/// Integrated autocorrelation time `1 + 2 sum_k rho_k`, summed up to the
/// first lag `M` with `M >= 5 tau(M)`.
pub fn iact(series: &[f64]) -> Result<f64> {
    let n = series.len();
    ensure!(n >= 100, Diagnostic, "series of length {n} is too short for an IACT (need 100)");
    let mean = series.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0 = centred.iter().map(|x| x * x).sum::<f64>() / n as f64;
    ensure!(c0 > 0.0, Diagnostic, "series is constant");
    let mut tau = 1.0;
    for m in 1..n / 2 {
        let ck = centred[..n - m]
            .iter()
            .zip(&centred[m..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64;
        tau += 2.0 * ck / c0;
        if m as f64 >= IACT_WINDOW * tau {
            return Ok(tau.max(f64::MIN_POSITIVE));
        }
    }
    Err(crate::Error::Diagnostic(format!(
        "no self-consistent window below n/2 (tau ~ {tau:.1}); series too short"
    )))
}

/// `max_i Lambda_i`, ignoring components whose IACT could not be estimated.
/// Infinite when none could.
pub fn combined_iact(per_component: &[f64]) -> f64 {
    let finite: Vec<f64> = per_component.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.into_iter().fold(f64::MIN, f64::max)
    }
}

/// Between/within chain comparison for every component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// `sqrt((W + B/n) / W)`: one exactly when all chains share the same
    /// mean.
    pub psrf: Vec<f64>,
    /// Potential scale reduction with every chain split in halves.
    pub split_rhat: Vec<f64>,
    /// Largest `|chain mean - pooled mean| / pooled std`.
    pub mean_discrepancy: Vec<f64>,
    pub max_statistic: f64,
    pub threshold: f64,
    pub converged: bool,
}

pub const CONVERGENCE_THRESHOLD: f64 = 1.1;

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// `sqrt((W + B/n) / W)` over equal-length sequences, with `B/n` the sample
/// variance of the sequence means and `W` the mean within-sequence variance.
fn scale_reduction(seqs: &[&[f64]]) -> f64 {
    let stats: Vec<(f64, f64)> = seqs.iter().map(|s| mean_var(s)).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let b_over_n = if means.iter().all(|&m| m == means[0]) {
        0.0
    } else {
        mean_var(&means).1
    };
    if w == 0.0 {
        return if b_over_n == 0.0 { 1.0 } else { f64::INFINITY };
    }
    ((w + b_over_n) / w).sqrt()
}

/// Convergence statistics over chains given as `[chain][step][component]`.
/// Chains are truncated to the shortest length.
pub fn chain_convergence(chains: &[Vec<Vec<f64>>]) -> Result<ConvergenceReport> {
    ensure!(chains.len() >= 2, Diagnostic, "need at least two chains");
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    ensure!(n >= 4, Diagnostic, "chains too short for convergence statistics");
    let dim = chains[0][0].len();
    let mut psrf = Vec::with_capacity(dim);
    let mut split = Vec::with_capacity(dim);
    let mut disc = Vec::with_capacity(dim);
    for i in 0..dim {
        let series: Vec<Vec<f64>> = chains.iter().map(|c| c[..n].iter().map(|s| s[i]).collect()).collect();
        let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
        psrf.push(scale_reduction(&refs));
        let half = n / 2;
        let halves: Vec<&[f64]> = series
            .iter()
            .flat_map(|s| [&s[..half], &s[half..2 * half]])
            .collect();
        split.push(scale_reduction(&halves));
        let pooled: Vec<f64> = series.iter().flatten().copied().collect();
        let (pm, pv) = mean_var(&pooled);
        let d = series
            .iter()
            .map(|s| (mean_var(s).0 - pm).abs())
            .fold(0.0, f64::max);
        disc.push(if pv > 0.0 {
            d / pv.sqrt()
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        });
    }
    let max_statistic = psrf
        .iter()
        .chain(&split)
        .copied()
        .fold(f64::MIN, f64::max);
    Ok(ConvergenceReport {
        converged: max_statistic <= CONVERGENCE_THRESHOLD,
        psrf,
        split_rhat: split,
        mean_discrepancy: disc,
        max_statistic,
        threshold: CONVERGENCE_THRESHOLD,
    })
}
