use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{chain_convergence, combined_iact, ConvergenceReport};
use super::likelihood::Target;
use super::prior::PriorModel;
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub beta: f64,
    pub sigma_pcn: f64,
    pub burn_in: usize,
    pub thinning: usize,
    /// Thinned samples kept from this chain.
    pub samples: usize,
    pub seed: u64,
    /// Prior draws tried when looking for an admissible starting point.
    pub max_init_draws: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            beta: 0.25,
            sigma_pcn: 1.0,
            burn_in: 1000,
            thinning: 200,
            samples: 40,
            seed: 0,
            max_init_draws: 1000,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.beta > 0.0 && self.beta <= 1.0,
            Parameter,
            "pCN step must lie in (0, 1], got {}",
            self.beta
        );
        ensure!(self.sigma_pcn > 0.0, Parameter, "proposal scale must be positive");
        ensure!(
            self.burn_in >= 1 && self.thinning >= 1,
            Parameter,
            "burn-in and thinning must be at least 1"
        );
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.burn_in + self.samples * self.thinning
    }
}

/// Current position of a chain with its cached densities.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub xi: Vec<f64>,
    pub log_likelihood: f64,
    pub log_prior: f64,
}

impl ChainState {
    pub fn new<T: Target + ?Sized>(target: &T, xi: Vec<f64>) -> Self {
        Self {
            log_likelihood: target.log_likelihood(&xi),
            log_prior: target.prior().log_density(&xi),
            xi,
        }
    }

    pub fn log_posterior(&self) -> f64 {
        self.log_likelihood + self.log_prior
    }
}

/// pCN move in whitened coordinates `z = (xi - mean) / std`:
/// `z' = sqrt(1 - beta^2) z + beta w`, `w ~ N(0, sigma^2 I)`.
///
/// `beta = 0` returns `xi` unchanged.
pub fn pcn_propose<R: Rng + ?Sized>(
    xi: &[f64],
    prior: &PriorModel,
    beta: f64,
    sigma_pcn: f64,
    rng: &mut R,
) -> Vec<f64> {
    if beta == 0.0 {
        return xi.to_vec();
    }
    let keep = (1.0 - beta * beta).max(0.0).sqrt();
    let z = prior.whiten(xi);
    let z: Vec<f64> = z
        .iter()
        .map(|z| keep * z + beta * sigma_pcn * rng.sample::<f64, _>(StandardNormal))
        .collect();
    prior.colour(&z)
}

/// Log Metropolis-Hastings ratio for a pCN move.
///
/// The proposal leaves `N(0, sigma^2 I)` invariant in whitened coordinates,
/// so the Hastings correction cancels the prior whenever `sigma = 1` and the
/// ratio reduces to the likelihood ratio.
pub fn log_acceptance(current: &ChainState, proposed: &ChainState, sigma_pcn: f64) -> f64 {
    if proposed.log_likelihood == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let dl = proposed.log_likelihood - current.log_likelihood;
    if sigma_pcn == 1.0 {
        return dl;
    }
    // log prior = -|z|^2/2 and the proposal density ratio is
    // exp((|z'|^2 - |z|^2) / (2 sigma^2))
    dl + (proposed.log_prior - current.log_prior) * (1.0 - 1.0 / (sigma_pcn * sigma_pcn))
}

/// One Metropolis-Hastings step. Inadmissible proposals (`-inf`
/// likelihood) are always rejected.
pub fn mh_step<T: Target + ?Sized, R: Rng + ?Sized>(
    state: &ChainState,
    target: &T,
    beta: f64,
    sigma_pcn: f64,
    rng: &mut R,
) -> (ChainState, bool) {
    let xi = pcn_propose(&state.xi, target.prior(), beta, sigma_pcn, rng);
    let proposed = ChainState::new(target, xi);
    let log_a = log_acceptance(state, &proposed, sigma_pcn);
    let u: f64 = rng.random();
    if log_a > f64::NEG_INFINITY && (log_a >= 0.0 || u.ln() < log_a) {
        (proposed, true)
    } else {
        (state.clone(), false)
    }
}

/// Draws from the prior until an admissible point is found.
pub fn initial_state<T: Target + ?Sized, R: Rng + ?Sized>(
    target: &T,
    max_draws: usize,
    rng: &mut R,
) -> Result<ChainState> {
    for _ in 0..max_draws {
        let state = ChainState::new(target, target.prior().sample(rng));
        if state.log_likelihood > f64::NEG_INFINITY {
            return Ok(state);
        }
    }
    Err(Error::Initialization(format!(
        "no admissible prior draw in {max_draws} attempts"
    )))
}

/// Random stream for chain `index` under master `seed`.
pub fn chain_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Full record of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub index: usize,
    pub config: ChainConfig,
    pub initial: Vec<f64>,
    /// State after every step.
    pub states: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    pub accepted: Vec<bool>,
    /// Per-component IACT over the post burn-in segment.
    pub iact: Vec<f64>,
}

impl Chain {
    pub fn steps(&self) -> usize {
        self.states.len()
    }

    pub fn acceptance_ratio(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    /// States after burn-in.
    pub fn post_burn_in(&self) -> &[Vec<f64>] {
        &self.states[self.config.burn_in.min(self.states.len())..]
    }

    /// `xi^(b + k L)` for `k = 1..=samples`.
    pub fn thinned(&self) -> Vec<Vec<f64>> {
        let b = self.config.burn_in;
        let t = self.config.thinning;
        (1..=self.config.samples)
            .map(|k| b + k * t)
            .filter(|&s| s <= self.states.len())
            .map(|s| self.states[s - 1].clone())
            .collect()
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.post_burn_in().iter().map(|s| s[i]).collect()
    }

    /// CSV with header `step,accepted,log_post,a_1..a_N,lambda`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let dim = self.initial.len();
        let mut header = vec!["step".to_string(), "accepted".into(), "log_post".into()];
        header.extend((1..dim).map(|i| format!("a_{i}")));
        header.push("lambda".into());
        w.write_record(&header)?;
        for (k, s) in self.states.iter().enumerate() {
            let mut row = vec![
                (k + 1).to_string(),
                u8::from(self.accepted[k]).to_string(),
                self.log_posterior[k].to_string(),
            ];
            row.extend(s.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `cfg.total_steps()` pCN steps from a prior draw.
pub fn run_chain<T: Target + ?Sized>(target: &T, cfg: &ChainConfig, index: usize) -> Result<Chain> {
    cfg.validate()?;
    let mut rng = chain_rng(cfg.seed, index as u64);
    let mut state = initial_state(target, cfg.max_init_draws, &mut rng)?;
    let initial = state.xi.clone();
    let n = cfg.total_steps();
    let mut states = Vec::with_capacity(n);
    let mut log_posterior = Vec::with_capacity(n);
    let mut accepted = Vec::with_capacity(n);
    for _ in 0..n {
        let (next, acc) = mh_step(&state, target, cfg.beta, cfg.sigma_pcn, &mut rng);
        state = next;
        states.push(state.xi.clone());
        log_posterior.push(state.log_posterior());
        accepted.push(acc);
    }
    let mut chain = Chain {
        index,
        config: *cfg,
        initial,
        states,
        log_posterior,
        accepted,
        iact: Vec::new(),
    };
    chain.iact = (0..target.dim())
        .map(|i| super::diagnostics::iact(&chain.component(i)).unwrap_or(f64::NAN))
        .collect();
    Ok(chain)
}

/// Outcome of step-size tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub beta: f64,
    /// Acceptance over the last tuning window.
    pub acceptance: f64,
    pub steps: usize,
    pub reached_target: bool,
    /// `(beta, acceptance)` for each window.
    pub trace: Vec<(f64, f64)>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub target: f64,
    pub tolerance: f64,
    pub pilot_steps: usize,
    pub window: usize,
    pub bounds: [f64; 2],
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            target: 0.25,
            tolerance: 0.05,
            pilot_steps: 5000,
            window: 400,
            bounds: [1e-3, 1.0],
        }
    }
}

/// Tunes the pCN step on a pilot chain by a Robbins-Monro iteration on
/// `ln beta`, one update per window of steps. Stops once a window's
/// acceptance lies within `0.8 * tolerance` of the target.
pub fn tune_beta<T: Target + ?Sized>(
    target: &T,
    chain: &ChainConfig,
    tune: &TuneConfig,
    index: usize,
) -> Result<TuneReport> {
    chain.validate()?;
    ensure!(tune.pilot_steps >= 500, Parameter, "tuning needs at least 500 pilot steps");
    ensure!(
        tune.window >= 50 && tune.window <= tune.pilot_steps,
        Parameter,
        "tuning window must lie in [50, pilot steps]"
    );
    ensure!(
        tune.target > 0.0 && tune.target < 1.0,
        Parameter,
        "target acceptance must lie in (0, 1)"
    );
    // tuning draws from its own stream so recorded chains are unaffected
    let mut rng = chain_rng(chain.seed ^ 0x7475_6e65, index as u64);
    let mut state = initial_state(target, chain.max_init_draws, &mut rng)?;
    let (lo, hi) = (tune.bounds[0].ln(), tune.bounds[1].ln());
    let mut log_beta = chain.beta.ln().clamp(lo, hi);
    let mut trace = Vec::new();
    let mut steps = 0;
    let mut reached = false;
    let mut k = 0;
    let mut last = 0.0;
    while steps + tune.window <= tune.pilot_steps {
        let beta = log_beta.exp();
        let mut acc = 0;
        for _ in 0..tune.window {
            let (next, a) = mh_step(&state, target, beta, chain.sigma_pcn, &mut rng);
            state = next;
            acc += usize::from(a);
        }
        steps += tune.window;
        last = acc as f64 / tune.window as f64;
        trace.push((beta, last));
        if (last - tune.target).abs() <= 0.8 * tune.tolerance {
            reached = true;
            break;
        }
        k += 1;
        let gain = 2.0 / (k as f64).sqrt();
        log_beta = (log_beta + gain * (last - tune.target)).clamp(lo, hi);
    }
    let beta = log_beta.exp();
    let pinned = (log_beta - lo).abs() < 1e-12 || (log_beta - hi).abs() < 1e-12;
    let warning = match (reached, pinned) {
        (true, _) => None,
        (false, true) => Some(format!(
            "step size pinned at {beta} with acceptance {last:.3}, target {} not reached",
            tune.target
        )),
        (false, false) => Some(format!(
            "acceptance {last:.3} still outside {} +/- {} after {steps} pilot steps",
            tune.target, tune.tolerance
        )),
    };
    Ok(TuneReport {
        beta,
        acceptance: last,
        steps,
        reached_target: reached,
        trace,
        warning,
    })
}

/// How to size and run a multi-chain posterior sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerPlan {
    pub chains: usize,
    /// Thinned samples wanted over all chains.
    pub total_samples: usize,
    pub beta: f64,
    pub sigma_pcn: f64,
    pub tune: bool,
    pub tuning: TuneConfig,
    /// Pilot steps used to estimate the autocorrelation time.
    pub pilot_steps: usize,
    pub burn_in_factor: f64,
    pub thinning_factor: f64,
    /// Fixed burn-in and thinning, skipping the pilot estimate.
    pub fixed_burn_in: Option<usize>,
    pub fixed_thinning: Option<usize>,
    pub seed: u64,
    pub max_init_draws: usize,
}

impl Default for SamplerPlan {
    fn default() -> Self {
        Self {
            chains: 5,
            total_samples: 200,
            beta: 0.25,
            sigma_pcn: 1.0,
            tune: false,
            tuning: TuneConfig::default(),
            pilot_steps: 2000,
            burn_in_factor: 10.0,
            thinning_factor: 2.0,
            fixed_burn_in: None,
            fixed_thinning: None,
            seed: 0,
            max_init_draws: 1000,
        }
    }
}

/// Chains, their pooled thinned samples and run diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorRun {
    pub chains: Vec<Chain>,
    pub samples: Vec<Vec<f64>>,
    pub diagnostics: RunDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub beta: f64,
    pub sigma_pcn: f64,
    pub tuning: Option<TuneReport>,
    /// Autocorrelation time estimated on the pilot chain, if one was run.
    pub pilot_iact: Option<f64>,
    pub burn_in: usize,
    pub thinning: usize,
    pub acceptance: Vec<f64>,
    /// Largest per-component IACT of each chain.
    pub chain_iact: Vec<f64>,
    pub iact_components: Vec<Vec<f64>>,
    pub convergence: Option<ConvergenceReport>,
    pub warnings: Vec<String>,
}

/// Tunes (optionally), sizes burn-in and thinning from a pilot
/// autocorrelation estimate, then runs the chains in parallel.
pub fn sample_posterior<T: Target + ?Sized>(target: &T, plan: &SamplerPlan) -> Result<PosteriorRun> {
    ensure!(plan.chains >= 1, Parameter, "need at least one chain");
    ensure!(plan.total_samples >= 1, Parameter, "need at least one sample");
    let mut warnings = Vec::new();
    let mut base = ChainConfig {
        beta: plan.beta,
        sigma_pcn: plan.sigma_pcn,
        seed: plan.seed,
        max_init_draws: plan.max_init_draws,
        ..ChainConfig::default()
    };
    let tuning = if plan.tune {
        let report = tune_beta(target, &base, &plan.tuning, plan.chains)?;
        base.beta = report.beta;
        if let Some(w) = &report.warning {
            warnings.push(w.clone());
        }
        Some(report)
    } else {
        None
    };

    let (burn_in, thinning, pilot_iact) = match (plan.fixed_burn_in, plan.fixed_thinning) {
        (Some(b), Some(t)) => (b, t, None),
        (fb, ft) => {
            let pilot_cfg = ChainConfig {
                burn_in: plan.pilot_steps / 2,
                thinning: 1,
                samples: plan.pilot_steps - plan.pilot_steps / 2,
                ..base
            };
            let pilot = run_chain(target, &pilot_cfg, plan.chains + 1)?;
            let lambda = combined_iact(&pilot.iact).max(1.0);
            ensure!(
                lambda.is_finite(),
                Diagnostic,
                "pilot chain of {} steps is too short to estimate an autocorrelation time",
                plan.pilot_steps
            );
            (
                fb.unwrap_or((plan.burn_in_factor * lambda).ceil() as usize),
                ft.unwrap_or((plan.thinning_factor * lambda).ceil() as usize),
                Some(lambda),
            )
        }
    };
    let per_chain = plan.total_samples.div_ceil(plan.chains);
    let cfg = ChainConfig {
        burn_in: burn_in.max(1),
        thinning: thinning.max(1),
        samples: per_chain,
        ..base
    };
    let chains: Vec<Chain> = (0..plan.chains)
        .into_par_iter()
        .map(|i| run_chain(target, &cfg, i))
        .collect::<Result<_>>()?;

    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(per_chain * plan.chains);
    for k in 0..per_chain {
        for c in &chains {
            if let Some(s) = c.thinned().get(k) {
                samples.push(s.clone());
            }
        }
    }
    samples.truncate(plan.total_samples);

    let convergence = if chains.len() >= 2 {
        let segments: Vec<Vec<Vec<f64>>> = chains.iter().map(|c| c.post_burn_in().to_vec()).collect();
        match chain_convergence(&segments) {
            Ok(r) => {
                if !r.converged {
                    warnings.push(format!(
                        "chains have not converged: largest statistic {:.3}",
                        r.max_statistic
                    ));
                }
                Some(r)
            }
            Err(e) => {
                warnings.push(e.to_string());
                None
            }
        }
    } else {
        None
    };
    let chain_iact: Vec<f64> = chains.iter().map(|c| combined_iact(&c.iact)).collect();
    if let Some(l) = pilot_iact {
        if chain_iact.iter().any(|&c| c > l * 2.0) {
            warnings.push("recorded chains decorrelate much more slowly than the pilot".into());
        }
    }
    let diagnostics = RunDiagnostics {
        beta: cfg.beta,
        sigma_pcn: cfg.sigma_pcn,
        tuning,
        pilot_iact,
        burn_in: cfg.burn_in,
        thinning: cfg.thinning,
        acceptance: chains.iter().map(Chain::acceptance_ratio).collect(),
        chain_iact,
        iact_components: chains.iter().map(|c| c.iact.clone()).collect(),
        convergence,
        warnings,
    };
    Ok(PosteriorRun {
        chains,
        samples,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent Gaussian likelihood around `centre` with width `s`.
    struct Toy {
        prior: PriorModel,
        centre: Vec<f64>,
        s: f64,
    }

    impl Target for Toy {
        fn prior(&self) -> &PriorModel {
            &self.prior
        }

        fn log_likelihood(&self, xi: &[f64]) -> f64 {
            -0.5 * xi
                .iter()
                .zip(&self.centre)
                .map(|(x, c)| ((x - c) / self.s).powi(2))
                .sum::<f64>()
        }
    }

    struct Flat(PriorModel);

    impl Target for Flat {
        fn prior(&self) -> &PriorModel {
            &self.0
        }

        fn log_likelihood(&self, _: &[f64]) -> f64 {
            0.0
        }
    }

    /// Admissible only for a positive first component.
    struct HalfSpace(PriorModel);

    impl Target for HalfSpace {
        fn prior(&self) -> &PriorModel {
            &self.0
        }

        fn log_likelihood(&self, xi: &[f64]) -> f64 {
            if xi[0] > 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
    }

    #[test]
    fn zero_and_unit_steps() {
        let prior = PriorModel::new(vec![1.0, 2.0], vec![4.0, 9.0]).unwrap();
        let mut rng = chain_rng(1, 0);
        let xi = vec![3.0, -1.0];
        assert_eq!(pcn_propose(&xi, &prior, 0.0, 1.0, &mut rng), xi);
        let mut a = chain_rng(2, 0);
        let mut b = chain_rng(2, 0);
        let p1 = pcn_propose(&[100.0, 100.0], &prior, 1.0, 1.0, &mut a);
        let p2 = pcn_propose(&[-5.0, 7.0], &prior, 1.0, 1.0, &mut b);
        assert_eq!(p1, p2);
    }

    #[test]
    fn acceptance_rules() {
        let prior = PriorModel::standard(2);
        let t = HalfSpace(prior.clone());
        let cur = ChainState::new(&t, vec![1.0, 0.0]);
        let bad = ChainState::new(&t, vec![-1.0, 0.0]);
        assert_eq!(log_acceptance(&cur, &bad, 1.0), f64::NEG_INFINITY);
        let toy = Toy {
            prior,
            centre: vec![0.0, 0.0],
            s: 1.0,
        };
        let far = ChainState::new(&toy, vec![2.0, 2.0]);
        let near = ChainState::new(&toy, vec![0.1, 0.0]);
        assert!(log_acceptance(&far, &near, 1.0) >= 0.0);
    }

    #[test]
    fn rejected_steps_repeat_the_state() {
        let toy = Toy {
            prior: PriorModel::standard(3),
            centre: vec![0.5; 3],
            s: 0.1,
        };
        let cfg = ChainConfig {
            burn_in: 10,
            thinning: 5,
            samples: 100,
            seed: 3,
            ..ChainConfig::default()
        };
        let chain = run_chain(&toy, &cfg, 0).unwrap();
        assert_eq!(chain.steps(), cfg.total_steps());
        let mut prev = chain.initial.clone();
        for (s, &acc) in chain.states.iter().zip(&chain.accepted) {
            assert_eq!(acc, *s != prev);
            prev = s.clone();
        }
        assert_eq!(chain.thinned().len(), 100);
        assert_eq!(chain.thinned()[0], chain.states[14]);
        assert_eq!(run_chain(&toy, &cfg, 0).unwrap(), chain);
        assert_ne!(run_chain(&toy, &cfg, 1).unwrap().states, chain.states);
    }

    #[test]
    fn inadmissible_proposals_never_enter() {
        let t = HalfSpace(PriorModel::standard(2));
        let cfg = ChainConfig {
            beta: 0.9,
            burn_in: 1,
            thinning: 1,
            samples: 2000,
            seed: 9,
            ..ChainConfig::default()
        };
        let chain = run_chain(&t, &cfg, 0).unwrap();
        assert!(chain.states.iter().all(|s| s[0] > 0.0));
        assert!(chain.acceptance_ratio() > 0.2 && chain.acceptance_ratio() < 0.8);
    }

    #[test]
    fn impossible_start_is_an_initialisation_error() {
        struct Never(PriorModel);
        impl Target for Never {
            fn prior(&self) -> &PriorModel {
                &self.0
            }
            fn log_likelihood(&self, _: &[f64]) -> f64 {
                f64::NEG_INFINITY
            }
        }
        let cfg = ChainConfig {
            max_init_draws: 20,
            ..ChainConfig::default()
        };
        assert!(matches!(
            run_chain(&Never(PriorModel::standard(2)), &cfg, 0),
            Err(Error::Initialization(_))
        ));
    }

    #[test]
    fn flat_likelihood_accepts_everything() {
        let t = Flat(PriorModel::new(vec![3.0, -1.0], vec![0.5, 2.0]).unwrap());
        let cfg = ChainConfig {
            beta: 1.0,
            burn_in: 1,
            thinning: 1,
            samples: 10_000,
            ..ChainConfig::default()
        };
        assert_eq!(run_chain(&t, &cfg, 0).unwrap().acceptance_ratio(), 1.0);
    }

    #[test]
    fn tuning_hits_target_and_shrinks_for_peaked_likelihoods() {
        let toy = Toy {
            prior: PriorModel::standard(10),
            centre: vec![0.3; 10],
            s: 0.5,
        };
        let r = tune_beta(&toy, &ChainConfig::default(), &TuneConfig::default(), 0).unwrap();
        assert!(r.reached_target, "{r:?}");
        let peaked = Toy {
            prior: PriorModel::standard(10),
            centre: vec![0.3; 10],
            s: 0.01,
        };
        let r = tune_beta(&peaked, &ChainConfig::default(), &TuneConfig::default(), 0).unwrap();
        assert!(r.beta < 0.1, "{r:?}");
        assert!(r.trace.windows(2).all(|w| w[1].0 <= w[0].0), "{:?}", r.trace);
    }
}
