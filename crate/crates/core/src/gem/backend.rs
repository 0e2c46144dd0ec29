use statrs::function::gamma::ln_gamma;

use super::mstep::log_mean_exp_neg;
use super::{GemConfig, ModelParams, PosteriorSummary};
use crate::emission::{log_null_density, MixtureParams};
use crate::error::Result;
use crate::ising::{
    mean_h, covariance_h, posterior_site_field, summarize_chain, ChainSummary, Enumerator,
    GibbsChain, GibbsConfig, HStat, IsingParams,
};
use crate::lattice::{check_stats, Lattice3D, StatField};
use crate::rng::{derive_seed, tag};
use crate::stats::normal_log_pdf;

/// Posterior quantities at Φ^(t).
#[derive(Clone, Debug)]
pub struct PosteriorEval {
    pub gamma0: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub mean_h: HStat,
}

/// Prior quantities at φ^(t). `log_norm` is log(C / Z(φ)) up to a constant
/// shared by all φ.
#[derive(Clone, Copy, Debug)]
pub struct PriorEval {
    pub mean_h: HStat,
    pub cov_h: [[f64; 2]; 2],
    pub log_norm: f64,
}

/// Source of the expectations needed by one GEM iteration.
pub trait Backend {
    fn posterior(&mut self, iteration: usize, phi: &ModelParams) -> Result<PosteriorEval>;

    fn prior(&mut self, iteration: usize, phi: &IsingParams) -> Result<PriorEval>;

    /// `log_norm` at a line-search candidate. `depth` is the backtracking index.
    fn candidate(&mut self, iteration: usize, depth: u32, phi: &IsingParams) -> Result<f64>;

    /// Posterior used for the reported summary at Φ̂.
    fn final_posterior(&mut self, phi: &ModelParams) -> Result<PosteriorEval>;

    fn evaluate(&mut self, iteration: usize, phi: &ModelParams) -> Result<(PosteriorEval, PriorEval)> {
        Ok((self.posterior(iteration, phi)?, self.prior(iteration, &phi.ising)?))
    }
}

/// Gibbs-chain expectations.
///
/// Every chain after the first starts where the previous chain of its kind
/// ended; candidate chains start from the end of the prior chain at φ^(t).
/// Chain seeds depend only on (base seed, iteration, depth).
pub struct GibbsBackend<'a> {
    lattice: &'a Lattice3D,
    stats: &'a StatField,
    gibbs: GibbsConfig,
    final_gibbs: GibbsConfig,
    posterior_state: Option<Vec<u8>>,
    prior_state: Option<Vec<u8>>,
}

impl<'a> GibbsBackend<'a> {
    pub fn new(lattice: &'a Lattice3D, stats: &'a StatField, config: &GemConfig) -> Self {
        GibbsBackend {
            lattice,
            stats,
            gibbs: config.gibbs.clone(),
            final_gibbs: config.final_chain().clone(),
            posterior_state: None,
            prior_state: None,
        }
    }
}

fn posterior_chain(
    lattice: &Lattice3D,
    stats: &StatField,
    phi: &ModelParams,
    cfg: &GibbsConfig,
    seed: u64,
    start: Option<&[u8]>,
) -> Result<ChainSummary> {
    let field = posterior_site_field(&phi.ising, &phi.mixture, stats)?;
    let mut chain = GibbsChain::with_site_field(lattice, phi.ising.beta, &field, seed, cfg.sweep_order)?;
    if let Some(s) = start {
        chain.set_state(s)?;
    }
    Ok(summarize_chain(&mut chain, cfg.burn_in, cfg.n_samples, true))
}

fn prior_chain(
    lattice: &Lattice3D,
    phi: &IsingParams,
    cfg: &GibbsConfig,
    seed: u64,
    start: Option<&[u8]>,
) -> Result<ChainSummary> {
    let mut chain = GibbsChain::prior(lattice, phi, seed, cfg.sweep_order);
    if let Some(s) = start {
        chain.set_state(s)?;
    }
    Ok(summarize_chain(&mut chain, cfg.burn_in, cfg.n_samples, false))
}

fn posterior_eval(s: &ChainSummary) -> PosteriorEval {
    let n = s.n_samples() as f64;
    let n_int = s.n_samples() as u32;
    PosteriorEval {
        gamma0: s.ones.iter().map(|&c| (n_int - c) as f64 / n).collect(),
        gamma1: s.ones.iter().map(|&c| c as f64 / n).collect(),
        mean_h: mean_h(&s.h),
    }
}

fn prior_eval(phi: &IsingParams, s: &ChainSummary) -> Result<PriorEval> {
    Ok(PriorEval {
        mean_h: mean_h(&s.h),
        cov_h: covariance_h(&s.h)?,
        log_norm: log_mean_exp_neg(phi, &s.h),
    })
}

impl Backend for GibbsBackend<'_> {
    fn posterior(&mut self, iteration: usize, phi: &ModelParams) -> Result<PosteriorEval> {
        let seed = derive_seed(self.gibbs.seed, &[tag::POSTERIOR, iteration as u64]);
        let s = posterior_chain(
            self.lattice,
            self.stats,
            phi,
            &self.gibbs,
            seed,
            self.posterior_state.as_deref(),
        )?;
        let out = posterior_eval(&s);
        self.posterior_state = Some(s.final_state);
        Ok(out)
    }

    fn prior(&mut self, iteration: usize, phi: &IsingParams) -> Result<PriorEval> {
        let seed = derive_seed(self.gibbs.seed, &[tag::PRIOR, iteration as u64]);
        let s = prior_chain(self.lattice, phi, &self.gibbs, seed, self.prior_state.as_deref())?;
        let out = prior_eval(phi, &s)?;
        self.prior_state = Some(s.final_state);
        Ok(out)
    }

    fn candidate(&mut self, iteration: usize, depth: u32, phi: &IsingParams) -> Result<f64> {
        let seed = derive_seed(self.gibbs.seed, &[tag::PRIOR, iteration as u64, depth as u64 + 1]);
        let s = prior_chain(self.lattice, phi, &self.gibbs, seed, self.prior_state.as_deref())?;
        Ok(log_mean_exp_neg(phi, &s.h))
    }

    fn final_posterior(&mut self, phi: &ModelParams) -> Result<PosteriorEval> {
        let seed = derive_seed(self.final_gibbs.seed, &[tag::FINAL]);
        let s = posterior_chain(
            self.lattice,
            self.stats,
            phi,
            &self.final_gibbs,
            seed,
            self.posterior_state.as_deref(),
        )?;
        Ok(posterior_eval(&s))
    }

    fn evaluate(&mut self, iteration: usize, phi: &ModelParams) -> Result<(PosteriorEval, PriorEval)> {
        let post_seed = derive_seed(self.gibbs.seed, &[tag::POSTERIOR, iteration as u64]);
        let prior_seed = derive_seed(self.gibbs.seed, &[tag::PRIOR, iteration as u64]);
        let (lattice, stats, cfg) = (self.lattice, self.stats, &self.gibbs);
        let (post_start, prior_start) = (self.posterior_state.as_deref(), self.prior_state.as_deref());
        let (post, prior) = rayon::join(
            || posterior_chain(lattice, stats, phi, cfg, post_seed, post_start),
            || prior_chain(lattice, &phi.ising, cfg, prior_seed, prior_start),
        );
        let (post, prior) = (post?, prior?);
        let out = (posterior_eval(&post), prior_eval(&phi.ising, &prior)?);
        self.posterior_state = Some(post.final_state);
        self.prior_state = Some(prior.final_state);
        Ok(out)
    }
}

/// Exact expectations by enumeration; `log_norm` is -log Z(φ).
pub struct ExactBackend<'a> {
    enumerator: Enumerator,
    stats: &'a StatField,
}

impl<'a> ExactBackend<'a> {
    pub fn new(lattice: &Lattice3D, stats: &'a StatField) -> Result<Self> {
        check_stats(lattice, stats)?;
        Ok(ExactBackend {
            enumerator: Enumerator::new(lattice)?,
            stats,
        })
    }

    pub fn enumerator(&self) -> &Enumerator {
        &self.enumerator
    }
}

fn exact_posterior(e: &Enumerator, stats: &StatField, phi: &ModelParams) -> Result<PosteriorEval> {
    let field = posterior_site_field(&phi.ising, &phi.mixture, stats)?;
    let d = e.distribution(phi.ising.beta, field.values())?;
    Ok(PosteriorEval {
        gamma0: d.marginals.iter().map(|m| 1.0 - m).collect(),
        gamma1: d.marginals,
        mean_h: d.mean_h,
    })
}

impl Backend for ExactBackend<'_> {
    fn posterior(&mut self, _: usize, phi: &ModelParams) -> Result<PosteriorEval> {
        exact_posterior(&self.enumerator, self.stats, phi)
    }

    fn prior(&mut self, _: usize, phi: &IsingParams) -> Result<PriorEval> {
        let m = self.enumerator.prior_moments(phi);
        Ok(PriorEval {
            mean_h: m.mean_h,
            cov_h: m.cov_h,
            log_norm: -m.log_z,
        })
    }

    fn candidate(&mut self, _: usize, _: u32, phi: &IsingParams) -> Result<f64> {
        Ok(-self.enumerator.log_partition(phi))
    }

    fn final_posterior(&mut self, phi: &ModelParams) -> Result<PosteriorEval> {
        exact_posterior(&self.enumerator, self.stats, phi)
    }
}

/// Posterior summary at Φ plus the H statistic of every retained posterior
/// sample.
pub fn estep_marginals(
    lattice: &Lattice3D,
    phi: &ModelParams,
    stats: &StatField,
    gibbs: &GibbsConfig,
) -> Result<(PosteriorSummary, Vec<HStat>)> {
    gibbs.validate()?;
    let s = posterior_chain(lattice, stats, phi, gibbs, gibbs.seed, None)?;
    let p = posterior_eval(&s);
    let summary = PosteriorSummary::new(p.gamma0, p.gamma1, &phi.mixture, stats)?;
    Ok((summary, s.h))
}

/// Σ_s γ_s(0) log f₀(x_s) + Σ_s Σ_l w_s(l) log(p_l f_l(x_s)), plus
/// Σ_l log g(σ_l²) for the inverse-gamma penalty when L ≥ 2. `summary` holds
/// γ and w at Φ^(t); `mixture` is the candidate.
pub fn exact_q1(
    mixture: &MixtureParams,
    summary: &PosteriorSummary,
    stats: &StatField,
    config: &GemConfig,
) -> f64 {
    let w = &summary.responsibilities;
    let mut q = 0.0;
    for (s, &x) in stats.values().iter().enumerate() {
        q += summary.gamma0[s] * log_null_density(x);
        for l in 0..mixture.components() {
            let ws = w.get(s, l);
            if ws > 0.0 {
                q += ws
                    * (mixture.weights()[l].ln()
                        + normal_log_pdf(x, mixture.means()[l], mixture.variances()[l]));
            }
        }
    }
    if config.penalized() {
        let (a, b) = (config.penalty_a, config.penalty_b);
        for &v in mixture.variances() {
            q += (b - 1.0) * a.ln() - ln_gamma(b - 1.0) - b * v.ln() - a / v;
        }
    }
    q
}

/// φᵀE[H | x] - log Z(φ) with the expectation taken at Φ^(t).
pub fn exact_q2(e: &Enumerator, phi: &IsingParams, posterior_mean_h: &HStat) -> f64 {
    phi.dot(posterior_mean_h) - e.log_partition(phi)
}

/// Q(candidate | current) = Q₁ + Q₂, with all expectations exact.
pub fn exact_q(
    e: &Enumerator,
    stats: &StatField,
    candidate: &ModelParams,
    current: &ModelParams,
    config: &GemConfig,
) -> Result<f64> {
    let post = exact_posterior(e, stats, current)?;
    let mean = post.mean_h;
    let summary = PosteriorSummary::new(post.gamma0, post.gamma1, &current.mixture, stats)?;
    Ok(exact_q1(&candidate.mixture, &summary, stats, config) + exact_q2(e, &candidate.ising, &mean))
}
