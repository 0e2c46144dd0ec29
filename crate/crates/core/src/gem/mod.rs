//! Generalized EM estimation of Φ = (β, h, {p_l, μ_l, σ_l²}) from one
//! observed field.
//!
//! Each iteration evaluates the posterior at Φ^(t) (γ_s, w_s(l), E[H | x]) and
//! the prior at φ^(t) (E_φ[H], Var_φ[H]), updates the mixture in closed form
//! and moves φ along the Newton direction I⁻¹U with Armijo backtracking on Q₂.
//! The expectations come from a [`Backend`]: Gibbs chains for real problems,
//! exhaustive enumeration for lattices of up to twenty voxels.
//!
//! The run stops once the relative change of
//! (β, h, p_1..p_{L-1}, μ_1..μ_L, σ²_1..σ²_L) stays below `eps2` on three
//! consecutive iterations whose step was accepted at m = 0. Any other
//! iteration resets the count.

mod backend;
mod mstep;

use serde::{Deserialize, Serialize};

use crate::emission::{responsibilities, MixtureParams, Responsibilities};
use crate::error::{Error, Result};
use crate::ising::{GibbsConfig, HStat, IsingParams, ScoreInformation};
use crate::lattice::{check_stats, Lattice3D, StatField};

pub use backend::{
    estep_marginals, exact_q, exact_q1, exact_q2, Backend, ExactBackend, GibbsBackend, PosteriorEval,
    PriorEval,
};
pub use mstep::{
    backtrack, mstep_ising, mstep_mixture, newton_direction, IsingStep, StepOutcome, MAX_BACKTRACK,
};

/// Full model Φ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub ising: IsingParams,
    pub mixture: MixtureParams,
}

impl ModelParams {
    /// (β, h, p_1..p_{L-1}, μ_1..μ_L, σ²_1..σ²_L).
    pub fn stopping_vector(&self) -> Vec<f64> {
        let m = &self.mixture;
        let l = m.components();
        let mut v = Vec::with_capacity(3 * l + 1);
        v.push(self.ising.beta);
        v.push(self.ising.h);
        v.extend_from_slice(&m.weights()[..l - 1]);
        v.extend_from_slice(m.means());
        v.extend_from_slice(m.variances());
        v
    }
}

/// max_i |new_i - old_i| / (|old_i| + eps1).
pub fn relative_change(old: &[f64], new: &[f64], eps1: f64) -> f64 {
    old.iter()
        .zip(new)
        .map(|(&o, &n)| (n - o).abs() / (o.abs() + eps1))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GemConfig {
    pub components: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub armijo_alpha: f64,
    pub penalty_a: f64,
    pub penalty_b: f64,
    pub max_iters: usize,
    pub gibbs: GibbsConfig,
    /// Chain for the posterior summary at Φ̂; `gibbs` when absent.
    #[serde(default)]
    pub final_gibbs: Option<GibbsConfig>,
    pub initial: ModelParams,
}

impl GemConfig {
    /// Tolerances and penalty constants at their usual values
    /// (ε₁ = ε₂ = 10⁻³, ε₃ = α = 10⁻⁴, a = 1, b = 2).
    pub fn new(initial: ModelParams, gibbs: GibbsConfig, max_iters: usize) -> Self {
        GemConfig {
            components: initial.mixture.components(),
            eps1: 1e-3,
            eps2: 1e-3,
            eps3: 1e-4,
            armijo_alpha: 1e-4,
            penalty_a: 1.0,
            penalty_b: 2.0,
            max_iters,
            gibbs,
            final_gibbs: None,
            initial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.components == 0 {
            return bad("component count must be at least 1".into());
        }
        for (name, v) in [
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("eps3", self.eps3),
            ("armijo_alpha", self.armijo_alpha),
            ("penalty_a", self.penalty_a),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.eps3 >= self.eps2 {
            return bad(format!("eps3 ({}) must be below eps2 ({})", self.eps3, self.eps2));
        }
        if !(self.penalty_b > 1.0 && self.penalty_b.is_finite()) {
            return bad(format!("penalty_b must exceed 1, got {}", self.penalty_b));
        }
        for g in std::iter::once(&self.gibbs).chain(self.final_gibbs.as_ref()) {
            g.validate()?;
            if g.n_samples < 2 {
                return bad("estimation chains need at least 2 samples".into());
            }
        }
        let m = &self.initial.mixture;
        if m.components() != self.components {
            return bad(format!(
                "initial mixture has {} components, config expects {}",
                m.components(),
                self.components
            ));
        }
        // Deserialized parameters bypass the constructors.
        MixtureParams::new(m.weights().to_vec(), m.means().to_vec(), m.variances().to_vec())?;
        IsingParams::new(self.initial.ising.beta, self.initial.ising.h)?;
        Ok(())
    }

    pub fn penalized(&self) -> bool {
        self.components >= 2
    }

    pub fn final_chain(&self) -> &GibbsConfig {
        self.final_gibbs.as_ref().unwrap_or(&self.gibbs)
    }
}

/// Posterior state probabilities, component responsibilities and LIS.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummary {
    /// γ_s(0) = P(θ_s = 0 | x).
    pub gamma0: Vec<f64>,
    /// γ_s(1) = P(θ_s = 1 | x).
    pub gamma1: Vec<f64>,
    pub responsibilities: Responsibilities,
    /// LIS_s = γ_s(0).
    pub lis: Vec<f64>,
}

impl PosteriorSummary {
    pub fn new(
        gamma0: Vec<f64>,
        gamma1: Vec<f64>,
        mixture: &MixtureParams,
        stats: &StatField,
    ) -> Result<Self> {
        let responsibilities = responsibilities(mixture, &gamma1, stats)?;
        Ok(PosteriorSummary {
            lis: gamma0.clone(),
            gamma0,
            gamma1,
            responsibilities,
        })
    }

    pub fn gamma(&self, s: usize, i: usize) -> f64 {
        if i == 0 {
            self.gamma0[s]
        } else {
            self.gamma1[s]
        }
    }
}

/// One outer iteration, recorded after the update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GemIteration {
    pub iteration: usize,
    pub params: ModelParams,
    pub score: [f64; 2],
    pub depth: u32,
    pub outcome: StepOutcome,
    pub gradient_fallback: bool,
    pub q2_diff: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GemTrace {
    pub iterations: Vec<GemIteration>,
    pub converged: bool,
    pub iterations_used: usize,
    /// Iterations whose line search hit the backtracking cap.
    pub exhausted: usize,
    /// Expected complete-data log-density of x (plus the variance penalty
    /// when L ≥ 2) at Φ̂ under the final posterior.
    pub final_q1: f64,
}

#[derive(Clone, Debug)]
pub struct GemFit {
    pub params: ModelParams,
    pub summary: PosteriorSummary,
    pub trace: GemTrace,
}

/// Monte Carlo GEM with Gibbs chains seeded from `config.gibbs.seed`.
pub fn run_gem(lattice: &Lattice3D, stats: &StatField, config: &GemConfig) -> Result<GemFit> {
    config.validate()?;
    check_stats(lattice, stats)?;
    let mut backend = GibbsBackend::new(lattice, stats, config);
    run_with(&mut backend, stats, config)
}

/// GEM with every expectation computed by enumeration.
pub fn run_gem_exact(lattice: &Lattice3D, stats: &StatField, config: &GemConfig) -> Result<GemFit> {
    config.validate()?;
    let mut backend = ExactBackend::new(lattice, stats)?;
    run_with(&mut backend, stats, config)
}

pub fn run_with<B: Backend>(backend: &mut B, stats: &StatField, config: &GemConfig) -> Result<GemFit> {
    let mut phi = config.initial.clone();
    let mut iterations = Vec::new();
    let mut streak = 0;
    let mut converged = false;
    let mut exhausted = 0;
    for t in 0..config.max_iters {
        let (post, prior) = backend.evaluate(t, &phi)?;
        let summary = PosteriorSummary::new(post.gamma0, post.gamma1, &phi.mixture, stats)?;
        let mixture = mstep_mixture(&summary, stats, config, &phi.mixture)?;

        let si = ScoreInformation {
            score: [post.mean_h[0] - prior.mean_h[0], post.mean_h[1] - prior.mean_h[1]],
            information: prior.cov_h,
        };
        check_finite(&si)?;
        let post_h = post.mean_h;
        let base = prior.log_norm;
        let step = backtrack(phi.ising, &si, config, |m, cand| {
            Ok(delta_dot(&phi.ising, &cand, &post_h) + backend.candidate(t, m, &cand)? - base)
        })?;
        if step.outcome == StepOutcome::Exhausted {
            exhausted += 1;
            log::warn!("iteration {t}: Armijo search hit the cap of {MAX_BACKTRACK} halvings");
        }

        let next = ModelParams {
            ising: step.params,
            mixture,
        };
        let ratio = relative_change(&phi.stopping_vector(), &next.stopping_vector(), config.eps1);
        let regular = step.outcome == StepOutcome::Accepted && step.depth == 0;
        streak = if regular && ratio < config.eps2 { streak + 1 } else { 0 };
        log::debug!(
            "iteration {t}: beta={:.5} h={:.5} m={} ratio={ratio:.3e}",
            next.ising.beta,
            next.ising.h,
            step.depth
        );
        iterations.push(GemIteration {
            iteration: t,
            params: next.clone(),
            score: si.score,
            depth: step.depth,
            outcome: step.outcome,
            gradient_fallback: step.gradient_fallback,
            q2_diff: step.q2_diff,
            ratio,
        });
        phi = next;
        if streak >= 3 {
            converged = true;
            break;
        }
    }
    let post = backend.final_posterior(&phi)?;
    let summary = PosteriorSummary::new(post.gamma0, post.gamma1, &phi.mixture, stats)?;
    let final_q1 = exact_q1(&phi.mixture, &summary, stats, config);
    Ok(GemFit {
        params: phi,
        summary,
        trace: GemTrace {
            iterations_used: iterations.len(),
            iterations,
            converged,
            exhausted,
            final_q1,
        },
    })
}

fn delta_dot(old: &IsingParams, new: &IsingParams, h: &HStat) -> f64 {
    (new.beta - old.beta) * h[0] + (new.h - old.h) * h[1]
}

fn check_finite(si: &ScoreInformation) -> Result<()> {
    let i = &si.information;
    if si.score.iter().chain(i[0].iter()).chain(i[1].iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Estimation(format!(
            "non-finite score {:?} or information {:?}",
            si.score, si.information
        )))
    }
}
