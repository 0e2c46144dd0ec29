use serde::{Deserialize, Serialize};

use super::{GemConfig, PosteriorSummary};
use crate::emission::MixtureParams;
use crate::error::{Error, Result};
use crate::ising::{GibbsChain, HStat, IsingParams, ScoreInformation};
use crate::lattice::{Lattice3D, StatField};
use crate::rng::{derive_seed, tag};
use crate::stats::log_sum_exp;

/// Line search gives up after this many halvings.
pub const MAX_BACKTRACK: u32 = 60;

/// Ridge added to the diagonal of I before inversion.
const RIDGE: f64 = 1e-8;

/// Eigenvalue floor, relative to max(λ_max, 1), for the Newton direction.
const MIN_RCOND: f64 = 1e-8;

/// Closed-form mixture update from the posterior at Φ^(t).
///
/// p_l = Σ_s w_s(l) / Σ_s γ_s(1) and μ_l is the w-weighted mean of x. The
/// variance is the w-weighted variance when L = 1 and
/// (2a + Σ_s w_s(l)(x_s - μ_l)²) / (2b + Σ_s w_s(l)) when L ≥ 2. A component
/// with no weight keeps its previous mean.
pub fn mstep_mixture(
    summary: &PosteriorSummary,
    stats: &StatField,
    config: &GemConfig,
    previous: &MixtureParams,
) -> Result<MixtureParams> {
    let w = &summary.responsibilities;
    let l = w.components();
    if w.voxels() != stats.len() || previous.components() != l {
        return Err(Error::DimensionMismatch(format!(
            "responsibilities for {} voxels and {l} components, {} statistics, {} previous components",
            w.voxels(),
            stats.len(),
            previous.components()
        )));
    }
    let mass: f64 = summary.gamma1.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::Estimation(
            "posterior assigns no mass to the non-null state".into(),
        ));
    }
    let x = stats.values();
    let sums = w.column_sums();
    let mut weights: Vec<f64> = sums.iter().map(|&s| s / mass).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|p| *p = (*p / total).clamp(0.0, 1.0));

    let mut means = Vec::with_capacity(l);
    let mut variances = Vec::with_capacity(l);
    for c in 0..l {
        let sw = sums[c];
        let mu = if sw > 0.0 {
            (0..x.len()).map(|s| w.get(s, c) * x[s]).sum::<f64>() / sw
        } else {
            previous.means()[c]
        };
        let ss: f64 = (0..x.len()).map(|s| w.get(s, c) * (x[s] - mu).powi(2)).sum();
        let var = if config.penalized() {
            (2.0 * config.penalty_a + ss) / (2.0 * config.penalty_b + sw)
        } else {
            ss / sw
        };
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::Estimation(format!(
                "component {c} variance update gave {var} (weight {sw})"
            )));
        }
        means.push(mu);
        variances.push(var);
    }
    MixtureParams::new(weights, means, variances)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    /// A candidate passed the Armijo test (or the direction was zero).
    Accepted,
    /// The step fell below the ε₃ relative-change criterion first; φ is kept.
    SmallStep,
    /// `MAX_BACKTRACK` halvings without acceptance; φ is kept.
    Exhausted,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsingStep {
    pub params: IsingParams,
    pub depth: u32,
    pub outcome: StepOutcome,
    pub gradient_fallback: bool,
    /// Q₂ difference of the accepted candidate, 0 when φ is kept.
    pub q2_diff: f64,
}

/// Newton direction (I + εI₂)⁻¹U, or U / max(λ_max, 1) when the smallest
/// eigenvalue of the regularized information is below `MIN_RCOND`·max(λ_max, 1).
/// The flag marks the fallback.
pub fn newton_direction(si: &ScoreInformation) -> ([f64; 2], bool) {
    let u = si.score;
    let a = si.information[0][0] + RIDGE;
    let b = 0.5 * (si.information[0][1] + si.information[1][0]);
    let d = si.information[1][1] + RIDGE;
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d).powi(2) + b * b).sqrt();
    let scale = (mid + rad).max(1.0);
    if mid - rad > MIN_RCOND * scale {
        let det = a * d - b * b;
        ([(d * u[0] - b * u[1]) / det, (a * u[1] - b * u[0]) / det], false)
    } else {
        ([u[0] / scale, u[1] / scale], true)
    }
}

/// Backtracking line search φ + 2^{-m} d, accepting the first m with
/// `q2_diff(m, candidate) ≥ α 2^{-m} Uᵀd`.
///
/// After a failed test, a candidate whose relative change from φ is below
/// ε₃ ends the search with φ unchanged.
pub fn backtrack(
    current: IsingParams,
    si: &ScoreInformation,
    config: &GemConfig,
    mut q2_diff: impl FnMut(u32, IsingParams) -> Result<f64>,
) -> Result<IsingStep> {
    let (dir, gradient_fallback) = newton_direction(si);
    let keep = |depth, outcome| IsingStep {
        params: current,
        depth,
        outcome,
        gradient_fallback,
        q2_diff: 0.0,
    };
    if dir == [0.0, 0.0] {
        return Ok(keep(0, StepOutcome::Accepted));
    }
    let slope = si.score[0] * dir[0] + si.score[1] * dir[1];
    let phi = current.to_array();
    for m in 0..MAX_BACKTRACK {
        let lambda = 0.5f64.powi(m as i32);
        let cand = IsingParams::from_array([phi[0] + lambda * dir[0], phi[1] + lambda * dir[1]])?;
        let diff = q2_diff(m, cand)?;
        if diff >= config.armijo_alpha * lambda * slope {
            return Ok(IsingStep {
                params: cand,
                depth: m,
                outcome: StepOutcome::Accepted,
                gradient_fallback,
                q2_diff: diff,
            });
        }
        if super::relative_change(&phi, &cand.to_array(), config.eps1) < config.eps3 {
            return Ok(keep(m, StepOutcome::SmallStep));
        }
    }
    Ok(keep(MAX_BACKTRACK, StepOutcome::Exhausted))
}

/// One Monte Carlo update of φ given H statistics of posterior samples
/// drawn at Φ^(t).
///
/// A prior chain at φ^(t) supplies U, I and the reference term of the Q₂
/// difference; each candidate gets its own prior chain started from where
/// that chain ended. Seeds derive from `config.gibbs.seed`.
pub fn mstep_ising(
    lattice: &Lattice3D,
    current: &IsingParams,
    posterior_h: &[HStat],
    config: &GemConfig,
) -> Result<IsingStep> {
    let g = &config.gibbs;
    let seed = derive_seed(g.seed, &[tag::PRIOR]);
    let mut chain = GibbsChain::prior(lattice, current, seed, g.sweep_order);
    let prior = crate::ising::summarize_chain(&mut chain, g.burn_in, g.n_samples, false);
    let si = crate::ising::score_information(&prior.h, posterior_h)?;
    super::check_finite(&si)?;
    let post_mean = crate::ising::mean_h(posterior_h);
    let base = log_mean_exp_neg(current, &prior.h);
    backtrack(*current, &si, config, |m, cand| {
        let mut c = GibbsChain::prior(lattice, &cand, derive_seed(seed, &[m as u64 + 1]), g.sweep_order);
        c.set_state(&prior.final_state)?;
        let s = crate::ising::summarize_chain(&mut c, g.burn_in, g.n_samples, false);
        Ok(super::delta_dot(current, &cand, &post_mean) + log_mean_exp_neg(&cand, &s.h) - base)
    })
}

/// log((1/n) Σ_i exp(-φᵀH_i)), the sample estimate of log(C / Z(φ)).
pub(crate) fn log_mean_exp_neg(phi: &IsingParams, h: &[HStat]) -> f64 {
    log_sum_exp(h.iter().map(|hs| -phi.dot(hs))) - (h.len() as f64).ln()
}
