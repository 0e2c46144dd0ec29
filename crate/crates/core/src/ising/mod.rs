//! Two-parameter Ising prior on the lattice,
//!
//! ```text
//! P(θ) ∝ exp{ β Σ_<s,t> θ_s θ_t + h Σ_s θ_s },
//! ```
//!
//! its single-site conditionals, Gibbs samplers for the prior and for the
//! data-conditioned field (same coupling, per-voxel external field h_s), and
//! Monte Carlo estimates of the score and information of the prior's
//! log-likelihood in (β, h).

pub mod exact;
mod gibbs;

use serde::{Deserialize, Serialize};

use crate::emission::{log_null_density, log_nonnull_density, MixtureParams};
use crate::error::{Error, Result};
use crate::lattice::{sufficient_stats_unchecked, Lattice3D, StatField, StateField};
use crate::stats::logistic;

pub use exact::{enumerate_exact, Enumerator, ExactDistribution, ExactMoments, MAX_EXACT_VOXELS};
pub use gibbs::{
    gibbs_sample_posterior, gibbs_sample_prior, summarize_chain, ChainSummary, GibbsChain,
    GibbsConfig, SweepOrder,
};

/// Coupling β and external field h. Neither sign is enforced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsingParams {
    pub beta: f64,
    pub h: f64,
}

impl IsingParams {
    pub fn new(beta: f64, h: f64) -> Result<Self> {
        if !beta.is_finite() || !h.is_finite() {
            return Err(Error::NonFinite(format!("Ising parameters beta={beta}, h={h}")));
        }
        Ok(IsingParams { beta, h })
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.beta, self.h]
    }

    pub fn from_array(v: [f64; 2]) -> Result<Self> {
        IsingParams::new(v[0], v[1])
    }

    /// φᵀH for sufficient statistics `hs = (pairs, sites)`.
    #[inline]
    pub fn dot(self, hs: &HStat) -> f64 {
        self.beta * hs[0] + self.h * hs[1]
    }
}

/// P(θ_s = 1 | neighbours) for a voxel whose neighbours sum to `neighbor_sum`.
pub fn conditional_prob(params: &IsingParams, neighbor_sum: u32) -> f64 {
    logistic(params.beta * neighbor_sum as f64 + params.h)
}

/// Ising sufficient statistics (Σ_<s,t> θ_s θ_t, Σ_s θ_s) as floats.
pub type HStat = [f64; 2];

pub fn h_stat(lattice: &Lattice3D, states: &[u8]) -> HStat {
    let (pairs, sites) = sufficient_stats_unchecked(lattice, states);
    [pairs as f64, sites as f64]
}

/// Per-voxel external field h_s.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPerSite(Vec<f64>);

impl FieldPerSite {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("site field at voxel {i} is {}", values[i])));
        }
        Ok(FieldPerSite(values))
    }

    pub fn uniform(h: f64, n: usize) -> Result<Self> {
        FieldPerSite::new(vec![h; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// External field of the posterior P(θ | x):
/// h_s = h + log f(x_s) - log f₀(x_s), with f₀ = N(0, 1) and f the non-null
/// mixture. Equivalent to h + (x_s - μ₀)²/(2σ₀²) + ½ log(2πσ₀²) + log Σ_l p_l φ(x_s; μ_l, σ_l²)
/// at μ₀ = 0, σ₀² = 1.
pub fn posterior_site_field(
    params: &IsingParams,
    mixture: &MixtureParams,
    stats: &StatField,
) -> Result<FieldPerSite> {
    FieldPerSite::new(
        stats
            .values()
            .iter()
            .map(|&x| params.h + log_nonnull_density(mixture, x) - log_null_density(x))
            .collect(),
    )
}

pub fn mean_h(samples: &[HStat]) -> [f64; 2] {
    let n = samples.len() as f64;
    let mut m = [0.0; 2];
    for h in samples {
        m[0] += h[0];
        m[1] += h[1];
    }
    [m[0] / n, m[1] / n]
}

/// Sample covariance of H with divisor n - 1.
pub fn covariance_h(samples: &[HStat]) -> Result<[[f64; 2]; 2]> {
    if samples.len() < 2 {
        return Err(Error::NotEnoughSamples(format!(
            "covariance needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let m = mean_h(samples);
    let mut c = [[0.0; 2]; 2];
    for h in samples {
        let d = [h[0] - m[0], h[1] - m[1]];
        c[0][0] += d[0] * d[0];
        c[0][1] += d[0] * d[1];
        c[1][1] += d[1] * d[1];
    }
    let k = (samples.len() - 1) as f64;
    c[0][0] /= k;
    c[0][1] /= k;
    c[1][1] /= k;
    c[1][0] = c[0][1];
    Ok(c)
}

/// Score U and information I of Q₂ at the prior's parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreInformation {
    pub score: [f64; 2],
    pub information: [[f64; 2]; 2],
}

/// U = mean H over posterior samples - mean H over prior samples;
/// I = sample covariance of H over prior samples.
pub fn score_information(prior_h: &[HStat], posterior_h: &[HStat]) -> Result<ScoreInformation> {
    if posterior_h.is_empty() {
        return Err(Error::NotEnoughSamples("no posterior samples".into()));
    }
    let information = covariance_h(prior_h)?;
    let mp = mean_h(prior_h);
    let mq = mean_h(posterior_h);
    Ok(ScoreInformation {
        score: [mq[0] - mp[0], mq[1] - mp[1]],
        information,
    })
}

pub fn mc_score_information(
    prior_samples: &[StateField],
    posterior_samples: &[StateField],
    lattice: &Lattice3D,
) -> Result<ScoreInformation> {
    let collect = |samples: &[StateField]| -> Result<Vec<HStat>> {
        samples
            .iter()
            .map(|f| {
                crate::lattice::check_field(lattice, f)?;
                Ok(h_stat(lattice, f.values()))
            })
            .collect()
    };
    score_information(&collect(prior_samples)?, &collect(posterior_samples)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Dims;
    use approx::assert_relative_eq;

    #[test]
    fn conditional_prob_examples() {
        let flat = IsingParams::new(0.0, 0.0).unwrap();
        for n in 0..=6 {
            assert_eq!(conditional_prob(&flat, n), 0.5);
        }
        let p = IsingParams::new(0.8, -2.5).unwrap();
        assert_relative_eq!(conditional_prob(&p, 6), 0.908877, epsilon = 1e-6);
        assert_relative_eq!(conditional_prob(&p, 0), 0.075858, epsilon = 1e-6);
    }

    #[test]
    fn site_field_examples() {
        let stats = StatField::new(vec![0.0, 2.0]).unwrap();
        let p = IsingParams::new(0.8, -2.5).unwrap();
        let std = MixtureParams::single(0.0, 1.0).unwrap();
        let f = posterior_site_field(&p, &std, &stats).unwrap();
        assert_relative_eq!(f.values()[0], -2.5, epsilon = 1e-14);

        let shifted = MixtureParams::single(2.0, 1.0).unwrap();
        let f = posterior_site_field(&p, &shifted, &stats).unwrap();
        assert_relative_eq!(f.values()[1], -0.5, epsilon = 1e-12);

        let padded = MixtureParams::new(vec![1.0, 0.0], vec![2.0, -3.0], vec![1.0, 4.0]).unwrap();
        let g = posterior_site_field(&p, &padded, &stats).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn score_information_examples() {
        let lat = Lattice3D::full(Dims::new(2, 2, 1)).unwrap();
        let samples: Vec<StateField> = [[1, 0, 0, 1], [1, 1, 0, 0], [0, 0, 0, 0], [1, 1, 1, 1]]
            .iter()
            .map(|v| StateField::new(v.to_vec()).unwrap())
            .collect();
        let si = mc_score_information(&samples, &samples, &lat).unwrap();
        assert_eq!(si.score, [0.0, 0.0]);
        let c = si.information;
        assert_eq!(c[0][1], c[1][0]);
        assert!(c[0][0] >= 0.0 && c[1][1] >= 0.0 && c[0][0] * c[1][1] - c[0][1] * c[0][1] >= -1e-12);

        let same = vec![samples[1].clone(); 5];
        let si = mc_score_information(&same, &samples, &lat).unwrap();
        assert_eq!(si.information, [[0.0; 2]; 2]);

        assert!(mc_score_information(&samples[..1], &samples, &lat).is_err());
        assert!(mc_score_information(&samples, &[], &lat).is_err());
    }
}
