//! Exhaustive enumeration over all 2^N configurations of a small lattice.
//!
//! Used as the reference for the samplers and for the exact-E-step variant of
//! the estimator. Bit `s` of a configuration index is θ_s.

use super::{FieldPerSite, HStat, IsingParams};
use crate::error::{Error, Result};
use crate::lattice::Lattice3D;
use crate::stats::log_sum_exp;

pub const MAX_EXACT_VOXELS: usize = 20;

/// Exact moments of H under the prior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactMoments {
    pub log_z: f64,
    pub mean_h: [f64; 2],
    pub cov_h: [[f64; 2]; 2],
}

/// Full distribution over configurations plus derived summaries.
#[derive(Clone, Debug)]
pub struct ExactDistribution {
    pub log_z: f64,
    pub probs: Vec<f64>,
    pub mean_h: [f64; 2],
    pub cov_h: [[f64; 2]; 2],
    /// P(θ_s = 1) per voxel.
    pub marginals: Vec<f64>,
}

impl ExactDistribution {
    /// Probability that the voxels in `fixed` take the given values.
    pub fn prob_of(&self, fixed: &[(usize, u8)]) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(c, _)| fixed.iter().all(|&(s, v)| ((c >> s) & 1) as u8 == v))
            .map(|(_, p)| p)
            .sum()
    }
}

/// Precomputed H for every configuration of one lattice.
pub struct Enumerator {
    n: usize,
    h: Vec<(u16, u16)>,
    /// Distinct (pairs, sites) values with their multiplicities.
    histogram: Vec<((u16, u16), f64)>,
}

impl Enumerator {
    pub fn new(lattice: &Lattice3D) -> Result<Self> {
        let n = lattice.len();
        if n > MAX_EXACT_VOXELS {
            return Err(Error::TooLargeForEnumeration {
                n,
                max: MAX_EXACT_VOXELS,
            });
        }
        let edges: Vec<(usize, usize)> = lattice
            .edges()
            .iter()
            .map(|&(s, t)| (s as usize, t as usize))
            .collect();
        let h: Vec<(u16, u16)> = (0..1usize << n)
            .map(|c| {
                let pairs = edges.iter().filter(|&&(s, t)| (c >> s) & (c >> t) & 1 == 1).count();
                (pairs as u16, c.count_ones() as u16)
            })
            .collect();
        let mut sorted = h.clone();
        sorted.sort_unstable();
        let mut histogram: Vec<((u16, u16), f64)> = Vec::new();
        for key in sorted {
            match histogram.last_mut() {
                Some((k, count)) if *k == key => *count += 1.0,
                _ => histogram.push((key, 1.0)),
            }
        }
        Ok(Enumerator { n, h, histogram })
    }

    pub fn voxels(&self) -> usize {
        self.n
    }

    pub fn h_of(&self, config: usize) -> HStat {
        let (a, b) = self.h[config];
        [a as f64, b as f64]
    }

    /// log Z(φ), E_φ[H] and Var_φ[H] for the prior.
    pub fn prior_moments(&self, params: &IsingParams) -> ExactMoments {
        let logw: Vec<f64> = self
            .histogram
            .iter()
            .map(|&((a, b), count)| count.ln() + params.beta * a as f64 + params.h * b as f64)
            .collect();
        let log_z = log_sum_exp(logw.iter().copied());
        let weighted = self
            .histogram
            .iter()
            .zip(&logw)
            .map(|(&((a, b), _), &lw)| ([a as f64, b as f64], (lw - log_z).exp()));
        let (mean_h, cov_h) = moments(weighted);
        ExactMoments {
            log_z,
            mean_h,
            cov_h,
        }
    }

    pub fn log_partition(&self, params: &IsingParams) -> f64 {
        log_sum_exp(
            self.histogram
                .iter()
                .map(|&((a, b), count)| count.ln() + params.beta * a as f64 + params.h * b as f64),
        )
    }

    /// Distribution ∝ exp{β Σ θ_s θ_t + Σ h_s θ_s}.
    pub fn distribution(&self, beta: f64, site_field: &[f64]) -> Result<ExactDistribution> {
        if site_field.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "site field has {} values, lattice has {} voxels",
                site_field.len(),
                self.n
            )));
        }
        let logw: Vec<f64> = (0..self.h.len())
            .map(|c| {
                let field: f64 = (0..self.n)
                    .filter(|&s| (c >> s) & 1 == 1)
                    .map(|s| site_field[s])
                    .sum();
                beta * self.h[c].0 as f64 + field
            })
            .collect();
        let log_z = log_sum_exp(logw.iter().copied());
        let probs: Vec<f64> = logw.iter().map(|&lw| (lw - log_z).exp()).collect();
        let (mean_h, cov_h) = moments(probs.iter().enumerate().map(|(c, &p)| (self.h_of(c), p)));
        let mut marginals = vec![0.0; self.n];
        for (c, &p) in probs.iter().enumerate() {
            for (s, m) in marginals.iter_mut().enumerate() {
                if (c >> s) & 1 == 1 {
                    *m += p;
                }
            }
        }
        Ok(ExactDistribution {
            log_z,
            probs,
            mean_h,
            cov_h,
            marginals,
        })
    }
}

fn moments(weighted: impl Iterator<Item = (HStat, f64)> + Clone) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut m = [0.0; 2];
    for (h, p) in weighted.clone() {
        m[0] += p * h[0];
        m[1] += p * h[1];
    }
    let mut c = [[0.0; 2]; 2];
    for (h, p) in weighted {
        let d = [h[0] - m[0], h[1] - m[1]];
        c[0][0] += p * d[0] * d[0];
        c[0][1] += p * d[0] * d[1];
        c[1][1] += p * d[1] * d[1];
    }
    c[1][0] = c[0][1];
    (m, c)
}

/// Exact distribution of the prior (no `site_field`) or of the field with
/// coupling β and per-voxel external field h_s.
pub fn enumerate_exact(
    lattice: &Lattice3D,
    params: &IsingParams,
    site_field: Option<&FieldPerSite>,
) -> Result<ExactDistribution> {
    let e = Enumerator::new(lattice)?;
    let uniform;
    let field = match site_field {
        Some(f) => f.values(),
        None => {
            uniform = vec![params.h; lattice.len()];
            &uniform
        }
    };
    e.distribution(params.beta, field)
}
