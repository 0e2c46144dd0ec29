//! Observation model: N(0, 1) under the null, an L-component normal mixture
//! under the alternative, and the transforms used to bring two-sample data
//! onto the z scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::StatField;
use crate::stats::{log_sum_exp, norm_quantile, normal_log_pdf, t_sf};

/// Non-null mixture Σ_l p_l N(μ_l, σ_l²).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let l = weights.len();
        if l == 0 {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        }
        if means.len() != l || variances.len() != l {
            return Err(Error::InvalidParameter(format!(
                "mixture has {l} weights, {} means, {} variances",
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidParameter(format!("weights {weights:?} outside [0, 1]")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite(format!("mixture means {means:?}")));
        }
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "mixture variances must be positive, got {variances:?}"
            )));
        }
        Ok(MixtureParams {
            weights,
            means,
            variances,
        })
    }

    pub fn single(mean: f64, variance: f64) -> Result<Self> {
        MixtureParams::new(vec![1.0], vec![mean], vec![variance])
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Reorder components by `perm` (component `i` of the result is
    /// component `perm[i]` of `self`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        MixtureParams::new(
            perm.iter().map(|&i| self.weights[i]).collect(),
            perm.iter().map(|&i| self.means[i]).collect(),
            perm.iter().map(|&i| self.variances[i]).collect(),
        )
    }

    /// log(p_l f_l(x)) for each component; `-inf` for zero-weight components.
    pub fn log_weighted_components(&self, x: f64) -> impl Iterator<Item = f64> + Clone + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(move |((&p, &m), &v)| {
                if p > 0.0 {
                    p.ln() + normal_log_pdf(x, m, v)
                } else {
                    f64::NEG_INFINITY
                }
            })
    }
}

pub fn log_null_density(x: f64) -> f64 {
    normal_log_pdf(x, 0.0, 1.0)
}

/// φ(x; 0, 1).
pub fn null_density(x: f64) -> f64 {
    log_null_density(x).exp()
}

pub fn log_nonnull_density(mixture: &MixtureParams, x: f64) -> f64 {
    log_sum_exp(mixture.log_weighted_components(x))
}

/// Σ_l p_l φ(x; μ_l, σ_l²).
pub fn nonnull_density(mixture: &MixtureParams, x: f64) -> f64 {
    log_nonnull_density(mixture, x).exp()
}

/// Per-voxel, per-component non-null responsibilities
/// w_s(l) = γ_s(1) p_l f_l(x_s) / f(x_s), stored row-major (voxel, component).
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    components: usize,
    w: Vec<f64>,
}

impl Responsibilities {
    pub fn components(&self) -> usize {
        self.components
    }

    pub fn voxels(&self) -> usize {
        self.w.len() / self.components
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.w[s * self.components..(s + 1) * self.components]
    }

    pub fn get(&self, s: usize, l: usize) -> f64 {
        self.w[s * self.components + l]
    }

    /// Σ_s w_s(l) for each component.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.components];
        for row in self.w.chunks_exact(self.components) {
            for (acc, &v) in sums.iter_mut().zip(row) {
                *acc += v;
            }
        }
        sums
    }
}

pub fn responsibilities(
    mixture: &MixtureParams,
    gamma1: &[f64],
    stats: &StatField,
) -> Result<Responsibilities> {
    if gamma1.len() != stats.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} posterior probabilities for {} statistics",
            gamma1.len(),
            stats.len()
        )));
    }
    if let Some(g) = gamma1.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(Error::InvalidParameter(format!("posterior probability {g} outside [0, 1]")));
    }
    let l = mixture.components();
    let mut w = Vec::with_capacity(l * stats.len());
    let mut logs = vec![0.0; l];
    for (&g, &x) in gamma1.iter().zip(stats.values()) {
        for (slot, v) in logs.iter_mut().zip(mixture.log_weighted_components(x)) {
            *slot = v;
        }
        let log_f = log_sum_exp(logs.iter().copied());
        if log_f == f64::NEG_INFINITY {
            // All components underflowed; give the mass to the nearest one.
            let nearest = (0..l)
                .filter(|&i| mixture.weights[i] > 0.0)
                .min_by(|&a, &b| {
                    let za = (x - mixture.means[a]).abs() / mixture.variances[a].sqrt();
                    let zb = (x - mixture.means[b]).abs() / mixture.variances[b].sqrt();
                    za.total_cmp(&zb)
                })
                .unwrap_or(0);
            w.extend((0..l).map(|i| if i == nearest { g } else { 0.0 }));
        } else {
            w.extend(logs.iter().map(|&v| g * (v - log_f).exp()));
        }
    }
    Ok(Responsibilities { components: l, w })
}

/// Sample size, mean and (n - 1)-divisor variance of one group at one voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupSummary {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
}

impl GroupSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        GroupSummary { n, mean, var }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
}

/// Two-sample Welch t statistic (a minus b) with Satterthwaite degrees of freedom.
pub fn welch_t(a: &GroupSummary, b: &GroupSummary) -> Result<WelchResult> {
    for (name, g) in [("a", a), ("b", b)] {
        if g.n < 2 {
            return Err(Error::InvalidParameter(format!(
                "group {name} has {} subjects, need at least 2",
                g.n
            )));
        }
        if !g.mean.is_finite() || !(g.var >= 0.0 && g.var.is_finite()) {
            return Err(Error::NonFinite(format!("group {name} summary {g:?}")));
        }
    }
    let va = a.var / a.n as f64;
    let vb = b.var / b.n as f64;
    let se2 = va + vb;
    if se2 <= 0.0 {
        return Err(Error::InvalidParameter(
            "zero variance in both groups".into(),
        ));
    }
    let t = (a.mean - b.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.n - 1) as f64 + vb * vb / (b.n - 1) as f64);
    Ok(WelchResult { t, df })
}

/// Smallest tail probability passed to the normal quantile.
pub const TAIL_FLOOR: f64 = 1e-300;

/// z = Φ⁻¹(G₀(t)) with G₀ the central t CDF on `df` degrees of freedom.
///
/// Computed from the upper tail of |t| and mirrored, so the map is exactly
/// odd and keeps precision for large |t|.
pub fn t_to_z(t: f64, df: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::NonFinite(format!("t statistic {t}")));
    }
    if !(df > 0.0) {
        return Err(Error::InvalidParameter(format!("degrees of freedom {df}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let upper = t_sf(t.abs(), df).max(TAIL_FLOOR);
    let z = -norm_quantile(upper);
    Ok(if t > 0.0 { z } else { -z })
}
