//! Multiple-testing decisions and their error rates.
//!
//! LIS and local-FDR statistics are thresholded with the running-mean
//! step-up rule: sort ascending and reject the k smallest, with k the largest
//! index whose running mean is at most α. BH uses k = max{i : p_(i) ≤ iα/N}.
//! Ties are ordered by (value, voxel index), so a cut inside a run of equal
//! values rejects the lower-indexed voxels of that run.

use serde::{Deserialize, Serialize};

use crate::emission::{log_nonnull_density, log_null_density, MixtureParams};
use crate::error::{Error, Result};
use crate::lattice::{StatField, StateField};
use crate::stats::{logistic, two_sided_p};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Procedure {
    Or,
    Lis,
    Slis,
    Plis,
    Bh,
    Lfdr,
    Clfdr,
}

impl Procedure {
    pub fn name(self) -> &'static str {
        match self {
            Procedure::Or => "OR",
            Procedure::Lis => "LIS",
            Procedure::Slis => "SLIS",
            Procedure::Plis => "PLIS",
            Procedure::Bh => "BH",
            Procedure::Lfdr => "LFDR",
            Procedure::Clfdr => "CLFDR",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub alpha: f64,
    pub procedure: Procedure,
}

impl DecisionConfig {
    pub fn new(alpha: f64, procedure: Procedure) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(DecisionConfig { alpha, procedure })
    }
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("FDR level must lie in (0, 1), got {alpha}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionResult {
    pub rejected: Vec<bool>,
    pub k: usize,
    /// Largest rejected statistic; `None` when nothing is rejected.
    pub threshold: Option<f64>,
}

impl DecisionResult {
    fn from_order(n: usize, order: &[usize], k: usize, values: &[f64]) -> Self {
        let mut rejected = vec![false; n];
        for &i in &order[..k] {
            rejected[i] = true;
        }
        DecisionResult {
            rejected,
            k,
            threshold: k.checked_sub(1).map(|last| values[order[last]]),
        }
    }

    /// Concatenate per-group decisions; the threshold is the largest group
    /// threshold.
    fn concat(parts: Vec<DecisionResult>) -> Self {
        let threshold = parts
            .iter()
            .filter_map(|d| d.threshold)
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))));
        let k = parts.iter().map(|d| d.k).sum();
        DecisionResult {
            rejected: parts.into_iter().flat_map(|d| d.rejected).collect(),
            k,
            threshold,
        }
    }
}

/// Indices sorted by (value, index).
fn ascending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

/// Running-mean step-up on posterior null probabilities (LIS or lfdr).
pub fn lis_stepup(values: &[f64], alpha: f64) -> DecisionResult {
    let order = ascending(values);
    let mut sum = 0.0;
    let mut k = 0;
    for (i, &s) in order.iter().enumerate() {
        sum += values[s];
        if sum / (i + 1) as f64 <= alpha {
            k = i + 1;
        }
    }
    DecisionResult::from_order(values.len(), &order, k, values)
}

/// Pooled LIS: one step-up over all groups' values. Decisions follow the
/// concatenated group order.
pub fn plis(groups: &[&[f64]], alpha: f64) -> DecisionResult {
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    lis_stepup(&pooled, alpha)
}

/// Separate LIS: one step-up per group at the same α, rejections united.
pub fn slis(groups: &[&[f64]], alpha: f64) -> DecisionResult {
    DecisionResult::concat(slis_groups(groups, alpha))
}

pub fn slis_groups(groups: &[&[f64]], alpha: f64) -> Vec<DecisionResult> {
    groups.iter().map(|g| lis_stepup(g, alpha)).collect()
}

/// Benjamini–Hochberg step-up on p-values.
pub fn bh(p_values: &[f64], alpha: f64) -> DecisionResult {
    let order = ascending(p_values);
    let n = p_values.len() as f64;
    let k = order
        .iter()
        .enumerate()
        .rev()
        .find(|&(i, &s)| p_values[s] <= (i + 1) as f64 * alpha / n)
        .map_or(0, |(i, _)| i + 1);
    DecisionResult::from_order(p_values.len(), &order, k, p_values)
}

/// BH on two-sided p-values 2(1 - Φ(|z|)).
pub fn bh_z(z: &[f64], alpha: f64) -> DecisionResult {
    let p: Vec<f64> = z.iter().map(|&v| two_sided_p(v)).collect();
    bh(&p, alpha)
}

/// lfdr_s = π₀f₀(x_s) / (π₀f₀(x_s) + (1 - π₀)f(x_s)).
pub fn local_fdr(stats: &StatField, null_prop: f64, mixture: &MixtureParams) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&null_prop) {
        return Err(Error::InvalidParameter(format!("null proportion {null_prop} outside [0, 1]")));
    }
    Ok(stats
        .values()
        .iter()
        .map(|&x| {
            if null_prop == 1.0 {
                1.0
            } else if null_prop == 0.0 {
                0.0
            } else {
                let log_odds = (1.0 - null_prop).ln() + log_nonnull_density(mixture, x)
                    - null_prop.ln()
                    - log_null_density(x);
                logistic(-log_odds)
            }
        })
        .collect())
}

/// Lfdr decision: running-mean step-up on lfdr values.
pub fn lfdr_decision(lfdr: &[f64], alpha: f64) -> DecisionResult {
    lis_stepup(lfdr, alpha)
}

/// CLfdr: per-group lfdr values pooled and thresholded together.
pub fn clfdr(groups: &[&[f64]], alpha: f64) -> DecisionResult {
    plis(groups, alpha)
}

/// Error tallies of one decision against the truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub fdp: f64,
    pub fnp: f64,
    pub tp: usize,
    pub k: usize,
}

/// FDP = false rejections / max(k, 1); FNP = false non-rejections / max(N - k, 1).
pub fn metrics(decision: &DecisionResult, truth: &StateField) -> Result<Metrics> {
    metrics_of(&decision.rejected, truth.values())
}

pub fn metrics_of(rejected: &[bool], truth: &[u8]) -> Result<Metrics> {
    if rejected.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} decisions for {} true states",
            rejected.len(),
            truth.len()
        )));
    }
    let mut k = 0;
    let mut tp = 0;
    let mut fn_ = 0;
    for (&r, &t) in rejected.iter().zip(truth) {
        match (r, t == 1) {
            (true, true) => {
                k += 1;
                tp += 1;
            }
            (true, false) => k += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let n = rejected.len();
    Ok(Metrics {
        fdp: (k - tp) as f64 / k.max(1) as f64,
        fnp: fn_ as f64 / (n - k).max(1) as f64,
        tp,
        k,
    })
}

/// Mean and its Monte Carlo standard error (sample sd / √M).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let m = values.len();
        if m == 0 {
            return MeanSe { mean: f64::NAN, se: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let se = if m > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        } else {
            0.0
        };
        MeanSe { mean, se }
    }
}

/// Replication averages: FDR, FNR and ATP estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub fdr: MeanSe,
    pub fnr: MeanSe,
    pub atp: MeanSe,
    pub replications: usize,
}

pub fn aggregate(runs: &[Metrics]) -> AggregateMetrics {
    let col = |f: fn(&Metrics) -> f64| MeanSe::of(&runs.iter().map(f).collect::<Vec<_>>());
    AggregateMetrics {
        fdr: col(|m| m.fdp),
        fnr: col(|m| m.fnp),
        atp: col(|m| m.tp as f64),
        replications: runs.len(),
    }
}
