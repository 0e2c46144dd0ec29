use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{h_stat, FieldPerSite, HStat, IsingParams};
use crate::error::{Error, Result};
use crate::lattice::{neighbor_sum_unchecked, Lattice3D, StateField};
use crate::rng::{chain_rng, ChainRng};
use crate::stats::logistic;

/// Colour classes at least this large are updated with rayon.
const PAR_CLASS_MIN: usize = 1 << 16;

/// Site visiting order within a sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepOrder {
    /// Voxels in index order.
    #[default]
    Raster,
    /// All even-parity voxels, then all odd-parity voxels. The two classes
    /// share no edges, so each half-sweep is an exact block update.
    Checkerboard,
}

/// One retained sample per full sweep after `burn_in` discarded sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default)]
    pub sweep_order: SweepOrder,
}

impl GibbsConfig {
    pub fn new(n_samples: usize, burn_in: usize, seed: u64) -> Self {
        GibbsConfig {
            n_samples,
            burn_in,
            seed,
            sweep_order: SweepOrder::Raster,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        GibbsConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Single-site Gibbs chain for a field with coupling β and either a uniform
/// or a per-voxel external field.
///
/// Conditional probabilities are tabulated per (voxel, neighbour count), so a
/// site update is one table lookup and one uniform draw.
pub struct GibbsChain<'a> {
    lattice: &'a Lattice3D,
    table: Vec<f64>,
    stride: usize,
    state: Vec<u8>,
    rng: ChainRng,
    order: SweepOrder,
    uniforms: Vec<f64>,
}

impl<'a> GibbsChain<'a> {
    /// Chain targeting the prior P_φ(θ), started from all zeros.
    pub fn prior(lattice: &'a Lattice3D, params: &IsingParams, seed: u64, order: SweepOrder) -> Self {
        let table = (0..=6)
            .map(|n| logistic(params.beta * n as f64 + params.h))
            .collect();
        GibbsChain::build(lattice, table, 0, seed, order)
    }

    /// Chain targeting exp{β Σ θ_s θ_t + Σ h_s θ_s}, started from all zeros.
    pub fn with_site_field(
        lattice: &'a Lattice3D,
        beta: f64,
        field: &FieldPerSite,
        seed: u64,
        order: SweepOrder,
    ) -> Result<Self> {
        if field.len() != lattice.len() {
            return Err(Error::DimensionMismatch(format!(
                "site field has {} values, lattice has {} voxels",
                field.len(),
                lattice.len()
            )));
        }
        if !beta.is_finite() {
            return Err(Error::NonFinite(format!("coupling {beta}")));
        }
        let mut table = Vec::with_capacity(7 * lattice.len());
        for &h in field.values() {
            table.extend((0..=6).map(|n| logistic(beta * n as f64 + h)));
        }
        Ok(GibbsChain::build(lattice, table, 7, seed, order))
    }

    fn build(lattice: &'a Lattice3D, table: Vec<f64>, stride: usize, seed: u64, order: SweepOrder) -> Self {
        GibbsChain {
            lattice,
            table,
            stride,
            state: vec![0; lattice.len()],
            rng: chain_rng(seed),
            order,
            uniforms: Vec::new(),
        }
    }

    /// Replace the current configuration.
    pub fn set_state(&mut self, state: &[u8]) -> Result<()> {
        if state.len() != self.state.len() || state.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParameter(
                "initial state must be a 0/1 vector of lattice length".into(),
            ));
        }
        self.state.copy_from_slice(state);
        Ok(())
    }

    pub fn state(&self) -> &[u8] {
        &self.state
    }

    pub fn into_state(self) -> Vec<u8> {
        self.state
    }

    #[inline]
    fn prob(&self, s: usize, n: u32) -> f64 {
        self.table[s * self.stride + n as usize]
    }

    /// One full sweep over all voxels.
    pub fn sweep(&mut self) {
        match self.order {
            SweepOrder::Raster => {
                for s in 0..self.state.len() {
                    let n = neighbor_sum_unchecked(self.lattice, &self.state, s);
                    let u: f64 = self.rng.random();
                    self.state[s] = (u < self.prob(s, n)) as u8;
                }
            }
            SweepOrder::Checkerboard => {
                for color in 0..2 {
                    self.update_class(color);
                }
            }
        }
    }

    fn update_class(&mut self, color: usize) {
        let class = &self.lattice.color_classes()[color];
        // Uniforms are drawn in class order before any update, so the result
        // does not depend on how the updates are scheduled.
        self.uniforms.clear();
        for _ in 0..class.len() {
            self.uniforms.push(self.rng.random());
        }
        if class.len() >= PAR_CLASS_MIN {
            let new: Vec<u8> = class
                .par_iter()
                .zip(self.uniforms.par_iter())
                .map(|(&s, &u)| {
                    let s = s as usize;
                    let n = neighbor_sum_unchecked(self.lattice, &self.state, s);
                    (u < self.prob(s, n)) as u8
                })
                .collect();
            for (&s, v) in class.iter().zip(new) {
                self.state[s as usize] = v;
            }
        } else {
            for (i, &s) in class.iter().enumerate() {
                let s = s as usize;
                let n = neighbor_sum_unchecked(self.lattice, &self.state, s);
                self.state[s] = (self.uniforms[i] < self.prob(s, n)) as u8;
            }
        }
    }

    /// Discard `burn_in` sweeps, then call `visit` after each of `n_samples`
    /// further sweeps.
    pub fn run(&mut self, burn_in: usize, n_samples: usize, mut visit: impl FnMut(&[u8])) {
        for _ in 0..burn_in {
            self.sweep();
        }
        for _ in 0..n_samples {
            self.sweep();
            visit(&self.state);
        }
    }
}

/// Streaming reduction of a chain: H per retained sample and, optionally,
/// per-voxel counts of θ_s = 1.
#[derive(Clone, Debug)]
pub struct ChainSummary {
    pub h: Vec<HStat>,
    pub ones: Vec<u32>,
    pub final_state: Vec<u8>,
}

impl ChainSummary {
    pub fn n_samples(&self) -> usize {
        self.h.len()
    }

    /// Empirical P(θ_s = 1) per voxel. Empty when site counts were not tracked.
    pub fn marginals(&self) -> Vec<f64> {
        let n = self.h.len() as f64;
        self.ones.iter().map(|&c| c as f64 / n).collect()
    }
}

pub fn summarize_chain(
    chain: &mut GibbsChain<'_>,
    burn_in: usize,
    n_samples: usize,
    track_sites: bool,
) -> ChainSummary {
    let lattice = chain.lattice;
    let mut h = Vec::with_capacity(n_samples);
    let mut ones = if track_sites {
        vec![0u32; lattice.len()]
    } else {
        Vec::new()
    };
    chain.run(burn_in, n_samples, |state| {
        h.push(h_stat(lattice, state));
        if track_sites {
            for (c, &v) in ones.iter_mut().zip(state) {
                *c += v as u32;
            }
        }
    });
    ChainSummary {
        h,
        ones,
        final_state: chain.state.clone(),
    }
}

/// Samples from the Ising prior P_φ(θ), one per sweep after burn-in.
pub fn gibbs_sample_prior(
    lattice: &Lattice3D,
    params: &IsingParams,
    config: &GibbsConfig,
) -> Result<Vec<StateField>> {
    config.validate()?;
    let mut chain = GibbsChain::prior(lattice, params, config.seed, config.sweep_order);
    Ok(collect(&mut chain, config))
}

/// Samples from the field with coupling `params.beta` and per-voxel external
/// field `site_field` (the posterior P(θ | x) when `site_field` comes from
/// [`super::posterior_site_field`]). `params.h` is not used.
pub fn gibbs_sample_posterior(
    lattice: &Lattice3D,
    params: &IsingParams,
    site_field: &FieldPerSite,
    config: &GibbsConfig,
) -> Result<Vec<StateField>> {
    config.validate()?;
    let mut chain =
        GibbsChain::with_site_field(lattice, params.beta, site_field, config.seed, config.sweep_order)?;
    Ok(collect(&mut chain, config))
}

fn collect(chain: &mut GibbsChain<'_>, config: &GibbsConfig) -> Vec<StateField> {
    let mut out = Vec::with_capacity(config.n_samples);
    chain.run(config.burn_in, config.n_samples, |s| {
        out.push(StateField::new(s.to_vec()).expect("chain states are binary"))
    });
    out
}
