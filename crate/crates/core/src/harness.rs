//! Replicated simulation studies.
//!
//! A study sweeps one parameter over a grid. At every grid point it draws M
//! replicates (truth field from the prior sampler, statistics from the
//! emission model), runs each procedure and averages FDP, FNP and true
//! positives across replicates. Replicate seeds are
//! derive(master, [study, sweep index, replicate]), so the report does not
//! depend on how replicates are scheduled.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emission::MixtureParams;
use crate::error::{Error, Result};
use crate::fdr::{self, aggregate, check_alpha, metrics_of, AggregateMetrics, DecisionResult, Metrics};
use crate::gem::{estep_marginals, run_gem, GemConfig, ModelParams};
use crate::gridio::{flags_to_grid, write_grid};
use crate::ising::{GibbsChain, GibbsConfig, IsingParams, SweepOrder};
use crate::lattice::{Dims, Lattice3D, StatField, StateField};
use crate::rng::{chain_rng, derive_seed, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    /// One group, one non-null component.
    SingleL1,
    /// One group, two non-null components.
    SingleL2,
    /// Two independent groups pooled for the decision.
    TwoGroup,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::SingleL1 => "single_l1",
            StudyKind::SingleL2 => "single_l2",
            StudyKind::TwoGroup => "two_group",
        }
    }

    fn id(self) -> u64 {
        match self {
            StudyKind::SingleL1 => 1,
            StudyKind::SingleL2 => 2,
            StudyKind::TwoGroup => 3,
        }
    }

    fn groups(self) -> usize {
        if self == StudyKind::TwoGroup {
            2
        } else {
            1
        }
    }

    fn components(self) -> usize {
        if self == StudyKind::SingleL2 {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Beta,
    H,
    /// The first component mean. In two-group studies group g gets μ₁ + g.
    Mu1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Paper,
}

/// True parameters of one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub beta: f64,
    pub h: f64,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GroupSpec {
    pub fn ising(&self) -> Result<IsingParams> {
        IsingParams::new(self.beta, self.h)
    }

    pub fn mixture(&self) -> Result<MixtureParams> {
        MixtureParams::new(self.weights.clone(), self.means.clone(), self.variances.clone())
    }

    pub fn model(&self) -> Result<ModelParams> {
        Ok(ModelParams {
            ising: self.ising()?,
            mixture: self.mixture()?,
        })
    }
}

/// Gibbs chain length; seeds are assigned per replicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    pub n_samples: usize,
    pub burn_in: usize,
    #[serde(default)]
    pub sweep_order: SweepOrder,
}

impl ChainSettings {
    pub fn with_seed(&self, seed: u64) -> GibbsConfig {
        GibbsConfig {
            n_samples: self.n_samples,
            burn_in: self.burn_in,
            seed,
            sweep_order: self.sweep_order,
        }
    }
}

/// GEM settings shared by every replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GemSettings {
    pub max_iters: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub armijo_alpha: f64,
    pub penalty_a: f64,
    pub penalty_b: f64,
    pub chain: ChainSettings,
    /// Chain for the posterior summary at Φ̂.
    pub final_chain: ChainSettings,
}

impl GemSettings {
    pub(crate) fn config(&self, initial: ModelParams, seed: u64) -> GemConfig {
        let mut c = GemConfig::new(initial, self.chain.with_seed(seed), self.max_iters);
        c.eps1 = self.eps1;
        c.eps2 = self.eps2;
        c.eps3 = self.eps3;
        c.armijo_alpha = self.armijo_alpha;
        c.penalty_a = self.penalty_a;
        c.penalty_b = self.penalty_b;
        c.final_gibbs = Some(self.final_chain.with_seed(derive_seed(seed, &[tag::FINAL])));
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub study: StudyKind,
    pub lattice: [usize; 3],
    pub replications: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Prior sweeps from the all-zero state before the truth field is read.
    pub truth_burn_in: usize,
    pub sweep_param: SweepParam,
    pub sweep_values: Vec<f64>,
    /// Fixed parameters per group; the swept parameter overrides them.
    pub groups: Vec<GroupSpec>,
    pub gem: GemSettings,
    /// Posterior chain at the true Φ for the oracle procedure.
    pub oracle_chain: ChainSettings,
}

fn single_group(beta: f64, h: f64, mu: f64) -> GroupSpec {
    GroupSpec {
        beta,
        h,
        weights: vec![1.0],
        means: vec![mu],
        variances: vec![1.0],
    }
}

impl StudyConfig {
    /// Named preset: `study1`, `study2` or `twogroup`.
    pub fn preset(name: &str, scale: Scale) -> Result<Self> {
        let (study, sweep_param, sweep_values, groups) = match name {
            "study1" => (
                StudyKind::SingleL1,
                SweepParam::Beta,
                vec![0.2, 0.4, 0.6, 0.8],
                vec![single_group(0.8, -2.5, 2.0)],
            ),
            "study2" => (
                StudyKind::SingleL2,
                SweepParam::Mu1,
                (0..7).map(|i| -4.0 + 0.5 * i as f64).collect(),
                vec![GroupSpec {
                    beta: 0.8,
                    h: -2.5,
                    weights: vec![0.5, 0.5],
                    means: vec![-2.0, 2.0],
                    variances: vec![1.0, 1.0],
                }],
            ),
            "twogroup" => (
                StudyKind::TwoGroup,
                SweepParam::Mu1,
                (0..7).map(|i| 1.0 + 0.5 * i as f64).collect(),
                vec![single_group(0.2, -1.0, 1.0), single_group(0.8, -2.5, 2.0)],
            ),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown preset {other:?} (expected study1, study2 or twogroup)"
                )))
            }
        };
        let (side, replications, chain, final_chain, max_iters) = match scale {
            Scale::Desk => (
                10,
                50,
                ChainSettings { n_samples: 500, burn_in: 100, sweep_order: SweepOrder::Raster },
                ChainSettings { n_samples: 2000, burn_in: 200, sweep_order: SweepOrder::Raster },
                100,
            ),
            Scale::Paper => {
                let c = ChainSettings { n_samples: 5000, burn_in: 1000, sweep_order: SweepOrder::Raster };
                (15, 200, c, c, 5000)
            }
        };
        Ok(StudyConfig {
            study,
            lattice: [side; 3],
            replications,
            alpha: 0.1,
            seed: 1,
            truth_burn_in: 1000,
            sweep_param,
            sweep_values,
            groups,
            gem: GemSettings {
                max_iters,
                eps1: 1e-3,
                eps2: 1e-3,
                eps3: 1e-4,
                armijo_alpha: 1e-4,
                penalty_a: 1.0,
                penalty_b: 2.0,
                chain,
                final_chain,
            },
            oracle_chain: final_chain,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.sweep_values.is_empty() {
            return bad("sweep_values must not be empty".into());
        }
        if self.lattice.contains(&0) {
            return bad(format!("lattice dimensions must be positive, got {:?}", self.lattice));
        }
        check_alpha(self.alpha)?;
        if self.groups.len() != self.study.groups() {
            return bad(format!(
                "{} study needs {} group(s), got {}",
                self.study.name(),
                self.study.groups(),
                self.groups.len()
            ));
        }
        for (i, &v) in self.sweep_values.iter().enumerate() {
            if !v.is_finite() {
                return bad(format!("sweep value {i} is not finite"));
            }
            for g in self.point_groups(v) {
                g.ising()?;
                let m = g.mixture()?;
                if m.components() != self.study.components() {
                    return bad(format!(
                        "{} study needs {} component(s), got {}",
                        self.study.name(),
                        self.study.components(),
                        m.components()
                    ));
                }
            }
        }
        for c in [&self.gem.chain, &self.gem.final_chain, &self.oracle_chain] {
            if c.n_samples < 2 {
                return bad("chains need at least 2 samples".into());
            }
        }
        let probe = self.gem.config(self.initial_params(&self.groups)?[0].clone(), 0);
        probe.validate()
    }

    /// True group parameters at one sweep value.
    pub fn point_groups(&self, value: f64) -> Vec<GroupSpec> {
        let mut groups = self.groups.clone();
        for (g, spec) in groups.iter_mut().enumerate() {
            match self.sweep_param {
                SweepParam::Beta => spec.beta = value,
                SweepParam::H => spec.h = value,
                SweepParam::Mu1 => {
                    if self.study == StudyKind::TwoGroup {
                        spec.means[0] = value + g as f64;
                    } else {
                        spec.means[0] = value;
                    }
                }
            }
        }
        groups
    }

    /// GEM starting values for each group: β = h = 0, σ² = 2, μ_l = μ_l + 1,
    /// p_1 = 0.3 for two components. Two-group studies start both groups
    /// at the first group's μ + 1.
    pub fn initial_params(&self, groups: &[GroupSpec]) -> Result<Vec<ModelParams>> {
        let zero = IsingParams::new(0.0, 0.0)?;
        groups
            .iter()
            .map(|g| {
                let mixture = match self.study {
                    StudyKind::SingleL1 => MixtureParams::single(g.means[0] + 1.0, 2.0)?,
                    StudyKind::SingleL2 => MixtureParams::new(
                        vec![0.3, 0.7],
                        g.means.iter().map(|m| m + 1.0).collect(),
                        vec![2.0; g.means.len()],
                    )?,
                    StudyKind::TwoGroup => MixtureParams::single(groups[0].means[0] + 1.0, 2.0)?,
                };
                Ok(ModelParams { ising: zero, mixture })
            })
            .collect()
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.lattice[0], self.lattice[1], self.lattice[2])
    }
}

/// Truth and statistics for every group of one replicate.
#[derive(Clone, Debug)]
pub struct Replicate {
    pub truths: Vec<StateField>,
    pub stats: Vec<StatField>,
}

/// Draw θ from the prior sampler after `burn_in` sweeps from all zeros, then
/// x_s ~ N(0, 1) when θ_s = 0 and the group mixture when θ_s = 1.
pub fn generate_replicate(
    lattice: &Lattice3D,
    groups: &[GroupSpec],
    burn_in: usize,
    seed: u64,
) -> Result<Replicate> {
    let mut truths = Vec::with_capacity(groups.len());
    let mut stats = Vec::with_capacity(groups.len());
    for (g, spec) in groups.iter().enumerate() {
        let phi = spec.ising()?;
        let mixture = spec.mixture()?;
        let mut chain = GibbsChain::prior(
            lattice,
            &phi,
            derive_seed(seed, &[tag::TRUTH, g as u64]),
            SweepOrder::Raster,
        );
        for _ in 0..burn_in {
            chain.sweep();
        }
        let theta = chain.into_state();
        let mut rng = chain_rng(derive_seed(seed, &[tag::DATA, g as u64]));
        let x = theta
            .iter()
            .map(|&t| {
                let z: f64 = StandardNormal.sample(&mut rng);
                if t == 0 {
                    z
                } else {
                    let u: f64 = rng.random();
                    let l = pick_component(mixture.weights(), u);
                    mixture.means()[l] + mixture.variances()[l].sqrt() * z
                }
            })
            .collect();
        truths.push(StateField::new(theta)?);
        stats.push(StatField::new(x)?);
    }
    Ok(Replicate { truths, stats })
}

fn pick_component(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (l, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return l;
        }
    }
    weights.len() - 1
}

/// Aggregated metrics of one procedure at one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcedureSummary {
    pub procedure: String,
    pub metrics: AggregateMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub sweep_value: f64,
    /// Replicates whose metrics entered the averages.
    pub replications_used: usize,
    /// Replicates dropped because an estimation run failed.
    pub failures: Vec<ReplicateFailure>,
    /// GEM runs (over groups and replicates) that met the stopping rule
    /// before `max_iters`.
    pub gem_converged: usize,
    pub gem_runs: usize,
    pub procedures: Vec<ProcedureSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub points: Vec<PointReport>,
}

impl StudyReport {
    pub fn point(&self, sweep_value: f64) -> Option<&PointReport> {
        self.points.iter().find(|p| p.sweep_value == sweep_value)
    }
}

impl PointReport {
    pub fn procedure(&self, name: &str) -> Option<&AggregateMetrics> {
        self.procedures.iter().find(|p| p.procedure == name).map(|p| &p.metrics)
    }
}

struct ReplicateOutcome {
    metrics: Vec<(String, Metrics)>,
    converged: usize,
}

/// Split a pooled decision back into per-group flags.
fn split(rejected: &[bool], n: usize) -> Vec<&[bool]> {
    rejected.chunks(n).collect()
}

fn concat_truth(truths: &[StateField]) -> Vec<u8> {
    truths.iter().flat_map(|t| t.values().iter().copied()).collect()
}

fn realized_null_prop(truth: &StateField) -> f64 {
    1.0 - truth.count_ones() as f64 / truth.len() as f64
}

fn run_replicate(
    config: &StudyConfig,
    lattice: &Lattice3D,
    groups: &[GroupSpec],
    seed: u64,
    dump: Option<(&Path, String)>,
) -> Result<ReplicateOutcome> {
    let rep = generate_replicate(lattice, groups, config.truth_burn_in, seed)?;
    let initial = config.initial_params(groups)?;
    let n = lattice.len();
    let mut fits = Vec::with_capacity(groups.len());
    let mut converged = 0;
    for (g, stats) in rep.stats.iter().enumerate() {
        let gem = config.gem.config(initial[g].clone(), derive_seed(seed, &[tag::GEM, g as u64]));
        let fit = run_gem(lattice, stats, &gem)?;
        converged += fit.trace.converged as usize;
        fits.push(fit);
    }
    let alpha = config.alpha;
    let truth = concat_truth(&rep.truths);
    let z: Vec<f64> = rep.stats.iter().flat_map(|s| s.values().iter().copied()).collect();
    let mut decisions: Vec<(String, DecisionResult)> = Vec::new();

    if config.study == StudyKind::TwoGroup {
        let lis: Vec<&[f64]> = fits.iter().map(|f| f.summary.lis.as_slice()).collect();
        let lfdr = rep
            .stats
            .iter()
            .zip(&rep.truths)
            .zip(groups)
            .map(|((s, t), g)| fdr::local_fdr(s, realized_null_prop(t), &g.mixture()?))
            .collect::<Result<Vec<_>>>()?;
        let lfdr: Vec<&[f64]> = lfdr.iter().map(Vec::as_slice).collect();
        decisions.push(("BH".into(), fdr::bh_z(&z, alpha)));
        decisions.push(("CLFDR".into(), fdr::clfdr(&lfdr, alpha)));
        decisions.push(("SLIS".into(), fdr::slis(&lis, alpha)));
        decisions.push(("PLIS".into(), fdr::plis(&lis, alpha)));
    } else {
        let spec = &groups[0];
        let oracle_cfg = config.oracle_chain.with_seed(derive_seed(seed, &[tag::ORACLE]));
        let (oracle, _) = estep_marginals(lattice, &spec.model()?, &rep.stats[0], &oracle_cfg)?;
        let lfdr = fdr::local_fdr(&rep.stats[0], realized_null_prop(&rep.truths[0]), &spec.mixture()?)?;
        decisions.push(("OR".into(), fdr::lis_stepup(&oracle.lis, alpha)));
        decisions.push(("LIS".into(), fdr::lis_stepup(&fits[0].summary.lis, alpha)));
        decisions.push(("BH".into(), fdr::bh_z(&z, alpha)));
        decisions.push(("LFDR".into(), fdr::lfdr_decision(&lfdr, alpha)));
    }

    let mut metrics = Vec::with_capacity(decisions.len() + groups.len());
    for (name, d) in &decisions {
        metrics.push((name.clone(), metrics_of(&d.rejected, &truth)?));
        if name == "PLIS" {
            for (g, part) in split(&d.rejected, n).into_iter().enumerate() {
                metrics.push((format!("PLIS_G{}", g + 1), metrics_of(part, rep.truths[g].values())?));
            }
        }
    }
    if let Some((dir, stem)) = dump {
        for (g, t) in rep.truths.iter().enumerate() {
            let grid = flags_to_grid(lattice, t.values());
            write_grid(&dir.join(format!("{stem}_g{}_truth.hmrf", g + 1)), &grid)?;
        }
        for (name, d) in &decisions {
            for (g, part) in split(&d.rejected, n).into_iter().enumerate() {
                let flags: Vec<u8> = part.iter().map(|&r| r as u8).collect();
                let grid = flags_to_grid(lattice, &flags);
                write_grid(&dir.join(format!("{stem}_g{}_{name}.hmrf", g + 1)), &grid)?;
            }
        }
    }
    Ok(ReplicateOutcome { metrics, converged })
}

/// Dump file stem for a replicate: `p{point}_r{replicate}`.
pub fn dump_stem(point: usize, replicate: usize) -> String {
    format!("p{point}_r{replicate}")
}

/// Run every sweep point and replicate; with `dump` set, write the truth and
/// every decision of each replicate as flag grids named
/// `{dump_stem}_g{group}_{procedure}.hmrf` (`truth` for the truth field).
pub fn run_study(config: &StudyConfig, dump: Option<&Path>) -> Result<StudyReport> {
    config.validate()?;
    let lattice = Lattice3D::full(config.dims())?;
    if let Some(dir) = dump {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let m = config.replications;
    let jobs: Vec<(usize, usize)> = (0..config.sweep_values.len())
        .flat_map(|p| (0..m).map(move |r| (p, r)))
        .collect();
    let outcomes: Vec<Result<ReplicateOutcome>> = jobs
        .par_iter()
        .map(|&(p, r)| {
            let groups = config.point_groups(config.sweep_values[p]);
            let seed = derive_seed(config.seed, &[config.study.id(), p as u64, r as u64]);
            run_replicate(config, &lattice, &groups, seed, dump.map(|d| (d, dump_stem(p, r))))
        })
        .collect();

    let mut outcomes = outcomes.into_iter();
    let mut points = Vec::with_capacity(config.sweep_values.len());
    for &value in &config.sweep_values {
        let mut failures = Vec::new();
        let mut ok = Vec::new();
        for r in 0..m {
            match outcomes.next().expect("one outcome per job") {
                Ok(o) => ok.push(o),
                // I/O problems abort the study; estimation failures are tallied.
                Err(e @ Error::Io { .. }) => return Err(e),
                Err(e) => {
                    log::warn!("sweep value {value}, replicate {r}: {e}");
                    failures.push(ReplicateFailure { replicate: r, message: e.to_string() });
                }
            }
        }
        let names: Vec<String> = ok
            .first()
            .map(|o| o.metrics.iter().map(|(n, _)| n.clone()).collect())
            .unwrap_or_default();
        let procedures = names
            .iter()
            .enumerate()
            .map(|(i, name)| ProcedureSummary {
                procedure: name.clone(),
                metrics: aggregate(&ok.iter().map(|o| o.metrics[i].1).collect::<Vec<_>>()),
            })
            .collect();
        points.push(PointReport {
            sweep_value: value,
            replications_used: ok.len(),
            failures,
            gem_converged: ok.iter().map(|o| o.converged).sum(),
            gem_runs: ok.len() * config.study.groups(),
            procedures,
        });
    }
    Ok(StudyReport { config: config.clone(), points })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    study: &'a str,
    sweep_value: f64,
    procedure: &'a str,
    metric: &'a str,
    mean: f64,
    mc_se: f64,
}

#[derive(Serialize)]
struct Metadata<'a> {
    package: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a StudyConfig,
    points: Vec<PointMeta<'a>>,
}

#[derive(Serialize)]
struct PointMeta<'a> {
    sweep_value: f64,
    replications_used: usize,
    failures: &'a [ReplicateFailure],
    gem_converged: usize,
    gem_runs: usize,
}

/// Write the long-format CSV at `path` and the JSON metadata next to it with
/// the extension replaced by `.json`. Returns the JSON path.
pub fn emit_report(report: &StudyReport, path: &Path) -> Result<PathBuf> {
    let csv_bytes = report_csv(report)?;
    fs::write(path, csv_bytes).map_err(|e| Error::io(path, e))?;
    let json_path = path.with_extension("json");
    let meta = Metadata {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed: report.config.seed,
        config: &report.config,
        points: report
            .points
            .iter()
            .map(|p| PointMeta {
                sweep_value: p.sweep_value,
                replications_used: p.replications_used,
                failures: &p.failures,
                gem_converged: p.gem_converged,
                gem_runs: p.gem_runs,
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::InvalidParameter(format!("report metadata: {e}")))?;
    json.push('\n');
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(json_path)
}

/// Columns: study, sweep_value, procedure, metric, mean, mc_se. Metrics are
/// `fdr`, `fnr`, `atp` in that order.
pub fn report_csv(report: &StudyReport) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::InvalidParameter(format!("csv encoding: {e}"));
    w.write_record(["study", "sweep_value", "procedure", "metric", "mean", "mc_se"])
        .map_err(to_err)?;
    let study = report.config.study.name();
    for p in &report.points {
        for s in &p.procedures {
            let m = &s.metrics;
            for (metric, v) in [("fdr", m.fdr), ("fnr", m.fnr), ("atp", m.atp)] {
                w.serialize(CsvRow {
                    study,
                    sweep_value: p.sweep_value,
                    procedure: &s.procedure,
                    metric,
                    mean: v.mean,
                    mc_se: v.se,
                })
                .map_err(to_err)?;
            }
        }
    }
    w.into_inner()
        .map_err(|e| Error::InvalidParameter(format!("csv encoding: {e}")))
}
