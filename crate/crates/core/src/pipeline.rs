//! File-level workflows: subject tables to z grids, grouped analysis of a z
//! grid, and BH on a list of p-values.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emission::{t_to_z, welch_t, GroupSummary, MixtureParams};
use crate::error::{Error, Result};
use crate::fdr::{self, check_alpha, DecisionResult};
use crate::gem::{run_gem, ModelParams, StepOutcome};
use crate::gridio::{values_to_grid, write_grid, Grid, GridData};
use crate::harness::{ChainSettings, GemSettings, Scale};
use crate::ising::{IsingParams, SweepOrder};
use crate::lattice::{Dims, Lattice3D, StatField};
use crate::rng::{derive_seed, tag};
use crate::stats::{log_sum_exp, normal_log_pdf, two_sided_p};

/// Variance floor for the initializing mixture fit.
const EM_VAR_FLOOR: f64 = 1e-3;
const EM_MAX_ITERS: usize = 500;
const EM_TOL: f64 = 1e-10;

// ---------------------------------------------------------------- ingest

/// Where the table's voxels live and which group difference to test.
#[derive(Clone, Debug)]
pub struct IngestSpec {
    pub dims: Dims,
    /// Cells allowed in the table; every cell of the mask must have data.
    /// Without a mask, the cells present in the table form the mask.
    pub mask: Option<Vec<bool>>,
    /// (a, b) for t = mean(a) - mean(b). Defaults to the two group names in
    /// sorted order.
    pub contrast: Option<[String; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Exclusion {
    pub cell: usize,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct IngestResult {
    pub dims: Dims,
    /// z per grid cell, NaN outside the resulting mask.
    pub z: Vec<f64>,
    pub mask: Vec<bool>,
    pub excluded: Vec<Exclusion>,
    /// Groups of a subject table, `None` for a t/df table.
    pub contrast: Option<[String; 2]>,
}

impl IngestResult {
    pub fn grid(&self) -> Grid {
        Grid {
            dims: self.dims,
            data: GridData::F64(self.z.clone()),
        }
    }
}

enum Layout {
    Subjects { subject: usize, group: usize, value: usize },
    TDf { t: usize, df: usize },
}

enum Locator {
    Voxel(usize),
    Xyz([usize; 3]),
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.into(),
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.eq_ignore_ascii_case(name))
}

fn field<'r>(rec: &'r csv::StringRecord, i: usize, line: u64) -> Result<&'r str> {
    rec.get(i)
        .ok_or_else(|| parse_err(line, format!("missing field {}", i + 1)))
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str, line: u64) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>()
        .map_err(|e| parse_err(line, format!("bad {what} {s:?}: {e}")))
}

/// Parse a subject table (`voxel|x,y,z, subject, group, value`) or a t/df
/// table (`voxel|x,y,z, t, df`), run a Welch test per cell and map t to z.
///
/// Cells whose two groups both have zero variance are excluded and logged.
pub fn ingest_table(text: &str, spec: &IngestSpec) -> Result<IngestResult> {
    let dims = spec.dims;
    if let Some(m) = &spec.mask {
        if m.len() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} cells, dims need {}",
                m.len(),
                dims.len()
            )));
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let locator = match (column(&headers, "voxel"), column(&headers, "x"), column(&headers, "y"), column(&headers, "z")) {
        (Some(v), _, _, _) => Locator::Voxel(v),
        (None, Some(x), Some(y), Some(z)) => Locator::Xyz([x, y, z]),
        _ => return Err(parse_err(1, "header needs a voxel column or x, y, z columns")),
    };
    let layout = match (
        column(&headers, "subject"),
        column(&headers, "group"),
        column(&headers, "value"),
        column(&headers, "t"),
        column(&headers, "df"),
    ) {
        (Some(subject), Some(group), Some(value), _, _) => Layout::Subjects { subject, group, value },
        (_, _, _, Some(t), Some(df)) => Layout::TDf { t, df },
        _ => {
            return Err(parse_err(
                1,
                "header needs subject, group, value columns or t, df columns",
            ))
        }
    };

    let mut group_names: Vec<String> = Vec::new();
    // cell -> per-group values, groups indexed by first appearance
    let mut subjects: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    let mut seen: HashSet<(usize, String)> = HashSet::new();
    let mut tdf: BTreeMap<usize, (f64, f64)> = BTreeMap::new();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let cell = match &locator {
            Locator::Voxel(i) => {
                let v: usize = parse_num(field(&rec, *i, line)?, "voxel index", line)?;
                if v >= dims.len() {
                    return Err(parse_err(line, format!("voxel {v} outside a grid of {} cells", dims.len())));
                }
                v
            }
            Locator::Xyz(cols) => {
                let mut c = [0usize; 3];
                for (k, &i) in cols.iter().enumerate() {
                    c[k] = parse_num(field(&rec, i, line)?, "coordinate", line)?;
                }
                if c[0] >= dims.nx || c[1] >= dims.ny || c[2] >= dims.nz {
                    return Err(parse_err(
                        line,
                        format!("cell ({},{},{}) outside {}x{}x{}", c[0], c[1], c[2], dims.nx, dims.ny, dims.nz),
                    ));
                }
                dims.linear(c[0], c[1], c[2])
            }
        };
        if let Some(m) = &spec.mask {
            if !m[cell] {
                let (x, y, z) = dims.coords(cell);
                return Err(parse_err(line, format!("cell ({x},{y},{z}) is outside the mask")));
            }
        }
        match layout {
            Layout::Subjects { subject, group, value } => {
                let subj = field(&rec, subject, line)?;
                if !seen.insert((cell, subj.to_string())) {
                    return Err(parse_err(line, format!("subject {subj:?} repeated for this voxel")));
                }
                let name = field(&rec, group, line)?;
                let gi = match group_names.iter().position(|g| g == name) {
                    Some(i) => i,
                    None => {
                        group_names.push(name.to_string());
                        group_names.len() - 1
                    }
                };
                if group_names.len() > 2 {
                    return Err(parse_err(line, format!("third group {name:?}; exactly two are supported")));
                }
                let v: f64 = parse_num(field(&rec, value, line)?, "value", line)?;
                if !v.is_finite() {
                    return Err(parse_err(line, format!("non-finite value {v}")));
                }
                let slot = subjects.entry(cell).or_insert_with(|| vec![Vec::new(), Vec::new()]);
                slot[gi].push(v);
            }
            Layout::TDf { t, df } => {
                let tv: f64 = parse_num(field(&rec, t, line)?, "t", line)?;
                let dv: f64 = parse_num(field(&rec, df, line)?, "df", line)?;
                if !tv.is_finite() || !(dv > 0.0 && dv.is_finite()) {
                    return Err(parse_err(line, format!("need finite t and positive df, got t={tv}, df={dv}")));
                }
                if tdf.insert(cell, (tv, dv)).is_some() {
                    return Err(parse_err(line, "voxel listed twice"));
                }
            }
        }
    }

    let coords = |cell: usize| {
        let (x, y, z) = dims.coords(cell);
        format!("({x},{y},{z})")
    };
    let cells: Vec<usize> = match &spec.mask {
        Some(m) => (0..dims.len()).filter(|&c| m[c]).collect(),
        None => match layout {
            Layout::Subjects { .. } => subjects.keys().copied().collect(),
            Layout::TDf { .. } => tdf.keys().copied().collect(),
        },
    };
    if cells.is_empty() {
        return Err(Error::EmptyMask);
    }

    let mut z = vec![f64::NAN; dims.len()];
    let mut mask = vec![false; dims.len()];
    let mut excluded = Vec::new();
    let contrast = match layout {
        Layout::TDf { .. } => {
            for &c in &cells {
                let &(t, df) = tdf
                    .get(&c)
                    .ok_or_else(|| Error::InvalidParameter(format!("mask cell {} has no row", coords(c))))?;
                z[c] = t_to_z(t, df)?;
                mask[c] = true;
            }
            None
        }
        Layout::Subjects { .. } => {
            if group_names.len() != 2 {
                return Err(Error::InvalidParameter(format!(
                    "subject table needs exactly two groups, found {}",
                    group_names.len()
                )));
            }
            let [a, b] = match &spec.contrast {
                Some(c) => c.clone(),
                None => {
                    let mut names = group_names.clone();
                    names.sort();
                    [names[0].clone(), names[1].clone()]
                }
            };
            let index = |name: &str| {
                group_names.iter().position(|g| g == name).ok_or_else(|| {
                    Error::InvalidParameter(format!("contrast group {name:?} not in the table"))
                })
            };
            let (ia, ib) = (index(&a)?, index(&b)?);
            if ia == ib {
                return Err(Error::InvalidParameter("contrast names the same group twice".into()));
            }
            for &c in &cells {
                let empty = vec![Vec::new(), Vec::new()];
                let vals = subjects.get(&c).unwrap_or(&empty);
                for (gi, name) in [(ia, &a), (ib, &b)] {
                    if vals[gi].len() < 2 {
                        return Err(Error::InvalidParameter(format!(
                            "group {name:?} has {} subject(s) at cell {}, need at least 2",
                            vals[gi].len(),
                            coords(c)
                        )));
                    }
                }
                let ga = GroupSummary::from_values(&vals[ia]);
                let gb = GroupSummary::from_values(&vals[ib]);
                if ga.var == 0.0 && gb.var == 0.0 {
                    log::warn!("cell {}: zero variance in both groups, excluded", coords(c));
                    excluded.push(Exclusion {
                        cell: c,
                        reason: "zero variance in both groups".into(),
                    });
                    continue;
                }
                let w = welch_t(&ga, &gb)?;
                z[c] = t_to_z(w.t, w.df)?;
                mask[c] = true;
            }
            Some([a, b])
        }
    };
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    Ok(IngestResult { dims, z, mask, excluded, contrast })
}

/// Paths written by [`write_ingest`].
#[derive(Clone, Debug)]
pub struct IngestOutputs {
    pub z: PathBuf,
    pub mask: PathBuf,
    pub exclusions: PathBuf,
}

/// Write the z grid at `out`, the mask as `<stem>.mask.hmrf` and the
/// exclusion log as `<stem>.excluded.csv`.
pub fn write_ingest(result: &IngestResult, out: &Path) -> Result<IngestOutputs> {
    let paths = IngestOutputs {
        z: out.to_path_buf(),
        mask: out.with_extension("mask.hmrf"),
        exclusions: out.with_extension("excluded.csv"),
    };
    write_grid(&paths.z, &result.grid())?;
    let mask = Grid {
        dims: result.dims,
        data: GridData::U8(result.mask.iter().map(|&m| m as u8).collect()),
    };
    write_grid(&paths.mask, &mask)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::InvalidParameter(format!("csv encoding: {e}"));
    w.write_record(["x", "y", "z", "reason"]).map_err(to_err)?;
    for e in &result.excluded {
        let (x, y, z) = result.dims.coords(e.cell);
        w.write_record([x.to_string(), y.to_string(), z.to_string(), e.reason.clone()])
            .map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidParameter(e.to_string()))?;
    fs::write(&paths.exclusions, bytes).map_err(|e| Error::io(&paths.exclusions, e))?;
    Ok(paths)
}

// --------------------------------------------------------------- analyze

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// FDR level of the pooled PLIS and BH decisions.
    pub alpha: f64,
    /// Non-null mixture components L.
    pub components: usize,
    /// BH level of the pre-pass that selects voxels for initialization.
    pub prepass_alpha: f64,
    /// Groups with fewer voxels are flagged in the report.
    pub min_group_voxels: usize,
    pub seed: u64,
    pub gem: GemSettings,
}

impl AnalyzeConfig {
    pub fn preset(scale: Scale) -> Self {
        let (chain, final_chain, max_iters) = match scale {
            Scale::Desk => (
                ChainSettings { n_samples: 500, burn_in: 100, sweep_order: SweepOrder::Raster },
                ChainSettings { n_samples: 2000, burn_in: 200, sweep_order: SweepOrder::Raster },
                100,
            ),
            Scale::Paper => {
                let c = ChainSettings { n_samples: 5000, burn_in: 1000, sweep_order: SweepOrder::Raster };
                (c, c, 5000)
            }
        };
        AnalyzeConfig {
            alpha: 0.001,
            components: 2,
            prepass_alpha: 0.1,
            min_group_voxels: 150,
            seed: 1,
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
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_alpha(self.prepass_alpha)?;
        if self.components == 0 {
            return Err(Error::InvalidParameter("components must be at least 1".into()));
        }
        let probe = ModelParams {
            ising: IsingParams::new(0.0, 0.0)?,
            mixture: MixtureParams::new(
                vec![1.0 / self.components as f64; self.components],
                vec![0.0; self.components],
                vec![1.0; self.components],
            )?,
        };
        self.gem.config(probe, 0).validate()
    }
}

/// Standard EM for an L-component normal mixture, started from equal-count
/// blocks of the sorted data.
pub fn fit_normal_mixture(x: &[f64], components: usize) -> Result<MixtureParams> {
    let l = components;
    if l == 0 || x.len() < 2 * l {
        return Err(Error::NotEnoughSamples(format!(
            "{} values for a {l}-component mixture",
            x.len()
        )));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut weights = vec![1.0 / l as f64; l];
    let mut means = Vec::with_capacity(l);
    let mut vars = Vec::with_capacity(l);
    for c in 0..l {
        let block = &sorted[c * n / l..(c + 1) * n / l];
        let g = GroupSummary::from_values(block);
        means.push(g.mean);
        vars.push(g.var.max(EM_VAR_FLOOR));
    }
    let mut r = vec![0.0; n * l];
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITERS {
        let mut ll = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let logs: Vec<f64> = (0..l)
                .map(|c| weights[c].ln() + normal_log_pdf(xi, means[c], vars[c]))
                .collect();
            let norm = log_sum_exp(logs.iter().copied());
            ll += norm;
            for c in 0..l {
                r[i * l + c] = (logs[c] - norm).exp();
            }
        }
        for c in 0..l {
            let sw: f64 = (0..n).map(|i| r[i * l + c]).sum();
            if sw <= 0.0 {
                continue;
            }
            weights[c] = sw / n as f64;
            means[c] = (0..n).map(|i| r[i * l + c] * x[i]).sum::<f64>() / sw;
            let ss: f64 = (0..n).map(|i| r[i * l + c] * (x[i] - means[c]).powi(2)).sum();
            vars[c] = (ss / sw).max(EM_VAR_FLOOR);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w = (*w / total).max(1e-12));
        if (ll - prev).abs() <= EM_TOL * ll.abs().max(1.0) {
            break;
        }
        prev = ll;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    MixtureParams::new(weights, means, vars)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupStatus {
    Fitted,
    Failed,
}

/// Per-group estimation outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub label: u32,
    pub voxels: usize,
    /// Fewer than `min_group_voxels` voxels.
    pub small: bool,
    /// Voxels claimed by the BH pre-pass.
    pub prepass_selected: usize,
    /// True when the pre-pass claimed fewer than 2L voxels and the
    /// initialization used the largest |z| instead.
    pub prepass_fallback: bool,
    pub status: GroupStatus,
    pub message: Option<String>,
    pub initial: Option<ModelParams>,
    pub estimate: Option<ModelParams>,
    pub converged: bool,
    pub iterations_used: usize,
    pub small_steps: usize,
    pub exhausted_steps: usize,
    pub gradient_fallbacks: usize,
    pub final_q1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Analysis {
    pub lattice: Lattice3D,
    /// z per lattice voxel.
    pub z: Vec<f64>,
    pub groups: Vec<GroupReport>,
    /// LIS per voxel, NaN in excluded groups.
    pub lis: Vec<f64>,
    /// Voxels of fitted groups.
    pub included: Vec<bool>,
    /// Pooled PLIS over included voxels, indexed by lattice voxel.
    pub plis: DecisionResult,
    pub p_values: Vec<f64>,
    /// BH over every voxel.
    pub bh: DecisionResult,
    /// In-mask cells dropped because z was not finite.
    pub dropped_nonfinite: usize,
}

/// Build the analysis lattice: mask ∧ finite z, labels default to group 0.
pub fn analysis_lattice(
    z: &Grid,
    mask: Option<&Grid>,
    labels: Option<&Grid>,
) -> Result<(Lattice3D, Vec<f64>, usize)> {
    let GridData::F64(values) = &z.data else {
        return Err(Error::InvalidParameter("z grid must hold f64 values".into()));
    };
    let dims = z.dims;
    for (name, g) in [("mask", mask), ("labels", labels)] {
        if let Some(g) = g {
            if g.dims != dims {
                return Err(Error::DimensionMismatch(format!("{name} grid shape differs from the z grid")));
            }
        }
    }
    let base = match mask {
        Some(m) => crate::gridio::grid_to_mask(m)?,
        None => vec![true; dims.len()],
    };
    let mut dropped = 0;
    let mut keep = vec![false; dims.len()];
    for c in 0..dims.len() {
        if base[c] {
            if values[c].is_finite() {
                keep[c] = true;
            } else if mask.is_some() {
                dropped += 1;
            }
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} in-mask cell(s) have non-finite z and are dropped");
    }
    let group_labels = match labels {
        Some(l) => Some(crate::gridio::grid_to_labels(l, &keep)?),
        None => None,
    };
    let lattice = Lattice3D::new(dims, &keep, group_labels.as_deref())?;
    let zs = (0..lattice.len()).map(|s| values[lattice.grid_index(s)]).collect();
    Ok((lattice, zs, dropped))
}

struct GroupFit {
    report: GroupReport,
    lis: Option<Vec<f64>>,
    members: Vec<usize>,
}

fn fit_group(lattice: &Lattice3D, z: &[f64], label: u32, config: &AnalyzeConfig) -> Result<GroupFit> {
    let (sub, members) = lattice.group_lattice(label)?;
    let gz: Vec<f64> = members.iter().map(|&s| z[s]).collect();
    let l = config.components;
    let small = members.len() < config.min_group_voxels;
    if small {
        log::warn!(
            "group {label} has {} voxels (< {}); estimates may be unstable",
            members.len(),
            config.min_group_voxels
        );
    }
    let pre = fdr::bh_z(&gz, config.prepass_alpha);
    let mut selected: Vec<f64> = gz.iter().zip(&pre.rejected).filter(|(_, &r)| r).map(|(&v, _)| v).collect();
    let fallback = selected.len() < 2 * l;
    if fallback {
        let take = (2 * l).max(gz.len() / 20).min(gz.len());
        let mut by_size = gz.clone();
        by_size.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        selected = by_size[..take].to_vec();
    }
    let mut report = GroupReport {
        label,
        voxels: members.len(),
        small,
        prepass_selected: pre.k,
        prepass_fallback: fallback,
        status: GroupStatus::Failed,
        message: None,
        initial: None,
        estimate: None,
        converged: false,
        iterations_used: 0,
        small_steps: 0,
        exhausted_steps: 0,
        gradient_fallbacks: 0,
        final_q1: None,
    };
    let fitted = fit_normal_mixture(&selected, l).and_then(|mixture| {
        let initial = ModelParams {
            ising: IsingParams::new(0.0, 0.0)?,
            mixture,
        };
        report.initial = Some(initial.clone());
        let gem = config
            .gem
            .config(initial, derive_seed(config.seed, &[tag::GROUP, label as u64]));
        run_gem(&sub, &StatField::new(gz.clone())?, &gem)
    });
    match fitted {
        Ok(fit) => {
            let t = &fit.trace;
            let count = |o: StepOutcome| t.iterations.iter().filter(|i| i.outcome == o).count();
            report.status = GroupStatus::Fitted;
            report.converged = t.converged;
            report.iterations_used = t.iterations_used;
            report.small_steps = count(StepOutcome::SmallStep);
            report.exhausted_steps = count(StepOutcome::Exhausted);
            report.gradient_fallbacks = t.iterations.iter().filter(|i| i.gradient_fallback).count();
            report.final_q1 = Some(t.final_q1);
            report.estimate = Some(fit.params);
            Ok(GroupFit { report, lis: Some(fit.summary.lis), members })
        }
        Err(e @ Error::Io { .. }) => Err(e),
        Err(e) => {
            log::warn!("group {label} excluded: {e}");
            report.message = Some(e.to_string());
            Ok(GroupFit { report, lis: None, members })
        }
    }
}

/// Fit every group, pool the fitted groups' LIS with PLIS at `alpha` and run
/// BH at `alpha` over all voxels. Groups whose estimation fails are left out
/// of the pooling and reported.
pub fn analyze(lattice: Lattice3D, z: Vec<f64>, config: &AnalyzeConfig) -> Result<Analysis> {
    config.validate()?;
    if z.len() != lattice.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} z values for {} voxels",
            z.len(),
            lattice.len()
        )));
    }
    let labels = lattice.group_ids();
    let fits = labels
        .par_iter()
        .map(|&g| fit_group(&lattice, &z, g, config))
        .collect::<Result<Vec<_>>>()?;
    let n = lattice.len();
    let mut lis = vec![f64::NAN; n];
    let mut included = vec![false; n];
    let mut pooled_lis: Vec<Vec<f64>> = Vec::new();
    let mut pooled_members: Vec<&[usize]> = Vec::new();
    for f in &fits {
        if let Some(v) = &f.lis {
            for (&s, &x) in f.members.iter().zip(v) {
                lis[s] = x;
                included[s] = true;
            }
            pooled_lis.push(v.clone());
            pooled_members.push(&f.members);
        }
    }
    let parts: Vec<&[f64]> = pooled_lis.iter().map(Vec::as_slice).collect();
    let pooled = fdr::plis(&parts, config.alpha);
    let mut rejected = vec![false; n];
    let mut offset = 0;
    for members in &pooled_members {
        for (i, &s) in members.iter().enumerate() {
            rejected[s] = pooled.rejected[offset + i];
        }
        offset += members.len();
    }
    let plis = DecisionResult {
        rejected,
        k: pooled.k,
        threshold: pooled.threshold,
    };
    let p_values: Vec<f64> = z.iter().map(|&v| two_sided_p(v)).collect();
    let bh = fdr::bh(&p_values, config.alpha);
    Ok(Analysis {
        lattice,
        z,
        groups: fits.into_iter().map(|f| f.report).collect(),
        lis,
        included,
        plis,
        p_values,
        bh,
        dropped_nonfinite: 0,
    })
}

/// [`analysis_lattice`] followed by [`analyze`].
pub fn analyze_grids(
    z: &Grid,
    mask: Option<&Grid>,
    labels: Option<&Grid>,
    config: &AnalyzeConfig,
) -> Result<Analysis> {
    let (lattice, zs, dropped) = analysis_lattice(z, mask, labels)?;
    let mut a = analyze(lattice, zs, config)?;
    a.dropped_nonfinite = dropped;
    Ok(a)
}

#[derive(Serialize)]
struct DecisionSummary<'a> {
    procedure: &'a str,
    alpha: f64,
    k: usize,
    threshold: Option<f64>,
    voxels: usize,
}

#[derive(Serialize)]
struct EstimationReport<'a> {
    package: &'a str,
    version: &'a str,
    config: &'a AnalyzeConfig,
    voxels: usize,
    dropped_nonfinite: usize,
    groups: &'a [GroupReport],
}

/// Paths written by [`write_analysis`].
pub const ANALYSIS_FILES: [&str; 6] = [
    "decisions_plis.csv",
    "decisions_plis.json",
    "decisions_bh.csv",
    "decisions_bh.json",
    "estimation.json",
    "lis.hmrf",
];

fn decision_csv(
    lattice: &Lattice3D,
    statistic: &[f64],
    rejected: &[bool],
    keep: impl Fn(usize) -> bool,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::InvalidParameter(format!("csv encoding: {e}"));
    w.write_record(["x", "y", "z", "statistic", "rejected"]).map_err(to_err)?;
    for s in (0..lattice.len()).filter(|&s| keep(s)) {
        let (x, y, z) = lattice.coords(s);
        w.serialize((x, y, z, statistic[s], rejected[s] as u8)).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidParameter(format!("json encoding: {e}")))?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Write the decision CSVs and summaries, the estimation report and the LIS
/// grid into `dir`.
pub fn write_analysis(a: &Analysis, config: &AnalyzeConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = a.lattice.len();
    let included = |s: usize| a.included[s];
    write_file(&dir.join(ANALYSIS_FILES[0]), &decision_csv(&a.lattice, &a.lis, &a.plis.rejected, included)?)?;
    write_file(
        &dir.join(ANALYSIS_FILES[1]),
        &json_bytes(&DecisionSummary {
            procedure: "PLIS",
            alpha: config.alpha,
            k: a.plis.k,
            threshold: a.plis.threshold,
            voxels: a.included.iter().filter(|&&b| b).count(),
        })?,
    )?;
    write_file(&dir.join(ANALYSIS_FILES[2]), &decision_csv(&a.lattice, &a.p_values, &a.bh.rejected, |_| true)?)?;
    write_file(
        &dir.join(ANALYSIS_FILES[3]),
        &json_bytes(&DecisionSummary {
            procedure: "BH",
            alpha: config.alpha,
            k: a.bh.k,
            threshold: a.bh.threshold,
            voxels: n,
        })?,
    )?;
    write_file(
        &dir.join(ANALYSIS_FILES[4]),
        &json_bytes(&EstimationReport {
            package: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config,
            voxels: n,
            dropped_nonfinite: a.dropped_nonfinite,
            groups: &a.groups,
        })?,
    )?;
    write_grid(&dir.join(ANALYSIS_FILES[5]), &values_to_grid(&a.lattice, &a.lis))
}

// -------------------------------------------------------------------- bh

/// One p-value per line. Blank lines, `#` comments and a non-numeric first
/// line (header) are skipped.
pub fn read_p_values(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = line.parse::<f64>();
        if first && parsed.is_err() {
            first = false;
            continue;
        }
        first = false;
        let p = parsed.map_err(|e| parse_err(i as u64 + 1, format!("bad p-value {line:?}: {e}")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(parse_err(i as u64 + 1, format!("p-value {p} outside [0, 1]")));
        }
        out.push(p);
    }
    Ok(out)
}

/// BH decision as CSV rows `index,p_value,rejected` (input order) plus a JSON
/// summary.
pub fn bh_outputs(p: &[f64], alpha: f64) -> Result<(Vec<u8>, Vec<u8>, DecisionResult)> {
    check_alpha(alpha)?;
    let d = fdr::bh(p, alpha);
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::InvalidParameter(format!("csv encoding: {e}"));
    w.write_record(["index", "p_value", "rejected"]).map_err(to_err)?;
    for (i, (&pv, &r)) in p.iter().zip(&d.rejected).enumerate() {
        w.serialize((i, pv, r as u8)).map_err(to_err)?;
    }
    let csv_bytes = w.into_inner().map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let summary = json_bytes(&DecisionSummary {
        procedure: "BH",
        alpha,
        k: d.k,
        threshold: d.threshold,
        voxels: p.len(),
    })?;
    Ok((csv_bytes, summary, d))
}
