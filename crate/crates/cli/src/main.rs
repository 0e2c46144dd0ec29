//! `hmrf`: simulation studies, ingestion, grouped analysis and BH from the
//! command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error. Error
//! lines on stderr start with `error:`. `HMRF_THREADS` caps the worker pool.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hmrf_core::gridio::{read_grid_any, ElementKind};
use hmrf_core::harness::{emit_report, run_study};
use hmrf_core::lattice::Dims;
use hmrf_core::pipeline::{
    analyze_grids, bh_outputs, ingest_table, read_p_values, write_analysis, write_ingest, IngestSpec,
};
use toml::{Table, Value};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<hmrf_core::Error> for CliError {
    fn from(e: hmrf_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(name = "hmrf", about = "Hidden Markov random field multiple testing on 3D lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated simulation study and write report.csv, report.json
    /// and the resolved config.toml.
    Simulate(SimulateArgs),
    /// Turn a subject table (or t/df table) into a z grid.
    Ingest(IngestArgs),
    /// Fit each group, pool with PLIS and compare with BH.
    Analyze(AnalyzeArgs),
    /// Benjamini-Hochberg on a list of p-values, one per line.
    Bh(BhArgs),
    /// Print the version.
    Version,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML config; keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// study1, study2 or twogroup [default: study1]
    #[arg(long)]
    preset: Option<String>,
    /// desk or paper [default: desk]
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Swept parameter: beta, h or mu1.
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Single μ₁ sweep point (shorthand for --sweep mu1 --values V).
    #[arg(long, conflicts_with_all = ["sweep", "values"])]
    mu1: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "hmrf-out")]
    out: PathBuf,
    /// Also write per-replicate truth and decision grids to OUT/dumps.
    #[arg(long)]
    dump: bool,
}

#[derive(Args)]
struct IngestArgs {
    /// CSV with voxel (or x,y,z), subject, group, value columns, or
    /// voxel (or x,y,z), t, df columns.
    #[arg(long)]
    table: PathBuf,
    /// Grid shape NX,NY,NZ (required without --mask).
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// u8 mask grid restricting the table's voxels.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Groups A,B for t = mean(A) - mean(B) [default: sorted names].
    #[arg(long, value_delimiter = ',')]
    contrast: Option<Vec<String>>,
    /// Output z grid; the mask and exclusion log are written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// z grid (HMRF1 or x,y,z,value CSV).
    #[arg(long)]
    z: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    /// i32 group label grid [default: one group].
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Grid shape NX,NY,NZ for CSV inputs.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// desk or paper [default: paper]
    #[arg(long)]
    scale: Option<String>,
    /// FDR level [default: 0.001]
    #[arg(long)]
    alpha: Option<f64>,
    /// Non-null mixture components [default: 2]
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BhArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Decision CSV path; the JSON summary goes beside it. Without it the CSV
    /// is printed to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn seed_value(seed: u64) -> Result<Value, CliError> {
    i64::try_from(seed)
        .map(Value::Integer)
        .map_err(|_| CliError::Usage(format!("seed {seed} exceeds {}", i64::MAX)))
}

fn parse_dims(d: &[usize]) -> Result<Dims, CliError> {
    match d {
        [x, y, z] if *x > 0 && *y > 0 && *z > 0 => Ok(Dims::new(*x, *y, *z)),
        _ => Err(CliError::Usage(format!("--dims needs three positive sizes, got {d:?}"))),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut flags = Table::new();
    if let Some(s) = a.seed {
        flags.insert("seed".into(), seed_value(s)?);
    }
    if let Some(m) = a.replications {
        flags.insert("replications".into(), Value::Integer(m as i64));
    }
    let floats = |v: &[f64]| Value::Array(v.iter().map(|&x| Value::Float(x)).collect());
    if let Some(mu) = a.mu1 {
        flags.insert("sweep_param".into(), Value::String("mu1".into()));
        flags.insert("sweep_values".into(), floats(&[mu]));
    }
    if let Some(p) = a.sweep {
        flags.insert("sweep_param".into(), Value::String(p));
    }
    if let Some(v) = a.values {
        flags.insert("sweep_values".into(), floats(&v));
    }
    let cfg = config::resolve_study(a.config.as_deref(), a.preset.as_deref(), a.scale.as_deref(), flags)?;
    let echo = config::echo(&cfg)?;
    create_dir(&a.out)?;
    let dumps = a.dump.then(|| a.out.join("dumps"));
    let report = run_study(&cfg, dumps.as_deref())?;
    for p in &report.points {
        if !p.failures.is_empty() {
            log::warn!(
                "sweep value {}: {} of {} replicates failed estimation and were excluded",
                p.sweep_value,
                p.failures.len(),
                cfg.replications
            );
        }
    }
    emit_report(&report, &a.out.join("report.csv"))?;
    write_text(&a.out.join("config.toml"), &echo)
}

fn ingest(a: IngestArgs) -> Result<(), CliError> {
    let dims = a.dims.as_deref().map(parse_dims).transpose()?;
    let mask = match &a.mask {
        Some(p) => {
            let g = read_grid_any(p, dims, ElementKind::U8)?;
            Some((g.dims, hmrf_core::gridio::grid_to_mask(&g)?))
        }
        None => None,
    };
    let dims = match (&mask, dims) {
        (Some((d, _)), _) => *d,
        (None, Some(d)) => d,
        (None, None) => return Err(CliError::Usage("ingest needs --dims or --mask".into())),
    };
    let contrast = match a.contrast {
        None => None,
        Some(c) if c.len() == 2 => Some([c[0].clone(), c[1].clone()]),
        Some(c) => return Err(CliError::Usage(format!("--contrast needs two group names, got {c:?}"))),
    };
    let text = fs::read_to_string(&a.table)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", a.table.display())))?;
    let spec = IngestSpec {
        dims,
        mask: mask.map(|(_, m)| m),
        contrast,
    };
    let result = ingest_table(&text, &spec)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", a.table.display())))?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let paths = write_ingest(&result, &a.out)?;
    if !result.excluded.is_empty() {
        log::warn!(
            "{} voxel(s) excluded, see {}",
            result.excluded.len(),
            paths.exclusions.display()
        );
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let mut flags = Table::new();
    if let Some(x) = a.alpha {
        flags.insert("alpha".into(), Value::Float(x));
    }
    if let Some(l) = a.components {
        flags.insert("components".into(), Value::Integer(l as i64));
    }
    if let Some(s) = a.seed {
        flags.insert("seed".into(), seed_value(s)?);
    }
    let cfg = config::resolve_analyze(a.config.as_deref(), a.scale.as_deref(), flags)?;
    let dims = a.dims.as_deref().map(parse_dims).transpose()?;
    let z = read_grid_any(&a.z, dims, ElementKind::F64)?;
    let dims = Some(z.dims);
    let mask = a.mask.as_deref().map(|p| read_grid_any(p, dims, ElementKind::U8)).transpose()?;
    let labels = a.labels.as_deref().map(|p| read_grid_any(p, dims, ElementKind::I32)).transpose()?;
    let echo = config::echo(&cfg)?;
    let result = analyze_grids(&z, mask.as_ref(), labels.as_ref(), &cfg)?;
    write_analysis(&result, &cfg, &a.out)?;
    write_text(&a.out.join("config.toml"), &echo)
}

fn bh(a: BhArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.input)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", a.input.display())))?;
    let p = read_p_values(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", a.input.display())))?;
    let (csv, summary, _) = bh_outputs(&p, a.alpha).map_err(|e| CliError::Usage(e.to_string()))?;
    match a.out {
        Some(path) => {
            fs::write(&path, csv).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            let json = path.with_extension("json");
            fs::write(&json, summary).map_err(|e| CliError::Runtime(format!("{}: {e}", json.display())))
        }
        None => {
            print!("{}", String::from_utf8_lossy(&csv));
            Ok(())
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("HMRF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("HMRF_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Ingest(a) => ingest(a),
        Command::Analyze(a) => analyze(a),
        Command::Bh(a) => bh(a),
        Command::Version => {
            println!("hmrf {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
