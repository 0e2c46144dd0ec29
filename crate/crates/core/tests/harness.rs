mod common;

use std::fs;

use hmrf_core::fdr::metrics_of;
use hmrf_core::gridio::{read_grid, GridData};
use hmrf_core::harness::{dump_stem, emit_report, run_study, ChainSettings, Scale, StudyConfig};

fn tiny(preset: &str) -> StudyConfig {
    let mut c = StudyConfig::preset(preset, Scale::Desk).unwrap();
    c.lattice = [5, 5, 4];
    c.replications = 2;
    c.sweep_values.truncate(1);
    c.truth_burn_in = 50;
    let chain = ChainSettings { n_samples: 60, burn_in: 20, ..c.gem.chain };
    c.gem.chain = chain;
    c.gem.final_chain = ChainSettings { n_samples: 150, ..chain };
    c.oracle_chain = ChainSettings { n_samples: 150, ..chain };
    c.gem.max_iters = 6;
    c
}

fn flags(path: &std::path::Path) -> Vec<u8> {
    match read_grid(path).unwrap().data {
        GridData::U8(v) => v,
        other => panic!("expected u8 grid, got {:?}", other.kind()),
    }
}

#[test]
fn dumped_decisions_reproduce_report_metrics() {
    for preset in ["study1", "twogroup"] {
        let mut c = tiny(preset);
        c.replications = 1;
        let dir = tempfile::tempdir().unwrap();
        let report = run_study(&c, Some(dir.path())).unwrap();
        let point = &report.points[0];
        assert_eq!(point.replications_used, 1, "{:?}", point.failures);
        let stem = dump_stem(0, 0);
        let groups = if preset == "twogroup" { 2 } else { 1 };
        let truth: Vec<Vec<u8>> =
            (1..=groups).map(|g| flags(&dir.path().join(format!("{stem}_g{g}_truth.hmrf")))).collect();
        for summary in &point.procedures {
            let name = &summary.procedure;
            let (rejected, states): (Vec<bool>, Vec<u8>) = match name.strip_prefix("PLIS_G") {
                Some(g) => {
                    let g: usize = g.parse().unwrap();
                    let d = flags(&dir.path().join(format!("{stem}_g{g}_PLIS.hmrf")));
                    (d.iter().map(|&v| v == 1).collect(), truth[g - 1].clone())
                }
                None => {
                    let mut r = Vec::new();
                    for g in 1..=groups {
                        r.extend(flags(&dir.path().join(format!("{stem}_g{g}_{name}.hmrf"))).iter().map(|&v| v == 1));
                    }
                    (r, truth.concat())
                }
            };
            let m = metrics_of(&rejected, &states).unwrap();
            assert_eq!(summary.metrics.fdr.mean, m.fdp, "{preset} {name}");
            assert_eq!(summary.metrics.fnr.mean, m.fnp, "{preset} {name}");
            assert_eq!(summary.metrics.atp.mean, m.tp as f64, "{preset} {name}");
        }
    }
}

#[test]
fn reports_are_identical_across_thread_counts() {
    for preset in ["study1", "twogroup"] {
        let c = tiny(preset);
        let emit = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let report = pool.install(|| run_study(&c, None)).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let csv = dir.path().join("report.csv");
            let json = emit_report(&report, &csv).unwrap();
            (fs::read(&csv).unwrap(), fs::read(json).unwrap())
        };
        assert_eq!(emit(1), emit(3), "{preset}");
    }
}

#[test]
fn seed_changes_the_replicates() {
    let a = tiny("study1");
    let b = StudyConfig { seed: 2, ..a.clone() };
    assert_ne!(run_study(&a, None).unwrap().points, run_study(&b, None).unwrap().points);
}
