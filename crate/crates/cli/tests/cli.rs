use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hmrf_core::gridio::{read_grid, write_grid, Grid, GridData};
use hmrf_core::lattice::Dims;
use hmrf_core::pipeline::{ingest_table, IngestSpec};

const TINY_STUDY: &str = r#"
lattice = [4, 4, 4]
replications = 2
sweep_values = [0.5]
truth_burn_in = 50

[gem]
max_iters = 5

[gem.chain]
n_samples = 30
burn_in = 10

[gem.final_chain]
n_samples = 30
burn_in = 10

[oracle_chain]
n_samples = 30
burn_in = 10
"#;

const TINY_ANALYZE: &str = r#"
scale = "desk"
min_group_voxels = 10

[gem]
max_iters = 5

[gem.chain]
n_samples = 30
burn_in = 10

[gem.final_chain]
n_samples = 50
burn_in = 10
"#;

fn hmrf(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hmrf"));
    cmd.args(args).env_remove("HMRF_THREADS").env("RUST_LOG", "off");
    if let Some(t) = threads {
        cmd.env("HMRF_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path, names: &[&str]) -> Vec<Vec<u8>> {
    names.iter().map(|n| fs::read(dir.join(n)).unwrap()).collect()
}

#[test]
fn version_prints_package_version() {
    let o = hmrf(&["version"], None);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), format!("hmrf {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_2() {
    let o = hmrf(&["simulate", "--config", "/nonexistent/run.toml"], None);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error:") && err.contains("/nonexistent/run.toml"), "{err}");

    let o = hmrf(&["simulate", "--preset", "study9"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));

    let o = hmrf(&["frobnicate"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));

    let o = hmrf(&["version"], Some("zero"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("HMRF_THREADS"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "replicatoins = 3\n");
    let o = hmrf(&["simulate", "--config", s(&cfg)], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("replicatoins"), "{}", stderr(&o));
}

#[test]
fn simulate_is_deterministic_across_threads_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY_STUDY);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let o = hmrf(&["simulate", "--config", s(&cfg), "--seed", "42", "--out", s(&a)], Some("1"));
    assert!(o.status.success(), "{}", stderr(&o));
    let o = hmrf(&["simulate", "--config", s(&cfg), "--seed", "42", "--out", s(&b)], Some("3"));
    assert!(o.status.success(), "{}", stderr(&o));
    let names = ["report.csv", "report.json", "config.toml"];
    assert_eq!(files(&a, &names), files(&b, &names));

    let echo = a.join("config.toml");
    let o = hmrf(&["simulate", "--config", s(&echo), "--out", s(&c)], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(files(&a, &names), files(&c, &names));

    let csv = fs::read_to_string(a.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "study,sweep_value,procedure,metric,mean,mc_se");
    assert_eq!(lines.len(), 1 + 4 * 3);
    assert!(lines[1].starts_with("single_l1,0.5,OR,fdr,"));
    let json = fs::read_to_string(a.join("report.json")).unwrap();
    assert!(json.contains("\"seed\": 42"));
}

#[test]
fn twogroup_single_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY_STUDY);
    let out = dir.path().join("out");
    let o = hmrf(
        &["simulate", "--config", s(&cfg), "--preset", "twogroup", "--mu1", "1.0", "--replications", "1", "--out", s(&out)],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    let procs: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(procs.len(), 6 * 3);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("two_group,1.0,")), "{csv}");
    for p in ["BH", "CLFDR", "SLIS", "PLIS", "PLIS_G1", "PLIS_G2"] {
        assert!(procs.contains(&p));
    }
}

#[test]
fn ingest_writes_grid_mask_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut table = String::from("x,y,z,subject,group,value\n");
    let mut v = 0.0;
    for cell in 0..4 {
        for subj in 0..4 {
            v += 1.37;
            let (a, b) = if cell == 3 { (1.0, 1.0) } else { ((v * 7.1f64).sin() + cell as f64, (v * 3.3f64).cos()) };
            table += &format!("{cell},0,0,s{subj},pat,{a}\n{cell},0,0,c{subj},ctl,{b}\n");
        }
    }
    let path = write(dir.path(), "table.csv", &table);
    let out = dir.path().join("z.hmrf");
    let o = hmrf(&["ingest", "--table", s(&path), "--dims", "4,1,1", "--contrast", "pat,ctl", "--out", s(&out)], None);
    assert!(o.status.success(), "{}", stderr(&o));

    let expected = ingest_table(
        &table,
        &IngestSpec { dims: Dims::new(4, 1, 1), mask: None, contrast: Some(["pat".into(), "ctl".into()]) },
    )
    .unwrap();
    let grid = read_grid(&out).unwrap();
    let GridData::F64(z) = grid.data else { panic!("f64 grid expected") };
    for (a, b) in z.iter().zip(&expected.z) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert!(z[3].is_nan());
    let mask = read_grid(&dir.path().join("z.mask.hmrf")).unwrap();
    assert_eq!(mask.data, GridData::U8(vec![1, 1, 1, 0]));
    let log = fs::read_to_string(dir.path().join("z.excluded.csv")).unwrap();
    assert_eq!(log, "x,y,z,reason\n3,0,0,zero variance in both groups\n");
}

#[test]
fn ingest_rejects_out_of_mask_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mask = dir.path().join("mask.hmrf");
    write_grid(&mask, &Grid::new(Dims::new(2, 1, 1), GridData::U8(vec![1, 0])).unwrap()).unwrap();
    let table = write(dir.path(), "t.csv", "voxel,subject,group,value\n0,a,A,1\n1,b,A,2\n");
    let o = hmrf(&["ingest", "--table", s(&table), "--mask", s(&mask), "--out", s(&dir.path().join("z.hmrf"))], None);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error:") && err.contains("line 3") && err.contains("outside the mask"), "{err}");
    let o = hmrf(&["ingest", "--table", s(&table), "--out", s(&dir.path().join("z.hmrf"))], None);
    assert_eq!(o.status.code(), Some(2));
}

fn synthetic_z(dims: Dims) -> Vec<f64> {
    (0..dims.len())
        .map(|c| {
            let (x, y, _) = dims.coords(c);
            let noise = ((c as f64 * 12.9898).sin() * 43758.5453).fract();
            if x < 2 && y < 2 {
                4.0 + noise
            } else {
                noise
            }
        })
        .collect()
}

#[test]
fn analyze_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let dims = Dims::new(6, 6, 3);
    let zpath = dir.path().join("z.hmrf");
    write_grid(&zpath, &Grid::new(dims, GridData::F64(synthetic_z(dims))).unwrap()).unwrap();
    let labels: Vec<i32> = (0..dims.len()).map(|c| (dims.coords(c).2 == 2) as i32).collect();
    let lpath = dir.path().join("labels.hmrf");
    write_grid(&lpath, &Grid::new(dims, GridData::I32(labels)).unwrap()).unwrap();
    let cfg = write(dir.path(), "a.toml", TINY_ANALYZE);
    let names = [
        "decisions_plis.csv",
        "decisions_plis.json",
        "decisions_bh.csv",
        "decisions_bh.json",
        "estimation.json",
        "lis.hmrf",
        "config.toml",
    ];
    let mut outs = Vec::new();
    for (i, threads) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let o = hmrf(
            &["analyze", "--z", s(&zpath), "--labels", s(&lpath), "--config", s(&cfg), "--alpha", "0.05", "--out", s(&out)],
            Some(threads),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(files(&out, &names));
    }
    assert_eq!(outs[0], outs[1]);

    let out0 = dir.path().join("out0");
    let rerun = dir.path().join("rerun");
    let o = hmrf(
        &["analyze", "--z", s(&zpath), "--labels", s(&lpath), "--config", s(&out0.join("config.toml")), "--out", s(&rerun)],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(files(&rerun, &names), outs[0]);

    let est = fs::read_to_string(out0.join("estimation.json")).unwrap();
    assert!(est.contains("\"label\": 0") && est.contains("\"label\": 1"));
    assert!(est.contains("\"alpha\": 0.05"));
    assert!(est.contains("\"status\": \"fitted\"") && !est.contains("\"failed\""), "{est}");
    let plis = fs::read_to_string(out0.join("decisions_plis.csv")).unwrap();
    assert_eq!(plis.lines().next(), Some("x,y,z,statistic,rejected"));
    assert_eq!(plis.lines().count(), 1 + dims.len());
}

#[test]
fn bh_on_p_value_list() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "p.txt", "p\n0.001\n0.02\n0.04\n0.9\n");
    let o = hmrf(&["bh", "--input", s(&input), "--alpha", "0.1"], None);
    assert!(o.status.success());
    assert_eq!(
        String::from_utf8_lossy(&o.stdout),
        "index,p_value,rejected\n0,0.001,1\n1,0.02,1\n2,0.04,1\n3,0.9,0\n"
    );
    let out = dir.path().join("bh.csv");
    let o = hmrf(&["bh", "--input", s(&input), "--alpha", "0.01", "--out", s(&out)], None);
    assert!(o.status.success());
    let summary = fs::read_to_string(dir.path().join("bh.json")).unwrap();
    assert!(summary.contains("\"k\": 1"), "{summary}");

    let bad = write(dir.path(), "bad.txt", "0.1\n2\n");
    let o = hmrf(&["bh", "--input", s(&bad)], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"));
    let o = hmrf(&["bh", "--input", s(&input), "--alpha", "1.5"], None);
    assert_eq!(o.status.code(), Some(2));
}
