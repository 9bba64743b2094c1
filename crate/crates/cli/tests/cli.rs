use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn floqlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_floqlab"))
        .args(args)
        .output()
        .expect("spawn floqlab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SFF_CONFIG: &str = r#"
samples = 60
seed = 11
[ensemble]
kind = "cue"
n = 8
[[statistics]]
name = "sff"
t_max = 16
[[statistics]]
name = "r2"
bins = 9
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_is_deterministic_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SFF_CONFIG);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let ra = floqlab(&[
        "run",
        "--config",
        &cfg,
        "--workers",
        "1",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert!(
        ra.status.success(),
        "{}",
        String::from_utf8_lossy(&ra.stderr)
    );
    let rb = floqlab(&[
        "run",
        "--config",
        &cfg,
        "--workers",
        "4",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert!(rb.status.success());
    for f in ["sff.csv", "r2.csv", "summary.txt", "accumulators.bin"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let csv = fs::read_to_string(a.join("sff.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "grid,measured,error,predicted,z,samples"
    );
    assert!(stdout(&ra).contains("[sff] max |z|"));

    let cmp = floqlab(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(cmp.status.success());
    assert!(stdout(&cmp).contains("[sff]"));

    let other = tmp.path().join("c");
    floqlab(&[
        "run",
        "--config",
        &cfg,
        "--seed",
        "12",
        "--out",
        other.to_str().unwrap(),
    ]);
    assert_ne!(
        fs::read(a.join("sff.csv")).unwrap(),
        fs::read(other.join("sff.csv")).unwrap()
    );

    let ins = floqlab(&["inspect", a.join("accumulators.bin").to_str().unwrap()]);
    assert!(ins.status.success());
    assert!(stdout(&ins).contains("sff: width 17, 60 samples"));
}

#[test]
fn gate_and_config_errors_set_exit_status() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SFF_CONFIG);
    let out = tmp.path().join("o");
    let r = floqlab(&[
        "run",
        "--config",
        &cfg,
        "--z-gate",
        "1e-9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(stdout(&r).contains("FAIL"));

    let bad = write_config(
        tmp.path(),
        &SFF_CONFIG.replace("samples = 60", "samples = 0"),
    );
    let r = floqlab(&["run", "--config", &bad]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("samples must be positive"));
}

#[test]
fn validate_reports_repeated_bonds_as_warnings() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("circuit.toml");
    fs::write(
        &spec,
        "lattice_dims = [3]\nq = 2\nboundary = [\"open\"]\nschedule = [[[0, 1]], [[1, 2]], [[0, 1]]]\n",
    )
    .unwrap();
    let r = floqlab(&["validate", "--config", spec.to_str().unwrap()]);
    assert!(r.status.success());
    let s = stdout(&r);
    assert!(s.contains("circuit spec OK: N = 8"), "{s}");
    assert!(s.contains("warning"), "{s}");

    fs::write(
        &spec,
        "lattice_dims = [3]\nq = 2\nboundary = [\"open\"]\nschedule = [[[0, 2]]]\n",
    )
    .unwrap();
    let r = floqlab(&["validate", "--config", spec.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn predict_single_statistic() {
    let r = floqlab(&[
        "predict",
        "--statistic",
        "sff",
        "--n",
        "16",
        "--t-max",
        "48",
    ]);
    assert!(r.status.success());
    let s = stdout(&r);
    let rows: Vec<&str> = s.lines().collect();
    assert_eq!(rows[0], "grid,predicted");
    assert_eq!(rows.len(), 50);
    assert_eq!(rows[1], "0.0000000000000000e0,2.5600000000000000e2");
    assert_eq!(rows[5], "4.0000000000000000e0,4.0000000000000000e0");
    assert_eq!(rows[49], "4.8000000000000000e1,1.6000000000000000e1");

    let r = floqlab(&[
        "predict",
        "--statistic",
        "nope",
        "--n",
        "16",
        "--t-max",
        "4",
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn predict_from_config_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SFF_CONFIG);
    let out = tmp.path().join("pred");
    let r = floqlab(&["predict", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(r.status.success());
    assert!(out.join("sff_predicted.csv").is_file());
    assert!(out.join("r2_predicted.csv").is_file());
}
