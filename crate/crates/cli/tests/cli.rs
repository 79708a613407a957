use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fbsde(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fbsde"));
    cmd.args(args).env_remove("FBSDE_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("small.conf");
    fs::write(
        &path,
        format!(
            "problem.name = nonlinear1d\n\
             problem.steps = 20\n\
             sweep.degrees = 2,3\n\
             sweep.samples = 32,64\n\
             sweep.trials = 2\n\
             oracle.grid_nodes = 201\n\
             oracle.coarse_nodes = 61\n\
             oracle.control_nodes = 41\n\
             oracle.reference_samples = 256\n\
             output.runtime = false\n\
             output.dir = {}\n{extra}",
            dir.join("out").display()
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_results_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = fbsde(&["--jobs", "2", "run", &cfg], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = dir.path().join("out/results.csv");
    let first = fs::read_to_string(&results).unwrap();
    let mut lines = first.lines();
    assert_eq!(
        lines.next().unwrap(),
        "problem,drift,estimator,basis_count,samples,trial,mean_rae,runtime_ms,seed"
    );
    assert_eq!(lines.count(), 4 * 2 * 2 * 2);
    assert!(dir.path().join("out/manifest.json").exists());

    let again = fbsde(&["run", &cfg], &[]);
    assert!(again.status.success());
    assert_eq!(fs::read_to_string(&results).unwrap(), first);
}

#[test]
fn seed_environment_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "sweep.estimators = taylor_noiseless\n");
    assert!(fbsde(&["run", &cfg], &[]).status.success());
    let base = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert!(fbsde(&["run", &cfg], &[("FBSDE_SEED", "7")]).status.success());
    let other = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert_ne!(base, other);
    let manifest = fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 7"));
}

#[test]
fn heatmap_from_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "sweep.estimators = taylor_noiseless, em_noisy\n");
    assert!(fbsde(&["run", &cfg], &[]).status.success());
    let results = dir.path().join("out/results.csv");
    let out = fbsde(&["heatmap", results.to_str().unwrap()], &[]);
    assert!(out.status.success());
    let map = fs::read_to_string(dir.path().join("out/heatmap_taylor_noiseless.csv")).unwrap();
    let rows: Vec<&str> = map.lines().collect();
    assert_eq!(rows[0], "basis_count,32,64");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("3,"));
    assert!(rows[2].starts_with("4,"));
}

#[test]
fn heatmap_missing_column_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "estimator,samples,mean_rae\nx,1,0.5\n").unwrap();
    let out = fbsde(&["heatmap", path.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("basis_count"));
}

#[test]
fn bad_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "sweep.widgets = 3\n");
    let out = fbsde(&["run", &cfg], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("widgets"));
}

#[test]
fn missing_config_exits_2() {
    let out = fbsde(&["run", "/nonexistent/config.conf"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cartpole_oracle_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cp.conf");
    fs::write(
        &path,
        "problem.name = cartpole_lqr\n\
         problem.steps = 20\n\
         drift.kind = suboptimal\n\
         sweep.samples = 256\n\
         oracle.reference_samples = 256\n\
         diagnose.resamples = 50\n\
         diagnose.cells = 4\n",
    )
    .unwrap();
    let out_dir = dir.path().join("cp");
    let out = fbsde(
        &["oracle", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json = fs::read_to_string(out_dir.join("riccati.json")).unwrap();
    assert!(json.contains("\"gain\": null"));
    let out = fbsde(
        &["diagnose", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bv = fs::read_to_string(out_dir.join("bias_variance.csv")).unwrap();
    assert_eq!(bv.lines().count(), 1 + 4 * 4);
    assert!(out_dir.join("bias_bound.csv").exists());
}
