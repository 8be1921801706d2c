//! CLI behavior: exit codes, stage caching, dependency rebuilds.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_shm-voi")
}

fn tmp_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli-tests")
}

fn tiny_config(dir: &Path, out: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(
        &path,
        format!(
            r#"
case = "scour"
master_seed = 11
output_dir = "{}"
horizon = 10

[mesh]
nx = 50
ny = 2

[samples]
n_theta = 8
n_chain = 1000
n_reliability_draws = 200
n_prior_mcs = 500

[surrogate]
scour_points = 41
scour_tail_max = 120.0
scour_tail_points = 20

[wgrid]
count = 30
"#,
            out.display()
        ),
    )
    .unwrap();
    path
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).output().unwrap()
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = run(&["voi", "--config", "/definitely/not/here.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_field_reports_suggestion_and_exit_2() {
    let dir = tmp_root().join("bad");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.toml");
    std::fs::write(&path, "sensor = 3\n").unwrap();
    let out = run(&["voi", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("sensor"), "{msg}");
    assert!(msg.contains("expected"), "{msg}");
}

#[test]
fn rerun_is_a_cache_hit_and_bytes_are_stable() {
    let root = tmp_root().join("idempotence");
    let out_dir = root.join("out");
    let cfg = tiny_config(&root, &out_dir);
    let cfg = cfg.to_str().unwrap();

    let first = run(&["voi", "--config", cfg]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let table = out_dir.join("voi").join("voi.csv");
    let bytes_run1 = std::fs::read(&table).unwrap();

    // Second run: cache hit, nothing recomputed.
    let second = run(&["voi", "--config", cfg]);
    assert!(second.status.success());
    let stdout = String::from_utf8_lossy(&second.stdout);
    assert!(stdout.contains("cache hit"), "{stdout}");
    assert_eq!(std::fs::read(&table).unwrap(), bytes_run1);

    // Full rebuild from scratch reproduces the table byte for byte.
    std::fs::remove_dir_all(&out_dir).unwrap();
    let third = run(&["voi", "--config", cfg]);
    assert!(third.status.success());
    assert_eq!(std::fs::read(&table).unwrap(), bytes_run1);
}

#[test]
fn deleting_intermediates_still_reproduces_final_outputs() {
    let root = tmp_root().join("dag");
    let out_dir = root.join("out");
    let cfg = tiny_config(&root, &out_dir);
    let cfg = cfg.to_str().unwrap();

    assert!(run(&["update", "--config", cfg]).status.success());
    assert!(run(&["voi", "--config", cfg]).status.success());
    let voi_bytes = std::fs::read(out_dir.join("voi/voi.csv")).unwrap();
    let upd_bytes = std::fs::read(out_dir.join("update/posterior_summary.csv")).unwrap();

    // Remove intermediates: the surrogate cache and the simulated history.
    std::fs::remove_dir_all(out_dir.join("cache")).unwrap();
    std::fs::remove_dir_all(out_dir.join("simulate-data")).unwrap();
    std::fs::remove_dir_all(out_dir.join("voi")).unwrap();
    std::fs::remove_dir_all(out_dir.join("update")).unwrap();

    assert!(run(&["voi", "--config", cfg]).status.success());
    assert!(run(&["update", "--config", cfg]).status.success());
    assert_eq!(std::fs::read(out_dir.join("voi/voi.csv")).unwrap(), voi_bytes);
    assert_eq!(
        std::fs::read(out_dir.join("update/posterior_summary.csv")).unwrap(),
        upd_bytes
    );
}

#[test]
fn seed_override_changes_outputs() {
    let root = tmp_root().join("seeds");
    let out_a = root.join("a");
    let out_b = root.join("b");
    let cfg_a = tiny_config(&root.join("ca"), &out_a);
    let cfg_b = tiny_config(&root.join("cb"), &out_b);
    assert!(run(&["lcc-prior", "--config", cfg_a.to_str().unwrap()]).status.success());
    assert!(run(&[
        "lcc-prior",
        "--config",
        cfg_b.to_str().unwrap(),
        "--seed",
        "999",
    ])
    .status
    .success());
    let a = std::fs::read(out_a.join("lcc-prior/table.csv")).unwrap();
    let b = std::fs::read(out_b.join("lcc-prior/table.csv")).unwrap();
    assert_ne!(a, b, "different master seeds must move the Monte Carlo tables");
}

#[test]
fn emit_plots_writes_extra_csvs() {
    let root = tmp_root().join("plots");
    let out_dir = root.join("out");
    let cfg = tiny_config(&root, &out_dir);
    assert!(run(&[
        "lcc-prior",
        "--config",
        cfg.to_str().unwrap(),
        "--emit-plots",
    ])
    .status
    .success());
    let entries: Vec<String> = std::fs::read_dir(out_dir.join("lcc-prior"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(
        entries.iter().any(|n| n.starts_with("cost_vs_w")),
        "missing plot CSVs in {entries:?}"
    );
}
