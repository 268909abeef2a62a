//! CLI acceptance: byte-identical reproducibility of every output CSV,
//! exit codes, and the analyze worked examples.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_traceshape"))
}

fn write_default_config(dir: &Path, duration: u64, seed: u64) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(
        &path,
        format!(
            r#"schema_version = 1

[workload]
kind = "cbr"
rate = 2.8

[scheduler]
kind = "enhanced"
gamma = 1024.0
alpha = 1.0

[trace]
n = 9615
P = 1682

[link]
c = 20

[sim]
duration_slots = {duration}
seed = {seed}
"#
        ),
    )
    .unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        format!(
            "{}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        ),
    )
}

#[test]
fn default_config_simulates_and_reruns_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_default_config(tmp.path(), 30_000, 1);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");

    for out in [&out_a, &out_b] {
        run_ok(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--series",
        ]);
    }
    for file in ["base_summary.csv", "base_sequence.csv", "base_series.csv"] {
        let a = fs::read(out_a.join(file)).unwrap();
        let b = fs::read(out_b.join(file)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    println!("[acceptance] criterion 9 (CSV byte-identical re-runs): PASS");
}

#[test]
fn echoed_config_reproduces_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_default_config(tmp.path(), 20_000, 9);
    let out_a = tmp.path().join("a");
    run_ok(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_a.to_str().unwrap(),
    ]);

    // Extract the `# `-prefixed TOML echo from the summary and use it as a
    // config file for a second run.
    let summary = fs::read_to_string(out_a.join("base_summary.csv")).unwrap();
    let echoed: String = summary
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim_start().to_string() + "\n")
        .collect();
    let echo_config = tmp.path().join("echo.toml");
    fs::write(&echo_config, echoed).unwrap();

    let out_b = tmp.path().join("b");
    run_ok(&[
        "simulate",
        "--config",
        echo_config.to_str().unwrap(),
        "--out-dir",
        out_b.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(out_a.join("base_summary.csv")).unwrap(),
        fs::read(out_b.join("base_summary.csv")).unwrap(),
        "run from the echoed config must reproduce the original bytes"
    );
    println!("[acceptance] config echo round-trip: PASS");
}

#[test]
fn capacity_violation_exits_2_naming_the_constraint() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_default_config(tmp.path(), 20_000, 1);
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace("alpha = 1.0", "alpha = 1.0\ny_max = 21");
    fs::write(&config, text).unwrap();

    let (code, output) = exit_code(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "config error must exit 2; output: {output}");
    assert!(
        output.contains("capacity"),
        "diagnostic must name the violated constraint: {output}"
    );
    println!("[acceptance] capacity validation exit code: PASS");
}

#[test]
fn seed_override_changes_only_random_outcomes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.toml");
    fs::write(
        &config,
        r#"schema_version = 1

[workload]
kind = "poisson"
rate = 0.4

[scheduler]
kind = "enhanced"

[trace]
n = 200
P = 40

[link]
c = 8

[sim]
duration_slots = 10000
seed = 1
"#,
    )
    .unwrap();

    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    run_ok(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_a.to_str().unwrap(),
        "--seed",
        "42",
    ]);
    run_ok(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_b.to_str().unwrap(),
        "--seed",
        "43",
    ]);
    let a = fs::read_to_string(out_a.join("base_summary.csv")).unwrap();
    let b = fs::read_to_string(out_b.join("base_summary.csv")).unwrap();
    assert!(a.contains("seed = 42"));
    assert!(b.contains("seed = 43"));
    assert_ne!(a, b, "different seeds over a random workload must differ");
    println!("[acceptance] --seed override: PASS");
}

#[test]
fn gamma_sweep_writes_three_row_table() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_default_config(tmp.path(), 20_000, 1);
    run_ok(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        tmp.path().to_str().unwrap(),
        "--axis",
        "gamma",
        "--values",
        "100,1024,4096",
    ]);
    let table = fs::read_to_string(tmp.path().join("base_sweep.csv")).unwrap();
    let data_rows: Vec<&str> = table
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("axis,"))
        .filter(|l| !l.is_empty())
        .collect();
    assert_eq!(data_rows.len(), 3, "one row per gamma value:\n{table}");
    assert!(data_rows.iter().all(|r| r.starts_with("gamma,")));
    println!("[acceptance] gamma sweep table: PASS");
}

#[test]
fn sweep_without_values_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_default_config(tmp.path(), 20_000, 1);
    let (code, output) = exit_code(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        tmp.path().to_str().unwrap(),
        "--axis",
        "gamma",
    ]);
    assert_eq!(code, 2, "empty sweep values must exit 2; output: {output}");
    println!("[acceptance] empty sweep values exit code: PASS");
}

fn write_uniform_catalog(path: &Path, pages: usize) {
    let mut text = String::from("page_id,group_0\n");
    for i in 0..pages {
        text.push_str(&format!("page{i:03},1\n"));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn analyze_uniform_catalog_gives_equal_shares() {
    let tmp = tempfile::tempdir().unwrap();
    let catalog = tmp.path().join("catalog.csv");
    write_uniform_catalog(&catalog, 10);

    run_ok(&[
        "analyze",
        "--catalog",
        catalog.to_str().unwrap(),
        "--all-pages",
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    let report = fs::read_to_string(tmp.path().join("deniability_report.csv")).unwrap();
    let rows: Vec<&str> = report
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("page,"))
        .filter(|l| !l.is_empty())
        .collect();
    assert_eq!(rows.len(), 10);
    for row in rows {
        let mean: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(
            (mean - 0.1).abs() < 1e-12,
            "uniform 10-page catalog must give mean_prob 0.1: {row}"
        );
    }
    println!("[acceptance] analyze uniform catalog: PASS");
}

#[test]
fn analyze_worked_example_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let catalog = tmp.path().join("catalog.csv");
    write_uniform_catalog(&catalog, 100);
    let observed = tmp.path().join("observed.csv");
    fs::write(&observed, "page_id,group_0,group_1\nobserved,1,2\n").unwrap();

    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        fs::create_dir_all(out).unwrap();
        run_ok(&[
            "analyze",
            "--catalog",
            catalog.to_str().unwrap(),
            "--observed",
            observed.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ]);
    }
    let a = fs::read(out_a.join("observed_report.csv")).unwrap();
    let b = fs::read(out_b.join("observed_report.csv")).unwrap();
    assert_eq!(a, b, "analyze output must be byte-identical across runs");

    let report = String::from_utf8(a).unwrap();
    let mut probs = 0;
    for row in report
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("page,") && !l.is_empty())
    {
        let p: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(
            (p - 0.029701).abs() < 1e-9,
            "expected the worked-example probability 0.029701, got {row}"
        );
        probs += 1;
    }
    assert_eq!(probs, 100);
    println!("[acceptance] analyze worked example (0.029701) + determinism: PASS");
}

#[test]
fn analyze_budget_exhaustion_exits_3_with_partial_report() {
    let tmp = tempfile::tempdir().unwrap();
    let catalog = tmp.path().join("catalog.csv");
    // Many overlapping sequences make the packing search expensive enough
    // to blow a 10-node budget.
    fs::write(
        &catalog,
        "page_id,group_0,group_1,group_2,group_3\n\
         a,1,0,0,0\n\
         b,1,1,0,0\n\
         c,1,1,1,0\n\
         d,2,2,2,2\n",
    )
    .unwrap();
    let config = tmp.path().join("config.toml");
    fs::write(
        &config,
        format!(
            "schema_version = 1\n\n[analyze]\ncatalog = {:?}\nall_pages = true\nnode_budget = 10\n",
            catalog.to_str().unwrap()
        ),
    )
    .unwrap();

    let (code, output) = exit_code(&[
        "analyze",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "budget exhaustion must exit 3; output: {output}");
    let report = fs::read_to_string(tmp.path().join("deniability_report.csv")).unwrap();
    assert!(
        report.contains("budget"),
        "partial report must flag the budget failure:\n{report}"
    );
    println!("[acceptance] analyze budget exit code + partial report: PASS");
}

#[test]
fn named_experiments_run_individually_or_together() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.toml");
    fs::write(
        &config,
        r#"schema_version = 1

[workload]
kind = "cbr"
rate = 0.2

[scheduler]
kind = "enhanced"

[trace]
n = 100
P = 20

[link]
c = 4

[sim]
duration_slots = 2000
seed = 1

[experiments.fast]
[experiments.fast.sim]
duration_slots = 500
seed = 2

[experiments.slow]
[experiments.slow.sim]
duration_slots = 1500
seed = 3
"#,
    )
    .unwrap();

    // without --experiment every simulate experiment runs
    let all = tmp.path().join("all");
    run_ok(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        all.to_str().unwrap(),
    ]);
    assert!(all.join("fast_summary.csv").exists());
    assert!(all.join("slow_summary.csv").exists());

    // --experiment picks one; sections fall back to the file-level base
    let one = tmp.path().join("one");
    run_ok(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--experiment",
        "fast",
        "--out-dir",
        one.to_str().unwrap(),
    ]);
    assert!(one.join("fast_summary.csv").exists());
    assert!(!one.join("slow_summary.csv").exists());
    let summary = fs::read_to_string(one.join("fast_summary.csv")).unwrap();
    assert!(summary.contains("duration_slots = 500"));
    assert!(summary.contains("rate = 0.2"));

    let (code, _) = exit_code(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--experiment",
        "absent",
        "--out-dir",
        one.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    println!("[acceptance] named experiments: PASS");
}

#[test]
fn unknown_config_keys_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_default_config(tmp.path(), 20_000, 1);
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace("[sim]", "[sim]\nunknown_key = true");
    fs::write(&config, text).unwrap();
    let (code, output) = exit_code(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "unknown keys must exit 2; output: {output}");
    println!("[acceptance] unknown config keys rejected: PASS");
}
