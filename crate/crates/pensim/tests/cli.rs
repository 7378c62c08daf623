//! End-to-end command-line tests: every subcommand is exercised through the
//! binary with temporary working directories, asserting exit codes, file
//! outputs, report envelopes, and byte-level determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pensim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pensim"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    pensim().args(args).current_dir(dir).output().expect("binary runs")
}

fn assert_ok(output: &Output) {
    assert!(
        output.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn read_json(dir: &Path, name: &str) -> Value {
    let path = dir.join(name);
    let text = fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("parsing {}: {e}", path.display()))
}

fn csv_lines(dir: &Path, name: &str) -> Vec<String> {
    let path = dir.join(name);
    fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
        .lines()
        .map(str::to_string)
        .collect()
}

fn field(line: &str, idx: usize) -> f64 {
    line.split(',').nth(idx).unwrap().parse().unwrap()
}

/// Writes a config file that keeps Monte Carlo runs small.
fn small_mc_config(dir: &Path, n_paths: usize) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, format!("[mc]\nn_paths = {n_paths}\n")).unwrap();
    path
}

#[test]
fn help_documents_the_global_flags() {
    let out = pensim().arg("--help").output().expect("binary runs");
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--config", "--seed", "--out", "--paper-defaults"] {
        assert!(text.contains(flag), "--help does not mention {flag}");
    }
    for sub in ["estimate", "simulate", "solve", "tables", "crosscheck", "synth"] {
        assert!(text.contains(sub), "--help does not mention {sub}");
    }
}

#[test]
fn flat_panel_estimates_zero_constants() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    assert_ok(&run(
        &["--out", "out", "synth", "--n-paths", "40", "--n-periods", "60", "--drift", "0",
          "--vol", "0"],
        dir,
    ));
    let out = run(
        &["--out", "out", "estimate", "--stock-panel", "out/panel.csv", "--salary-panel",
          "out/panel.csv", "--cpi", "out/cpi.csv", "--salary-period", "month"],
        dir,
    );
    assert_ok(&out);
    let report = read_json(&dir.join("out"), "constants.json");
    let constants = &report["results"]["constants"];
    for key in ["psi", "phi", "xi", "eta"] {
        let value = constants[key].as_f64().unwrap();
        assert!(value.abs() < 1e-12, "{key} = {value} on a flat panel");
    }
}

#[test]
fn missing_cpi_period_names_the_period_and_exits_nonzero() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    assert_ok(&run(
        &["--out", "out", "synth", "--n-paths", "5", "--n-periods", "60", "--cpi-periods", "30"],
        dir,
    ));
    let out = run(
        &["--out", "out", "estimate", "--stock-panel", "out/panel.csv", "--salary-panel",
          "out/panel.csv", "--cpi", "out/cpi.csv", "--salary-period", "month"],
        dir,
    );
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("period 31"),
        "error does not name the first uncovered period: {stderr}"
    );
}

#[test]
fn estimate_recovers_the_generator_constants() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    assert_ok(&run(
        &["--out", "out", "--seed", "61", "synth", "--n-paths", "2000", "--n-periods", "252"],
        dir,
    ));
    let out = run(
        &["--out", "out", "estimate", "--stock-panel", "out/panel.csv", "--salary-panel",
          "out/panel.csv", "--cpi", "out/cpi.csv", "--salary-period", "month"],
        dir,
    );
    assert_ok(&out);
    let report = read_json(&dir.join("out"), "constants.json");
    let constants = &report["results"]["constants"];
    // Generator: per-month drift 0.002742 and volatility 0.1, annualized.
    for (key, target) in [("psi", 0.0329), ("phi", 0.3464), ("xi", 0.0329), ("eta", 0.3464)] {
        let value = constants[key].as_f64().unwrap();
        assert!(
            (value - target).abs() <= 0.15 * target,
            "{key} = {value:.5}, generator {target}"
        );
    }
    assert_eq!(report["results"]["stock"]["members"], 2000);
}

#[test]
fn empty_ratio_list_writes_a_header_only_table() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let out = run(
        &["--out", "out", "tables", "pension", "--years", "25", "--ratios", ""],
        dir,
    );
    assert_ok(&out);
    let lines = csv_lines(&dir.join("out"), "pension_25y.csv");
    assert_eq!(lines, vec!["ratio,implied_return,probability".to_string()]);

    let out = run(&["--out", "out", "tables", "mfpt", "--ratios", ""], dir);
    assert_ok(&out);
    let lines = csv_lines(&dir.join("out"), "mfpt.csv");
    assert_eq!(lines.len(), 1, "expected only the header, got {lines:?}");
}

#[test]
fn drain_crosscheck_passes_and_exits_zero() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let config = small_mc_config(dir, 2000);
    let out = run(
        &["--config", config.to_str().unwrap(), "--out", "out", "crosscheck", "drain",
          "--ratio", "7.5"],
        dir,
    );
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    let report = read_json(&dir.join("out"), "crosscheck_drain.json");
    assert_eq!(report["results"]["pass"], Value::Bool(true));
    let solver = report["results"]["solver"].as_f64().unwrap();
    assert!((solver - 7.5).abs() < 0.1, "drain depletion read {solver}");
}

#[test]
fn survival_crosscheck_passes_and_a_coarsened_grid_fails() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let config = small_mc_config(dir, 20_000);
    let base = ["--config", config.to_str().unwrap(), "--out", "out", "crosscheck", "survival"];

    let out = run(&base, dir);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));

    let mut coarse = base.to_vec();
    coarse.extend(["--coarsen", "8"]);
    let out = run(&coarse, dir);
    assert_eq!(exit_code(&out), 1, "coarsened grid should fail the tolerance");
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    let report = read_json(&dir.join("out"), "crosscheck_survival.json");
    assert_eq!(report["results"]["pass"], Value::Bool(false));
    let difference = report["results"]["difference"].as_f64().unwrap();
    let tolerance = report["results"]["tolerance"].as_f64().unwrap();
    assert!(difference > tolerance);
}

#[test]
fn identical_runs_are_byte_identical_across_thread_counts() {
    let args = ["--out", "out", "--seed", "5150", "simulate", "--process", "consumption",
        "--ratio", "10", "--horizon", "5", "--survival-at", "5", "--mfpt", "--ensemble-csv"];
    let mut outputs = Vec::new();
    for threads in ["1", "4", "2"] {
        let tmp = TempDir::new().unwrap();
        let dir = tmp.path();
        let config = small_mc_config(dir, 5000);
        let mut full = vec!["--config", config.to_str().unwrap()];
        full.extend(args);
        let out = pensim()
            .args(&full)
            .current_dir(dir)
            .env("RAYON_NUM_THREADS", threads)
            .output()
            .expect("binary runs");
        assert_ok(&out);
        let report = fs::read(dir.join("out/simulate.json")).unwrap();
        let ensemble = fs::read(dir.join("out/ensemble.csv")).unwrap();
        outputs.push((report, ensemble));
    }
    // The config path differs per run only through the temp directory; it is
    // passed relative to the working directory, so reports stay identical.
    assert_eq!(outputs[0], outputs[1], "1 vs 4 worker threads");
    assert_eq!(outputs[0], outputs[2], "repeat run");
}

#[test]
fn solve_consumption_writes_survival_density_and_mfpt() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let out = run(
        &["--out", "out", "solve", "--target", "consumption", "--ratio", "10", "--horizon", "5",
          "--mfpt"],
        dir,
    );
    assert_ok(&out);
    let out_dir = dir.join("out");
    assert!(out_dir.join("density_t5.csv").exists());
    let survival = csv_lines(&out_dir, "survival.csv");
    assert_eq!(survival[0], "t,survival");
    let values: Vec<f64> = survival[1..].iter().map(|l| field(l, 1)).collect();
    assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-12), "survival must not increase");
    let report = read_json(&out_dir, "solve.json");
    assert!(report["results"]["mfpt"].is_object());
    let mass = report["results"]["final_mass"].as_f64().unwrap();
    assert!(mass > 0.0 && mass <= 1.0 + 1e-12);
    assert!(report["diagnostics"]["max_cell_peclet"].as_f64().unwrap() > 0.0);
}

#[test]
fn solve_fund_reports_exceedances_without_density_files() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let out = run(
        &["--out", "out", "solve", "--target", "fund", "--horizon", "2", "--exceed", "1.0,1.2",
          "--no-density"],
        dir,
    );
    assert_ok(&out);
    let out_dir = dir.join("out");
    assert!(!out_dir.join("density_t2.csv").exists());
    let report = read_json(&out_dir, "solve.json");
    let exceedances = report["results"]["exceedances"].as_array().unwrap();
    assert_eq!(exceedances.len(), 2);
    for e in exceedances {
        let raw = e["raw"].as_f64().unwrap();
        let renormalized = e["renormalized"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&raw));
        assert!(raw <= renormalized + 1e-12, "renormalization divides by mass <= 1");
        assert!(renormalized <= 1.0 + 1e-9);
    }
}

#[test]
fn reports_embed_config_seed_version_and_hash() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    assert_ok(&run(
        &["--out", "out", "--seed", "123", "--paper-defaults", "tables", "mfpt", "--ratios", ""],
        dir,
    ));
    let report = read_json(&dir.join("out"), "tables_mfpt.json");
    assert_eq!(report["tool"], "pensim");
    assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(report["seed"], 123);
    assert_eq!(report["config"]["seed"], 123);
    assert_eq!(report["config"]["constants"]["psi"], 0.0329);
    assert_eq!(report["config"]["constants"]["n_constituents"], 500);
    let hash = report["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 12);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));

    // A different seed changes the hash but nothing else about the envelope.
    assert_ok(&run(
        &["--out", "out2", "--seed", "124", "--paper-defaults", "tables", "mfpt", "--ratios", ""],
        dir,
    ));
    let other = read_json(&dir.join("out2"), "tables_mfpt.json");
    assert_ne!(other["config_hash"], report["config_hash"]);
}

#[test]
fn config_file_overrides_are_echoed_and_bad_configs_exit_two() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let config = dir.join("run.toml");
    fs::write(&config, "seed = 9\n[constants]\npsi = 0.05\n[mc]\nn_paths = 7\n").unwrap();
    let out = run(
        &["--config", "run.toml", "--out", "out", "synth", "--n-paths", "3", "--n-periods", "5"],
        dir,
    );
    assert_ok(&out);
    let report = read_json(&dir.join("out"), "synth.json");
    assert_eq!(report["seed"], 9);
    assert_eq!(report["config"]["constants"]["psi"], 0.05);
    assert_eq!(report["config"]["mc"]["n_paths"], 7);

    fs::write(&config, "[constants]\nbogus = 1\n").unwrap();
    let out = run(
        &["--config", "run.toml", "--out", "out", "synth", "--n-paths", "3", "--n-periods", "5"],
        dir,
    );
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("run.toml"));
}

#[test]
fn table_commands_emit_the_requested_rows() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let out_dir = dir.join("out");

    let out = run(
        &["--out", "out", "tables", "pension", "--years", "2", "--ratios", "0.2,0.3"],
        dir,
    );
    assert_ok(&out);
    let lines = csv_lines(&out_dir, "pension_2y.csv");
    assert_eq!(lines.len(), 3);
    let (r1, r2) = (field(&lines[1], 1), field(&lines[2], 1));
    assert!(r1 < r2, "implied return must grow with the target ratio: {r1} vs {r2}");

    let out = run(
        &["--out", "out", "tables", "survival", "--ratio", "10", "--years", "2,3"],
        dir,
    );
    assert_ok(&out);
    let lines = csv_lines(&out_dir, "survival_ratio_10.csv");
    assert_eq!(lines.len(), 3);
    let (s2, s3) = (field(&lines[1], 3), field(&lines[2], 3));
    assert!((0.0..=1.0).contains(&s2) && (0.0..=1.0).contains(&s3));
    assert!(s3 <= s2 + 1e-12, "survival must fall with the retirement length");

    let out = run(&["--out", "out", "tables", "mortality", "--age", "67", "--ratios", "7.5"], dir);
    assert_ok(&out);
    let lines = csv_lines(&out_dir, "mortality_age_67.csv");
    assert_eq!(lines.len(), 2);
    let p = field(&lines[1], 2);
    assert!((0.0..=1.0).contains(&p), "outliving probability {p}");
}
