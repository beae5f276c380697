use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use beamseries::io::{read_coeffs_csv, read_counterterms_csv, read_nu_csv, write_coeffs_csv, write_counterterms_csv, write_nu_csv};
use beamseries::Mode;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamseries"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("BEAMSERIES_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn linear_equation_keeps_only_the_amplitude_modes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["coeffs", "--a", "0", "--b", "0"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("coeffs.csv")).unwrap();
    assert_eq!(text, "k,n,m,value\n0,-1,1,1.0\n0,1,1,1.0\n");
}

#[test]
fn coefficient_files_reload_and_rewrite_identically() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["coeffs"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = json(&dir.path().join("coeffs.json"));
    assert_eq!(summary["schema_version"], 1);
    let kmax = summary["kmax"].as_u64().unwrap() as usize;
    let mmax = summary["mmax"].as_u64().unwrap() as u32;
    let q = summary["q"].as_f64().unwrap();
    assert!(summary["cubic"].as_f64().unwrap() > 0.0);

    let bytes = fs::read(dir.path().join("coeffs.csv")).unwrap();
    let table = read_coeffs_csv(bytes.as_slice(), kmax, mmax, q).unwrap();
    table.check_invariants().unwrap();
    assert_eq!(table.get(0, Mode::new(1, 1)), q);
    let mut again = Vec::new();
    write_coeffs_csv(&table, &mut again).unwrap();
    assert_eq!(again, bytes);

    let bytes = fs::read(dir.path().join("counterterms.csv")).unwrap();
    let mut again = Vec::new();
    write_counterterms_csv(&read_counterterms_csv(bytes.as_slice()).unwrap(), &mut again).unwrap();
    assert_eq!(again, bytes);

    let bytes = fs::read(dir.path().join("nu.csv")).unwrap();
    let nu = read_nu_csv(bytes.as_slice()).unwrap();
    assert!(!nu.is_empty());
    let mut again = Vec::new();
    write_nu_csv(&nu, &mut again).unwrap();
    assert_eq!(again, bytes);
}

#[test]
fn invalid_mass_exits_2_without_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["coeffs", "--mu", "0.5"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mu = 0.5"));
    assert!(!out.exists());
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, jobs) in [(a.path(), "1"), (b.path(), "3")] {
        assert!(run(&["coeffs", "--jobs", jobs], dir).status.success());
        assert!(run(&["dioph", "mass", "--scan", "--grid", "40", "--jobs", jobs], dir).status.success());
    }
    for name in ["coeffs.csv", "counterterms.csv", "nu.csv", "coeffs.json", "dioph_mass.csv", "dioph_mass.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn verify_passes_and_catches_a_flipped_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--samples", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&dir.path().join("verify.json"));
    assert_eq!(report["passed"], true);
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["status"] == "pass"));

    let o = run(&["verify", "--samples", "3", "--inject-kernel-sign-flip"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("check failed: tree_sums"), "{}", stderr(&o));
    let report = json(&dir.path().join("verify.json"));
    assert_eq!(report["passed"], false);
}

#[test]
fn verify_at_order_one_marks_skipped_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--samples", "2", "--kcap", "1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&dir.path().join("verify.json"));
    let renorm = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == "renormalized_sums").unwrap();
    assert_eq!(renorm["status"], "skipped");
}

#[test]
fn massless_single_check_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["dioph", "mass", "--mu", "0"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("dioph_mass.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("0.0,0.0,") && row.ends_with(",false"), "{row}");
    assert!(json(&dir.path().join("dioph_mass.json"))["tail_bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn residual_marks_excluded_amplitudes_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    // At mu = 0.01 and eps = 0.005, 4 Omega lies within 1e-4 of 2^2.
    let o = run(&["residual", "--mu", "0.01", "--eps-list", "0.005,0.01"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("residual.csv")).unwrap();
    let status: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(status, ["excluded", "accepted"]);

    let o = run(&["residual", "--mu", "0.01", "--eps-list", "0.005", "--force"], dir.path());
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("residual.csv")).unwrap();
    assert_eq!(text.lines().nth(1).unwrap().split(',').nth(2), Some("accepted"));
}

#[test]
fn residual_slope_over_one_decade() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["residual", "--eps-list", "0.0002,0.0006,0.002"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = json(&dir.path().join("residual.json"));
    assert_eq!(summary["accepted"], 3);
    assert!(summary["slope"].as_f64().unwrap() >= 1.7);
    assert!(summary["max_order_defect"].as_f64().unwrap() < 1e-10);
}

#[test]
fn config_file_is_strict_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[params]\nmu = 0.05\nalpha = 1\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "coeffs"], &dir.path().join("a"));
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("a").exists());

    fs::write(&cfg, "[params]\nmu = 0.5\n[options]\neps = 0.001\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "--mu", "0.05", "coeffs"], &dir.path().join("b"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("b/coeffs.json"))["eps"], 0.001);
}

#[test]
fn output_directory_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env_out");
    let o = Command::new(env!("CARGO_BIN_EXE_beamseries"))
        .args(["kernel", "--kernel-mmax", "5"])
        .env("BEAMSERIES_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("kernel.csv").exists());
}

#[test]
fn gamma_sweep_of_the_mass_measure_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[params]\nnmax = 200\neps0 = 0.01\n[options]\ngammas = [0.015625, 0.0078125, 0.00390625]\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "dioph", "measure"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = json(&dir.path().join("dioph_measure.json"));
    assert_eq!(summary["mass_monotone"], true);
    let header = fs::read_to_string(dir.path().join("dioph_measure.csv")).unwrap();
    assert!(header.starts_with("gamma,interval_measure,grid_measure,tail_bound,bound,pass\n"));
}

#[test]
fn tree_dump_lists_nodes_with_scales() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["trees", "dump", "--k", "1", "--n", "2", "--m", "1", "--scales"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("# tree 0\n"));
    assert!(text.contains("k=1 (2,1) h=-1"), "{text}");
    assert!(text.contains("end k=0 (1,1) h=-"), "{text}");
}
