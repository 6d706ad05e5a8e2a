use std::path::Path;

use hyxc::config::RunConfig;
use hyxc::driver::{run_outer_loop, LoopStatus, Stage, ITERATIONS_FILE, REPORT_FILE};
use hyxc::ks::solve_ks;

fn config(name: &str, out: &Path) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.output.directory = out.to_path_buf();
    cfg
}

fn ground_eigenvalue(cfg: &RunConfig) -> f64 {
    let v = cfg.external_potential().unwrap();
    solve_ks(&v, &cfg.grid().unwrap(), 1).unwrap().eigenvalues[0]
}

#[test]
fn zero_iterations_write_an_empty_report() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config("two_electron_1d.toml", tmp.path());
    cfg.outer.max_iter = 0;
    let report = run_outer_loop(&cfg).unwrap();
    assert!(report.records.is_empty());
    assert_eq!(report.status, LoopStatus::MaxIter);
    assert!(tmp.path().join(REPORT_FILE).exists());
    let csv = std::fs::read_to_string(tmp.path().join(ITERATIONS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn single_orbital_reproduces_kohn_sham() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("one_electron_free.toml", tmp.path());
    let e0 = ground_eigenvalue(&cfg);
    let report = run_outer_loop(&cfg).unwrap();
    assert_eq!(report.status, LoopStatus::Converged);
    assert!(report.records.len() <= 2, "{} iterations", report.records.len());
    for r in &report.records {
        assert!((r.many_body_energy - e0).abs() < 2e-6, "{} vs {e0}", r.many_body_energy);
        assert!(r.max_abs_delta_rho < 1e-12);
    }
}

#[test]
fn first_iteration_matches_kohn_sham_for_one_electron() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config("one_electron_free.toml", tmp.path());
    cfg.basis.m = 4;
    cfg.outer.max_iter = 1;
    let e0 = ground_eigenvalue(&cfg);
    let report = run_outer_loop(&cfg).unwrap();
    let r = &report.records[0];
    // quadrature of the basis matrix elements differs from the grid Hamiltonian,
    // so the bound holds only to discretization error
    assert!((r.many_body_energy - e0).abs() < 2e-6, "{} vs {e0}", r.many_body_energy);
}

#[test]
fn hermiticity_abort_keeps_partial_dumps() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config("two_electron_1d.toml", tmp.path());
    cfg.outer.hermiticity_abort = 1e-12;
    let report = run_outer_loop(&cfg).unwrap();
    assert_eq!(report.status, LoopStatus::Error);
    assert!(report.records.is_empty());
    let failure = report.failure.unwrap();
    assert_eq!(failure.stage, Stage::Correction);
    assert_eq!(failure.outer_iter, 1);
    let iter = tmp.path().join("iter_1");
    for f in ["density.dat", "basis.json", "t.bin", "rdms.json"] {
        assert!(iter.join(f).exists(), "{f} missing");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(json["status"], "error");
    assert_eq!(json["failure"]["stage"], "correction");
}
