use std::path::{Path, PathBuf};

use clap::Parser;
use nalgebra::DMatrix;

use prob_lqr::benchmarks::{collect_rollouts, dean_linear_system, NonlinearPlant, RolloutSettings};
use prob_lqr::cli::{self, Cli, InfeasibilityReport};
use prob_lqr::control::{dare_solve, CostWeights};
use prob_lqr::distributions::{GaussianParameterLaw, LawDocument};
use prob_lqr::rng;
use prob_lqr::synthesis::{CertifiedController, SynthesisOutcome};
use prob_lqr::Error;

fn run(args: &[&str]) -> prob_lqr::Result<u8> {
    let mut full = vec!["prob-lqr"];
    full.extend_from_slice(args);
    cli::run(&Cli::try_parse_from(&full).expect("valid command line"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const DEAN_WEIGHTS: &str = "[weights]\nq = [[1e-3, 0, 0], [0, 1e-3, 0], [0, 0, 1e-3]]\n\
    r = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]\nsigma_w = [[1e-3, 0, 0], [0, 1e-3, 0], [0, 0, 1e-3]]\n";

fn write_law(dir: &Path, name: &str, law: &GaussianParameterLaw) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string(&law.to_document(None)).unwrap()).unwrap();
    path
}

fn write_config(dir: &Path, law: &str, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("seed = 1\n\n[law]\npath = \"{law}\"\n\n{DEAN_WEIGHTS}{extra}")).unwrap();
    path
}

#[test]
fn synthesize_point_law_returns_the_riccati_gain() {
    let dir = tempfile::tempdir().unwrap();
    let (sys, w) = dean_linear_system();
    write_law(dir.path(), "law.json", &GaussianParameterLaw::degenerate(sys.parameters()).unwrap());
    let cfg = write_config(dir.path(), "law.json", "");
    let out = dir.path().join("controller.json");
    assert_eq!(run(&["synthesize", "--config", p(&cfg), "--out", p(&out)]).unwrap(), cli::EXIT_OK);
    let c: CertifiedController = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let (_, k) = dare_solve(&sys, &w).unwrap();
    assert!((&c.gain.k - &k.k).amax() <= 1e-3);
    assert_eq!(c.m_scenarios, 188);
    assert_eq!(c.schema, "v1");
    assert_eq!(c.seeds.base, 1);
    assert_eq!(c.config_hash.as_ref().map(String::len), Some(64));
}

#[test]
fn synthesize_unstabilizable_law_reports_infeasibility() {
    let dir = tempfile::tempdir().unwrap();
    let mut mean = DMatrix::zeros(3, 6);
    mean.view_mut((0, 0), (3, 3)).fill_diagonal(2.0);
    let law = GaussianParameterLaw::new(mean, DMatrix::identity(18, 18) * 1e-10).unwrap();
    write_law(dir.path(), "law.json", &law);
    let cfg = write_config(dir.path(), "law.json", "");
    let out = dir.path().join("controller.json");
    assert_eq!(run(&["synthesize", "--config", p(&cfg), "--out", p(&out)]).unwrap(), cli::EXIT_INFEASIBLE);
    let report: InfeasibilityReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(matches!(report.outcome, SynthesisOutcome::InfeasibleInit { .. }));
    assert_eq!(report.provenance.seed, 1);
}

#[test]
fn unknown_config_keys_fail_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "law.json", "\n[synthesis]\nmax_restarts = 3\ncolour = \"red\"\n");
    let out = dir.path().join("controller.json");
    let err = run(&["synthesize", "--config", p(&cfg), "--out", p(&out)]).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(!out.exists());
}

#[test]
fn malformed_dataset_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    std::fs::write(&data, "q_1,q_2,y_1\n0.1,0.2,0.3\n0.4,oops,0.6\n").unwrap();
    let out = dir.path().join("law.json");
    let err = run(&["learn", "--dataset", p(&data), "--out", p(&out)]).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
    assert!(!out.exists());
}

#[test]
fn empty_dataset_learns_the_prior() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    std::fs::write(&data, "q_1,q_2,q_3,y_1,y_2\n").unwrap();
    let out = dir.path().join("law.json");
    assert_eq!(run(&["learn", "--dataset", p(&data), "--out", p(&out)]).unwrap(), cli::EXIT_OK);
    let doc: LawDocument = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!((doc.d_x, doc.d_u), (2, 1));
    assert!(doc.mean.iter().flatten().all(|&v| v == 0.0));
    assert!(doc.provenance.is_some());
}

#[test]
fn learned_law_recovers_a_linear_system() {
    let dir = tempfile::tempdir().unwrap();
    let (sys, w) = dean_linear_system();
    let quiet = CostWeights::new(w.q, w.r, DMatrix::identity(3, 3) * 1e-8).unwrap();
    let plant = NonlinearPlant::linear(sys.clone(), quiet).unwrap();
    let data = collect_rollouts(&plant, 40, &RolloutSettings::default(), &mut rng::stream(5, &[])).unwrap();
    let path = dir.path().join("data.csv");
    std::fs::write(&path, data.to_csv()).unwrap();
    let out = dir.path().join("law.json");
    let code = run(&["learn", "--dataset", p(&path), "--noise-variance", "1e-6", "--out", p(&out)]).unwrap();
    assert_eq!(code, cli::EXIT_OK);
    let doc: LawDocument = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let law = GaussianParameterLaw::from_document(&doc).unwrap();
    let truth = sys.parameters();
    let rel = (law.mean() - &truth).norm() / truth.norm();
    assert!(rel <= 0.05, "relative error {rel}");
}

#[test]
fn validate_exit_code_follows_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let (sys, _) = dean_linear_system();
    let law_path = write_law(
        dir.path(),
        "law.json",
        &GaussianParameterLaw::new(sys.parameters(), DMatrix::identity(18, 18) * 1e-6).unwrap(),
    );
    let cfg = write_config(dir.path(), "law.json", "");
    let ctrl = dir.path().join("controller.json");
    assert_eq!(run(&["synthesize", "--config", p(&cfg), "--out", p(&ctrl)]).unwrap(), cli::EXIT_OK);
    let ok = run(&["validate", "--controller", p(&ctrl), "--law", p(&law_path), "--samples", "2000"]).unwrap();
    assert_eq!(ok, cli::EXIT_OK);

    // the same controller with a zero gain cannot stabilize the open loop
    let mut c: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ctrl).unwrap()).unwrap();
    c["gain"] = serde_json::json!([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
    let zero = dir.path().join("zero.json");
    std::fs::write(&zero, c.to_string()).unwrap();
    let report = dir.path().join("report.json");
    let code = run(&[
        "validate", "--controller", p(&zero), "--law", p(&law_path), "--samples", "2000", "--out", p(&report),
    ])
    .unwrap();
    assert_eq!(code, cli::EXIT_VALIDATION_FAILED);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["pass"], false);
    assert_eq!(r["m_validation"], 2000);
    assert!(r["config_hash"].is_string());
}

#[test]
fn experiment_writes_cells_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "[experiment]\nkind = \"synthetic-dist\"\ngrid = [1e-6]\nrepetitions = 1\neval_systems = 100\nhorizon = 50\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["experiment", "synthetic-dist", "--config", p(&cfg), "--out", p(&out)]).unwrap(), cli::EXIT_OK);
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "sigma_sq_or_rollouts,method,repetition,feasible,mean_cost,q25,q50,q75,instability_freq,runtime_s,seed"
    );
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join(cli::cell_file_name(0, 0)).exists());
    let manifest: cli::Manifest = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.files.len(), 3);
    assert_eq!(manifest.provenance.schema, "v1");

    // a config for the other experiment kind is refused
    let err = run(&["experiment", "cubic", "--config", p(&cfg), "--out", p(&out)]).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn learned_law_feeds_synthesis_with_its_noise_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let law = dir.path().join("law.json");
    assert_eq!(run(&["learn", "--plant", "cubic", "--rollouts", "8", "--out", p(&law)]).unwrap(), cli::EXIT_OK);
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[law]\npath = \"law.json\"\n\n[weights]\nq = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]\nr = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]\n",
    )
    .unwrap();
    let out = dir.path().join("c.json");
    assert_eq!(run(&["synthesize", "--config", p(&cfg), "--out", p(&out)]).unwrap(), cli::EXIT_OK);
    let c: CertifiedController = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(c.empirical_stability >= 0.98);
}
