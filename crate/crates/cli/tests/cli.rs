use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pvrecon::config::ExperimentConfig;
use pvrecon::geometry::PlanePoint;
use pvrecon::io::TrajectoryFile;

fn pvrecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvrecon")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pvrecon(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_doc(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).expect("stderr carries a JSON error document")
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    path.display().to_string()
}

fn short_reference(nt: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::reference();
    cfg.grid.nt = nt;
    cfg
}

#[test]
fn reference_config_round_trips() {
    let text = ok(&["reference-config"]);
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), ExperimentConfig::reference());
}

#[test]
fn simulate_writes_expected_tracks_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &short_reference(1000));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]);
    ok(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap()]);
    for name in ["vortices.csv", "tracers.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let v = TrajectoryFile::read(&a.join("vortices.csv")).unwrap();
    let t = TrajectoryFile::read(&a.join("tracers.csv")).unwrap();
    assert_eq!((v.n_vortices(), t.n_tracers(), v.grid.nt), (4, 20, 1000));
}

#[test]
fn seed_flag_changes_tracer_placement() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &short_reference(10));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap(), "--seed", "5"]);
    ok(&["simulate", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "6"]);
    assert_ne!(fs::read(a.join("tracers.csv")).unwrap(), fs::read(b.join("tracers.csv")).unwrap());
    assert_eq!(TrajectoryFile::read(&a.join("tracers.csv")).unwrap().seeds.get("tracers"), Some(&5));
}

#[test]
fn single_vortex_track_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short_reference(200);
    cfg.system.circulations = vec![2.0];
    cfg.system.positions = vec![PlanePoint::new(0.3, -0.2)];
    cfg.guess.circulations = vec![2.5];
    cfg.guess.positions = vec![PlanePoint::new(0.0, 0.0)];
    cfg.tracers.margin = 1.0;
    let cfg = write_config(dir.path(), &cfg);
    ok(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    let v = TrajectoryFile::read(&dir.path().join("vortices.csv")).unwrap();
    assert!(v.vortices.iter().all(|row| row == &v.vortices[0]));
}

#[test]
fn velocities_on_four_samples_is_grid_too_short() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &short_reference(4));
    let out = dir.path().to_str().unwrap();
    ok(&["simulate", "--config", &cfg, "--out", out]);
    let tracers = dir.path().join("tracers.csv");
    let res = pvrecon(&["velocities", "--input", tracers.to_str().unwrap(), "--out", out]);
    assert_eq!(error_doc(&res)["error"], "GridTooShort");
}

#[test]
fn failures_report_a_category() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "this is = not [valid").unwrap();
    let res = pvrecon(&["simulate", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(error_doc(&res)["error"], "ConfigError");

    let missing = dir.path().join("missing.csv");
    let res = pvrecon(&["smooth", "--input", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(error_doc(&res)["error"], "IoError");

    let garbled = dir.path().join("garbled.csv");
    fs::write(&garbled, "# pvrecon-trajectory 1\n# quantity position\n# grid t0=0 h=1 nt=1\n# provenance raw\ntime,kind,id,x,y\n0,tracer,0,zero,0\n").unwrap();
    let res = pvrecon(&["velocities", "--input", garbled.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let doc = error_doc(&res);
    assert_eq!(doc["error"], "SchemaError");
    assert!(doc["message"].as_str().unwrap().contains("row 6"), "{doc}");
}

#[test]
fn staged_commands_reproduce_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short_reference(2001);
    cfg.reconstruction.max_iterations = 5;
    let cfg_path = write_config(dir.path(), &cfg);
    let staged = dir.path().join("staged");
    let s = staged.to_str().unwrap();
    let p = |name: &str| staged.join(name).display().to_string();

    ok(&["simulate", "--config", &cfg_path, "--out", s]);
    ok(&["corrupt", "--config", &cfg_path, "--out", s, "--input", &p("tracers.csv")]);
    ok(&["smooth", "--config", &cfg_path, "--out", s, "--input", &p("tracers_noisy.csv")]);
    ok(&["velocities", "--out", s, "--input", &p("tracers_smoothed.csv")]);
    let circ: serde_json::Value = serde_json::from_str(&ok(&[
        "circulations", "--config", &cfg_path, "--out", s,
        "--tracers", &p("tracers_smoothed.csv"), "--velocities", &p("velocities.csv"), "--truth", &p("vortices.csv"),
    ]))
    .unwrap();
    assert_eq!(circ["circulations"].as_array().unwrap().len(), 4);
    assert_eq!(circ["relative_errors"].as_array().unwrap().len(), 4);
    ok(&[
        "reconstruct", "--config", &cfg_path, "--out", s,
        "--tracers", &p("tracers_smoothed.csv"), "--circulations", &p("circulations.json"), "--truth", &p("vortices.csv"),
    ]);
    let eval: serde_json::Value = serde_json::from_str(&ok(&[
        "evaluate", "--out", s, "--recovered", &p("recovered.csv"), "--truth", &p("vortices.csv"),
        "--reconstruction", &p("reconstruction.json"),
    ]))
    .unwrap();
    assert!(eval["total_error"].as_f64().unwrap().is_finite());

    let piped = dir.path().join("piped");
    ok(&["pipeline", "--config", &cfg_path, "--out", piped.to_str().unwrap()]);
    for name in ["tracers_smoothed.csv", "velocities.csv", "circulations.json", "recovered.csv", "evaluation.json", "errors.csv"] {
        assert_eq!(fs::read(staged.join(name)).unwrap(), fs::read(piped.join(name)).unwrap(), "{name} differs");
    }
    let snapshots = fs::read_to_string(piped.join("snapshots.csv")).unwrap();
    assert_eq!(snapshots.lines().count(), 1 + 4 * 2001);
}

#[test]
fn evaluate_identical_files_gives_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &short_reference(50));
    let out = dir.path().to_str().unwrap();
    ok(&["simulate", "--config", &cfg, "--out", out]);
    let v = dir.path().join("vortices.csv");
    let doc: serde_json::Value =
        serde_json::from_str(&ok(&["evaluate", "--out", out, "--recovered", v.to_str().unwrap(), "--truth", v.to_str().unwrap()])).unwrap();
    assert_eq!(doc["total_error"], 0.0);
    let table = fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    assert!(table.starts_with("time,error,boundary\n0,0,0\n"));
}

#[test]
fn lyapunov_and_autocorr_emit_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short_reference(3001);
    cfg.lyapunov.horizon = 50.0;
    let cfg_path = write_config(dir.path(), &cfg);
    let out = dir.path().to_str().unwrap();
    let lyap: serde_json::Value = serde_json::from_str(&ok(&["lyapunov", "--config", &cfg_path, "--out", out])).unwrap();
    assert!(lyap["lambda_max"].as_f64().unwrap().is_finite());

    ok(&["simulate", "--config", &cfg_path, "--out", out]);
    let tracers = dir.path().join("tracers.csv");
    let ac: serde_json::Value = serde_json::from_str(&ok(&[
        "autocorr", "--config", &cfg_path, "--out", out, "--tracers", tracers.to_str().unwrap(), "--stride", "10",
    ]))
    .unwrap();
    assert_eq!(ac["lags"].as_array().unwrap().len(), 20);
    let table = fs::read_to_string(dir.path().join("autocorr.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 301);
    let first: Vec<f64> = table.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first.len(), 22);
    assert!(first[2..].iter().all(|r| (r - 1.0).abs() < 1e-12));
}

#[test]
fn shipped_reference_config_is_current() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml");
    let shipped = ExperimentConfig::load(&path).unwrap();
    assert_eq!(shipped, ExperimentConfig::reference());
}
