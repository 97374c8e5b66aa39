use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lie_errdyn_cli::{CliError, Overrides, ScenarioConfig};

const COMMUTATOR_SE3: &str = r#"{"group": {"type": "SEN3", "n": 1},
  "field": {"kind": "commutator", "u": {"type": "constant", "value": [0.3, -0.2, 0.5, 0.1, 0.0, -0.4]}},
  "expect": "linear", "horizon": 1.0, "dt": 0.001}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lie-errdyn"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn check_accepts_commutator_as_linear() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", COMMUTATOR_SE3);
    let out = run("check", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let report = fs::read_to_string(tmp.path().join("check.txt")).unwrap();
    assert!(report.contains("classification = linear"));
    assert!(report.contains("status = pass"));
}

#[test]
fn check_rejects_left_invariant_expected_linear() {
    let tmp = tempfile::tempdir().unwrap();
    let text = COMMUTATOR_SE3.replace("commutator", "left_invariant");
    let cfg = write(tmp.path(), "c.json", &text);
    let out = run("check", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("observed affine"));
}

#[test]
fn malformed_config_reports_position() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.json", "{\n  \"group\": {\"type\": \"SO3\"},\n  \"field\": 3\n}");
    let out = run("check", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_keys_and_dimension_mismatches_are_config_errors() {
    let unknown = COMMUTATOR_SE3.replace("\"expect\"", "\"expekt\"");
    assert!(matches!(ScenarioConfig::from_json(&unknown), Err(CliError::Config(m)) if m.contains("expekt")));
    let short = COMMUTATOR_SE3.replace("[0.3, -0.2, 0.5, 0.1, 0.0, -0.4]", "[0.3, -0.2, 0.5]");
    assert!(matches!(ScenarioConfig::from_json(&short), Err(CliError::Config(m)) if m.contains("field.u.value")));
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    assert_eq!(run("check", &missing, tmp.path(), &[]).status.code(), Some(1));
}

#[test]
fn overrides_replace_seed_paths_and_dt() {
    let mut cfg = ScenarioConfig::from_json(COMMUTATOR_SE3).unwrap();
    cfg.apply(&Overrides {
        seed: Some(9),
        paths: Some(123),
        dt: Some(0.01),
    })
    .unwrap();
    assert_eq!((cfg.seed, cfg.paths, cfg.weak_paths, cfg.dt), (9, 123, 123, 0.01));
    assert_eq!(cfg.dt_levels(), vec![0.04, 0.02, 0.01]);
    assert!(cfg.apply(&Overrides { dt: Some(-1.0), ..Overrides::default() }).is_err());
}

#[test]
fn propagate_at_equilibrium_is_all_zero_and_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let text = COMMUTATOR_SE3.replace("\"commutator\"", "\"left_invariant\"").replace("\"expect\": \"linear\", ", "");
    let cfg = write(tmp.path(), "p.json", &text);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run("propagate", &cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(run("propagate", &cfg, &b, &[]).status.code(), Some(0));
    let bytes = fs::read(a.join("propagate.csv")).unwrap();
    assert_eq!(bytes, fs::read(b.join("propagate.csv")).unwrap());

    let rows = csv_rows(&a.join("propagate.csv"));
    assert_eq!(rows.len(), 1001);
    for row in &rows {
        assert_eq!(row.len(), 1 + 6 + 6 + 1 + 1);
        assert!(row[1..14].iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
        assert_eq!(row[14], "ok");
    }
    let header = String::from_utf8_lossy(&bytes).lines().next().unwrap().to_string();
    assert!(header.starts_with("t,xi_1,"));
    assert!(header.ends_with("discrepancy_norm,status"));
    // 17 significant digits
    assert_eq!(rows[1][0], "1.0000000000000000e-3");
}

#[test]
fn propagate_with_world_disturbance_has_small_discrepancy() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{"group": {"type": "SEN3", "n": 1},
      "field": {"kind": "left_invariant", "u": {"type": "piecewise", "breaks": [0.25, 0.5, 0.75],
        "values": [[0.3, -0.2, 0.5, 0.1, 0.0, -0.4], [-0.4, 0.6, 0.1, 0.3, -0.2, 0.0],
                   [0.2, 0.1, -0.7, -0.1, 0.4, 0.2], [0.5, -0.3, 0.2, 0.2, 0.1, -0.5]]}},
      "disturbance": {"side": "world", "signal": {"type": "sinusoid", "offset": [0, 0, 0, 0, 0, 0],
        "amplitude": [0.08, 0.05, 0.04, 0.06, 0.05, 0.04], "omega": [11, 13, 17, 12, 14, 16],
        "phase": [0, 0.5, 1.0, 1.5, 2.0, 2.5]}},
      "error_side": "right", "xi0": [0.04, -0.03, 0.05, 0.02, -0.04, 0.03], "horizon": 1.0, "dt": 0.001}"#;
    let cfg = write(tmp.path(), "p.json", text);
    assert_eq!(run("propagate", &cfg, tmp.path(), &[]).status.code(), Some(0));
    let rows = csv_rows(&tmp.path().join("propagate.csv"));
    let worst = rows.iter().map(|r| r[13].parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert!(worst < 1e-6);
    assert!(rows.last().unwrap()[1].parse::<f64>().unwrap() != 0.0);
}

#[test]
fn propagate_marks_singular_rows_and_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let pi2 = 2.0 * std::f64::consts::PI;
    let text = format!(
        r#"{{"group": {{"type": "SO3"}}, "field": {{"kind": "zero"}},
        "disturbance": {{"signal": {{"type": "constant", "value": [0.0, 0.0, 0.0]}}}},
        "xi0": [0.0, 0.0, {pi2}], "horizon": 0.1, "dt": 0.01}}"#
    );
    let cfg = write(tmp.path(), "p.json", &text);
    let out = run("propagate", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
}

const SDE_SO3: &str = r#"{"group": {"type": "SO3"},
  "field": {"kind": "commutator", "u": {"type": "constant", "value": [0.4, -0.3, 0.8]}},
  "noise": {"side": "left", "sigma": 0.05}, "route": "error", "error_side": "left",
  "xi0": [0.05, 0.02, -0.07], "xhat0": [0.3, 0.1, -0.2],
  "horizon": 0.2, "dt": 0.001, "paths": 16, "weak_paths": 100, "seed": 1}"#;

#[test]
fn sde_writes_tables_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.json", SDE_SO3);
    let out = run("sde", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let strong = csv_rows(&tmp.path().join("sde_strong.csv"));
    assert_eq!(strong.len(), 3);
    assert_eq!(strong[0][0].parse::<f64>().unwrap(), 4e-3);
    let weak = csv_rows(&tmp.path().join("sde_weak.csv"));
    assert_eq!(weak.len(), 3 + 6);
    let summary = fs::read_to_string(tmp.path().join("sde_summary.txt")).unwrap();
    assert!(summary.contains("fitted_order"));
    assert!(summary.contains("weak_within_3_sigma = true"));
}

#[test]
fn sde_without_noise_follows_the_ode() {
    let tmp = tempfile::tempdir().unwrap();
    let sde = SDE_SO3.replace("\"sigma\": 0.05", "\"sigma\": 0.0");
    let cfg = write(tmp.path(), "s.json", &sde);
    assert_eq!(run("sde", &cfg, tmp.path(), &["--paths", "4"]).status.code(), Some(0));
    assert_eq!(run("propagate", &cfg, tmp.path(), &[]).status.code(), Some(0));
    let weak = csv_rows(&tmp.path().join("sde_weak.csv"));
    let prop = csv_rows(&tmp.path().join("propagate.csv"));
    let last = prop.last().unwrap();
    for i in 0..3 {
        let alg = weak[i][5].parse::<f64>().unwrap();
        let ode = last[1 + i].parse::<f64>().unwrap();
        assert!((alg - ode).abs() < 1e-3, "{alg} vs {ode}");
        assert_eq!(weak[i][6].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn sde_singular_start_is_diagnosed() {
    let tmp = tempfile::tempdir().unwrap();
    let pi2 = 2.0 * std::f64::consts::PI;
    let sde = SDE_SO3.replace("[0.05, 0.02, -0.07]", &format!("[0.0, {pi2}, 0.0]"));
    let cfg = write(tmp.path(), "s.json", &sde);
    let out = run("sde", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("singular"));
}

#[test]
fn oracle_passes_and_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{"group": {"type": "SEN3", "n": 2}, "field": {"kind": "zero"},
      "horizon": 1.0, "dt": 0.001, "oracle": {"samples": 20}}"#;
    let cfg = write(tmp.path(), "o.json", text);
    let out = run("oracle", &cfg, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0));
    let rows = csv_rows(&tmp.path().join("oracle.csv"));
    assert_eq!(rows.len(), 20 * (4 + 3 + 1));
    assert!(rows.iter().filter(|r| r[6] == "true").all(|r| r[5] == "true"));
}

#[test]
fn thread_variable_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", COMMUTATOR_SE3);
    let out = bin()
        .args(["check", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path())
        .env("LIE_ERRDYN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("check").output().unwrap().status.code(), Some(1));
}
