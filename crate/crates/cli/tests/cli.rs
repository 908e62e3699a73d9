use std::path::PathBuf;
use std::process::Command as Process;

use ifslab_cli::{run, Command, Format, RunConfig};

fn workspace_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn ifslab(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_ifslab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &tempfile::TempDir, text: &str) -> String {
    let path = dir.path().join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn dimension_csv_matches_golden_file() {
    let config = workspace_file("configs/interval.toml");
    let out = ifslab(&["dimension", "--config", config.to_str().unwrap(), "--format", "csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let golden = std::fs::read_to_string(workspace_file("crates/cli/tests/golden/interval_dimension.csv")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden);
}

#[test]
fn golden_dimensions_agree_with_closed_form() {
    let golden = std::fs::read_to_string(workspace_file("crates/cli/tests/golden/interval_dimension.csv")).unwrap();
    let want = 5f64.ln() / -(0.21f64.ln());
    for line in golden.lines().skip(1) {
        let dim: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((dim - want).abs() < 1e-9, "{line}");
    }
}

#[test]
fn out_dir_holds_resolved_config_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace_file("configs/interval.toml");
    let out_dir = dir.path().join("out");
    let out = ifslab(&["dimension", "--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    for name in ["resolved.toml", "dimension.csv", "dimension.json"] {
        assert!(out_dir.join(name).is_file(), "missing {name}");
    }
    let resolved = std::fs::read_to_string(out_dir.join("resolved.toml")).unwrap();
    let cfg = RunConfig::from_toml(&resolved).unwrap();
    assert_eq!(cfg.params.count, Some(8));
    assert!(cfg.dimension.depths.is_some());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace_file("configs/interval.toml");
    let out_dir = dir.path().join("out");
    let out = ifslab(&[
        "dimension",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "42",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let resolved = std::fs::read_to_string(out_dir.join("resolved.toml")).unwrap();
    assert_eq!(RunConfig::from_toml(&resolved).unwrap().seed, 42);
}

#[test]
fn invalid_parameter_exits_with_range_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(&dir, "[system]\nkind = \"interval-example\"\nn = 4\nc = 0.5\n");
    let out_dir = dir.path().join("out");
    let out = ifslab(&["dimension", "--config", &path, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
    let err: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["error"]["exit_code"], 5);
}

#[test]
fn unknown_system_kind_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(&dir, "[system]\nkind = \"lorenz\"\n");
    let out = ifslab(&["dimension", "--config", &path]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
}

#[test]
fn missing_config_is_a_config_error() {
    assert_eq!(ifslab(&["pressure"]).status.code(), Some(2));
}

#[test]
fn jets_on_a_plain_system_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(&dir, "[system]\nkind = \"interval-example\"\nn = 4\nc = 0.21\n");
    let code = ifslab(&["jets", "--config", &path]).status.code();
    assert!(matches!(code, Some(2) | Some(5)), "exit code {code:?}");
}

#[test]
fn scan_emits_one_row_per_parameter() {
    let cfg = RunConfig::from_toml(
        "[system]\nkind = \"interval-example\"\nn = 4\nc = 0.21\n[params]\ncount = 64\n[scan]\ncover_depths = [4]\natoms = 500\n",
    )
    .unwrap();
    let artifacts = run(Command::Scan, cfg, None, Some(Format::Csv)).unwrap();
    let csv = &artifacts.iter().find(|a| a.name == "scan.csv").unwrap().contents;
    assert_eq!(csv.lines().count(), 65);
}

#[test]
fn blender_report_has_expected_entropy_ratio() {
    let config = workspace_file("configs/blender.toml");
    let cfg = ifslab_cli::load_config(&config).unwrap();
    let artifacts = run(Command::BlenderDemo, cfg, None, Some(Format::Json)).unwrap();
    let report: serde_json::Value = serde_json::from_str(&artifacts[1].contents).unwrap();
    let ratio = report["entropy_ratio"].as_f64().unwrap();
    assert!((ratio - 3f64.ln() / 2f64.ln()).abs() < 1e-12);
    assert_eq!(report["entropy_exceeds_contraction"], true);
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(workspace_file("configs")).unwrap() {
        let path = entry.unwrap().path();
        ifslab_cli::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn repeated_runs_are_identical() {
    let config = workspace_file("configs/cantor.toml");
    let cfg = ifslab_cli::load_config(&config).unwrap();
    let a = run(Command::Transversality, cfg.clone(), Some(9), None).unwrap();
    let b = run(Command::Transversality, cfg, Some(9), None).unwrap();
    assert_eq!(a, b);
}
