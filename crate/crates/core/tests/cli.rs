use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use slimeworld::cli_io::RunConfig;
use slimeworld::lifecycle::LifecycleConfig;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slimeworld"))
        .args(args)
        .env("EINCASM_THREADS", "2")
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn small_config(dir: &Path, steps: usize) -> PathBuf {
    let mut cfg = RunConfig::default();
    cfg.evolution.population_size = 6;
    cfg.evolution.generations = 2;
    cfg.lifecycle = LifecycleConfig { t_min: steps, t_max: steps, ..LifecycleConfig::default() };
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn evolve_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 12);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(code(&["evolve", "--config", s(&cfg), "--seed", "3", "--out", s(out)]), 0);
    }
    for f in ["resolved_config.json", "log.csv", "checkpoint.json", "best_genome.json", "best_trajectory.json"] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read(a.join("log.csv")).unwrap();
    assert_eq!(log, std::fs::read(b.join("log.csv")).unwrap());
    let text = String::from_utf8(log).unwrap();
    assert!(text.starts_with("#schema_version=1\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 8);
    let out = dir.path().join("o");
    let args = ["evolve", "--config", s(&cfg), "--generations", "3", "--pop", "5", "--out", s(&out)];
    assert_eq!(code(&args), 0);
    let resolved: RunConfig =
        serde_json::from_str(&std::fs::read_to_string(out.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved.evolution.generations, 3);
    assert_eq!(resolved.evolution.population_size, 5);
    assert_eq!(std::fs::read_to_string(out.join("log.csv")).unwrap().lines().count(), 5);
}

#[test]
fn invalid_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["evolve", "--config", s(&dir.path().join("missing.json"))]), 2);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"physics\": {\n    \"beta\": -1.0\n  }\n}\n").unwrap();
    let out = run(&["evolve", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json:3"));

    let corrupt = dir.path().join("genome.json");
    std::fs::write(&corrupt, "{\"nodes\": [").unwrap();
    assert_eq!(code(&["test", s(&corrupt), "--out", s(&dir.path().join("t"))]), 2);

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(code(&["replay", s(&empty)]), 2);
}

#[test]
fn genome_dimension_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let genome = dir.path().join("g.json");
    assert_eq!(code(&["export-baseline", "--out", s(&genome), "--k-hidden", "2"]), 0);
    let cfg = small_config(dir.path(), 5);
    assert_eq!(code(&["render", s(&genome), "--config", s(&cfg), "--out", s(&dir.path().join("r"))]), 2);
}

#[test]
fn render_frame_cadence() {
    let dir = tempfile::tempdir().unwrap();
    let genome = dir.path().join("g.json");
    assert_eq!(code(&["export-baseline", "--out", s(&genome)]), 0);
    let cfg = small_config(dir.path(), 10);
    let frames = |every: &str, name: &str| {
        let out = dir.path().join(name);
        let args = ["render", s(&genome), "--config", s(&cfg), "--out", s(&out), "--frame-every", every];
        assert_eq!(code(&args), 0);
        let mut names: Vec<String> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".ppm"))
            .collect();
        names.sort();
        names
    };
    assert_eq!(frames("11", "once"), ["frame_000000.ppm", "frame_000010.ppm"]);
    assert_eq!(frames("4", "often").len(), 4);
    let ppm = std::fs::read(dir.path().join("once/frame_000000.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
}

#[test]
fn test_command_reports_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let genome = dir.path().join("g.json");
    assert_eq!(code(&["export-baseline", "--out", s(&genome)]), 0);
    let out = dir.path().join("t");
    assert_eq!(code(&["test", s(&genome), "--out", s(&out)]), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("test_report.json")).unwrap()).unwrap();
    assert_eq!(report["tests"].as_array().unwrap().len(), 3);
    assert!(report["tests"].as_array().unwrap().iter().all(|t| t["completed"] == true));
    assert_eq!(report["genome_id"].as_str().unwrap().len(), 16);
}
