use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use haicmp_core::config::PipelineConfig;
use haicmp_core::experiment::run_experiment;
use haicmp_core::synthgen::generate_population;
use serde_json::Value;

const SMALL: &str = r#"
seed = 3

[scenario]
n_patients = 700
rng_seed = 5

[grid]
max_depth = [2, 3]
n_rounds = [20, 40]
learning_rate = [0.3]
"#;

fn haicmp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_haicmp"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "info")
        .env_remove("HAICMP_JOBS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The structured error printed on failure.
fn error_of(o: &Output) -> Value {
    let line = stderr(o).lines().last().expect("error line").to_string();
    serde_json::from_str::<Value>(&line).expect("error is JSON")["error"].clone()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn experiment_matches_the_library_and_reruns_from_cache() {
    let dir = setup();
    let out = haicmp(&["--config", "small.toml", "--out", "run", "experiment"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let run = dir.path().join("run");

    let cfg = PipelineConfig::from_path(&dir.path().join("small.toml")).unwrap();
    let (ds, _) = generate_population(&cfg.scenario).unwrap();
    let expected = run_experiment(&cfg, &ds).unwrap().report.to_json().unwrap();
    let written = fs::read_to_string(run.join("report/report.json")).unwrap();
    assert_eq!(written, expected);

    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("Test AUC") && table.contains("balance_missingness"), "{table}");
    for f in ["config.toml", "run.json", "report/summary.txt", "report/roc_iri.svg", "report/los_vap.svg", "labels/labels.csv"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    assert_eq!(PipelineConfig::from_path(&run.join("config.toml")).unwrap(), cfg);
    let meta: Value = serde_json::from_str(&fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["scenario_seed"], 5);
    assert_eq!(meta["stages"].as_object().unwrap().len(), 6);

    let again = haicmp(&["--config", "small.toml", "--out", "run", "experiment"], dir.path());
    assert!(again.status.success());
    let log = stderr(&again);
    assert_eq!(log.matches("cached").count(), 6, "{log}");
    assert_eq!(fs::read_to_string(run.join("report/report.json")).unwrap(), expected);
}

#[test]
fn only_stages_downstream_of_a_change_rerun() {
    let dir = setup();
    assert!(haicmp(&["--config", "small.toml", "--out", "run", "experiment"], dir.path()).status.success());

    // A different grid touches training and evaluation only.
    let changed = SMALL.replace("n_rounds = [20, 40]", "n_rounds = [30]");
    fs::write(dir.path().join("changed.toml"), changed).unwrap();
    let log = stderr(&haicmp(&["--config", "changed.toml", "--out", "run", "experiment"], dir.path()));
    for s in ["generate", "label", "cohort", "featurize"] {
        assert!(log.contains(&format!("{s}: cached")), "{log}");
    }
    for s in ["train", "evaluate"] {
        assert!(log.contains(&format!("{s}: running")), "{log}");
    }

    // A damaged output invalidates its stage.
    let labels = dir.path().join("run/labels/labels.csv");
    let text = fs::read_to_string(&labels).unwrap();
    fs::write(&labels, text.replacen("positive", "negative", 1)).unwrap();
    let log = stderr(&haicmp(&["--config", "changed.toml", "--out", "run", "label"], dir.path()));
    assert!(log.contains("label: running"), "{log}");
    assert_eq!(fs::read_to_string(&labels).unwrap(), text);
}

#[test]
fn stages_run_one_at_a_time() {
    let dir = setup();
    for s in ["generate", "label", "cohort", "featurize", "train", "evaluate"] {
        let o = haicmp(&["--config", "small.toml", "--out", "run", s], dir.path());
        assert!(o.status.success(), "{s}: {}", stderr(&o));
    }
    assert!(dir.path().join("run/report/report.json").is_file());
}

#[test]
fn missing_upstream_is_a_structured_error() {
    let dir = setup();
    let o = haicmp(&["--config", "small.toml", "--out", "run", "evaluate"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let e = error_of(&o);
    assert_eq!(e["kind"], "missing_upstream");
    assert_eq!(e["stage"], "evaluate");
    assert!(e["message"].as_str().unwrap().contains("run stage generate first"));

    assert!(haicmp(&["--config", "small.toml", "--out", "run", "generate"], dir.path()).status.success());
    let o = haicmp(&["--config", "small.toml", "--out", "run", "featurize"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(error_of(&o)["message"].as_str().unwrap().contains("run stage label first"));
}

#[test]
fn invalid_config_is_rejected() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "seed = 1\n[cohort]\nn_repeats = 0\n").unwrap();
    fs::write(dir.path().join("unknown.toml"), "sede = 1\n").unwrap();
    for f in ["bad.toml", "unknown.toml", "absent.toml"] {
        let o = haicmp(&["--config", f, "--out", "run", "generate"], dir.path());
        assert_eq!(o.status.code(), Some(2), "{f}");
        assert_eq!(error_of(&o)["kind"], "invalid_config", "{f}");
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = setup();
    let o = haicmp(&["--config", "small.toml", "--out", "run", "--seed", "99", "--jobs", "2", "generate"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = PipelineConfig::from_path(&dir.path().join("run/config.toml")).unwrap();
    assert_eq!(cfg.seed, 99);
    let meta: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/run.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 99);
}
