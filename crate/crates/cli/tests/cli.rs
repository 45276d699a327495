use std::fs;
use std::path::Path;
use std::process::{Command as Process, Output};

use aps_cli::{parse_config_str, CliError, Command, Overrides};
use aps_core::sim::EstimatorKind;
use aps_core::{Scale, Target};

const MINIMAL_SIMULATE: &str = r#"
[simulate]
outcome = "binary"
scenario = "linear"
n = 500
replicates = 200
"#;

fn parse(command: Command, text: &str) -> Result<aps_cli::RunConfig, CliError> {
    parse_config_str(command, text, None, None, &Overrides::default())
}

fn config_error(command: Command, text: &str) -> String {
    match parse(command, text) {
        Err(CliError::Config(msg)) => msg,
        other => panic!("expected a configuration error, got {other:?}"),
    }
}

fn aps(args: &[&str], dir: &Path) -> Output {
    Process::new(env!("CARGO_BIN_EXE_aps"))
        .args(args)
        .current_dir(dir)
        .env_remove("APS_SEED")
        .output()
        .unwrap()
}

#[test]
fn minimal_simulate_config_gets_defaults() {
    let cfg = parse(Command::Simulate, MINIMAL_SIMULATE).unwrap();
    assert_eq!(cfg.folds, 5);
    assert_eq!(cfg.seed, 1);
    assert_eq!((cfg.estimand.target, cfg.estimand.scale), (Target::Sample, Scale::Ratio));
    let kinds: Vec<EstimatorKind> = cfg.roster.iter().map(|e| e.kind).collect();
    assert_eq!(
        kinds,
        [EstimatorKind::Unadjusted, EstimatorKind::Static, EstimatorKind::SmallAps, EstimatorKind::LargeAps]
    );
    let grid = cfg.grid.unwrap();
    assert_eq!((grid.cells.len(), grid.replicates, grid.cells[0].n), (1, 200, 500));
}

#[test]
fn large_preset_expands_to_candidate_lists() {
    let cfg = parse(Command::Simulate, &format!("estimators = [\"large-aps\"]\n{MINIMAL_SIMULATE}")).unwrap();
    let aps = cfg.roster[0].aps_config(5, 0).unwrap();
    let names: Vec<String> = (1..=5).map(|j| format!("W{j}")).collect();
    let labels = |c: &[aps_core::LearnerSpec]| c.iter().map(|s| s.label(&names)).collect::<Vec<_>>();
    let glms: Vec<String> = names.iter().map(|n| format!("GLM({n})")).collect();
    let mut outcome = vec!["Unadj".to_string()];
    outcome.extend(glms.iter().cloned());
    outcome.extend(["Main", "Step", "StepInt", "LASSO", "MARS"].map(String::from));
    assert_eq!(labels(&aps.outcome_candidates), outcome);
    let mut ps = vec!["Unadj".to_string()];
    ps.extend(glms);
    ps.extend(["Main", "Step", "LASSO"].map(String::from));
    assert_eq!(labels(&aps.ps_candidates), ps);
}

#[test]
fn invalid_configs_name_the_field() {
    assert!(config_error(Command::Simulate, &format!("folds = 1\n{MINIMAL_SIMULATE}")).contains("folds"));
    assert!(config_error(Command::Simulate, &format!("estimators = [\"huge-aps\"]\n{MINIMAL_SIMULATE}")).contains("estimators"));
    let no_path = "[data]\ntreatment = \"a\"\noutcome = \"y\"\noutcome_kind = \"binary\"\n";
    assert!(config_error(Command::Analyze, no_path).contains("data.path"));
    assert!(config_error(Command::Simulate, "seed = 3").contains("simulate"));
    let ratio = "scale = \"ratio\"\n[simulate]\noutcome = \"continuous\"\nscenario = \"linear\"\n";
    assert!(config_error(Command::Simulate, ratio).contains("scale"));
    let bad_static = format!("static_outcome = \"W9\"\n{MINIMAL_SIMULATE}");
    assert!(config_error(Command::Simulate, &bad_static).contains("static_outcome"));
    assert!(config_error(Command::Simulate, &format!("colour = 1\n{MINIMAL_SIMULATE}")).contains("colour"));
}

#[test]
fn permutation_count_bounds() {
    let base = "[data]\npath = \"d.csv\"\ntreatment = \"a\"\noutcome = \"y\"\noutcome_kind = \"binary\"\n";
    assert!(config_error(Command::Permute, &format!("{base}[permute]\nb = 50\n")).contains("permute.b"));
    assert!(config_error(Command::Permute, base).contains("permute.b"));
    let ok = parse(Command::Permute, &format!("{base}[permute]\nb = 100\n")).unwrap();
    assert_eq!(ok.permutations, Some(100));
    let flag = Overrides {
        permutations: Some(150),
        ..Default::default()
    };
    let cfg = parse_config_str(Command::Permute, &format!("{base}[permute]\nb = 100\n"), None, None, &flag).unwrap();
    assert_eq!(cfg.permutations, Some(150));
}

#[test]
fn seed_precedence() {
    let text = format!("seed = 5\n{MINIMAL_SIMULATE}");
    let none = Overrides::default();
    let flag = Overrides {
        seed: Some(9),
        ..Default::default()
    };
    assert_eq!(parse_config_str(Command::Simulate, &text, None, None, &none).unwrap().seed, 5);
    assert_eq!(parse_config_str(Command::Simulate, &text, None, Some("7"), &none).unwrap().seed, 7);
    assert_eq!(parse_config_str(Command::Simulate, &text, None, Some("7"), &flag).unwrap().seed, 9);
    assert!(matches!(
        parse_config_str(Command::Simulate, &text, None, Some("x"), &none),
        Err(CliError::Config(_))
    ));
}

fn write_config(dir: &Path, text: &str) {
    fs::write(dir.join("run.toml"), text).unwrap();
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn simulate_smoke_run_and_rerun_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "seed = 4\nestimators = [\"unadjusted\", \"small-aps\"]\n[simulate]\noutcome = \"binary\"\nscenarios = [\"treatment-only\"]\nn = 120\nnull_effect = true\n",
    );
    let one = aps(&["simulate", "--config", "run.toml", "--replicates", "1", "--out", "one"], dir.path());
    assert!(one.status.success(), "{}", String::from_utf8_lossy(&one.stderr));
    for f in ["metrics.csv", "metrics.json", "replicates.csv"] {
        assert!(dir.path().join("one").join(f).exists(), "{f}");
    }
    assert_eq!(header(&dir.path().join("one/metrics.csv")), aps_cli::output::SIMULATION_COLUMNS.join(","));
    assert_eq!(header(&dir.path().join("one/replicates.csv")), aps_cli::output::REPLICATE_COLUMNS.join(","));

    for out in ["a", "b"] {
        let run = aps(&["simulate", "--config", "run.toml", "--replicates", "4", "--workers", "2", "--out", out], dir.path());
        assert!(run.status.success());
    }
    for f in ["metrics.csv", "metrics.json", "replicates.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let metrics = fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    assert!(metrics.lines().skip(1).all(|l| l.contains(",type1,")));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/metrics.json")).unwrap()).unwrap();
    assert_eq!(json[0]["metrics"].as_array().unwrap().len(), 2);
}

fn trial_csv(dir: &Path, with_covariates: bool) {
    let mut text = String::from(if with_covariates { "treat,y,age,male\n" } else { "treat,y\n" });
    for i in 0..80 {
        let a = (i % 3 != 0) as u8;
        let age = 18 + (i * 7) % 40;
        let y = 300.0 + 2.0 * age as f64 + 30.0 * a as f64 + ((i * 13) % 17) as f64;
        if with_covariates {
            text.push_str(&format!("{a},{y},{age},{}\n", i % 2));
        } else {
            text.push_str(&format!("{a},{y}\n"));
        }
    }
    fs::write(dir.join("trial.csv"), text).unwrap();
}

#[test]
fn analyze_without_covariates_matches_unadjusted() {
    let dir = tempfile::tempdir().unwrap();
    trial_csv(dir.path(), false);
    write_config(
        dir.path(),
        "[data]\npath = \"trial.csv\"\ntreatment = \"treat\"\noutcome = \"y\"\noutcome_kind = \"continuous\"\n",
    );
    let run = aps(&["analyze", "--config", "run.toml", "--out", "out"], dir.path());
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("out/metrics.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert_eq!(&row[3], &rows[0][3]);
        assert_eq!(&row[6], &rows[0][6]);
        assert_eq!(&row[7], "1.0");
    }
    assert!(dir.path().join("out/ledger.json").exists());
}

#[test]
fn analyze_reports_subgroups_and_selected_learners() {
    let dir = tempfile::tempdir().unwrap();
    trial_csv(dir.path(), true);
    write_config(
        dir.path(),
        "estimators = [\"unadjusted\", \"static\", \"large-aps\"]\nstatic_outcome = \"age\"\n\
         [data]\npath = \"trial.csv\"\ntreatment = \"treat\"\noutcome = \"y\"\noutcome_kind = \"continuous\"\ncovariates = [\"age\", \"male\"]\n\
         [[subgroups]]\nname = \"older\"\nfilter = \"age >= 30\"\n",
    );
    let run = aps(&["analyze", "--config", "run.toml", "--out", "out", "--subgroup", "male == 1"], dir.path());
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(dir.path().join("out/metrics.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 9);
    let groups: Vec<&str> = rows.iter().map(|r| r["subgroup"].as_str().unwrap()).collect();
    assert_eq!(groups[0], "overall");
    assert_eq!(groups[3], "older");
    assert_eq!(groups[6], "male == 1");
    assert_eq!(rows[1]["selected_outcome"], "GLM(age)");
    assert_eq!(rows[0]["rel_var"], 1.0);
    assert!(rows[2]["rel_var"].as_f64().unwrap() < 1.0);
    let ledgers: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(dir.path().join("out/ledger.json")).unwrap()).unwrap();
    assert_eq!(ledgers.len(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    trial_csv(dir.path(), true);
    let data = "[data]\npath = \"trial.csv\"\ntreatment = \"treat\"\noutcome = \"y\"\noutcome_kind = \"continuous\"\n";

    write_config(dir.path(), &format!("folds = 1\n{data}"));
    assert_eq!(aps(&["analyze", "--config", "run.toml"], dir.path()).status.code(), Some(2));

    write_config(dir.path(), &format!("{data}covariates = [\"weight\"]\n"));
    assert_eq!(aps(&["analyze", "--config", "run.toml"], dir.path()).status.code(), Some(3));

    write_config(dir.path(), &data.replace("trial.csv", "absent.csv"));
    assert_eq!(aps(&["analyze", "--config", "run.toml"], dir.path()).status.code(), Some(3));

    write_config(dir.path(), &format!("{data}covariates = [\"age\"]\n"));
    let empty_arm = aps(&["analyze", "--config", "run.toml", "--subgroup", "age > 100"], dir.path());
    assert_eq!(empty_arm.status.code(), Some(3));

    assert_eq!(aps(&["simulate"], dir.path()).status.code(), Some(2));
}

#[test]
fn permute_with_never_rejecting_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("treat,y,w\n");
    for i in 0..40 {
        text.push_str(&format!("{},5,{}\n", i % 2, i));
    }
    fs::write(dir.path().join("flat.csv"), text).unwrap();
    write_config(
        dir.path(),
        "estimators = [\"unadjusted\"]\n[data]\npath = \"flat.csv\"\ntreatment = \"treat\"\noutcome = \"y\"\noutcome_kind = \"continuous\"\ncovariates = [\"w\"]\n[permute]\nb = 100\n",
    );
    let run = aps(&["permute", "--config", "run.toml", "--out", "out"], dir.path());
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(dir.path().join("out/metrics.json")).unwrap()).unwrap();
    assert_eq!(rows[0]["rate"], 0.0);
    assert_eq!(rows[0]["rejections"], 0);
    assert_eq!(rows[0]["permutations"], 100);
    let (lo, hi) = (rows[0]["interval_lower"].as_f64().unwrap(), rows[0]["interval_upper"].as_f64().unwrap());
    assert!(lo < 0.05 && 0.05 < hi);

    assert_eq!(aps(&["permute", "--config", "run.toml", "--b", "50"], dir.path()).status.code(), Some(2));
}
