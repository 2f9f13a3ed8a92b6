use std::fs;
use std::path::Path;

use hrms_harness::tables::{CONDITIONS_CSV, RUNS_CSV};
use hrms_harness::{run_single, run_suite, verify, write_report, ExperimentConfig, HarnessError, RunId};

const SMALL: &str = r#"
master_seed = 5
output_dir = "unused"
workers = 2
repetitions = 2
acquisitions = ["EI", "TS"]
rs_levels = [1, 2]
ms_levels = [1, 2]
stop = { max_function_evals = 22 }
objective = { kind = "forrester", noise_std = 0.3 }

[hyperpriors]
mean = { mu = 0.0, sigma = 10.0 }
lengthscale = { lower = 0.02, upper = 1.0 }
amplitude = { lower = 0.5, upper = 50.0 }
noise_std = { lower = 0.001, upper = 5.0 }

[run]
map = { restarts = 3, max_evals_per_restart = 60 }
proposal = { direct_evals_per_dim = 150, ts_grid_per_dim = 64 }
"#;

fn config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

#[test]
fn suite_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let outcome = run_suite(&cfg).unwrap();
    assert_eq!(outcome.runs.len(), 16);
    for (_, rec) in &outcome.runs {
        assert!(rec.accounting_holds());
        assert!(rec.totals.function_evaluations <= 22);
    }
    for name in ["runs.csv", "conditions.csv", "accounting.csv", "fidelity.csv", "manifest.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let report = verify(&cfg).unwrap();
    assert!(report.passed(), "{:?}", report.problems);
    assert_eq!(report.runs_checked, 16);
    assert_eq!(report.files_hashed, 4 + 2 * 16);
}

#[test]
fn verify_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    run_suite(&cfg).unwrap();

    let runs = dir.path().join(RUNS_CSV);
    let text = fs::read_to_string(&runs).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
    fields[6] = "99".into();
    lines[1] = fields.join(",");
    fs::write(&runs, lines.join("\n") + "\n").unwrap();
    let report = verify(&cfg).unwrap();
    assert!(!report.passed());
    assert!(report.problems.iter().any(|p| p.contains("row disagrees")));
    assert!(report.problems.iter().any(|p| p.starts_with(RUNS_CSV)));

    write_report(&cfg).unwrap();
    assert!(verify(&cfg).unwrap().passed());

    let conditions = dir.path().join(CONDITIONS_CSV);
    let mut text = fs::read_to_string(&conditions).unwrap();
    text.push_str("extra\n");
    fs::write(&conditions, text).unwrap();
    let report = verify(&cfg).unwrap();
    assert!(report.problems.iter().any(|p| p.contains("recomputation")));
}

#[test]
fn verify_rejects_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    run_suite(&cfg).unwrap();
    let mut other = cfg.clone();
    other.beta = 3.0;
    let report = verify(&other).unwrap();
    assert!(report.problems.iter().any(|p| p.contains("different config")));
}

#[test]
fn single_run_reproduces_its_record_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    run_suite(&cfg).unwrap();
    let id = RunId::parse("TS_rs2_ms2_rep01").unwrap();
    let files = [format!("runs/{}.json", id.key()), format!("runs/{}.jsonl", id.key())];
    let before: Vec<Vec<u8>> = files.iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect();
    for f in &files {
        fs::remove_file(dir.path().join(f)).unwrap();
    }
    run_single(&cfg, &id).unwrap();
    let after: Vec<Vec<u8>> = files.iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect();
    assert_eq!(before, after);
    assert!(verify(&cfg).unwrap().passed());

    let missing = RunId::parse("UCB_rs1_ms1_rep00").unwrap();
    assert!(matches!(run_single(&cfg, &missing), Err(HarnessError::Config(_))));
}

#[test]
fn worker_count_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg_a = config(a.path());
    cfg_a.workers = 1;
    let mut cfg_b = config(b.path());
    cfg_b.workers = 3;
    run_suite(&cfg_a).unwrap();
    run_suite(&cfg_b).unwrap();
    for name in ["runs.csv", "conditions.csv", "accounting.csv", "fidelity.csv", "manifest.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn unwritable_output_aborts_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let cfg = config(&blocker.join("out"));
    assert!(matches!(run_suite(&cfg), Err(HarnessError::Unwritable(..))));
}

#[test]
fn budget_equal_to_seed_count_gives_empty_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.stop.max_function_evals = Some(10);
    cfg.repetitions = 1;
    let outcome = run_suite(&cfg).unwrap();
    for (_, rec) in &outcome.runs {
        assert_eq!(rec.totals.iterations, 0);
        assert_eq!(rec.totals.function_evaluations, 10);
        assert!(rec.accounting_holds());
    }
    assert!(verify(&cfg).unwrap().passed());
    let accounting = fs::read_to_string(dir.path().join("accounting.csv")).unwrap();
    assert!(accounting.lines().skip(1).all(|l| l.contains(",0,10,0,10")), "{accounting}");
}

#[test]
fn accounting_matches_plan_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let outcome = run_suite(&cfg).unwrap();
    for (id, rec) in &outcome.runs {
        let per = id.condition.plan.rs * id.condition.plan.ms;
        assert_eq!(rec.totals.iterations, (22 - 10) / per, "{}", id.key());
        assert_eq!(rec.totals.function_evaluations, 10 + rec.totals.iterations * per);
    }
}
