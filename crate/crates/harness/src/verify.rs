//! Audit of a finished sweep against its stored records.

use std::fs;

use hrms_core::StochasticObjective;

use crate::records::read_run;
use crate::suite::{file_sha256, Manifest, MANIFEST};
use crate::tables::{derived_tables, parse_runs, RUNS_CSV};
use crate::{ExperimentConfig, HarnessError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub runs_checked: usize,
    pub tables_checked: usize,
    pub files_hashed: usize,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Checks that
/// - every run record satisfies its accounting identity,
/// - `runs.csv` agrees with the records,
/// - every derived table equals its recomputation from `runs.csv`, and
/// - the manifest matches the config and the files on disk.
pub fn verify(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    let out = &cfg.output_dir;
    let mut report = VerifyReport::default();
    let ids = cfg.runs();

    let rows = parse_runs(&out.join(RUNS_CSV))?;
    let listed: Vec<_> = rows.iter().map(|r| r.id).collect();
    if listed != ids {
        report.problems.push(format!("{RUNS_CSV} lists {} runs, config defines {}", listed.len(), ids.len()));
    }

    for (id, row) in ids.iter().zip(&rows) {
        let key = id.key();
        let rec = read_run(out, id)?;
        report.runs_checked += 1;
        if !rec.accounting_holds() {
            report.problems.push(format!("{key}: evaluations != seeds + sum of rs*ms"));
        }
        if rec.seed != cfg.run_seed(id) {
            report.problems.push(format!("{key}: seed {} differs from the derived seed", rec.seed));
        }
        let same = row.seed == rec.seed
            && row.seeds == rec.seed_points.len()
            && row.iterations == rec.totals.iterations
            && row.evaluations == rec.totals.function_evaluations
            && row.termination == rec.termination.label()
            && row.y_hat == rec.optimum.as_ref().map(|o| o.y_hat)
            && row.x_hat == rec.optimum.as_ref().map(|o| o.x_hat.clone());
        if !same {
            report.problems.push(format!("{key}: {RUNS_CSV} row disagrees with the run record"));
        }
    }

    let dim = cfg.objective.build()?.dim();
    for (name, expected) in derived_tables(&rows, dim) {
        let path = out.join(name);
        let found = fs::read_to_string(&path).map_err(|e| HarnessError::Io(path.clone(), e))?;
        report.tables_checked += 1;
        if found != expected {
            report.problems.push(format!("{name} differs from its recomputation from {RUNS_CSV}"));
        }
    }

    let path = out.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::Io(path.clone(), e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| HarnessError::Record(path.clone(), e.to_string()))?;
    if manifest.config_sha256 != cfg.hash() {
        report.problems.push("manifest was written for a different config".into());
    }
    for (name, digest) in &manifest.files {
        report.files_hashed += 1;
        match file_sha256(&out.join(name)) {
            Ok(d) if &d == digest => {}
            Ok(_) => report.problems.push(format!("{name}: content changed since the manifest was written")),
            Err(e) => report.problems.push(format!("{name}: {e}")),
        }
    }
    Ok(report)
}
