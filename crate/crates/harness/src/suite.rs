//! Sweep execution and artifact emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hrms_core::{run_gpbo, RunRecord, StochasticObjective};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::records::{read_run, runs_dir, write_run};
use crate::tables::{derived_tables, render_runs, RunRow, RUNS_CSV};
use crate::truth::{self, Truth};
use crate::{ExperimentConfig, HarnessError, Result, RunId};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug)]
pub struct SuiteOutcome {
    pub out_dir: PathBuf,
    pub runs: Vec<(RunId, RunRecord)>,
    pub rows: Vec<RunRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub master_seed: u64,
    pub runs: usize,
    pub truth: String,
    /// Relative path to SHA-256 of every emitted file.
    pub files: BTreeMap<String, String>,
}

fn prepare_out(out: &Path) -> Result<()> {
    let unwritable = |e| HarnessError::Unwritable(out.to_path_buf(), e);
    fs::create_dir_all(runs_dir(out)).map_err(unwritable)?;
    let probe = out.join(".write-probe");
    fs::write(&probe, b"").map_err(unwritable)?;
    fs::remove_file(&probe).map_err(unwritable)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

/// Executes one run. Objective failures still yield their partial record.
pub fn execute(cfg: &ExperimentConfig, objective: &dyn StochasticObjective, id: &RunId) -> RunRecord {
    let bbox = objective.bounds();
    match run_gpbo(
        objective,
        &bbox,
        &cfg.spec(&id.condition),
        &id.condition.plan,
        &cfg.hyperpriors,
        &cfg.stop,
        &cfg.run,
        cfg.run_seed(id),
    ) {
        Ok(record) => record,
        Err(failure) => failure.record,
    }
}

/// Runs the whole sweep into `cfg.output_dir` and writes every table.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<SuiteOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    prepare_out(&out)?;
    let objective = cfg.objective.build()?;
    let ids = cfg.runs();
    let records: Vec<Result<(RunId, RunRecord)>> = pool(cfg.workers)?.install(|| {
        ids.par_iter()
            .map(|id| {
                let record = execute(cfg, &objective, id);
                write_run(&out, id, &record)?;
                Ok((*id, record))
            })
            .collect()
    });
    let runs = records.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = write_report_from(cfg, &out, &runs)?;
    Ok(SuiteOutcome { out_dir: out, runs, rows })
}

/// Re-executes a single run and rewrites its record files only.
pub fn run_single(cfg: &ExperimentConfig, id: &RunId) -> Result<RunRecord> {
    cfg.validate()?;
    if !cfg.runs().contains(id) {
        return Err(HarnessError::Config(format!("run {} is not part of this sweep", id.key())));
    }
    prepare_out(&cfg.output_dir)?;
    let objective = cfg.objective.build()?;
    let record = pool(cfg.workers)?.install(|| execute(cfg, &objective, id));
    write_run(&cfg.output_dir, id, &record)?;
    Ok(record)
}

/// Rebuilds every table and the manifest from the stored run records.
pub fn write_report(cfg: &ExperimentConfig) -> Result<Vec<RunRow>> {
    let out = &cfg.output_dir;
    let runs = cfg
        .runs()
        .into_iter()
        .map(|id| Ok((id, read_run(out, &id)?)))
        .collect::<Result<Vec<_>>>()?;
    write_report_from(cfg, out, &runs)
}

fn write_report_from(cfg: &ExperimentConfig, out: &Path, runs: &[(RunId, RunRecord)]) -> Result<Vec<RunRow>> {
    let truth = truth::prepare(cfg, out, false)?;
    let grid = truth::grid(cfg)?;
    let dim = cfg.objective.build()?.dim();
    let rows: Vec<RunRow> = pool(cfg.workers)?.install(|| {
        runs.par_iter()
            .map(|(id, rec)| RunRow::from_record(*id, rec, &truth, &grid))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut files = vec![(RUNS_CSV, render_runs(&rows, dim))];
    files.extend(derived_tables(&rows, dim));
    for (name, text) in &files {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| HarnessError::Io(path.clone(), e))?;
    }
    write_manifest(cfg, out, runs.iter().map(|(id, _)| *id), &truth)?;
    Ok(rows)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| HarnessError::Io(path.to_path_buf(), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Files the manifest covers, relative to the output directory.
pub fn manifest_files(ids: impl Iterator<Item = RunId>) -> Vec<String> {
    let mut names: Vec<String> = vec![
        RUNS_CSV.into(),
        crate::tables::CONDITIONS_CSV.into(),
        crate::tables::ACCOUNTING_CSV.into(),
        crate::tables::FIDELITY_CSV.into(),
    ];
    for id in ids {
        names.push(format!("runs/{}.json", id.key()));
        names.push(format!("runs/{}.jsonl", id.key()));
    }
    names
}

fn write_manifest(cfg: &ExperimentConfig, out: &Path, ids: impl Iterator<Item = RunId>, truth: &Truth) -> Result<()> {
    let names = manifest_files(ids);
    let runs = (names.len() - 4) / 2;
    let files = names
        .into_iter()
        .map(|n| Ok((n.clone(), file_sha256(&out.join(&n))?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let manifest = Manifest {
        config_sha256: cfg.hash(),
        master_seed: cfg.master_seed,
        runs,
        truth: truth.label().into(),
        files,
    };
    let path = out.join(MANIFEST);
    let mut text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    text.push(b'\n');
    fs::write(&path, text).map_err(|e| HarnessError::Io(path.clone(), e))
}
