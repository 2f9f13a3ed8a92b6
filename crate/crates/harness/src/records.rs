//! Per-run record files.
//!
//! `runs/<key>.jsonl` holds one iteration per line; `runs/<key>.json` holds
//! everything else about the run.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hrms_core::sampling::IterationRecord;
use hrms_core::RunRecord;

use crate::{HarnessError, Result, RunId};

pub fn runs_dir(out: &Path) -> PathBuf {
    out.join("runs")
}

pub fn iteration_path(out: &Path, id: &RunId) -> PathBuf {
    runs_dir(out).join(format!("{}.jsonl", id.key()))
}

pub fn summary_path(out: &Path, id: &RunId) -> PathBuf {
    runs_dir(out).join(format!("{}.json", id.key()))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io(path.to_path_buf(), e)
}

pub fn write_run(out: &Path, id: &RunId, record: &RunRecord) -> Result<()> {
    let path = iteration_path(out, id);
    let mut lines = Vec::new();
    for it in &record.iterations {
        serde_json::to_writer(&mut lines, it).expect("iteration serializes");
        lines.push(b'\n');
    }
    fs::File::create(&path).and_then(|mut f| f.write_all(&lines)).map_err(io_err(&path))?;

    let head = RunRecord { iterations: Vec::new(), ..record.clone() };
    let path = summary_path(out, id);
    let mut text = serde_json::to_vec_pretty(&head).expect("record serializes");
    text.push(b'\n');
    fs::write(&path, text).map_err(io_err(&path))
}

pub fn read_run(out: &Path, id: &RunId) -> Result<RunRecord> {
    let path = summary_path(out, id);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut record: RunRecord =
        serde_json::from_str(&text).map_err(|e| HarnessError::Record(path.clone(), e.to_string()))?;
    let path = iteration_path(out, id);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    record.iterations = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str::<IterationRecord>(line)
                .map_err(|e| HarnessError::Record(path.clone(), format!("line {}: {e}", i + 1)))
        })
        .collect::<Result<_>>()?;
    Ok(record)
}
