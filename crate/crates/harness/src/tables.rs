//! Per-run rows and the condition tables derived from them.
//!
//! Numbers are written in shortest round-trip form, so parsing `runs.csv`
//! and re-aggregating reproduces the condition tables byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use hrms_core::objectives::surrogate_rmse;
use hrms_core::sampling::Termination;
use hrms_core::{AcquisitionKind, RunRecord, SamplingPlan};

use crate::truth::Truth;
use crate::{Condition, HarnessError, Result, RunId};

pub const RUNS_CSV: &str = "runs.csv";
pub const CONDITIONS_CSV: &str = "conditions.csv";
pub const ACCOUNTING_CSV: &str = "accounting.csv";
pub const FIDELITY_CSV: &str = "fidelity.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub id: RunId,
    pub seed: u64,
    pub seeds: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: String,
    pub x_hat: Option<Vec<f64>>,
    pub y_hat: Option<f64>,
    /// Reference value at `x_hat`.
    pub truth_at_x_hat: Option<f64>,
    pub rmse: Option<f64>,
}

impl RunRow {
    pub fn from_record(id: RunId, record: &RunRecord, truth: &Truth, grid: &[Vec<f64>]) -> Result<Self> {
        let rmse = match record.final_hyperparams {
            Some(_) => {
                let model = record.final_model()?;
                Some(surrogate_rmse(&model, |x| truth.value(x), grid)?)
            }
            None => None,
        };
        Ok(Self {
            id,
            seed: record.seed,
            seeds: record.seed_points.len(),
            iterations: record.totals.iterations,
            evaluations: record.totals.function_evaluations,
            termination: record.termination.label().to_string(),
            x_hat: record.optimum.as_ref().map(|o| o.x_hat.clone()),
            y_hat: record.optimum.as_ref().map(|o| o.y_hat),
            truth_at_x_hat: record.optimum.as_ref().map(|o| truth.value(&o.x_hat)),
            rmse,
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|e| format!("`{s}`: {e}"))
    }
}

fn to_csv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn render_runs(rows: &[RunRow], dim: usize) -> String {
    let mut header: Vec<String> =
        ["acquisition", "rs", "ms", "repetition", "seed", "seeds", "iterations", "evaluations", "termination"]
            .map(String::from)
            .to_vec();
    header.extend((0..dim).map(|i| format!("x_hat_{i}")));
    header.extend(["y_hat", "truth_at_x_hat", "rmse"].map(String::from));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let c = &r.id.condition;
            let mut v = vec![
                c.acquisition.to_string(),
                c.plan.rs.to_string(),
                c.plan.ms.to_string(),
                r.id.repetition.to_string(),
                r.seed.to_string(),
                r.seeds.to_string(),
                r.iterations.to_string(),
                r.evaluations.to_string(),
                r.termination.clone(),
            ];
            match &r.x_hat {
                Some(x) => v.extend(x.iter().map(f64::to_string)),
                None => v.extend((0..dim).map(|_| String::new())),
            }
            v.extend([opt(r.y_hat), opt(r.truth_at_x_hat), opt(r.rmse)]);
            v
        })
        .collect();
    to_csv(&header, &body)
}

pub fn parse_runs(path: &Path) -> Result<Vec<RunRow>> {
    let bad = |m: String| HarnessError::Record(path.to_path_buf(), m);
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let dim = header.iter().filter(|h| h.starts_with("x_hat_")).count();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize| f(i).parse::<usize>().map_err(|e| bad(format!("`{}`: {e}", f(i))));
        let acquisition: AcquisitionKind = f(0).parse().map_err(|e: hrms_core::Error| bad(e.to_string()))?;
        let plan = SamplingPlan::new(int(1)?, int(2)?)?;
        let id = RunId { condition: Condition { acquisition, plan }, repetition: int(3)? };
        let xs: Vec<Option<f64>> = (0..dim).map(|k| parse_opt(f(9 + k))).collect::<std::result::Result<_, _>>().map_err(bad)?;
        let x_hat = if xs.iter().all(Option::is_some) && dim > 0 { Some(xs.into_iter().flatten().collect()) } else { None };
        let tail = 9 + dim;
        rows.push(RunRow {
            id,
            seed: f(4).parse().map_err(|e| bad(format!("seed: {e}")))?,
            seeds: int(5)?,
            iterations: int(6)?,
            evaluations: int(7)?,
            termination: f(8).to_string(),
            x_hat,
            y_hat: parse_opt(f(tail)).map_err(bad)?,
            truth_at_x_hat: parse_opt(f(tail + 1)).map_err(bad)?,
            rmse: parse_opt(f(tail + 2)).map_err(bad)?,
        });
    }
    Ok(rows)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Sample standard deviation; undefined below two values.
pub fn std_dev(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v)?;
    Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

fn group(rows: &[RunRow]) -> BTreeMap<Condition, Vec<&RunRow>> {
    let mut g: BTreeMap<Condition, Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        g.entry(r.id.condition).or_default().push(r);
    }
    g
}

fn cond_cells(c: &Condition, n: usize) -> Vec<String> {
    vec![c.acquisition.to_string(), c.plan.rs.to_string(), c.plan.ms.to_string(), n.to_string()]
}

fn cond_header(extra: &[&str]) -> Vec<String> {
    ["acquisition", "rs", "ms", "runs"].iter().chain(extra).map(|s| s.to_string()).collect()
}

/// Aggregates per condition, mirroring the repeatability scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub runs: usize,
    pub covariance_failures: usize,
    pub mean_iterations: f64,
    pub mean_evaluations: f64,
    pub x_hat_std: Vec<Option<f64>>,
    pub y_hat_mean: Option<f64>,
    pub y_hat_std: Option<f64>,
    /// Mean of `y_hat - truth(x_hat)`.
    pub y_hat_bias: Option<f64>,
    pub rmse_mean: Option<f64>,
    pub rmse_std: Option<f64>,
}

pub fn summarize(rows: &[RunRow], dim: usize) -> Vec<ConditionSummary> {
    group(rows)
        .into_iter()
        .map(|(condition, rs)| {
            let col = |f: &dyn Fn(&RunRow) -> Option<f64>| -> Vec<f64> { rs.iter().filter_map(|r| f(r)).collect() };
            let y = col(&|r| r.y_hat);
            let bias = col(&|r| Some(r.y_hat? - r.truth_at_x_hat?));
            let rmse = col(&|r| r.rmse);
            ConditionSummary {
                condition,
                runs: rs.len(),
                covariance_failures: rs.iter().filter(|r| r.termination == Termination::CovarianceFailure.label()).count(),
                mean_iterations: mean(&rs.iter().map(|r| r.iterations as f64).collect::<Vec<_>>()).unwrap_or(0.0),
                mean_evaluations: mean(&rs.iter().map(|r| r.evaluations as f64).collect::<Vec<_>>()).unwrap_or(0.0),
                x_hat_std: (0..dim).map(|k| std_dev(&col(&|r| r.x_hat.as_ref().map(|x| x[k])))).collect(),
                y_hat_mean: mean(&y),
                y_hat_std: std_dev(&y),
                y_hat_bias: mean(&bias),
                rmse_mean: mean(&rmse),
                rmse_std: std_dev(&rmse),
            }
        })
        .collect()
}

pub fn render_conditions(rows: &[RunRow], dim: usize) -> String {
    let mut extra: Vec<String> =
        ["covariance_failures", "mean_iterations", "mean_evaluations"].map(String::from).to_vec();
    extra.extend((0..dim).map(|k| format!("x_hat_std_{k}")));
    extra.extend(["y_hat_mean", "y_hat_std", "y_hat_bias", "rmse_mean", "rmse_std"].map(String::from));
    let header = cond_header(&extra.iter().map(String::as_str).collect::<Vec<_>>());
    let body: Vec<Vec<String>> = summarize(rows, dim)
        .iter()
        .map(|s| {
            let mut v = cond_cells(&s.condition, s.runs);
            v.extend([s.covariance_failures.to_string(), s.mean_iterations.to_string(), s.mean_evaluations.to_string()]);
            v.extend(s.x_hat_std.iter().map(|x| opt(*x)));
            v.extend([opt(s.y_hat_mean), opt(s.y_hat_std), opt(s.y_hat_bias), opt(s.rmse_mean), opt(s.rmse_std)]);
            v
        })
        .collect();
    to_csv(&header, &body)
}

/// Iteration and evaluation totals per condition.
pub fn render_accounting(rows: &[RunRow]) -> String {
    let header = cond_header(&["total_iterations", "total_evaluations", "mean_iterations", "mean_evaluations"]);
    let body: Vec<Vec<String>> = group(rows)
        .iter()
        .map(|(c, rs)| {
            let it: usize = rs.iter().map(|r| r.iterations).sum();
            let ev: usize = rs.iter().map(|r| r.evaluations).sum();
            let mut v = cond_cells(c, rs.len());
            v.extend([
                it.to_string(),
                ev.to_string(),
                (it as f64 / rs.len() as f64).to_string(),
                (ev as f64 / rs.len() as f64).to_string(),
            ]);
            v
        })
        .collect();
    to_csv(&header, &body)
}

/// Surrogate RMSE against the reference, per condition.
pub fn render_fidelity(rows: &[RunRow]) -> String {
    let header = cond_header(&["rmse_mean", "rmse_std", "rmse_min", "rmse_max"]);
    let body: Vec<Vec<String>> = group(rows)
        .iter()
        .map(|(c, rs)| {
            let v: Vec<f64> = rs.iter().filter_map(|r| r.rmse).collect();
            let min = v.iter().copied().reduce(f64::min);
            let max = v.iter().copied().reduce(f64::max);
            let mut out = cond_cells(c, rs.len());
            out.extend([opt(mean(&v)), opt(std_dev(&v)), opt(min), opt(max)]);
            out
        })
        .collect();
    to_csv(&header, &body)
}

/// Every derived table, keyed by file name.
pub fn derived_tables(rows: &[RunRow], dim: usize) -> Vec<(&'static str, String)> {
    vec![
        (CONDITIONS_CSV, render_conditions(rows, dim)),
        (ACCOUNTING_CSV, render_accounting(rows)),
        (FIDELITY_CSV, render_fidelity(rows)),
    ]
}
