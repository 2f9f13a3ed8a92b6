//! Fidelity reference surfaces.

use std::fs;
use std::path::{Path, PathBuf};

use hrms_core::objectives::{ground_truth_model, regular_grid, Configured, ObjectiveSpec};
use hrms_core::{Dataset, GpModel, Hyperpriors, KernelHyperparams, StochasticObjective};
use serde::{Deserialize, Serialize};

use crate::config::TruthSource;
use crate::{ExperimentConfig, HarnessError, Result};

const DENSE_STREAM: u64 = 0x7207;

pub enum Truth {
    Analytic(Configured),
    Dense(GpModel),
}

impl Truth {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Analytic(obj) => obj.true_mean(x).expect("checked when prepared"),
            Self::Dense(model) => model.predict_one(x).map(|(mu, _)| mu).unwrap_or(f64::NAN),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Analytic(_) => "analytic",
            Self::Dense(_) => "dense_gp",
        }
    }
}

/// Stored dense-sample surrogate, keyed by everything that determines it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DenseTruth {
    objective: ObjectiveSpec,
    hyperpriors: Hyperpriors,
    dense_points: usize,
    seed: u64,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    params: KernelHyperparams,
}

pub fn truth_path(out: &Path) -> PathBuf {
    out.join("truth.json")
}

pub fn grid(cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    let obj = cfg.objective.build()?;
    Ok(regular_grid(&obj.bounds(), cfg.fidelity.grid_per_axis))
}

fn wants_analytic(cfg: &ExperimentConfig, obj: &Configured) -> bool {
    cfg.fidelity.truth == TruthSource::Analytic && obj.true_mean(&obj.bounds().center()).is_some()
}

/// Loads or builds the reference. A dense surrogate is cached in `truth.json`
/// and rebuilt whenever the stored key differs from the config.
pub fn prepare(cfg: &ExperimentConfig, out: &Path, rebuild: bool) -> Result<Truth> {
    let obj = cfg.objective.build()?;
    if wants_analytic(cfg, &obj) {
        return Ok(Truth::Analytic(obj));
    }
    let seed = hrms_core::rng::derive_seed(cfg.master_seed, &[DENSE_STREAM]);
    let path = truth_path(out);
    if !rebuild {
        if let Ok(text) = fs::read_to_string(&path) {
            let stored: DenseTruth =
                serde_json::from_str(&text).map_err(|e| HarnessError::Record(path.clone(), e.to_string()))?;
            let same = stored.objective == cfg.objective
                && stored.hyperpriors == cfg.hyperpriors
                && stored.dense_points == cfg.fidelity.dense_points
                && stored.seed == seed;
            if same {
                let model = GpModel::fit(&Dataset::new(stored.x, stored.y)?, &stored.params)?;
                return Ok(Truth::Dense(model));
            }
        }
    }
    let model = ground_truth_model(&obj, cfg.fidelity.dense_points, &cfg.hyperpriors, &cfg.run.map, seed)?;
    let stored = DenseTruth {
        objective: cfg.objective.clone(),
        hyperpriors: cfg.hyperpriors,
        dense_points: cfg.fidelity.dense_points,
        seed,
        x: model.dataset().x().to_vec(),
        y: model.dataset().y().to_vec(),
        params: model.params().clone(),
    };
    fs::create_dir_all(out).map_err(|e| HarnessError::Io(out.to_path_buf(), e))?;
    let text = serde_json::to_vec(&stored).expect("truth serializes");
    fs::write(&path, text).map_err(|e| HarnessError::Io(path.clone(), e))?;
    Ok(Truth::Dense(model))
}

/// Writes the reference evaluated on the fidelity grid as `truth_grid.csv`.
pub fn write_grid(cfg: &ExperimentConfig, truth: &Truth, out: &Path) -> Result<PathBuf> {
    let path = out.join("truth_grid.csv");
    let pts = grid(cfg)?;
    let d = pts.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::Record(path.clone(), e.to_string()))?;
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.push("truth".into());
    let csv_err = |e: csv::Error| HarnessError::Record(path.clone(), e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for x in &pts {
        let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
        row.push(truth.value(x).to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::Io(path.clone(), e))?;
    Ok(path)
}
