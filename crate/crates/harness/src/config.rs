//! Experiment configuration file.

use std::path::{Path, PathBuf};

use hrms_core::objectives::ObjectiveSpec;
use hrms_core::{AcquisitionKind, AcquisitionSpec, Hyperpriors, RunSettings, SamplingPlan, StopRule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

/// Where the fidelity reference comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthSource {
    /// The objective's closed-form mean; falls back to `dense_gp` when absent.
    Analytic,
    /// A surrogate fitted to a dense Latin-hypercube sample.
    DenseGp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelityConfig {
    pub grid_per_axis: usize,
    pub truth: TruthSource,
    /// Sample size for the dense surrogate.
    pub dense_points: usize,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        Self { grid_per_axis: 50, truth: TruthSource::Analytic, dense_points: 2000 }
    }
}

fn default_beta() -> f64 {
    2.0
}

fn default_workers() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub repetitions: usize,
    pub acquisitions: Vec<AcquisitionKind>,
    #[serde(default)]
    pub rs_levels: Vec<usize>,
    #[serde(default)]
    pub ms_levels: Vec<usize>,
    /// Explicit `[rs, ms]` pairs; replaces the `rs_levels × ms_levels` grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plans: Option<Vec<[usize; 2]>>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub stop: StopRule,
    pub objective: ObjectiveSpec,
    pub hyperpriors: Hyperpriors,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub fidelity: FidelityConfig,
}

/// One (acquisition, plan) cell of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Condition {
    pub acquisition: AcquisitionKind,
    pub plan: SamplingPlan,
}

impl Condition {
    pub fn key(&self) -> String {
        format!("{}_rs{}_ms{}", self.acquisition, self.plan.rs, self.plan.ms)
    }
}

/// One run of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RunId {
    pub condition: Condition,
    pub repetition: usize,
}

impl RunId {
    pub fn key(&self) -> String {
        format!("{}_rep{:02}", self.condition.key(), self.repetition)
    }

    pub fn parse(key: &str) -> Option<Self> {
        let mut parts = key.split('_');
        let acquisition = parts.next()?.parse().ok()?;
        let rs = parts.next()?.strip_prefix("rs")?.parse().ok()?;
        let ms = parts.next()?.strip_prefix("ms")?.parse().ok()?;
        let repetition = parts.next()?.strip_prefix("rep")?.parse().ok()?;
        if parts.next().is_some() {
            return None;
        }
        let plan = SamplingPlan::new(rs, ms).ok()?;
        Some(Self { condition: Condition { acquisition, plan }, repetition })
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(path.to_path_buf(), e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        if self.acquisitions.is_empty() {
            return bad("at least one acquisition is required");
        }
        let mut kinds = self.acquisitions.clone();
        kinds.sort();
        kinds.dedup();
        if kinds.len() != self.acquisitions.len() {
            return bad("acquisitions are listed twice");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        match &self.plans {
            Some(p) if p.is_empty() => return bad("plans is empty"),
            Some(p) if p.iter().any(|[rs, ms]| *rs == 0 || *ms == 0) => return bad("plan levels must be >= 1"),
            Some(_) => {}
            None => {
                if self.rs_levels.is_empty() || self.ms_levels.is_empty() {
                    return bad("rs_levels and ms_levels must be non-empty");
                }
                if self.rs_levels.iter().chain(&self.ms_levels).any(|&v| v == 0) {
                    return bad("all levels must be >= 1");
                }
            }
        }
        if self.fidelity.grid_per_axis == 0 {
            return bad("fidelity.grid_per_axis must be >= 1");
        }
        self.stop.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.hyperpriors.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.objective.build().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn plans(&self) -> Vec<SamplingPlan> {
        let mut plans: Vec<SamplingPlan> = match &self.plans {
            Some(p) => p.iter().map(|[rs, ms]| SamplingPlan { rs: *rs, ms: *ms }).collect(),
            None => self
                .rs_levels
                .iter()
                .flat_map(|&rs| self.ms_levels.iter().map(move |&ms| SamplingPlan { rs, ms }))
                .collect(),
        };
        plans.sort();
        plans.dedup();
        plans
    }

    /// Conditions in a fixed order: acquisition, then rs, then ms.
    pub fn conditions(&self) -> Vec<Condition> {
        let mut kinds = self.acquisitions.clone();
        kinds.sort();
        kinds
            .into_iter()
            .flat_map(|acquisition| self.plans().into_iter().map(move |plan| Condition { acquisition, plan }))
            .collect()
    }

    pub fn runs(&self) -> Vec<RunId> {
        self.conditions()
            .into_iter()
            .flat_map(|condition| (0..self.repetitions).map(move |repetition| RunId { condition, repetition }))
            .collect()
    }

    pub fn spec(&self, condition: &Condition) -> AcquisitionSpec {
        AcquisitionSpec::of_kind(condition.acquisition, self.beta, condition.plan.ms)
    }

    /// Run seed. Independent of the plan, so every plan at one repetition
    /// shares seed points and noise streams.
    pub fn run_seed(&self, run: &RunId) -> u64 {
        hrms_core::rng::derive_seed(self.master_seed, &[run.condition.acquisition.code(), run.repetition as u64])
    }

    /// Hex SHA-256 of the canonical JSON form of the configuration. The
    /// output directory and worker count do not affect results and are left out.
    pub fn hash(&self) -> String {
        let neutral = Self { output_dir: PathBuf::new(), workers: 1, ..self.clone() };
        let canonical = serde_json::to_vec(&neutral).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
