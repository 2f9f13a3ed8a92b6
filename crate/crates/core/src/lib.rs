//! Gaussian-process Bayesian optimization for noisy, volatile objectives.
//!
//! The crate provides a Matérn 3/2 ARD Gaussian-process surrogate with MAP
//! hyperparameter learning, EI / confidence-bound / Thompson-sampling
//! acquisitions with their batch forms, a DIRECT global optimizer for the
//! acquisition surfaces, and an optimization loop that combines repeat
//! sampling (RS, replicated evaluations at one location) with multi-point
//! sampling (MS, several locations per iteration).
//!
//! With the `parallel` feature (on by default) data-parallel inner loops run
//! on rayon; without it every loop runs sequentially and produces the same
//! results bit for bit.

pub mod acquisition;
pub mod error;
pub mod global_opt;
pub mod gp;
pub mod kernel;
pub mod objectives;
pub mod par;
pub mod rng;
pub mod sampling;

pub use acquisition::{AcquisitionKind, AcquisitionSpec, Incumbent, ProposalBudget};
pub use error::{Error, Result};
pub use global_opt::{direct_minimize, DirectResult, SearchBox};
pub use gp::{Dataset, GpModel, Hyperpriors, MapSettings};
pub use kernel::KernelHyperparams;
pub use objectives::StochasticObjective;
pub use sampling::{run_gpbo, RunRecord, RunSettings, SamplingPlan, StopRule, Termination};
