//! Latin-hypercube seeding, RS/MS planning and the optimization loop.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{incumbent, propose_batch, AcquisitionSpec, Incumbent, ProposalBudget};
use crate::error::{Error, Result};
use crate::global_opt::{direct_minimize, SearchBox};
use crate::gp::{map_fit_with, Dataset, GpModel, Hyperpriors, MapSettings};
use crate::kernel::KernelHyperparams;
use crate::objectives::StochasticObjective;
use crate::par;
use crate::rng::{stream, StreamRng};

/// Stream labels. A run's streams are addressed as `[label, iteration, ...]`
/// below the run seed; seeding uses iteration 0.
pub const STREAM_SEEDS: u64 = 0x5EED;
pub const STREAM_EVAL: u64 = 0xE7A1;
pub const STREAM_MAP: u64 = 0x3A9F;
pub const STREAM_PROPOSE: u64 = 0x9A09;

/// `n` points with exactly one sample in each of `n` equal strata per axis.
pub fn latin_hypercube(n: usize, bbox: &SearchBox, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let d = bbox.dim();
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for axis in 0..d {
        perm.shuffle(rng);
        let (lo, w) = (bbox.lower[axis], bbox.width(axis));
        for (i, &stratum) in perm.iter().enumerate() {
            let u: f64 = rng.random();
            let t = ((stratum as f64 + u) / n as f64).min(1.0);
            points[i][axis] = (lo + w * t).min(bbox.upper[axis]);
        }
    }
    points
}

/// Default number of seed points for a `d`-dimensional problem.
pub fn seed_count(d: usize) -> usize {
    10 * d
}

/// Repeats per location (`rs`) and locations per iteration (`ms`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub rs: usize,
    pub ms: usize,
}

impl SamplingPlan {
    pub fn new(rs: usize, ms: usize) -> Result<Self> {
        let plan = Self { rs, ms };
        plan.validate()?;
        Ok(plan)
    }

    /// Single sampling: one evaluation at one location per iteration.
    pub fn single() -> Self {
        Self { rs: 1, ms: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rs == 0 || self.ms == 0 {
            return Err(Error::InvalidArgument(format!("rs and ms must be >= 1, got rs={} ms={}", self.rs, self.ms)));
        }
        Ok(())
    }

    pub fn evals_per_iteration(&self) -> usize {
        self.rs * self.ms
    }

    pub fn label(&self) -> String {
        format!("RS{}/MS{}", self.rs, self.ms)
    }
}

/// Replicates each proposal `rs` times, location-major.
pub fn expand_plan(proposals: &[Vec<f64>], plan: &SamplingPlan) -> Result<Vec<Vec<f64>>> {
    plan.validate()?;
    if proposals.len() != plan.ms {
        return Err(Error::InvalidArgument(format!("expected {} proposals, got {}", plan.ms, proposals.len())));
    }
    Ok(proposals
        .iter()
        .flat_map(|x| std::iter::repeat_n(x.clone(), plan.rs))
        .collect())
}

/// Termination rule; a run stops as soon as any present limit is reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_function_evals: Option<usize>,
    /// Seconds; checked between iterations only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_wall_clock: Option<f64>,
}

impl StopRule {
    pub fn evals(n: usize) -> Self {
        Self { max_function_evals: Some(n), max_wall_clock: None }
    }

    pub fn wall_clock(seconds: f64) -> Self {
        Self { max_function_evals: None, max_wall_clock: Some(seconds) }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.max_function_evals, self.max_wall_clock) {
            (None, None) => Err(Error::InvalidArgument("stop rule needs an evaluation or wall-clock limit".into())),
            (_, Some(s)) if !(s > 0.0) => Err(Error::InvalidArgument("wall-clock limit must be positive".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    /// Overrides the `10 d` seed count.
    pub seed_count: Option<usize>,
    pub map: MapSettings,
    pub proposal: ProposalBudget,
    /// Start each refit's local search from the previous estimate as well.
    pub warm_start: bool,
    /// Latin-hypercube restarts for warm-started refits; the seed fit uses `map.restarts`.
    pub refit_restarts: usize,
    /// DIRECT evaluations per dimension when locating the final optimum.
    pub optimum_evals_per_dim: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seed_count: None,
            map: MapSettings::default(),
            proposal: ProposalBudget::default(),
            warm_start: true,
            refit_restarts: 2,
            optimum_evals_per_dim: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub index: usize,
    pub proposals: Vec<Vec<f64>>,
    /// In request order: location-major, replicate-minor.
    pub evaluations: Vec<Observation>,
    pub hyperparams: KernelHyperparams,
    pub jitter: f64,
    /// Best GP mean over observed locations under this iteration's refit.
    pub incumbent: Incumbent,
    /// Running best of `incumbent.f_best` over the run so far.
    pub best_so_far: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    BudgetExhausted,
    WallClock,
    CovarianceFailure,
    ObjectiveFailure,
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Self::BudgetExhausted => "budget_exhausted",
            Self::WallClock => "wall_clock",
            Self::CovarianceFailure => "covariance_failure",
            Self::ObjectiveFailure => "objective_failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTotals {
    pub iterations: usize,
    pub function_evaluations: usize,
}

/// Reported optimum: the minimizer of the GP mean (maximizer when maximizing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumEstimate {
    pub x_hat: Vec<f64>,
    pub y_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub acquisition: AcquisitionSpec,
    pub plan: SamplingPlan,
    pub seed_points: Vec<Observation>,
    /// Hyperparameters fitted to the seed data, if the fit succeeded.
    pub seed_hyperparams: Option<KernelHyperparams>,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    pub totals: RunTotals,
    /// Last successfully fitted hyperparameters.
    pub final_hyperparams: Option<KernelHyperparams>,
    pub optimum: Option<OptimumEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunRecord {
    /// Every observation in evaluation order.
    pub fn dataset(&self) -> Result<Dataset> {
        let mut x = Vec::with_capacity(self.totals.function_evaluations);
        let mut y = Vec::with_capacity(self.totals.function_evaluations);
        for o in self.seed_points.iter().chain(self.iterations.iter().flat_map(|it| &it.evaluations)) {
            x.push(o.x.clone());
            y.push(o.y);
        }
        Dataset::new(x, y)
    }

    /// Refits the final surrogate from the stored data and hyperparameters.
    pub fn final_model(&self) -> Result<GpModel> {
        let params = self
            .final_hyperparams
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("run has no fitted hyperparameters".into()))?;
        GpModel::fit(&self.dataset()?, params)
    }

    /// Checks that the totals agree with the stored seeds and iterations.
    pub fn accounting_holds(&self) -> bool {
        let per_iter = self.plan.evals_per_iteration();
        let evaluated: usize = self.iterations.iter().map(|it| it.evaluations.len()).sum();
        self.iterations.iter().all(|it| it.evaluations.len() == per_iter && it.proposals.len() == self.plan.ms)
            && self.totals.iterations == self.iterations.len()
            && self.totals.function_evaluations == self.seed_points.len() + evaluated
    }
}

/// A run that stopped on an objective error, with everything recorded before it.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub record: RunRecord,
    pub cause: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "run aborted after {} evaluations: {}", self.record.totals.function_evaluations, self.cause)
    }
}

impl std::error::Error for RunFailure {}

/// DIRECT search over the GP mean.
pub fn estimate_optimum(model: &GpModel, bbox: &SearchBox, max_evals: usize, minimize: bool) -> Result<OptimumEstimate> {
    let sign = if minimize { 1.0 } else { -1.0 };
    let r = direct_minimize(
        |x| model.predict_one(x).map(|(mu, _)| sign * mu).unwrap_or(f64::NAN),
        bbox,
        max_evals,
        crate::global_opt::DEFAULT_EPS,
    )?;
    let (y_hat, _) = model.predict_one(&r.x_min)?;
    Ok(OptimumEstimate { x_hat: r.x_min, y_hat })
}

fn is_covariance_failure(e: &Error) -> bool {
    matches!(e, Error::IllConditionedCovariance { .. } | Error::NoFittableRestart)
}

/// Evaluates `requests` with one stream per request, committing in order.
fn evaluate_requests(
    objective: &dyn StochasticObjective,
    requests: &[Vec<f64>],
    seed: u64,
    iteration: u64,
) -> Result<Vec<f64>> {
    let latency = objective.eval_latency();
    let indexed: Vec<(u64, &Vec<f64>)> = requests.iter().enumerate().map(|(j, x)| (j as u64, x)).collect();
    let out = par::map_if(objective.concurrent(), &indexed, |(j, x)| {
        if latency > Duration::ZERO {
            std::thread::sleep(latency);
        }
        objective.evaluate(x, &mut stream(seed, &[STREAM_EVAL, iteration, *j]))
    });
    out.into_iter().collect()
}

struct Loop<'a> {
    record: RunRecord,
    dataset: Dataset,
    settings: &'a RunSettings,
    priors: &'a Hyperpriors,
}

impl Loop<'_> {
    fn refit(&mut self, iteration: u64) -> Result<GpModel> {
        let warm = if self.settings.warm_start { self.record.final_hyperparams.as_ref() } else { None };
        let map = match warm {
            Some(_) => MapSettings { restarts: self.settings.refit_restarts, ..self.settings.map },
            None => self.settings.map,
        };
        let mut rng = stream(self.record.seed, &[STREAM_MAP, iteration]);
        let params = map_fit_with(&self.dataset, self.priors, &map, warm, &mut rng)?;
        let model = GpModel::fit(&self.dataset, &params)?;
        self.record.final_hyperparams = Some(params);
        Ok(model)
    }

    fn absorb(&mut self, xs: &[Vec<f64>], ys: &[f64]) -> Result<Vec<Observation>> {
        let mut obs = Vec::with_capacity(xs.len());
        for (x, &y) in xs.iter().zip(ys) {
            self.dataset.push(x.clone(), y)?;
            obs.push(Observation { x: x.clone(), y });
        }
        self.record.totals.function_evaluations += xs.len();
        Ok(obs)
    }
}

/// Runs GP Bayesian optimization with repeat/multi-point sampling.
///
/// Seeds with Latin-hypercube points (no replication), then repeats:
/// propose `plan.ms` locations, evaluate each `plan.rs` times, append, and
/// refit the hyperparameters. A further iteration starts only if its full
/// `rs·ms` evaluations fit in the evaluation budget. Covariance failures end
/// the run with [`Termination::CovarianceFailure`]; objective errors return a
/// [`RunFailure`] carrying the partial record.
#[allow(clippy::too_many_arguments)]
pub fn run_gpbo(
    objective: &dyn StochasticObjective,
    bbox: &SearchBox,
    spec: &AcquisitionSpec,
    plan: &SamplingPlan,
    priors: &Hyperpriors,
    stop: &StopRule,
    settings: &RunSettings,
    seed: u64,
) -> std::result::Result<RunRecord, Box<RunFailure>> {
    let started = Instant::now();
    let setup_error = |cause: Error| {
        Box::new(RunFailure { record: empty_record(seed, spec, plan), cause })
    };
    spec.validate().map_err(setup_error)?;
    plan.validate().map_err(setup_error)?;
    stop.validate().map_err(setup_error)?;
    priors.validate().map_err(setup_error)?;
    crate::error::check_dim(objective.dim(), bbox.dim()).map_err(setup_error)?;
    if spec.q != plan.ms {
        return Err(setup_error(Error::InvalidArgument(format!("batch size {} differs from ms={}", spec.q, plan.ms))));
    }
    let n_seeds = settings.seed_count.unwrap_or_else(|| seed_count(bbox.dim()));
    if let Some(max) = stop.max_function_evals {
        if max < n_seeds {
            return Err(setup_error(Error::InvalidArgument(format!("budget {max} is below the {n_seeds} seed points"))));
        }
    }

    let mut lp = Loop { record: empty_record(seed, spec, plan), dataset: Dataset::empty(bbox.dim()), settings, priors };
    let fail = |lp: Loop, cause: Error| Box::new(RunFailure { record: finish(lp.record, Termination::ObjectiveFailure, Some(&cause)), cause });

    let seeds = latin_hypercube(n_seeds, bbox, &mut stream(seed, &[STREAM_SEEDS]));
    let ys = match evaluate_requests(objective, &seeds, seed, 0) {
        Ok(ys) => ys,
        Err(e) => return Err(fail(lp, e)),
    };
    match lp.absorb(&seeds, &ys) {
        Ok(obs) => lp.record.seed_points = obs,
        Err(e) => return Err(fail(lp, e)),
    }

    let mut model = match lp.refit(0) {
        Ok(m) => m,
        Err(e) if is_covariance_failure(&e) => return Ok(finish(lp.record, Termination::CovarianceFailure, Some(&e))),
        Err(e) => return Err(fail(lp, e)),
    };
    lp.record.seed_hyperparams = lp.record.final_hyperparams.clone();
    let mut current = match incumbent(&model, bbox, spec.minimize) {
        Ok(inc) => inc,
        Err(e) => return Err(fail(lp, e)),
    };
    let mut best_so_far = current.f_best;

    let per_iter = plan.evals_per_iteration();
    let termination = loop {
        if let Some(max) = stop.max_function_evals {
            if lp.record.totals.function_evaluations + per_iter > max {
                break Termination::BudgetExhausted;
            }
        }
        if let Some(limit) = stop.max_wall_clock {
            if started.elapsed().as_secs_f64() >= limit {
                break Termination::WallClock;
            }
        }
        let t = lp.record.iterations.len() as u64 + 1;

        let proposals = match propose_batch(&model, spec, bbox, &settings.proposal, &mut stream(seed, &[STREAM_PROPOSE, t])) {
            Ok(p) => p,
            Err(e) if is_covariance_failure(&e) => {
                return Ok(finish(lp.record, Termination::CovarianceFailure, Some(&e)));
            }
            Err(e) => return Err(fail(lp, e)),
        };
        let requests = expand_plan(&proposals, plan).map_err(|e| fail_ref(&lp, e))?;
        let ys = match evaluate_requests(objective, &requests, seed, t) {
            Ok(ys) => ys,
            Err(e) => return Err(fail(lp, e)),
        };
        let evaluations = match lp.absorb(&requests, &ys) {
            Ok(obs) => obs,
            Err(e) => return Err(fail(lp, e)),
        };

        model = match lp.refit(t) {
            Ok(m) => m,
            Err(e) if is_covariance_failure(&e) => {
                // The evaluations happened; keep them, with the previous
                // model's state since no new fit exists.
                lp.record.iterations.push(IterationRecord {
                    index: t as usize,
                    proposals,
                    evaluations,
                    hyperparams: model.params().clone(),
                    jitter: model.jitter_used(),
                    incumbent: current,
                    best_so_far,
                });
                lp.record.totals.iterations += 1;
                return Ok(finish(lp.record, Termination::CovarianceFailure, Some(&e)));
            }
            Err(e) => return Err(fail(lp, e)),
        };
        current = match incumbent(&model, bbox, spec.minimize) {
            Ok(inc) => inc,
            Err(e) => return Err(fail(lp, e)),
        };
        best_so_far = if spec.minimize { best_so_far.min(current.f_best) } else { best_so_far.max(current.f_best) };
        lp.record.iterations.push(IterationRecord {
            index: t as usize,
            proposals,
            evaluations,
            hyperparams: model.params().clone(),
            jitter: model.jitter_used(),
            incumbent: current.clone(),
            best_so_far,
        });
        lp.record.totals.iterations += 1;
    };

    let max_evals = settings.optimum_evals_per_dim.max(1) * bbox.dim();
    match estimate_optimum(&model, bbox, max_evals, spec.minimize) {
        Ok(opt) => lp.record.optimum = Some(opt),
        Err(e) => return Err(fail(lp, e)),
    }
    Ok(finish(lp.record, termination, None))
}

fn fail_ref(lp: &Loop, cause: Error) -> Box<RunFailure> {
    Box::new(RunFailure { record: finish(lp.record.clone(), Termination::ObjectiveFailure, Some(&cause)), cause })
}

fn empty_record(seed: u64, spec: &AcquisitionSpec, plan: &SamplingPlan) -> RunRecord {
    RunRecord {
        seed,
        acquisition: *spec,
        plan: *plan,
        seed_points: Vec::new(),
        seed_hyperparams: None,
        iterations: Vec::new(),
        termination: Termination::ObjectiveFailure,
        totals: RunTotals { iterations: 0, function_evaluations: 0 },
        final_hyperparams: None,
        optimum: None,
        failure: None,
    }
}

fn finish(mut record: RunRecord, termination: Termination, cause: Option<&Error>) -> RunRecord {
    record.termination = termination;
    record.failure = cause.map(|e| e.to_string());
    record
}
