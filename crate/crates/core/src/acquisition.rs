//! Acquisition functions and single/batch proposal construction.
//!
//! Minimization is the canonical sense; `minimize = false` flips every
//! criterion so the same code serves maximization.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::global_opt::{direct_minimize, SearchBox, DEFAULT_EPS};
use crate::gp::GpModel;
use crate::rng::StreamRng;
use crate::sampling::latin_hypercube;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub const DEFAULT_BETA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AcquisitionKind {
    #[serde(rename = "EI")]
    Ei,
    #[serde(rename = "UCB")]
    Ucb,
    #[serde(rename = "TS")]
    Ts,
}

impl AcquisitionKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Ei => "EI",
            Self::Ucb => "UCB",
            Self::Ts => "TS",
        }
    }

    /// Stable integer code, used when deriving random streams.
    pub fn code(&self) -> u64 {
        match self {
            Self::Ei => 1,
            Self::Ucb => 2,
            Self::Ts => 3,
        }
    }
}

impl std::fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for AcquisitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "EI" => Ok(Self::Ei),
            "UCB" | "LCB" => Ok(Self::Ucb),
            "TS" => Ok(Self::Ts),
            other => Err(Error::InvalidArgument(format!("unknown acquisition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSpec {
    pub kind: AcquisitionKind,
    /// Confidence-bound width; present only for UCB.
    pub beta: Option<f64>,
    /// Batch size (MS).
    pub q: usize,
    pub minimize: bool,
}

impl AcquisitionSpec {
    pub fn ei(q: usize) -> Self {
        Self { kind: AcquisitionKind::Ei, beta: None, q, minimize: true }
    }

    pub fn ucb(beta: f64, q: usize) -> Self {
        Self { kind: AcquisitionKind::Ucb, beta: Some(beta), q, minimize: true }
    }

    pub fn ts(q: usize) -> Self {
        Self { kind: AcquisitionKind::Ts, beta: None, q, minimize: true }
    }

    pub fn of_kind(kind: AcquisitionKind, beta: f64, q: usize) -> Self {
        match kind {
            AcquisitionKind::Ei => Self::ei(q),
            AcquisitionKind::Ucb => Self::ucb(beta, q),
            AcquisitionKind::Ts => Self::ts(q),
        }
    }

    pub fn with_q(self, q: usize) -> Self {
        Self { q, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::InvalidArgument("batch size q must be >= 1".into()));
        }
        match (self.kind, self.beta) {
            (AcquisitionKind::Ucb, Some(b)) if b > 0.0 && b.is_finite() => Ok(()),
            (AcquisitionKind::Ucb, _) => Err(Error::InvalidArgument("UCB needs a positive beta".into())),
            (_, Some(_)) => Err(Error::InvalidArgument("beta is only meaningful for UCB".into())),
            _ => Ok(()),
        }
    }

    fn beta(&self) -> f64 {
        self.beta.unwrap_or(DEFAULT_BETA)
    }
}

/// Current optimum estimate: the best GP mean over observed locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub x_best: Vec<f64>,
    pub f_best: f64,
}

/// Incumbent of `model`. With no data it is the prior mean at the box center.
pub fn incumbent(model: &GpModel, bounds: &SearchBox, minimize: bool) -> Result<Incumbent> {
    let xs = model.dataset().x();
    if xs.is_empty() {
        return Ok(Incumbent { x_best: bounds.center(), f_best: model.params().mean_constant });
    }
    let (mu, _) = model.predict(xs)?;
    let better = |a: f64, b: f64| if minimize { a < b } else { a > b };
    let mut best = 0;
    for i in 1..mu.len() {
        if better(mu[i], mu[best]) {
            best = i;
        }
    }
    Ok(Incumbent { x_best: xs[best].clone(), f_best: mu[best] })
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Expected improvement over the incumbent; zero when `sigma` is zero.
pub fn expected_improvement(mu: f64, sigma: f64, incumbent: &Incumbent, minimize: bool) -> f64 {
    ei_value(mu, sigma, incumbent.f_best, minimize)
}

#[inline]
fn ei_value(mu: f64, sigma: f64, f_best: f64, minimize: bool) -> f64 {
    if !(sigma > 0.0) {
        return 0.0;
    }
    let delta = if minimize { f_best - mu } else { mu - f_best };
    let z = delta / sigma;
    (delta * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

/// `mu - beta sigma` when minimizing, `mu + beta sigma` otherwise.
pub fn confidence_bound(mu: f64, sigma: f64, beta: f64, minimize: bool) -> f64 {
    if minimize {
        mu - beta * sigma
    } else {
        mu + beta * sigma
    }
}

/// Evaluation budgets for proposal construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalBudget {
    /// DIRECT evaluations per input dimension.
    pub direct_evals_per_dim: usize,
    pub direct_eps: f64,
    /// Thompson-sampling candidate-grid points per input dimension.
    pub ts_grid_per_dim: usize,
}

impl Default for ProposalBudget {
    fn default() -> Self {
        Self { direct_evals_per_dim: 500, direct_eps: DEFAULT_EPS, ts_grid_per_dim: 256 }
    }
}

impl ProposalBudget {
    pub fn direct_evals(&self, dim: usize) -> usize {
        (self.direct_evals_per_dim * dim).max(1)
    }

    pub fn ts_grid(&self, dim: usize) -> usize {
        (self.ts_grid_per_dim * dim).max(1)
    }
}

fn sigma_of(var: f64) -> f64 {
    var.max(0.0).sqrt()
}

fn direct_argmin<F>(f: F, bounds: &SearchBox, budget: &ProposalBudget) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    Ok(direct_minimize(f, bounds, budget.direct_evals(bounds.dim()), budget.direct_eps)?.x_min)
}

fn ei_argmax(model: &GpModel, f_best: f64, minimize: bool, bounds: &SearchBox, budget: &ProposalBudget) -> Result<Vec<f64>> {
    direct_argmin(
        |x| match model.predict_one(x) {
            Ok((mu, var)) => -ei_value(mu, sigma_of(var), f_best, minimize),
            Err(_) => f64::NAN,
        },
        bounds,
        budget,
    )
}

fn bound_argmin(model: &GpModel, beta: f64, minimize: bool, bounds: &SearchBox, budget: &ProposalBudget) -> Result<Vec<f64>> {
    // Minimize LCB, or maximize UCB via its negation.
    direct_argmin(
        |x| match model.predict_one(x) {
            Ok((mu, var)) => {
                let cb = confidence_bound(mu, sigma_of(var), beta, minimize);
                if minimize {
                    cb
                } else {
                    -cb
                }
            }
            Err(_) => f64::NAN,
        },
        bounds,
        budget,
    )
}

fn check_model(model: &GpModel, spec: &AcquisitionSpec, bounds: &SearchBox) -> Result<()> {
    spec.validate()?;
    crate::error::check_dim(model.dim(), bounds.dim())
}

/// Single proposal: DIRECT-optimized EI or confidence bound, or the extremum
/// of one joint posterior draw on a Latin-hypercube candidate grid.
pub fn propose_single(
    model: &GpModel,
    spec: &AcquisitionSpec,
    bounds: &SearchBox,
    budget: &ProposalBudget,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    check_model(model, spec, bounds)?;
    match spec.kind {
        AcquisitionKind::Ei => {
            let inc = incumbent(model, bounds, spec.minimize)?;
            ei_argmax(model, inc.f_best, spec.minimize, bounds, budget)
        }
        AcquisitionKind::Ucb => bound_argmin(model, spec.beta(), spec.minimize, bounds, budget),
        AcquisitionKind::Ts => Ok(thompson_extrema(model, 1, spec.minimize, bounds, budget, rng)?.remove(0)),
    }
}

/// Dispatches to the batch form of `spec.kind` with batch size `spec.q`.
pub fn propose_batch(
    model: &GpModel,
    spec: &AcquisitionSpec,
    bounds: &SearchBox,
    budget: &ProposalBudget,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<f64>>> {
    match spec.kind {
        AcquisitionKind::Ei => propose_batch_qei(model, spec, bounds, budget, rng),
        AcquisitionKind::Ucb => propose_batch_ucb_pe(model, spec, bounds, budget, rng),
        AcquisitionKind::Ts => propose_batch_ts(model, spec, bounds, budget, rng),
    }
}

/// Constant-liar approximation of q-EI.
///
/// After each EI maximization the chosen point is added to the model with the
/// incumbent value as its observation (hyperparameters frozen), then EI is
/// maximized again against the unchanged incumbent.
pub fn propose_batch_qei(
    model: &GpModel,
    spec: &AcquisitionSpec,
    bounds: &SearchBox,
    budget: &ProposalBudget,
    _rng: &mut StreamRng,
) -> Result<Vec<Vec<f64>>> {
    check_model(model, spec, bounds)?;
    let inc = incumbent(model, bounds, spec.minimize)?;
    let mut current = model.clone();
    let mut batch = Vec::with_capacity(spec.q);
    for i in 0..spec.q {
        let x = ei_argmax(&current, inc.f_best, spec.minimize, bounds, budget)?;
        if i + 1 < spec.q {
            current = current.with_observation(&x, inc.f_best)?;
        }
        batch.push(x);
    }
    Ok(batch)
}

/// GP-UCB with pure exploration.
///
/// The first point optimizes the confidence bound. Each further point
/// maximizes the posterior standard deviation after adding the earlier points
/// as pending observations (their values do not affect the variance), inside
/// the region whose optimistic bound still beats the best pessimistic bound.
pub fn propose_batch_ucb_pe(
    model: &GpModel,
    spec: &AcquisitionSpec,
    bounds: &SearchBox,
    budget: &ProposalBudget,
    _rng: &mut StreamRng,
) -> Result<Vec<Vec<f64>>> {
    check_model(model, spec, bounds)?;
    let beta = spec.beta();
    let minimize = spec.minimize;
    let first = bound_argmin(model, beta, minimize, bounds, budget)?;
    if spec.q == 1 {
        return Ok(vec![first]);
    }

    // Best pessimistic bound: min UCB when minimizing, max LCB otherwise.
    let threshold = {
        let pessimistic = |x: &[f64]| match model.predict_one(x) {
            Ok((mu, var)) => {
                let cb = confidence_bound(mu, sigma_of(var), beta, !minimize);
                if minimize {
                    cb
                } else {
                    -cb
                }
            }
            Err(_) => f64::NAN,
        };
        let r = direct_minimize(pessimistic, bounds, budget.direct_evals(bounds.dim()), budget.direct_eps)?;
        if minimize {
            r.f_min
        } else {
            -r.f_min
        }
    };
    // Distance outside the relevant region; <= 0 inside it.
    let outside = |x: &[f64]| -> f64 {
        let (mu, var) = model.predict_one(x).unwrap_or((f64::NAN, f64::NAN));
        let optimistic = confidence_bound(mu, sigma_of(var), beta, minimize);
        if minimize {
            optimistic - threshold
        } else {
            threshold - optimistic
        }
    };

    let mut batch = vec![first];
    let mut pending = model.clone();
    while batch.len() < spec.q {
        let last = batch.last().expect("non-empty");
        let (mu_last, _) = pending.predict_one(last)?;
        pending = pending.with_observation(last, mu_last)?;
        let x = direct_argmin(
            |x| {
                let gap = outside(x);
                if gap > 0.0 {
                    gap
                } else {
                    match pending.predict_one(x) {
                        Ok((_, var)) => -sigma_of(var),
                        Err(_) => f64::NAN,
                    }
                }
            },
            bounds,
            budget,
        )?;
        batch.push(x);
    }
    Ok(batch)
}

/// `q` joint posterior draws on one candidate grid; returns each draw's extremum.
pub fn propose_batch_ts(
    model: &GpModel,
    spec: &AcquisitionSpec,
    bounds: &SearchBox,
    budget: &ProposalBudget,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<f64>>> {
    check_model(model, spec, bounds)?;
    thompson_extrema(model, spec.q, spec.minimize, bounds, budget, rng)
}

fn thompson_extrema(
    model: &GpModel,
    q: usize,
    minimize: bool,
    bounds: &SearchBox,
    budget: &ProposalBudget,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<f64>>> {
    let grid = latin_hypercube(budget.ts_grid(bounds.dim()), bounds, rng);
    let draws = model.sample_posterior_joint(&grid, q, rng)?;
    Ok(draws
        .iter()
        .map(|draw| {
            let mut best = 0;
            for (i, &v) in draw.iter().enumerate() {
                let better = if minimize { v < draw[best] } else { v > draw[best] };
                if better {
                    best = i;
                }
            }
            grid[best].clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::Dataset;
    use crate::kernel::KernelHyperparams;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn inc(f: f64) -> Incumbent {
        Incumbent { x_best: vec![0.0], f_best: f }
    }

    fn small_budget() -> ProposalBudget {
        ProposalBudget { direct_evals_per_dim: 300, ts_grid_per_dim: 200, ..ProposalBudget::default() }
    }

    fn forrester_model(n: usize, noise: f64) -> GpModel {
        let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 + 0.5) / n as f64]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x[0] - 2.0).powi(2) * (12.0 * x[0] - 4.0).sin()).collect();
        let p = KernelHyperparams::isotropic(1, 0.15, 5.0, noise, 0.0).unwrap();
        GpModel::fit(&Dataset::new(xs, ys).unwrap(), &p).unwrap()
    }

    #[test]
    fn ei_zero_sigma() {
        assert_eq!(expected_improvement(1.0, 0.0, &inc(5.0), true), 0.0);
        assert_eq!(expected_improvement(9.0, 0.0, &inc(5.0), true), 0.0);
    }

    #[test]
    fn ei_at_incumbent_is_pdf_at_zero() {
        let v = expected_improvement(2.0, 1.0, &inc(2.0), true);
        assert!((v - 0.398_942_3).abs() < 1e-7);
    }

    #[test]
    fn ei_tails() {
        assert!(expected_improvement(10.0, 1.0, &inc(0.0), true) < 1e-20);
        let v = expected_improvement(-50.0, 1.0, &inc(0.0), true);
        assert!((v - 50.0).abs() < 1e-9);
        // Maximization mirrors minimization.
        let a = expected_improvement(1.3, 0.7, &inc(1.0), false);
        let b = expected_improvement(0.7, 0.7, &inc(1.0), true);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn ei_matches_monte_carlo() {
        let mut rng = stream(77, &[]);
        let (mu, sigma) = (1.0, 2.0);
        for ratio in [-1.0, 0.0, 1.0] {
            let f_best = mu + ratio * sigma;
            let n = 200_000;
            let mc: f64 = (0..n)
                .map(|_| {
                    let y = mu + sigma * rng.sample::<f64, _>(StandardNormal);
                    (f_best - y).max(0.0)
                })
                .sum::<f64>()
                / n as f64;
            let analytic = expected_improvement(mu, sigma, &inc(f_best), true);
            assert!((analytic - mc).abs() / analytic < 0.02, "{ratio}: {analytic} vs {mc}");
        }
    }

    #[test]
    fn confidence_bound_examples() {
        assert_eq!(confidence_bound(3.0, 2.0, 0.0, true), 3.0);
        assert_eq!(confidence_bound(300.0, 50.0, 2.0, true), 200.0);
        assert_eq!(confidence_bound(300.0, 50.0, 2.0, false), 400.0);
        assert!(confidence_bound(1.0, 1.0, 3.0, true) < confidence_bound(1.0, 1.0, 2.0, true));
    }

    #[test]
    fn spec_validation() {
        assert!(AcquisitionSpec::ei(0).validate().is_err());
        assert!(AcquisitionSpec::ucb(-1.0, 1).validate().is_err());
        assert!(AcquisitionSpec { beta: Some(1.0), ..AcquisitionSpec::ei(1) }.validate().is_err());
        assert!(AcquisitionSpec::ts(3).validate().is_ok());
        assert_eq!("ucb".parse::<AcquisitionKind>().unwrap(), AcquisitionKind::Ucb);
    }

    #[test]
    fn prior_model_proposes_center() {
        let p = KernelHyperparams::isotropic(2, 0.3, 1.0, 0.1, 0.0).unwrap();
        let m = GpModel::prior(&p).unwrap();
        let b = SearchBox::new(vec![0.0, -1.0], vec![2.0, 1.0]).unwrap();
        let x = propose_single(&m, &AcquisitionSpec::ei(1), &b, &small_budget(), &mut stream(0, &[])).unwrap();
        assert_eq!(x, vec![1.0, 0.0]);
    }

    #[test]
    fn ei_proposal_beats_grid() {
        let data = Dataset::new(vec![vec![0.1], vec![0.5], vec![0.8]], vec![-5.0, 1.0, 0.5]).unwrap();
        let p = KernelHyperparams::isotropic(1, 0.1, 3.0, 1e-3, 0.0).unwrap();
        let m = GpModel::fit(&data, &p).unwrap();
        let b = SearchBox::unit(1);
        let x = propose_single(&m, &AcquisitionSpec::ei(1), &b, &small_budget(), &mut stream(0, &[])).unwrap();
        let inc = incumbent(&m, &b, true).unwrap();
        assert_eq!(inc.x_best, vec![0.1]);
        let ei = |x: f64| {
            let (mu, var) = m.predict_one(&[x]).unwrap();
            expected_improvement(mu, var.sqrt(), &inc, true)
        };
        let grid_best = (0..=2000).map(|i| ei(i as f64 / 2000.0)).fold(0.0, f64::max);
        assert!(ei(x[0]) >= grid_best * (1.0 - 1e-3), "{} vs {grid_best}", ei(x[0]));
        assert!(ei(0.1) < 1e-2 * grid_best);
    }

    #[test]
    fn ts_is_deterministic() {
        let m = forrester_model(8, 0.5);
        let b = SearchBox::unit(1);
        let s = AcquisitionSpec::ts(1);
        let a = propose_single(&m, &s, &b, &small_budget(), &mut stream(3, &[])).unwrap();
        let c = propose_single(&m, &s, &b, &small_budget(), &mut stream(3, &[])).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn batch_reductions_at_q1() {
        let m = forrester_model(8, 0.5);
        let b = SearchBox::unit(1);
        let budget = small_budget();
        for spec in [AcquisitionSpec::ei(1), AcquisitionSpec::ucb(2.0, 1), AcquisitionSpec::ts(1)] {
            let single = propose_single(&m, &spec, &b, &budget, &mut stream(5, &[])).unwrap();
            let batch = propose_batch(&m, &spec, &b, &budget, &mut stream(5, &[])).unwrap();
            assert_eq!(batch, vec![single], "{:?}", spec.kind);
        }
    }

    #[test]
    fn qei_points_are_distinct_and_contained() {
        let m = forrester_model(6, 0.5);
        let b = SearchBox::unit(1);
        let batch = propose_batch_qei(&m, &AcquisitionSpec::ei(3), &b, &small_budget(), &mut stream(1, &[])).unwrap();
        assert_eq!(batch.len(), 3);
        for i in 0..3 {
            assert!(b.contains(&batch[i]));
            for j in 0..i {
                assert!((batch[i][0] - batch[j][0]).abs() > 1e-6, "{batch:?}");
            }
        }
        let dense = forrester_model(60, 0.5);
        let batch = propose_batch_qei(&dense, &AcquisitionSpec::ei(3), &b, &small_budget(), &mut stream(1, &[])).unwrap();
        assert!(batch.iter().all(|x| b.contains(x)));
    }

    #[test]
    fn ucb_pe_spreads_and_contracts() {
        let m = forrester_model(6, 0.5);
        let b = SearchBox::unit(1);
        let batch =
            propose_batch_ucb_pe(&m, &AcquisitionSpec::ucb(2.0, 3), &b, &small_budget(), &mut stream(1, &[])).unwrap();
        assert_eq!(batch.len(), 3);
        assert_ne!(batch[0], batch[1]);
        // Pending updates never raise variance at the chosen points.
        let mut model = m.clone();
        let mut prev: Vec<f64> = batch.iter().map(|x| m.predict_one(x).unwrap().1).collect();
        for x in &batch {
            model = model.with_observation(x, 0.0).unwrap();
            let now: Vec<f64> = batch.iter().map(|x| model.predict_one(x).unwrap().1).collect();
            assert!(now.iter().zip(&prev).all(|(a, b)| *a <= *b + 1e-12));
            prev = now;
        }
    }

    #[test]
    fn ts_batch_concentrates_when_certain() {
        let xs: Vec<Vec<f64>> = (0..80).map(|i| vec![i as f64 / 79.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 10.0 * (x[0] - 0.62).abs()).collect();
        let p = KernelHyperparams::isotropic(1, 0.3, 3.0, 1e-6, 0.0).unwrap();
        let m = GpModel::fit(&Dataset::new(xs, ys).unwrap(), &p).unwrap();
        let b = SearchBox::unit(1);
        let budget = small_budget();
        let batch = propose_batch_ts(&m, &AcquisitionSpec::ts(4), &b, &budget, &mut stream(8, &[])).unwrap();
        // The candidate grid is the first thing drawn from the stream.
        let grid = latin_hypercube(budget.ts_grid(1), &b, &mut stream(8, &[]));
        let (mu, _) = m.predict(&grid).unwrap();
        let best = (0..grid.len()).min_by(|&i, &j| mu[i].total_cmp(&mu[j])).unwrap();
        let cell = 1.0 / grid.len() as f64;
        for x in &batch {
            assert!((x[0] - grid[best][0]).abs() <= cell, "{batch:?} vs {:?}", grid[best]);
        }
        let again = propose_batch_ts(&m, &AcquisitionSpec::ts(4), &b, &budget, &mut stream(8, &[])).unwrap();
        assert_eq!(batch, again);
    }

    #[test]
    fn shifted_mean_keeps_ucb_argmax() {
        let m = forrester_model(7, 0.5);
        let mut shifted = m.params().clone();
        shifted.mean_constant += 100.0;
        let ys: Vec<f64> = m.dataset().y().iter().map(|y| y + 100.0).collect();
        let data = Dataset::new(m.dataset().x().to_vec(), ys).unwrap();
        let m2 = GpModel::fit(&data, &shifted).unwrap();
        let b = SearchBox::unit(1);
        let spec = AcquisitionSpec::ucb(2.0, 1);
        let a = propose_single(&m, &spec, &b, &small_budget(), &mut stream(0, &[])).unwrap();
        let c = propose_single(&m2, &spec, &b, &small_budget(), &mut stream(0, &[])).unwrap();
        assert!((a[0] - c[0]).abs() < 1e-9);
    }
}
