//! Exact Gaussian-process regression.
//!
//! A [`GpModel`] is an immutable posterior: the training data, the
//! hyperparameters it was conditioned under, and the Cholesky factor of
//! `K(X, X) + σn² I` (plus any jitter that had to be added). Hyperparameters
//! are learned by [`map_fit`], which maximizes the log marginal likelihood
//! plus log hyperprior densities with multi-start Nelder–Mead.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{self, KernelHyperparams};
use crate::par;
use crate::rng::StreamRng;

/// Diagonal inflation ladder, in units of `trace(A) / n`.
pub const JITTER_LADDER: [f64; 4] = [1e-10, 1e-8, 1e-6, 1e-4];

/// Returned by [`log_map_objective`] outside the hyperprior support.
static JITTERED_FACTORIZATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of factorizations in this process, including those made during
/// MAP fitting, that needed a rung of [`JITTER_LADDER`].
pub fn jittered_factorizations() -> u64 {
    JITTERED_FACTORIZATIONS.load(Ordering::Relaxed)
}

pub const OUT_OF_SUPPORT: f64 = -1e300;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Paired input locations and scalar observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let dim = x.first().map(Vec::len).unwrap_or(0);
        let mut data = Self::empty(dim);
        for (xi, yi) in x.into_iter().zip(y.iter().copied().chain(std::iter::repeat(f64::NAN))) {
            data.push(xi, yi)?;
        }
        check_dim(data.len(), y.len())?;
        Ok(data)
    }

    pub fn empty(dim: usize) -> Self {
        Self { x: Vec::new(), y: Vec::new(), dim }
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset entries must be finite".into()));
        }
        self.x.push(x);
        self.y.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }
}

/// Normal prior on the constant mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianPrior {
    fn log_density(&self, v: f64) -> f64 {
        let z = (v - self.mu) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - 0.5 * LN_2PI
    }
}

/// Uniform prior over `[ln lower, ln upper]` for a positive hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogUniformPrior {
    pub lower: f64,
    pub upper: f64,
}

impl LogUniformPrior {
    pub fn log_lower(&self) -> f64 {
        self.lower.ln()
    }

    pub fn log_upper(&self) -> f64 {
        self.upper.ln()
    }

    pub fn contains(&self, log_value: f64) -> bool {
        log_value >= self.log_lower() && log_value <= self.log_upper()
    }

    fn log_density(&self) -> f64 {
        -(self.log_upper() - self.log_lower()).ln()
    }

    fn to_unit(&self, log_value: f64) -> f64 {
        ((log_value - self.log_lower()) / (self.log_upper() - self.log_lower())).clamp(0.0, 1.0)
    }

    fn from_unit(&self, u: f64) -> f64 {
        let (lo, hi) = (self.log_lower(), self.log_upper());
        (lo + u * (hi - lo)).clamp(lo, hi)
    }
}

/// Hyperpriors: Gaussian on the mean, log-uniform on every length scale, the
/// signal amplitude and the noise standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperpriors {
    pub mean: GaussianPrior,
    pub lengthscale: LogUniformPrior,
    pub amplitude: LogUniformPrior,
    pub noise_std: LogUniformPrior,
}

impl Hyperpriors {
    /// The experiment-table values: N(0, 100²) mean, U(log 1, log 3) on the
    /// covariance hyperparameters and U(log 20, log 400) on the noise.
    pub fn table1() -> Self {
        Self {
            mean: GaussianPrior { mu: 0.0, sigma: 100.0 },
            lengthscale: LogUniformPrior { lower: 1.0, upper: 3.0 },
            amplitude: LogUniformPrior { lower: 1.0, upper: 3.0 },
            noise_std: LogUniformPrior { lower: 20.0, upper: 400.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: &LogUniformPrior| p.lower > 0.0 && p.lower < p.upper && p.upper.is_finite();
        if !(ok(&self.lengthscale) && ok(&self.amplitude) && ok(&self.noise_std)) {
            return Err(Error::InvalidArgument("log-uniform prior needs 0 < lower < upper".into()));
        }
        if !(self.mean.sigma > 0.0 && self.mean.mu.is_finite()) {
            return Err(Error::InvalidArgument("mean prior needs sigma > 0".into()));
        }
        Ok(())
    }

    fn in_support(&self, params: &KernelHyperparams) -> bool {
        params.log_lengthscales.iter().all(|&l| self.lengthscale.contains(l))
            && self.amplitude.contains(params.log_signal_amplitude)
            && self.noise_std.contains(params.log_noise_std)
    }

    /// Sum of log prior densities, or `None` outside the support.
    pub fn log_density(&self, params: &KernelHyperparams) -> Option<f64> {
        if !self.in_support(params) {
            return None;
        }
        let d = params.dim() as f64;
        Some(
            self.mean.log_density(params.mean_constant)
                + d * self.lengthscale.log_density()
                + self.amplitude.log_density()
                + self.noise_std.log_density(),
        )
    }

    fn to_unit(&self, params: &KernelHyperparams) -> Vec<f64> {
        let mut u: Vec<f64> = params.log_lengthscales.iter().map(|&l| self.lengthscale.to_unit(l)).collect();
        u.push(self.amplitude.to_unit(params.log_signal_amplitude));
        u.push(self.noise_std.to_unit(params.log_noise_std));
        u
    }

    fn from_unit(&self, u: &[f64], mean: f64) -> KernelHyperparams {
        let d = u.len() - 2;
        KernelHyperparams {
            log_lengthscales: u[..d].iter().map(|&v| self.lengthscale.from_unit(v)).collect(),
            log_signal_amplitude: self.amplitude.from_unit(u[d]),
            log_noise_std: self.noise_std.from_unit(u[d + 1]),
            mean_constant: mean,
        }
    }
}

/// Lower Cholesky factor of `a`, escalating diagonal jitter on failure.
/// Returns the factor and the absolute jitter that was added.
pub(crate) fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0.0));
    }
    if let Some(ch) = nalgebra::Cholesky::new(a.clone()) {
        return Ok((ch.unpack(), 0.0));
    }
    let scale = a.trace() / n as f64;
    let mut tried = vec![0.0];
    for rung in JITTER_LADDER {
        let jitter = rung * scale;
        tried.push(jitter);
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = nalgebra::Cholesky::new(m) {
            JITTERED_FACTORIZATIONS.fetch_add(1, Ordering::Relaxed);
            return Ok((ch.unpack(), jitter));
        }
    }
    Err(Error::IllConditionedCovariance { jitter_ladder: tried })
}

/// Solves `L v = b` in place for lower-triangular `L`, column by column.
pub(crate) fn forward_substitute(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for j in 0..n {
        let col = l.column(j);
        let vj = b[j] / col[j];
        b[j] = vj;
        for i in (j + 1)..n {
            b[i] -= col[i] * vj;
        }
    }
}

/// Solves `Lᵀ v = b` in place.
fn backward_substitute(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for j in (0..n).rev() {
        let col = l.column(j);
        let dot: f64 = ((j + 1)..n).map(|i| col[i] * b[i]).sum();
        b[j] = (b[j] - dot) / col[j];
    }
}

/// Fitted GP posterior. Immutable once constructed.
#[derive(Debug, Clone)]
pub struct GpModel {
    dataset: Dataset,
    params: KernelHyperparams,
    scaled_x: Vec<Vec<f64>>,
    chol: DMatrix<f64>,
    alpha: Vec<f64>,
    jitter_used: f64,
}

impl GpModel {
    /// Conditions the GP on `dataset` under fixed hyperparameters.
    pub fn fit(dataset: &Dataset, params: &KernelHyperparams) -> Result<Self> {
        params.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("fit needs at least one observation; use GpModel::prior".into()));
        }
        check_dim(params.dim(), dataset.dim())?;
        let scaled_x = kernel::scale_points(dataset.x(), params)?;
        let mut a = kernel::gram_scaled(&scaled_x, params.signal_variance());
        let noise = params.noise_variance();
        for i in 0..a.nrows() {
            a[(i, i)] += noise;
        }
        let (chol, jitter_used) = cholesky_with_jitter(&a)?;
        let mut alpha: Vec<f64> = dataset.y().iter().map(|y| y - params.mean_constant).collect();
        forward_substitute(&chol, &mut alpha);
        backward_substitute(&chol, &mut alpha);
        Ok(Self { dataset: dataset.clone(), params: params.clone(), scaled_x, chol, alpha, jitter_used })
    }

    /// The unconditioned prior (no observations).
    pub fn prior(params: &KernelHyperparams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            dataset: Dataset::empty(params.dim()),
            params: params.clone(),
            scaled_x: Vec::new(),
            chol: DMatrix::zeros(0, 0),
            alpha: Vec::new(),
            jitter_used: 0.0,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn params(&self) -> &KernelHyperparams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Lower-triangular factor of `K + σn² I + jitter I`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    fn scale(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.params.log_lengthscales).map(|(v, l)| v / l.exp()).collect()
    }

    fn cross_cov(&self, scaled: &[f64]) -> Vec<f64> {
        let sf2 = self.params.signal_variance();
        self.scaled_x.iter().map(|xi| sf2 * kernel::unit_matern32(kernel::euclid(xi, scaled))).collect()
    }

    /// Posterior mean and latent (noise-free) variance at a single point.
    pub fn predict_one(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.dim(), x.len())?;
        let mut k = self.cross_cov(&self.scale(x));
        let mu = self.params.mean_constant + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        forward_substitute(&self.chol, &mut k);
        let reduction: f64 = k.iter().map(|v| v * v).sum();
        Ok((mu, (self.params.signal_variance() - reduction).max(0.0)))
    }

    /// Posterior means and latent variances at each row of `xs`.
    pub fn predict(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut mu = Vec::with_capacity(xs.len());
        let mut var = Vec::with_capacity(xs.len());
        for x in xs {
            let (m, v) = self.predict_one(x)?;
            mu.push(m);
            var.push(v);
        }
        Ok((mu, var))
    }

    /// Full posterior covariance of the latent function at `xs`.
    pub fn posterior_covariance(&self, xs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let kss = kernel::covariance_matrix(xs, xs, &self.params)?;
        if self.dataset.is_empty() {
            return Ok(kss);
        }
        let scaled: Vec<Vec<f64>> = xs.iter().map(|x| self.scale(x)).collect();
        let sf2 = self.params.signal_variance();
        let kxs = DMatrix::from_fn(self.scaled_x.len(), xs.len(), |i, j| {
            sf2 * kernel::unit_matern32(kernel::euclid(&self.scaled_x[i], &scaled[j]))
        });
        let v = self
            .chol
            .solve_lower_triangular(&kxs)
            .ok_or_else(|| Error::InvalidArgument("singular Cholesky factor".into()))?;
        let mut cov = kss - v.tr_mul(&v);
        // Restore exact symmetry lost to round-off.
        for j in 0..cov.ncols() {
            for i in (j + 1)..cov.nrows() {
                let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
        }
        Ok(cov)
    }

    /// Joint draws of the latent function at `xs`; one row per draw.
    pub fn sample_posterior_joint(&self, xs: &[Vec<f64>], n_draws: usize, rng: &mut StreamRng) -> Result<Vec<Vec<f64>>> {
        if xs.is_empty() || n_draws == 0 {
            return Err(Error::InvalidArgument("posterior sampling needs p >= 1 and n_draws >= 1".into()));
        }
        let (mu, _) = self.predict(xs)?;
        let cov = self.posterior_covariance(xs)?;
        let (l, _) = cholesky_with_jitter(&cov)?;
        let p = xs.len();
        let mut draws = Vec::with_capacity(n_draws);
        let mut z = DVector::zeros(p);
        for _ in 0..n_draws {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let f = &l * &z;
            draws.push(mu.iter().zip(f.iter()).map(|(m, e)| m + e).collect());
        }
        Ok(draws)
    }

    /// The same posterior with one extra observation, hyperparameters fixed.
    ///
    /// Extends the Cholesky factor by one row in `O(n²)`; falls back to a full
    /// refit (with the jitter ladder) if the extension loses definiteness.
    pub fn with_observation(&self, x: &[f64], y: f64) -> Result<Self> {
        check_dim(self.dim(), x.len())?;
        let mut dataset = self.dataset.clone();
        dataset.push(x.to_vec(), y)?;
        if self.dataset.is_empty() {
            return Self::fit(&dataset, &self.params);
        }
        let n = self.dataset.len();
        let scaled = self.scale(x);
        let mut row = self.cross_cov(&scaled);
        forward_substitute(&self.chol, &mut row);
        let diag = self.params.signal_variance() + self.params.noise_variance() + self.jitter_used;
        let d2 = diag - row.iter().map(|v| v * v).sum::<f64>();
        if !(d2 > 1e-12 * diag) {
            return Self::fit(&dataset, &self.params);
        }
        let mut chol = self.chol.clone().resize(n + 1, n + 1, 0.0);
        for (j, v) in row.iter().enumerate() {
            chol[(n, j)] = *v;
        }
        chol[(n, n)] = d2.sqrt();
        let mut alpha: Vec<f64> = dataset.y().iter().map(|y| y - self.params.mean_constant).collect();
        forward_substitute(&chol, &mut alpha);
        backward_substitute(&chol, &mut alpha);
        let mut scaled_x = self.scaled_x.clone();
        scaled_x.push(scaled);
        Ok(Self { dataset, params: self.params.clone(), scaled_x, chol, alpha, jitter_used: self.jitter_used })
    }

    /// `log N(y | m, K + σn² I)` under the factorized covariance.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.dataset.len();
        let fit: f64 = self
            .dataset
            .y()
            .iter()
            .zip(&self.alpha)
            .map(|(y, a)| (y - self.params.mean_constant) * a)
            .sum();
        let log_det: f64 = (0..n).map(|i| self.chol[(i, i)].ln()).sum();
        -0.5 * fit - log_det - 0.5 * n as f64 * LN_2PI
    }
}

/// Log marginal likelihood plus log hyperprior density.
///
/// Returns [`OUT_OF_SUPPORT`] when a uniform bound is violated or the
/// covariance cannot be factorized.
pub fn log_map_objective(params: &KernelHyperparams, dataset: &Dataset, priors: &Hyperpriors) -> f64 {
    let Some(log_prior) = priors.log_density(params) else {
        return OUT_OF_SUPPORT;
    };
    if dataset.is_empty() {
        return log_prior;
    }
    match GpModel::fit(dataset, params) {
        Ok(model) => model.log_marginal_likelihood() + log_prior,
        Err(_) => OUT_OF_SUPPORT,
    }
}

/// Evaluates the MAP objective with the constant mean maximized in closed
/// form. Returns the objective and the completed hyperparameters.
fn profiled_objective(dataset: &Dataset, priors: &Hyperpriors, theta: &KernelHyperparams) -> Option<(f64, KernelHyperparams)> {
    let scaled = kernel::scale_points(dataset.x(), theta).ok()?;
    let mut a = kernel::gram_scaled(&scaled, theta.signal_variance());
    let noise = theta.noise_variance();
    for i in 0..a.nrows() {
        a[(i, i)] += noise;
    }
    let (l, _) = cholesky_with_jitter(&a).ok()?;
    let mut ly = dataset.y().to_vec();
    forward_substitute(&l, &mut ly);
    let mut l1 = vec![1.0; dataset.len()];
    forward_substitute(&l, &mut l1);
    let yy: f64 = ly.iter().map(|v| v * v).sum();
    let oy: f64 = ly.iter().zip(&l1).map(|(a, b)| a * b).sum();
    let oo: f64 = l1.iter().map(|v| v * v).sum();
    let prec = 1.0 / (priors.mean.sigma * priors.mean.sigma);
    let mean = (oy + priors.mean.mu * prec) / (oo + prec);
    let quad = yy - 2.0 * mean * oy + mean * mean * oo;
    let log_det: f64 = (0..l.nrows()).map(|i| l[(i, i)].ln()).sum();
    let lml = -0.5 * quad - log_det - 0.5 * dataset.len() as f64 * LN_2PI;
    let params = KernelHyperparams { mean_constant: mean, ..theta.clone() };
    let value = lml + priors.log_density(&params)?;
    value.is_finite().then_some((value, params))
}

/// Controls for [`map_fit_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapSettings {
    /// Number of Latin-hypercube restarts over the hyperprior support.
    pub restarts: usize,
    /// Objective evaluations allowed per local search.
    pub max_evals_per_restart: usize,
    /// Stop a local search once the simplex spread falls below this.
    pub tolerance: f64,
}

impl Default for MapSettings {
    fn default() -> Self {
        Self { restarts: 8, max_evals_per_restart: 120, tolerance: 1e-6 }
    }
}

/// MAP hyperparameters from `n_restarts` Latin-hypercube starts.
pub fn map_fit(dataset: &Dataset, priors: &Hyperpriors, n_restarts: usize, rng: &mut StreamRng) -> Result<KernelHyperparams> {
    let settings = MapSettings { restarts: n_restarts, ..MapSettings::default() };
    map_fit_with(dataset, priors, &settings, None, rng)
}

/// MAP hyperparameters with explicit settings and an optional extra start
/// (typically the previous iteration's estimate).
pub fn map_fit_with(
    dataset: &Dataset,
    priors: &Hyperpriors,
    settings: &MapSettings,
    warm_start: Option<&KernelHyperparams>,
    rng: &mut StreamRng,
) -> Result<KernelHyperparams> {
    priors.validate()?;
    if dataset.len() < 2 {
        return Err(Error::InvalidArgument("MAP fitting needs at least two observations".into()));
    }
    if settings.restarts == 0 && warm_start.is_none() {
        return Err(Error::InvalidArgument("MAP fitting needs at least one restart".into()));
    }
    let k = dataset.dim() + 2;
    let mut starts = Vec::new();
    if let Some(w) = warm_start {
        check_dim(dataset.dim(), w.dim())?;
        starts.push(priors.to_unit(w));
    }
    if settings.restarts > 0 {
        let unit = crate::global_opt::SearchBox::unit(k);
        starts.extend(crate::sampling::latin_hypercube(settings.restarts, &unit, rng));
    }

    let cost = |u: &[f64]| -> f64 {
        match profiled_objective(dataset, priors, &priors.from_unit(u, 0.0)) {
            Some((v, _)) => -v,
            None => f64::INFINITY,
        }
    };
    let results = par::map(&starts, |u0| nelder_mead(&cost, u0, settings.max_evals_per_restart, settings.tolerance));

    let mut best: Option<(f64, &Vec<f64>)> = None;
    for (c, u) in results.iter().map(|(u, c)| (*c, u)) {
        if c.is_finite() && best.is_none_or(|(bc, _)| c < bc) {
            best = Some((c, u));
        }
    }
    let (_, u) = best.ok_or(Error::NoFittableRestart)?;
    let (_, params) = profiled_objective(dataset, priors, &priors.from_unit(u, 0.0)).ok_or(Error::NoFittableRestart)?;
    Ok(params)
}

/// Box-constrained Nelder–Mead on `[0, 1]^k`; trial points are clamped.
fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], max_evals: usize, tol: f64) -> (Vec<f64>, f64) {
    let k = x0.len();
    let clamp = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|t| t.clamp(0.0, 1.0)).collect() };
    let step = 0.15;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    let start = clamp(x0.to_vec());
    let f0 = f(&start);
    simplex.push((start.clone(), f0));
    for i in 0..k {
        let mut v = start.clone();
        v[i] = if v[i] + step <= 1.0 { v[i] + step } else { v[i] - step };
        let fv = f(&v);
        simplex.push((v, fv));
    }
    let mut evals = k + 1;
    let along = |from: &[f64], to: &[f64], t: f64| -> Vec<f64> {
        clamp(from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect())
    };
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));

    while evals < max_evals {
        order(&mut simplex);
        let (fb, fw) = (simplex[0].1, simplex[k].1);
        if fb.is_finite() && fw - fb <= tol * (1.0 + fb.abs()) {
            break;
        }
        let centroid: Vec<f64> =
            (0..k).map(|j| simplex[..k].iter().map(|(v, _)| v[j]).sum::<f64>() / k as f64).collect();
        let worst = simplex[k].0.clone();
        let xr = along(&centroid, &worst, -1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < fb {
            let xe = along(&centroid, &worst, -2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
        } else {
            let (xc, fc) = if fr < fw {
                let xc = along(&centroid, &xr, 0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(&centroid, &worst, 0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < fr.min(fw) {
                simplex[k] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let v = along(&best, &entry.0, 0.5);
                    let fv = f(&v);
                    *entry = (v, fv);
                }
                evals += k;
            }
        }
    }
    order(&mut simplex);
    simplex.swap_remove(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn params(l: f64, sf: f64, sn: f64, m: f64) -> KernelHyperparams {
        KernelHyperparams::isotropic(1, l, sf, sn, m).unwrap()
    }

    #[test]
    fn dataset_rejects_mismatch() {
        assert!(Dataset::new(vec![vec![0.0], vec![1.0]], vec![1.0]).is_err());
        assert!(Dataset::new(vec![vec![0.0], vec![1.0, 2.0]], vec![1.0, 2.0]).is_err());
        assert!(Dataset::new(vec![vec![0.0]], vec![f64::NAN]).is_err());
        assert_eq!(Dataset::new(vec![vec![0.0]], vec![2.0]).unwrap().len(), 1);
    }

    #[test]
    fn one_point_factor() {
        let data = Dataset::new(vec![vec![0.3]], vec![1.0]).unwrap();
        let p = params(0.7, 2.0, 0.5, 0.0);
        let m = GpModel::fit(&data, &p).unwrap();
        assert_eq!(m.chol().shape(), (1, 1));
        assert!((m.chol()[(0, 0)] - (4.0f64 + 0.25).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn distinct_points_need_no_jitter() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 9.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x[0]).sin()).collect();
        let m = GpModel::fit(&Dataset::new(xs, ys).unwrap(), &params(0.2, 1.0, 0.1, 0.0)).unwrap();
        assert_eq!(m.jitter_used(), 0.0);
    }

    #[test]
    fn duplicate_points_engage_jitter() {
        let data = Dataset::new(vec![vec![0.4]; 10], vec![1.0; 10]).unwrap();
        let before = jittered_factorizations();
        let m = GpModel::fit(&data, &params(0.2, 1.0, 1e-12, 0.0)).unwrap();
        assert!(m.jitter_used() > 0.0);
        assert!(jittered_factorizations() > before);
        // chol·cholᵀ reconstructs the jittered matrix.
        let a = kernel::covariance_matrix(data.x(), data.x(), m.params()).unwrap()
            + DMatrix::identity(10, 10) * (m.params().noise_variance() + m.jitter_used());
        let rec = m.chol() * m.chol().transpose();
        assert!((rec - &a).norm() / a.norm() < 1e-8);
    }

    #[test]
    fn prior_recovery() {
        let p = params(0.3, 2.0, 0.1, 5.0);
        let m = GpModel::prior(&p).unwrap();
        let (mu, var) = m.predict(&[vec![0.1], vec![0.9]]).unwrap();
        assert_eq!(mu, vec![5.0, 5.0]);
        assert!(var.iter().all(|v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn single_point_hand_computation() {
        // k(1) = (1+√3)e^{-√3}; mu = k·1; var = 1 - k².
        let data = Dataset::new(vec![vec![0.0]], vec![1.0]).unwrap();
        let m = GpModel::fit(&data, &params(1.0, 1.0, 1e-12, 0.0)).unwrap();
        let (mu, var) = m.predict_one(&[1.0]).unwrap();
        let k = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
        assert!((mu - k).abs() < 1e-10);
        assert!((var - (1.0 - k * k)).abs() < 1e-10);
        assert!((mu - 0.483_358).abs() < 1e-6 && (var - 0.766_365).abs() < 1e-6);
    }

    #[test]
    fn noise_free_interpolation() {
        let mut rng = stream(1, &[]);
        let xs: Vec<Vec<f64>> = (0..15).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x[0]).cos() + x[1] * x[1]).collect();
        let p = KernelHyperparams::new(&[0.5, 0.5], 1.0, 1e-8, 0.0).unwrap();
        let m = GpModel::fit(&Dataset::new(xs.clone(), ys.clone()).unwrap(), &p).unwrap();
        let (mu, var) = m.predict(&xs).unwrap();
        for i in 0..xs.len() {
            assert!((mu[i] - ys[i]).abs() < 1e-6);
            assert!(var[i] < 1e-6);
        }
    }

    #[test]
    fn posterior_contracts_with_noise_free_point() {
        let data = Dataset::new(vec![vec![0.1], vec![0.8]], vec![0.5, -0.5]).unwrap();
        let p = params(0.3, 1.0, 1e-6, 0.0);
        let m = GpModel::fit(&data, &p).unwrap();
        for x in [0.0, 0.3, 0.45, 0.9] {
            let (_, before) = m.predict_one(&[x]).unwrap();
            let (_, after) = m.with_observation(&[x], 0.0).unwrap().predict_one(&[x]).unwrap();
            assert!(after <= before);
        }
    }

    #[test]
    fn extension_matches_refit() {
        let data = Dataset::new(vec![vec![0.1], vec![0.5], vec![0.8]], vec![0.5, 1.0, -0.5]).unwrap();
        let p = params(0.3, 1.5, 0.2, 0.3);
        let m = GpModel::fit(&data, &p).unwrap().with_observation(&[0.6], 2.0).unwrap();
        let mut bigger = data.clone();
        bigger.push(vec![0.6], 2.0).unwrap();
        let r = GpModel::fit(&bigger, &p).unwrap();
        for x in [0.0, 0.3, 0.65, 1.0] {
            let (a, va) = m.predict_one(&[x]).unwrap();
            let (b, vb) = r.predict_one(&[x]).unwrap();
            assert!((a - b).abs() < 1e-12 && (va - vb).abs() < 1e-12);
        }
        assert!((m.log_marginal_likelihood() - r.log_marginal_likelihood()).abs() < 1e-10);
    }

    #[test]
    fn marginal_likelihood_scalar_forms() {
        let p = params(0.4, 1.3, 0.7, 0.0);
        let data = Dataset::new(vec![vec![0.2]], vec![0.0]).unwrap();
        let s2 = 1.3f64.powi(2) + 0.49;
        let closed = -0.5 * (2.0 * std::f64::consts::PI * s2).ln();
        let m = GpModel::fit(&data, &p).unwrap();
        assert!((m.log_marginal_likelihood() - closed).abs() < 1e-10);

        let data = Dataset::new(vec![vec![0.2]], vec![1.7]).unwrap();
        let p = params(0.4, 1.3, 0.7, 0.5);
        let closed = -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * 1.2f64.powi(2) / s2;
        assert!((GpModel::fit(&data, &p).unwrap().log_marginal_likelihood() - closed).abs() < 1e-10);
    }

    #[test]
    fn objective_out_of_support() {
        let priors = Hyperpriors::table1();
        let data = Dataset::new(vec![vec![0.2], vec![0.5]], vec![0.0, 1.0]).unwrap();
        let p = KernelHyperparams::isotropic(1, 0.5, 2.0, 50.0, 0.0).unwrap();
        assert_eq!(log_map_objective(&p, &data, &priors), OUT_OF_SUPPORT);
        let p = KernelHyperparams::isotropic(1, 2.0, 2.0, 50.0, 0.0).unwrap();
        assert!(log_map_objective(&p, &data, &priors) > OUT_OF_SUPPORT);
    }

    #[test]
    fn objective_prefers_data_scale_noise() {
        // Noisy data around a flat function: noise std 30 explains it better than 20.
        let mut rng = stream(2, &[]);
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.1]).collect();
        let ys: Vec<f64> = xs.iter().map(|_| 30.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let data = Dataset::new(xs, ys).unwrap();
        let priors = Hyperpriors::table1();
        let scan: Vec<f64> = [20.0, 22.0, 25.0, 28.0]
            .iter()
            .map(|&sn| log_map_objective(&KernelHyperparams::isotropic(1, 1.0, 1.0, sn, 0.0).unwrap(), &data, &priors))
            .collect();
        assert!(scan.windows(2).all(|w| w[1] > w[0]), "{scan:?}");
    }

    #[test]
    fn profiled_mean_is_optimal() {
        let data = Dataset::new(vec![vec![0.1], vec![0.4], vec![0.9]], vec![3.0, 4.0, 2.5]).unwrap();
        let priors = Hyperpriors {
            lengthscale: LogUniformPrior { lower: 0.05, upper: 2.0 },
            amplitude: LogUniformPrior { lower: 0.1, upper: 10.0 },
            noise_std: LogUniformPrior { lower: 0.01, upper: 2.0 },
            mean: GaussianPrior { mu: 0.0, sigma: 10.0 },
        };
        let theta = params(0.3, 1.0, 0.2, 0.0);
        let (v, best) = profiled_objective(&data, &priors, &theta).unwrap();
        assert!((log_map_objective(&best, &data, &priors) - v).abs() < 1e-10);
        for dm in [-0.1, 0.1] {
            let shifted = KernelHyperparams { mean_constant: best.mean_constant + dm, ..best.clone() };
            assert!(log_map_objective(&shifted, &data, &priors) < v);
        }
    }

    #[test]
    fn map_fit_recovers_lengthscale() {
        // Draw 60 points from a GP with known hyperparameters, then refit.
        let truth = params(0.15, 2.0, 0.1, 0.0);
        let mut rng = stream(11, &[]);
        let xs: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 + rng.random::<f64>()) / 60.0]).collect();
        let prior = GpModel::prior(&truth).unwrap();
        let f = prior.sample_posterior_joint(&xs, 1, &mut rng).unwrap().remove(0);
        let ys: Vec<f64> = f.iter().map(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let data = Dataset::new(xs, ys).unwrap();
        let priors = Hyperpriors {
            mean: GaussianPrior { mu: 0.0, sigma: 10.0 },
            lengthscale: LogUniformPrior { lower: 0.01, upper: 3.0 },
            amplitude: LogUniformPrior { lower: 0.1, upper: 20.0 },
            noise_std: LogUniformPrior { lower: 0.01, upper: 2.0 },
        };
        let fitted = map_fit(&data, &priors, 8, &mut stream(12, &[])).unwrap();
        assert!(
            (fitted.log_lengthscales[0] - truth.log_lengthscales[0]).abs() < 0.5,
            "{:?}",
            fitted.lengthscales()
        );
        let again = map_fit(&data, &priors, 8, &mut stream(12, &[])).unwrap();
        assert_eq!(fitted, again);
    }

    #[test]
    fn map_fit_constant_data_shrinks_noise() {
        let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 11.0]).collect();
        let data = Dataset::new(xs, vec![2.0; 12]).unwrap();
        let priors = Hyperpriors {
            mean: GaussianPrior { mu: 0.0, sigma: 10.0 },
            lengthscale: LogUniformPrior { lower: 0.05, upper: 2.0 },
            amplitude: LogUniformPrior { lower: 0.1, upper: 10.0 },
            noise_std: LogUniformPrior { lower: 1e-3, upper: 1.0 },
        };
        let fitted = map_fit(&data, &priors, 8, &mut stream(5, &[])).unwrap();
        let u = priors.noise_std.to_unit(fitted.log_noise_std);
        assert!(u < 0.05, "noise {}", fitted.log_noise_std.exp());
    }

    #[test]
    fn map_fit_beats_every_start() {
        let mut rng = stream(9, &[]);
        let xs: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random::<f64>()]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 5.0 * (7.0 * x[0]).sin() + rng.random::<f64>()).collect();
        let data = Dataset::new(xs, ys).unwrap();
        let priors = Hyperpriors {
            mean: GaussianPrior { mu: 0.0, sigma: 10.0 },
            lengthscale: LogUniformPrior { lower: 0.02, upper: 2.0 },
            amplitude: LogUniformPrior { lower: 0.1, upper: 20.0 },
            noise_std: LogUniformPrior { lower: 0.01, upper: 3.0 },
        };
        let fitted = map_fit(&data, &priors, 4, &mut stream(3, &[])).unwrap();
        let best = log_map_objective(&fitted, &data, &priors);
        let starts = crate::sampling::latin_hypercube(4, &crate::global_opt::SearchBox::unit(3), &mut stream(3, &[]));
        for u in starts {
            let (v, _) = profiled_objective(&data, &priors, &priors.from_unit(&u, 0.0)).unwrap();
            assert!(best >= v);
        }
    }

    #[test]
    fn joint_draws_match_moments() {
        let data = Dataset::new(vec![vec![0.2], vec![0.7]], vec![1.0, -1.0]).unwrap();
        let m = GpModel::fit(&data, &params(0.3, 1.0, 0.1, 0.0)).unwrap();
        let xs = vec![vec![0.0], vec![0.45], vec![0.95]];
        let (mu, var) = m.predict(&xs).unwrap();
        let draws = m.sample_posterior_joint(&xs, 10_000, &mut stream(4, &[])).unwrap();
        for j in 0..3 {
            let mean = draws.iter().map(|d| d[j]).sum::<f64>() / 1e4;
            assert!((mean - mu[j]).abs() < 4.0 * (var[j] / 1e4).sqrt(), "coord {j}");
        }
    }

    #[test]
    fn joint_draws_duplicate_rows_agree() {
        let data = Dataset::new(vec![vec![0.2], vec![0.7]], vec![1.0, -1.0]).unwrap();
        let m = GpModel::fit(&data, &params(0.3, 1.0, 0.1, 0.0)).unwrap();
        let xs = vec![vec![0.4], vec![0.9], vec![0.4]];
        for d in m.sample_posterior_joint(&xs, 50, &mut stream(6, &[])).unwrap() {
            assert!((d[0] - d[2]).abs() < 1e-3);
        }
        let once = m.sample_posterior_joint(&xs, 3, &mut stream(6, &[])).unwrap();
        let twice = m.sample_posterior_joint(&xs, 3, &mut stream(6, &[])).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn objective_symmetric_under_small_probes() {
        // Derivative-free fitting: the objective is smooth, so ±h probes in
        // log space agree to second order.
        let mut rng = stream(21, &[]);
        let xs: Vec<Vec<f64>> = (0..15).map(|_| vec![rng.random::<f64>()]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (5.0 * x[0]).sin() + 0.1 * rng.random::<f64>()).collect();
        let data = Dataset::new(xs, ys).unwrap();
        let priors = Hyperpriors {
            mean: GaussianPrior { mu: 0.0, sigma: 10.0 },
            lengthscale: LogUniformPrior { lower: 0.01, upper: 3.0 },
            amplitude: LogUniformPrior { lower: 0.1, upper: 10.0 },
            noise_std: LogUniformPrior { lower: 0.01, upper: 3.0 },
        };
        let base = params(0.3, 1.0, 0.2, 0.1);
        let h = 1e-5;
        let f0 = log_map_objective(&base, &data, &priors);
        let mut plus = base.clone();
        plus.log_lengthscales[0] += h;
        let mut minus = base.clone();
        minus.log_lengthscales[0] -= h;
        let (fp, fm) = (log_map_objective(&plus, &data, &priors), log_map_objective(&minus, &data, &priors));
        assert!((0.5 * (fp + fm) - f0).abs() < 1e-6);
    }
}
