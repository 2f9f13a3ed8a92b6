//! Stochastic test objectives and surrogate-fidelity scoring.

use std::time::Duration;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{check_dim, Error, Result};
use crate::global_opt::SearchBox;
use crate::gp::{map_fit_with, Dataset, GpModel, Hyperpriors, MapSettings};
use crate::par;
use crate::rng::{stream, StreamRng};
use crate::sampling::latin_hypercube;

/// A noisy black-box objective on a box.
///
/// `evaluate` must be a pure function of its point and random stream so that
/// concurrent callers with independent streams see reproducible values.
pub trait StochasticObjective: Sync {
    fn name(&self) -> &str;

    fn bounds(&self) -> SearchBox;

    fn dim(&self) -> usize {
        self.bounds().dim()
    }

    fn evaluate(&self, x: &[f64], rng: &mut StreamRng) -> Result<f64>;

    /// Noise-free expectation, when known in closed form.
    fn true_mean(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Whether `evaluate` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }

    /// Simulated cost of one evaluation.
    fn eval_latency(&self) -> Duration {
        Duration::ZERO
    }
}

fn check_point(obj: &dyn StochasticObjective, x: &[f64]) -> Result<()> {
    check_dim(obj.dim(), x.len())?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("non-finite input {x:?}")))
    }
}

pub fn forrester(x: f64) -> f64 {
    (6.0 * x - 2.0).powi(2) * (12.0 * x - 4.0).sin()
}

/// Location and value of the Forrester minimum on `[0, 1]`.
pub const FORRESTER_MIN: (f64, f64) = (0.757_249, -6.020_740_055_735_769);

/// Forrester function plus Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forrester {
    pub noise_std: f64,
}

impl StochasticObjective for Forrester {
    fn name(&self) -> &str {
        "forrester"
    }

    fn bounds(&self) -> SearchBox {
        SearchBox::unit(1)
    }

    fn evaluate(&self, x: &[f64], rng: &mut StreamRng) -> Result<f64> {
        check_point(self, x)?;
        let f = forrester(x[0]);
        if self.noise_std == 0.0 {
            return Ok(f);
        }
        Ok(f + self.noise_std * rng.sample::<f64, _>(StandardNormal))
    }

    fn true_mean(&self, x: &[f64]) -> Option<f64> {
        Some(forrester(*x.first()?))
    }
}

pub fn branin(x: &[f64]) -> f64 {
    use std::f64::consts::PI;
    let (x1, x2) = (x[0], x[1]);
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

pub const BRANIN_MIN: f64 = 0.397_887_357_729_738;

/// Branin function on `[-5, 10] × [0, 15]` plus Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branin {
    pub noise_std: f64,
}

impl StochasticObjective for Branin {
    fn name(&self) -> &str {
        "branin"
    }

    fn bounds(&self) -> SearchBox {
        SearchBox { lower: vec![-5.0, 0.0], upper: vec![10.0, 15.0] }
    }

    fn evaluate(&self, x: &[f64], rng: &mut StreamRng) -> Result<f64> {
        check_point(self, x)?;
        let f = branin(x);
        if self.noise_std == 0.0 {
            return Ok(f);
        }
        Ok(f + self.noise_std * rng.sample::<f64, _>(StandardNormal))
    }

    fn true_mean(&self, x: &[f64]) -> Option<f64> {
        (x.len() == 2).then(|| branin(x))
    }
}

/// Time to kill in seconds.
///
/// Values below `t_max` are blue wins, exactly `t_max` means both sides
/// survived, and `2 t_max - T_elim` encodes blue being eliminated at `T_elim`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct TtkOutcome(pub f64);

impl TtkOutcome {
    pub const T_MAX: f64 = 300.0;

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_blue_win(self) -> bool {
        self.0 < Self::T_MAX
    }

    pub fn is_mutual_survival(self) -> bool {
        self.0 == Self::T_MAX
    }

    pub fn is_blue_loss(self) -> bool {
        self.0 > Self::T_MAX
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: Vec<f64>,
    pub width: Vec<f64>,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ridge {
    pub axis: usize,
    pub at: f64,
    pub steepness: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub axis: usize,
    pub at: f64,
    pub height: f64,
}

/// Base level plus Gaussian bumps, logistic ridges and steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Surface {
    pub base: f64,
    #[serde(default)]
    pub bumps: Vec<Bump>,
    #[serde(default)]
    pub ridges: Vec<Ridge>,
    #[serde(default)]
    pub steps: Vec<Step>,
}

impl Surface {
    pub fn value(&self, x: &[f64]) -> f64 {
        let bumps: f64 = self
            .bumps
            .iter()
            .map(|b| {
                let q: f64 = x
                    .iter()
                    .zip(&b.center)
                    .zip(&b.width)
                    .map(|((v, c), w)| ((v - c) / w).powi(2))
                    .sum();
                b.height * (-0.5 * q).exp()
            })
            .sum();
        let ridges: f64 = self
            .ridges
            .iter()
            .map(|r| r.height / (1.0 + (-(x[r.axis] - r.at) / r.steepness).exp()))
            .sum();
        let steps: f64 = self.steps.iter().filter(|s| x[s.axis] >= s.at).map(|s| s.height).sum();
        self.base + bumps + ridges + steps
    }

    fn validate(&self, dim: usize, what: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{what}: {msg}")));
        for b in &self.bumps {
            if b.center.len() != dim || b.width.len() != dim {
                return bad(format!("bump needs {dim}-dimensional center and width"));
            }
            if b.width.iter().any(|w| !(*w > 0.0)) {
                return bad("bump widths must be positive".into());
            }
        }
        if self.ridges.iter().any(|r| r.axis >= dim || !(r.steepness > 0.0)) {
            return bad("ridge axis out of range or non-positive steepness".into());
        }
        if self.steps.iter().any(|s| s.axis >= dim) {
            return bad("step axis out of range".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axes {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spreads {
    pub win: f64,
    pub elim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtkSurface {
    pub version: u32,
    pub t_max: f64,
    pub axes: Axes,
    pub win_probability: Surface,
    pub survival_weight: Surface,
    pub win_mean: Surface,
    pub elim_mean: Surface,
    pub spread: Spreads,
}

const SYNTHETIC_TTK_V1: &str = include_str!("../data/synthetic_ttk_v1.toml");

/// Two-input synthetic engagement model with censored, multi-modal outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTtk {
    surface: TtkSurface,
}

impl SyntheticTtk {
    /// The shipped surface.
    pub fn v1() -> Self {
        Self::from_toml(SYNTHETIC_TTK_V1).expect("embedded surface parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let surface: TtkSurface = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::new(surface)
    }

    pub fn new(surface: TtkSurface) -> Result<Self> {
        let d = 2;
        if surface.axes.names.len() != d || surface.axes.lower.len() != d || surface.axes.upper.len() != d {
            return Err(Error::Config("synthetic TTK has exactly two axes".into()));
        }
        if surface.t_max != TtkOutcome::T_MAX {
            return Err(Error::Config(format!("t_max must be {}", TtkOutcome::T_MAX)));
        }
        if !(surface.spread.win > 0.0 && surface.spread.elim > 0.0) {
            return Err(Error::Config("duration spreads must be positive".into()));
        }
        surface.win_probability.validate(d, "win_probability")?;
        surface.survival_weight.validate(d, "survival_weight")?;
        surface.win_mean.validate(d, "win_mean")?;
        surface.elim_mean.validate(d, "elim_mean")?;
        Ok(Self { surface })
    }

    pub fn surface(&self) -> &TtkSurface {
        &self.surface
    }

    pub fn win_probability(&self, x: &[f64]) -> f64 {
        self.surface.win_probability.value(x).clamp(0.0, 1.0)
    }

    pub fn survival_weight(&self, x: &[f64]) -> f64 {
        self.surface.survival_weight.value(x).clamp(0.0, 1.0)
    }

    /// Maps a unit-square point to named physical units.
    pub fn physical(&self, x: &[f64]) -> Vec<f64> {
        let a = &self.surface.axes;
        x.iter().enumerate().map(|(i, v)| a.lower[i] + v * (a.upper[i] - a.lower[i])).collect()
    }

    /// One simulated engagement. Always consumes two uniforms.
    pub fn draw(&self, x: &[f64], rng: &mut StreamRng) -> Result<TtkOutcome> {
        check_point(self, x)?;
        let t_max = self.surface.t_max;
        let u_branch: f64 = rng.random();
        let u_time: f64 = rng.random();
        let p = self.win_probability(x);
        let w = self.survival_weight(x);
        let value = if u_branch < p {
            truncated_normal_quantile(self.surface.win_mean.value(x), self.surface.spread.win, 0.0, t_max, u_time)
        } else if u_branch < p + (1.0 - p) * w {
            t_max
        } else {
            let t_elim =
                truncated_normal_quantile(self.surface.elim_mean.value(x), self.surface.spread.elim, 0.0, t_max, u_time);
            2.0 * t_max - t_elim
        };
        Ok(TtkOutcome(value))
    }
}

impl StochasticObjective for SyntheticTtk {
    fn name(&self) -> &str {
        "synthetic_ttk"
    }

    fn bounds(&self) -> SearchBox {
        SearchBox::unit(2)
    }

    fn evaluate(&self, x: &[f64], rng: &mut StreamRng) -> Result<f64> {
        self.draw(x, rng).map(TtkOutcome::value)
    }

    fn true_mean(&self, x: &[f64]) -> Option<f64> {
        if x.len() != 2 {
            return None;
        }
        let t_max = self.surface.t_max;
        let p = self.win_probability(x);
        let w = self.survival_weight(x);
        let win = truncated_normal_mean(self.surface.win_mean.value(x), self.surface.spread.win, 0.0, t_max);
        let elim = truncated_normal_mean(self.surface.elim_mean.value(x), self.surface.spread.elim, 0.0, t_max);
        Some(p * win + (1.0 - p) * w * t_max + (1.0 - p) * (1.0 - w) * (2.0 * t_max - elim))
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// Quantile `u` of `N(mu, sigma²)` truncated to `(a, b)`; strictly inside.
pub fn truncated_normal_quantile(mu: f64, sigma: f64, a: f64, b: f64, u: f64) -> f64 {
    let (alpha, beta) = ((a - mu) / sigma, (b - mu) / sigma);
    if alpha > 0.0 {
        // Work in the lower tail where the CDF keeps its precision.
        return -truncated_normal_quantile(-mu, sigma, -b, -a, 1.0 - u);
    }
    let n = std_normal();
    let (pa, pb) = (n.cdf(alpha), n.cdf(beta));
    let p = (pa + u * (pb - pa)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    let x = mu + sigma * n.inverse_cdf(p);
    x.clamp(a.next_up(), b.next_down())
}

/// Mean of `N(mu, sigma²)` truncated to `(a, b)`.
pub fn truncated_normal_mean(mu: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let (alpha, beta) = ((a - mu) / sigma, (b - mu) / sigma);
    if alpha > 0.0 {
        return -truncated_normal_mean(-mu, sigma, -b, -a);
    }
    let n = std_normal();
    let z = n.cdf(beta) - n.cdf(alpha);
    (mu + sigma * (n.pdf(alpha) - n.pdf(beta)) / z).clamp(a, b)
}

/// Objective selection as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Forrester {
        noise_std: f64,
        #[serde(default)]
        eval_latency: f64,
        #[serde(default = "yes")]
        concurrent: bool,
    },
    Branin {
        noise_std: f64,
        #[serde(default)]
        eval_latency: f64,
        #[serde(default = "yes")]
        concurrent: bool,
    },
    SyntheticTtk {
        /// Surface file; the embedded v1 surface when absent.
        #[serde(default)]
        surface: Option<std::path::PathBuf>,
        #[serde(default)]
        eval_latency: f64,
        #[serde(default = "yes")]
        concurrent: bool,
    },
}

fn yes() -> bool {
    true
}

impl ObjectiveSpec {
    pub fn build(&self) -> Result<Configured> {
        let (inner, latency, concurrent): (Box<dyn StochasticObjective + Send>, f64, bool) = match self {
            Self::Forrester { noise_std, eval_latency, concurrent } => {
                check_noise(*noise_std)?;
                (Box::new(Forrester { noise_std: *noise_std }), *eval_latency, *concurrent)
            }
            Self::Branin { noise_std, eval_latency, concurrent } => {
                check_noise(*noise_std)?;
                (Box::new(Branin { noise_std: *noise_std }), *eval_latency, *concurrent)
            }
            Self::SyntheticTtk { surface, eval_latency, concurrent } => {
                let ttk = match surface {
                    Some(path) => {
                        let text = std::fs::read_to_string(path)
                            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                        SyntheticTtk::from_toml(&text)?
                    }
                    None => SyntheticTtk::v1(),
                };
                (Box::new(ttk), *eval_latency, *concurrent)
            }
        };
        if !(latency >= 0.0 && latency.is_finite()) {
            return Err(Error::Config(format!("eval_latency must be a non-negative number of seconds, got {latency}")));
        }
        Ok(Configured { inner, latency: Duration::from_secs_f64(latency), concurrent })
    }
}

fn check_noise(noise_std: f64) -> Result<()> {
    if noise_std >= 0.0 && noise_std.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("noise_std must be >= 0, got {noise_std}")))
    }
}

/// An objective with configured latency and concurrency.
pub struct Configured {
    inner: Box<dyn StochasticObjective + Send>,
    latency: Duration,
    concurrent: bool,
}

impl StochasticObjective for Configured {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn bounds(&self) -> SearchBox {
        self.inner.bounds()
    }

    fn evaluate(&self, x: &[f64], rng: &mut StreamRng) -> Result<f64> {
        self.inner.evaluate(x, rng)
    }

    fn true_mean(&self, x: &[f64]) -> Option<f64> {
        self.inner.true_mean(x)
    }

    fn concurrent(&self) -> bool {
        self.concurrent && self.inner.concurrent()
    }

    fn eval_latency(&self) -> Duration {
        self.latency
    }
}

/// Surrogate fitted to one evaluation at each of `n_dense` Latin-hypercube points.
pub fn ground_truth_model(
    objective: &dyn StochasticObjective,
    n_dense: usize,
    priors: &Hyperpriors,
    settings: &MapSettings,
    seed: u64,
) -> Result<GpModel> {
    let bbox = objective.bounds();
    if n_dense < 100 * bbox.dim() {
        return Err(Error::InvalidArgument(format!("need at least {} dense points, got {n_dense}", 100 * bbox.dim())));
    }
    let xs = latin_hypercube(n_dense, &bbox, &mut stream(seed, &[0]));
    let idx: Vec<usize> = (0..n_dense).collect();
    let ys = par::map_if(objective.concurrent(), &idx, |&i| {
        objective.evaluate(&xs[i], &mut stream(seed, &[1, i as u64]))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let data = Dataset::new(xs, ys)?;
    let params = map_fit_with(&data, priors, settings, None, &mut stream(seed, &[2]))?;
    GpModel::fit(&data, &params)
}

/// Root-mean-square difference between the model mean and `reference` on `grid`.
pub fn surrogate_rmse<F>(model: &GpModel, reference: F, grid: &[Vec<f64>]) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if grid.is_empty() {
        return Err(Error::InvalidArgument("RMSE grid is empty".into()));
    }
    let (mu, _) = model.predict(grid)?;
    let sq: f64 = mu.iter().zip(grid).map(|(m, x)| (m - reference(x)).powi(2)).sum();
    Ok((sq / grid.len() as f64).sqrt())
}

/// Regular grid with `per_axis` points per axis, endpoints included.
pub fn regular_grid(bbox: &SearchBox, per_axis: usize) -> Vec<Vec<f64>> {
    let d = bbox.dim();
    let coord = |axis: usize, k: usize| {
        if per_axis == 1 {
            bbox.lower[axis] + 0.5 * bbox.width(axis)
        } else {
            bbox.lower[axis] + bbox.width(axis) * k as f64 / (per_axis - 1) as f64
        }
    };
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut flat| {
            (0..d)
                .map(|axis| {
                    let k = flat % per_axis;
                    flat /= per_axis;
                    coord(axis, k)
                })
                .collect()
        })
        .collect()
}
