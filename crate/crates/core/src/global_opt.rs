//! DIRECT (dividing rectangles) global minimization over a box.
//!
//! The search runs in the unit cube. Each round screens the current
//! rectangles for potential optimality (lower-right convex hull of
//! size vs. center value, with the `eps` sufficient-decrease test), trisects
//! every selected rectangle along all of its longest sides and samples the
//! new centers. New centers of one round are evaluated as a single batch,
//! which is where the parallel feature applies.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::par;

/// Default balance parameter for the sufficient-decrease test.
pub const DEFAULT_EPS: f64 = 1e-4;

/// Rectangles at this trisection depth (side 3^-40) are not divided further.
const MAX_LEVEL: u32 = 40;

/// Axis-aligned search box in input units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SearchBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::InvalidArgument("search box needs at least one dimension".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidArgument(format!("search box needs lower < upper: {lower:?} / {upper:?}")));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        Self { lower: vec![0.0; dim], upper: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn center(&self) -> Vec<f64> {
        self.denormalize(&vec![0.5; self.dim()])
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    /// Affine map from the box onto the unit cube.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (v - l) / (u - l))
            .collect()
    }

    /// Inverse of [`SearchBox::normalize`]; the result is clamped into the box.
    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, h))| (l + t * (h - l)).clamp(*l, *h))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectOptions {
    pub max_evals: usize,
    pub eps: f64,
}

impl DirectOptions {
    pub fn new(max_evals: usize) -> Self {
        Self { max_evals, eps: DEFAULT_EPS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectResult {
    pub x_min: Vec<f64>,
    pub f_min: f64,
    pub evals_used: usize,
    /// Best value after the initial sample and after each round.
    pub best_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Rect {
    center: Vec<f64>,
    /// Side length along axis i is 3^-levels[i].
    levels: Vec<u32>,
    f: f64,
    size: f64,
}

impl Rect {
    fn new(center: Vec<f64>, levels: Vec<u32>, f: f64) -> Self {
        let size = half_diagonal(&levels);
        Self { center, levels, f, size }
    }

    fn min_level(&self) -> u32 {
        *self.levels.iter().min().expect("non-empty")
    }

    /// Value used for hull screening; non-finite samples rank last.
    fn score(&self) -> f64 {
        if self.f.is_finite() {
            self.f
        } else {
            f64::MAX / 4.0
        }
    }
}

fn half_diagonal(levels: &[u32]) -> f64 {
    // Sorting makes the sum, and therefore size grouping, independent of axis order.
    let mut sorted = levels.to_vec();
    sorted.sort_unstable();
    let sum: f64 = sorted.iter().map(|&k| 9f64.powi(-(k as i32))).sum();
    0.5 * sum.sqrt()
}

/// Minimizes `f` over `bbox` using at most `max_evals` evaluations.
pub fn direct_minimize<F>(f: F, bbox: &SearchBox, max_evals: usize, eps: f64) -> Result<DirectResult>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if max_evals == 0 {
        return Err(Error::InvalidArgument("DIRECT needs max_evals >= 1".into()));
    }
    let d = bbox.dim();
    let eval = |u: &Vec<f64>| f(&bbox.denormalize(u));

    let c0 = vec![0.5; d];
    let f0 = eval(&c0);
    let mut rects = vec![Rect::new(c0, vec![0; d], f0)];
    let mut evals = 1;
    let mut best = if f0.is_finite() { Some(0) } else { None };
    let mut best_trace = vec![f0];

    loop {
        let selected = potentially_optimal(&rects, best.map(|b| rects[b].f), eps);
        // Schedule trisections that fit in the remaining budget.
        let mut plans = Vec::new();
        let mut points = Vec::new();
        for idx in selected {
            let rect = &rects[idx];
            let level = rect.min_level();
            if level >= MAX_LEVEL {
                continue;
            }
            let axes: Vec<usize> = (0..d).filter(|&i| rect.levels[i] == level).collect();
            if evals + points.len() + 2 * axes.len() > max_evals {
                break;
            }
            let delta = 3f64.powi(-(level as i32 + 1));
            for &i in &axes {
                for sign in [1.0, -1.0] {
                    let mut c = rect.center.clone();
                    c[i] += sign * delta;
                    points.push(c);
                }
            }
            plans.push((idx, axes));
        }
        if plans.is_empty() {
            break;
        }

        let values = par::map(&points, eval);
        evals += points.len();

        let mut offset = 0;
        for (idx, axes) in plans {
            let m = axes.len();
            let pts = &points[offset..offset + 2 * m];
            let vals = &values[offset..offset + 2 * m];
            offset += 2 * m;

            // Split the best-sampled axis first so the best point lands in the
            // largest child.
            let mut order: Vec<usize> = (0..m).collect();
            let key = |j: usize| {
                let w = vals[2 * j].min(vals[2 * j + 1]);
                if w.is_nan() {
                    f64::INFINITY
                } else {
                    w
                }
            };
            order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(axes[a].cmp(&axes[b])));
            for j in order {
                let axis = axes[j];
                rects[idx].levels[axis] += 1;
                let levels = rects[idx].levels.clone();
                for s in 0..2 {
                    rects.push(Rect::new(pts[2 * j + s].clone(), levels.clone(), vals[2 * j + s]));
                    let new = rects.len() - 1;
                    if rects[new].f.is_finite() && best.is_none_or(|b| rects[new].f < rects[b].f) {
                        best = Some(new);
                    }
                }
            }
            rects[idx].size = half_diagonal(&rects[idx].levels);
        }
        best_trace.push(best.map_or(f64::INFINITY, |b| rects[b].f));
    }

    let b = best.ok_or(Error::NoFiniteValue)?;
    Ok(DirectResult {
        x_min: bbox.denormalize(&rects[b].center),
        f_min: rects[b].f,
        evals_used: evals,
        best_trace,
    })
}

/// Indices of potentially optimal rectangles, largest first.
fn potentially_optimal(rects: &[Rect], f_min: Option<f64>, eps: f64) -> Vec<usize> {
    // Best rectangle of each size: lowest value, then earliest insertion.
    let mut groups: Vec<(f64, usize)> = Vec::new();
    for (i, r) in rects.iter().enumerate() {
        match groups.iter_mut().find(|(s, _)| *s == r.size) {
            Some(g) => {
                if r.score() < rects[g.1].score() {
                    g.1 = i;
                }
            }
            None => groups.push((r.size, i)),
        }
    }
    groups.sort_by(|a, b| b.0.total_cmp(&a.0));

    let threshold = f_min.map(|m| m - eps * m.abs());
    let mut chosen = Vec::new();
    for (j, &(dj, ij)) in groups.iter().enumerate() {
        let fj = rects[ij].score();
        // Larger rectangles come first in `groups`.
        let k_high = groups[..j]
            .iter()
            .map(|&(di, ii)| (rects[ii].score() - fj) / (di - dj))
            .fold(f64::INFINITY, f64::min);
        let k_low = groups[j + 1..]
            .iter()
            .map(|&(di, ii)| (fj - rects[ii].score()) / (dj - di))
            .fold(f64::NEG_INFINITY, f64::max);
        if !(k_high > 0.0) || k_low > k_high {
            continue;
        }
        let sufficient = match threshold {
            Some(t) if k_high.is_finite() => fj - k_high * dj <= t,
            _ => true,
        };
        if sufficient {
            chosen.push(ij);
        }
    }
    chosen
}
