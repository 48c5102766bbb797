//! First-order probability-flow ODE solvers with classifier-free guidance.
//!
//! The DDIM update integrates the exact solution of the diffusion ODE under a
//! locally constant ε-prediction:
//!
//! ```text
//! x_t = (α_t/α_s)·x_s − α_t·ε̂·(σ_s/α_s − σ_t/α_t)
//! ```
//!
//! so a predictor whose output is constant along a trajectory is integrated
//! exactly by any grid. The Euler step is the plain explicit discretization
//! of `dx = [f(t)·x + g(t)²/(2σ_t)·ε̂] dt` and serves as a convergence baseline.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Condition, DenoiserModel};
use crate::error::{arg, Error, Result};
use crate::schedule::{NoiseSchedule, T_MIN_CLIP};

/// Rows per work unit when sampling in parallel. Fixed so the batch a row is
/// evaluated in never depends on the thread count.
pub const SAMPLE_CHUNK: usize = 256;

/// Anything that predicts ε for a batch of states sharing nothing but shape.
pub trait NoisePredictor: Sync {
    fn data_dim(&self) -> usize;

    fn predict_batch(
        &self,
        x: ArrayView2<f64>,
        t: &[f64],
        cond: &[Condition],
    ) -> Result<Array2<f64>>;
}

impl NoisePredictor for DenoiserModel {
    fn data_dim(&self) -> usize {
        DenoiserModel::data_dim(self)
    }

    fn predict_batch(
        &self,
        x: ArrayView2<f64>,
        t: &[f64],
        cond: &[Condition],
    ) -> Result<Array2<f64>> {
        DenoiserModel::predict_batch(self, x, t, cond)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridScheme {
    #[default]
    UniformT,
    UniformLambda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Ddim,
    Euler,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Ddim => "ddim",
            Solver::Euler => "euler",
        }
    }
}

/// Strictly decreasing solver times from 1 to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

pub fn make_grid(schedule: &NoiseSchedule, steps: usize, scheme: GridScheme) -> Result<TimeGrid> {
    if steps == 0 {
        return arg("time grid needs at least one step");
    }
    let n = steps as f64;
    let mut times = match scheme {
        GridScheme::UniformT => (0..=steps).map(|i| (steps - i) as f64 / n).collect(),
        GridScheme::UniformLambda => {
            let (lam_end, lam_start) = schedule.lambda_range();
            (0..=steps)
                .map(|i| {
                    let lam = lam_end + (lam_start - lam_end) * i as f64 / n;
                    schedule.t_of_lambda(lam.min(lam_start))
                })
                .collect::<Result<Vec<f64>>>()?
        }
    };
    times[0] = 1.0;
    times[steps] = 0.0;
    if times.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Numerical(format!(
            "{steps}-step grid is not strictly decreasing"
        )));
    }
    Ok(TimeGrid { times })
}

/// Coefficients `(a, b)` with `x_t = a·x_s + b·ε̂`.
fn ddim_coeffs(schedule: &NoiseSchedule, s: f64, t: f64) -> Result<(f64, f64)> {
    if t >= s {
        return arg(format!("solver step must go backwards in time, got {s} -> {t}"));
    }
    let (alpha_s, sigma_s) = schedule.alpha_sigma(s)?;
    let (alpha_t, sigma_t) = schedule.alpha_sigma(t)?;
    let a = alpha_t / alpha_s;
    let b = -alpha_t * (sigma_s / alpha_s - sigma_t / alpha_t);
    Ok((a, b))
}

/// Coefficients `(a, b)` of the explicit Euler step, `x_t = a·x_s + b·ε̂`.
fn euler_coeffs(schedule: &NoiseSchedule, s: f64, t: f64) -> Result<(f64, f64)> {
    if t > s {
        return arg(format!("solver step must go backwards in time, got {s} -> {t}"));
    }
    schedule.alpha_sigma(t)?;
    if t == s {
        return Ok((1.0, 0.0));
    }
    if s < T_MIN_CLIP {
        return Err(Error::Domain(format!(
            "Euler step needs s >= {T_MIN_CLIP} for a positive sigma, got {s}"
        )));
    }
    let (f, g) = schedule.drift_diffusion(s)?;
    let (_, sigma_s) = schedule.alpha_sigma(s)?;
    let dt = t - s;
    Ok((1.0 + f * dt, g * g / (2.0 * sigma_s) * dt))
}

fn apply_step(a: f64, b: f64, x: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if x.len() != eps.len() {
        return arg("state and eps lengths differ");
    }
    Ok(x.iter().zip(eps).map(|(&xi, &ei)| a * xi + b * ei).collect())
}

/// First-order exact update from `s` to `t < s` with a supplied ε̂.
pub fn ddim_step(
    schedule: &NoiseSchedule,
    x_s: &[f64],
    s: f64,
    t: f64,
    eps_hat: &[f64],
) -> Result<Vec<f64>> {
    let (a, b) = ddim_coeffs(schedule, s, t)?;
    apply_step(a, b, x_s, eps_hat)
}

/// Explicit Euler update of the diffusion ODE from `s` to `t ≤ s`.
pub fn euler_step(
    schedule: &NoiseSchedule,
    x_s: &[f64],
    s: f64,
    t: f64,
    eps_hat: &[f64],
) -> Result<Vec<f64>> {
    let (a, b) = euler_coeffs(schedule, s, t)?;
    apply_step(a, b, x_s, eps_hat)
}

fn step_coeffs(solver: Solver, schedule: &NoiseSchedule, s: f64, t: f64) -> Result<(f64, f64)> {
    match solver {
        Solver::Ddim => ddim_coeffs(schedule, s, t),
        Solver::Euler => euler_coeffs(schedule, s, t),
    }
}

fn require_label(c: Condition) -> Result<()> {
    if c.is_null() {
        arg("guidance needs a real condition, not the null label")
    } else {
        Ok(())
    }
}

/// Guided prediction `(1−w)·ε(x,t,∅) + w·ε(x,t,c)` for every row of `x`.
pub fn guided_eps_batch<P: NoisePredictor + ?Sized>(
    model: &P,
    x: ArrayView2<f64>,
    t: f64,
    cond: &[Condition],
    w: f64,
) -> Result<Array2<f64>> {
    let n = x.nrows();
    if cond.len() != n {
        return arg("one condition per row is required");
    }
    for &c in cond {
        require_label(c)?;
    }
    let stacked = ndarray::concatenate(Axis(0), &[x, x]).expect("same width");
    let conds: Vec<Condition> = std::iter::repeat_n(Condition::Null, n)
        .chain(cond.iter().copied())
        .collect();
    let ts = vec![t; 2 * n];
    let out = model.predict_batch(stacked.view(), &ts, &conds)?;
    let (uncond, cond_out) = out.view().split_at(Axis(0), n);
    let mut guided = Array2::zeros((n, x.ncols()));
    Zip::from(&mut guided)
        .and(&uncond)
        .and(&cond_out)
        .for_each(|g, &u, &c| *g = (1.0 - w) * u + w * c);
    Ok(guided)
}

/// Guided prediction for a single state.
pub fn guided_eps<P: NoisePredictor + ?Sized>(
    model: &P,
    x: &[f64],
    t: f64,
    c: Condition,
    w: f64,
) -> Result<Vec<f64>> {
    let view = ArrayView2::from_shape((1, x.len()), x).expect("row");
    Ok(guided_eps_batch(model, view, t, &[c], w)?
        .into_raw_vec_and_offset()
        .0)
}

/// States visited by one solve, with the guided ε̂ used at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub eps_history: Vec<Vec<f64>>,
}

/// Solves a batch of noises from `t = 1` to `t = 0`, one row per sample.
pub fn sample_batch<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    grid: &TimeGrid,
    cond: &[Condition],
    w: f64,
    noise: ArrayView2<f64>,
    solver: Solver,
    record: bool,
) -> Result<(Array2<f64>, Option<Vec<Trajectory>>)> {
    if noise.ncols() != model.data_dim() {
        return arg(format!(
            "noise dimension {} does not match model dimension {}",
            noise.ncols(),
            model.data_dim()
        ));
    }
    let n = noise.nrows();
    let mut x = noise.to_owned();
    let mut trajs = record.then(|| {
        (0..n)
            .map(|i| Trajectory {
                times: grid.times.clone(),
                states: vec![x.row(i).to_vec()],
                eps_history: Vec::with_capacity(grid.steps()),
            })
            .collect::<Vec<_>>()
    });
    for pair in grid.times.windows(2) {
        let (s, t) = (pair[0], pair[1]);
        let eps = guided_eps_batch(model, x.view(), s, cond, w)?;
        let (a, b) = step_coeffs(solver, schedule, s, t)?;
        Zip::from(&mut x).and(&eps).for_each(|xi, &ei| *xi = a * *xi + b * ei);
        if let Some(trajs) = trajs.as_mut() {
            for (i, tr) in trajs.iter_mut().enumerate() {
                tr.eps_history.push(eps.row(i).to_vec());
                tr.states.push(x.row(i).to_vec());
            }
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        log::warn!("sampler produced non-finite states");
    }
    Ok((x, trajs))
}

/// Single-sample solve; deterministic given `noise`.
#[allow(clippy::too_many_arguments)]
pub fn sample<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    grid: &TimeGrid,
    c: Condition,
    w: f64,
    noise: &[f64],
    solver: Solver,
    record: bool,
) -> Result<(Vec<f64>, Option<Trajectory>)> {
    let view = ArrayView2::from_shape((1, noise.len()), noise).expect("row");
    let (x, trajs) = sample_batch(model, schedule, grid, &[c], w, view, solver, record)?;
    Ok((
        x.into_raw_vec_and_offset().0,
        trajs.map(|mut v| v.remove(0)),
    ))
}

/// `n × d` standard normal draws from a ChaCha8 stream seeded with `seed`,
/// row by row.
pub fn standard_noise(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
}

/// [`sample_batch`] over fixed-size chunks in parallel. Row results are
/// identical to a sequential run regardless of the thread pool size.
pub fn sample_many<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    grid: &TimeGrid,
    cond: &[Condition],
    w: f64,
    noise: ArrayView2<f64>,
    solver: Solver,
) -> Result<Array2<f64>> {
    if cond.len() != noise.nrows() {
        return arg("one condition per noise row is required");
    }
    let starts: Vec<usize> = (0..noise.nrows()).step_by(SAMPLE_CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&lo| {
            let hi = (lo + SAMPLE_CHUNK).min(noise.nrows());
            let rows = noise.slice(ndarray::s![lo..hi, ..]);
            sample_batch(model, schedule, grid, &cond[lo..hi], w, rows, solver, false)
                .map(|(x, _)| x)
        })
        .collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        return Ok(Array2::zeros((0, noise.ncols())));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(ndarray::concatenate(Axis(0), &views).expect("same width"))
}
