//! Evaluation metrics.
//!
//! * [`frechet_gaussian`]: Fréchet (2-Wasserstein) distance between Gaussian
//!   fits of two 2-D sample sets, in raw data space.
//! * [`condition_fidelity`]: share of samples landing on their intended
//!   `gauss8` mode.
//! * [`prediction_drift`]: spread of the ε-predictions along one trajectory;
//!   zero when the predictor is constant along it.
//! * [`endpoint_gap`]: mean distance between few-step and many-step solves of
//!   the same noise.

use std::fmt::Write as _;

use ndarray::{Array1, ArrayView2, Axis};

use crate::data::{mode_assignment, DatasetKind, DATA_DIM};
use crate::denoiser::Condition;
use crate::error::{arg, Error, Result};
use crate::sampler::{make_grid, sample_many, GridScheme, NoisePredictor, Solver, Trajectory};
use crate::schedule::NoiseSchedule;

const COV_JITTER: f64 = 1e-10;

/// Mean and unbiased covariance `[c00, c01, c11]` of a 2-D sample set.
fn gaussian_fit(x: ArrayView2<f64>) -> Result<(Array1<f64>, [f64; 3])> {
    if x.ncols() != DATA_DIM {
        return arg(format!("Fréchet distance expects {DATA_DIM}-D samples"));
    }
    if x.nrows() < DATA_DIM + 1 {
        return arg(format!(
            "need at least {} samples for a covariance fit, got {}",
            DATA_DIM + 1,
            x.nrows()
        ));
    }
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let (mut c00, mut c01, mut c11) = (0.0, 0.0, 0.0);
    for row in x.rows() {
        let (a, b) = (row[0] - mean[0], row[1] - mean[1]);
        c00 += a * a;
        c01 += a * b;
        c11 += b * b;
    }
    let k = 1.0 / (n - 1.0);
    Ok((mean, [c00 * k + COV_JITTER, c01 * k, c11 * k + COV_JITTER]))
}

/// `sqrt(‖m₁−m₂‖² + tr(C₁ + C₂ − 2(C₁^{½} C₂ C₁^{½})^{½}))`.
///
/// For 2×2 SPD matrices `tr √M = sqrt(tr M + 2·sqrt(det M))`, and the inner
/// product matrix has `tr = tr(C₁C₂)`, `det = det C₁·det C₂`, so no explicit
/// matrix square root is formed. The expression is symmetric in its
/// arguments term by term.
pub fn frechet_gaussian(gen: ArrayView2<f64>, reference: ArrayView2<f64>) -> Result<f64> {
    let (m1, a) = gaussian_fit(gen)?;
    let (m2, b) = gaussian_fit(reference)?;
    let mean_term = (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2);
    let tr_a = a[0] + a[2];
    let tr_b = b[0] + b[2];
    let det_a = a[0] * a[2] - a[1] * a[1];
    let det_b = b[0] * b[2] - b[1] * b[1];
    let tr_ab = a[0] * b[0] + 2.0 * a[1] * b[1] + a[2] * b[2];
    let tr_sqrt = (tr_ab + 2.0 * (det_a * det_b).max(0.0).sqrt()).max(0.0).sqrt();
    let mut cov_term = tr_a + tr_b - 2.0 * tr_sqrt;
    // Identical covariances cancel only up to rounding.
    if cov_term.abs() <= 1e-12 * (tr_a + tr_b) {
        cov_term = 0.0;
    }
    let d2 = mean_term + cov_term.max(0.0);
    if !d2.is_finite() {
        return Err(Error::Numerical("non-finite Fréchet distance".into()));
    }
    Ok(d2.sqrt())
}

/// Fraction of samples whose nearest `gauss8` mode is the intended label.
pub fn condition_fidelity(points: ArrayView2<f64>, intended: &[u32], kind: DatasetKind) -> Result<f64> {
    if kind != DatasetKind::Gauss8 {
        return arg(format!("condition fidelity is only defined for gauss8, not {kind}"));
    }
    if points.nrows() != intended.len() || intended.is_empty() {
        return arg("need one intended label per sample and at least one sample");
    }
    let mut hits = 0usize;
    for (row, &c) in points.rows().into_iter().zip(intended) {
        if mode_assignment(row, kind)? == c {
            hits += 1;
        }
    }
    Ok(hits as f64 / intended.len() as f64)
}

/// Mean squared deviation of the per-step ε̂ from their average.
pub fn prediction_drift(traj: &Trajectory) -> Result<f64> {
    let h = &traj.eps_history;
    if h.len() < 2 {
        return arg("prediction drift needs at least two eps entries");
    }
    let d = h[0].len();
    let n = h.len() as f64;
    let mut mean = vec![0.0; d];
    for e in h {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let total: f64 = h
        .iter()
        .map(|e| e.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
        .sum();
    Ok(total / n)
}

/// Mean `‖x₀(few) − x₀(many)‖` over a noise set, DDIM on the given grid scheme.
#[allow(clippy::too_many_arguments)]
pub fn endpoint_gap<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    cond: &[Condition],
    w: f64,
    noise: ArrayView2<f64>,
    few: usize,
    many: usize,
    scheme: GridScheme,
) -> Result<f64> {
    if few > many {
        return arg(format!("few ({few}) must not exceed many ({many})"));
    }
    if noise.nrows() == 0 {
        return arg("endpoint gap needs a nonempty noise set");
    }
    if few == many {
        return Ok(0.0);
    }
    let solve = |steps| {
        let grid = make_grid(schedule, steps, scheme)?;
        sample_many(model, schedule, &grid, cond, w, noise, Solver::Ddim)
    };
    let (a, b) = (solve(few)?, solve(many)?);
    let total: f64 = (&a - &b)
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .sum();
    Ok(total / noise.nrows() as f64)
}

/// One `(model, steps, guidance)` cell of an evaluation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    pub steps: usize,
    pub guidance_w: f64,
    pub frechet_gauss: f64,
    pub cond_fidelity: f64,
    pub pred_drift: f64,
    pub endpoint_gap: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "model_id,steps,guidance_w,frechet_gauss,cond_fidelity,pred_drift,endpoint_gap,n_samples,seed";

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.guidance_w,
            self.frechet_gauss,
            self.cond_fidelity,
            self.pred_drift,
            self.endpoint_gap,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite metric in report for {} at {} steps, w={}",
                self.model_id, self.steps, self.guidance_w
            )));
        }
        if self.n_samples == 0 {
            return arg("report must cover at least one sample");
        }
        Ok(())
    }

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            self.model_id,
            self.steps,
            self.guidance_w,
            self.frechet_gauss,
            self.cond_fidelity,
            self.pred_drift,
            self.endpoint_gap,
            self.n_samples,
            self.seed
        )
        .expect("write to string");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gauss8_means;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_draw(seed: u64, n: usize, mean: [f64; 2], chol: [[f64; 2]; 2]) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Array2::zeros((n, 2));
        for mut row in out.rows_mut() {
            let z0: f64 = StandardNormal.sample(&mut rng);
            let z1: f64 = StandardNormal.sample(&mut rng);
            row[0] = mean[0] + chol[0][0] * z0;
            row[1] = mean[1] + chol[1][0] * z0 + chol[1][1] * z1;
        }
        out
    }

    /// Symmetric 2×2 eigendecomposition via a Jacobi rotation.
    fn eig_sym(m: [[f64; 2]; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let (a, b, d) = (m[0][0], m[0][1], m[1][1]);
        let theta = 0.5 * (2.0 * b).atan2(a - d);
        let (c, s) = (theta.cos(), theta.sin());
        let l0 = c * c * a + 2.0 * c * s * b + s * s * d;
        let l1 = s * s * a - 2.0 * c * s * b + c * c * d;
        ([l0, l1], [[c, -s], [s, c]])
    }

    fn matmul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
        std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j]))
    }

    fn sqrtm_eig(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
        let (l, v) = eig_sym(m);
        let d = [[l[0].sqrt(), 0.0], [0.0, l[1].sqrt()]];
        let vt = [[v[0][0], v[1][0]], [v[0][1], v[1][1]]];
        matmul(matmul(v, d), vt)
    }

    /// Fréchet distance through explicit eigendecomposition square roots.
    fn frechet_oracle(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let fit = |s: &Array2<f64>| {
            let m = s.mean_axis(Axis(0)).unwrap();
            let c = &(s - &m);
            let cov = c.t().dot(c) / (s.nrows() as f64 - 1.0);
            (
                m,
                [
                    [cov[[0, 0]] + COV_JITTER, cov[[0, 1]]],
                    [cov[[1, 0]], cov[[1, 1]] + COV_JITTER],
                ],
            )
        };
        let (m1, c1) = fit(x);
        let (m2, c2) = fit(y);
        let s1 = sqrtm_eig(c1);
        let inner = sqrtm_eig(matmul(matmul(s1, c2), s1));
        let tr = c1[0][0] + c1[1][1] + c2[0][0] + c2[1][1] - 2.0 * (inner[0][0] + inner[1][1]);
        ((&m1 - &m2).mapv(|v| v * v).sum() + tr).sqrt()
    }

    #[test]
    fn frechet_identities() {
        let a = gaussian_draw(1, 500, [0.3, -0.2], [[1.0, 0.0], [0.4, 0.7]]);
        assert_eq!(frechet_gaussian(a.view(), a.view()).unwrap(), 0.0);
        let d = [0.6, -0.8];
        let shifted = &a + &ndarray::aview1(&d);
        let v = frechet_gaussian(a.view(), shifted.view()).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn frechet_matches_eigendecomposition_oracle() {
        let cases = [
            ([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], [0.5, 0.1], [[0.5, 0.0], [0.3, 1.2]]),
            ([1.0, -1.0], [[0.2, 0.0], [-0.1, 0.05]], [0.9, -1.1], [[0.25, 0.0], [0.1, 0.3]]),
            ([0.0, 2.0], [[2.0, 0.0], [1.9, 0.1]], [0.1, 2.0], [[1.0, 0.0], [-0.5, 0.5]]),
        ];
        for (k, (ma, ca, mb, cb)) in cases.into_iter().enumerate() {
            let x = gaussian_draw(10 + k as u64, 4000, ma, ca);
            let y = gaussian_draw(20 + k as u64, 3000, mb, cb);
            let got = frechet_gaussian(x.view(), y.view()).unwrap();
            let want = frechet_oracle(&x, &y);
            assert!((got - want).abs() < 1e-8, "case {k}: {got} vs {want}");
            let swapped = frechet_gaussian(y.view(), x.view()).unwrap();
            assert!((got - swapped).abs() < 1e-10);
        }
    }

    #[test]
    fn frechet_handles_degenerate_and_small_sets() {
        let line = Array2::from_shape_fn((10, 2), |(i, _)| i as f64);
        let v = frechet_gaussian(line.view(), line.view()).unwrap();
        assert_eq!(v, 0.0);
        let point = Array2::from_elem((5, 2), 1.0);
        assert!(frechet_gaussian(point.view(), line.view()).unwrap().is_finite());
        let tiny = Array2::zeros((2, 2));
        assert!(matches!(
            frechet_gaussian(tiny.view(), line.view()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn fidelity_extremes() {
        let means = gauss8_means();
        let at_modes = Array2::from_shape_fn((8, 2), |(c, j)| means[c][j]);
        let labels: Vec<u32> = (0..8).collect();
        let g = DatasetKind::Gauss8;
        assert_eq!(condition_fidelity(at_modes.view(), &labels, g).unwrap(), 1.0);
        let opposite: Vec<u32> = (0..8).map(|c| (c + 4) % 8).collect();
        assert_eq!(condition_fidelity(at_modes.view(), &opposite, g).unwrap(), 0.0);
        assert!(condition_fidelity(at_modes.view(), &labels, DatasetKind::Spiral2).is_err());
    }

    #[test]
    fn fidelity_of_generator_samples() {
        let ds = crate::data::make_dataset(DatasetKind::Gauss8, 10_000, 4).unwrap();
        let f = condition_fidelity(ds.points.view(), &ds.labels, ds.kind).unwrap();
        assert!(f > 0.999, "{f}");
    }

    fn traj(eps: Vec<Vec<f64>>) -> Trajectory {
        Trajectory {
            times: vec![],
            states: vec![],
            eps_history: eps,
        }
    }

    #[test]
    fn drift_arithmetic() {
        assert_eq!(prediction_drift(&traj(vec![vec![0.0, 0.0], vec![2.0, 0.0]])).unwrap(), 1.0);
        assert_eq!(prediction_drift(&traj(vec![vec![0.5, -1.0]; 6])).unwrap(), 0.0);
        assert!(prediction_drift(&traj(vec![vec![0.0, 0.0]])).is_err());
    }

    proptest::proptest! {
        #[test]
        fn drift_is_order_invariant(v in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..12),
                                    rot in 0usize..12) {
            let eps: Vec<Vec<f64>> = v.iter().map(|&(a, b)| vec![a, b]).collect();
            let mut shuffled = eps.clone();
            shuffled.rotate_left(rot % eps.len());
            shuffled.reverse();
            let a = prediction_drift(&traj(eps)).unwrap();
            let b = prediction_drift(&traj(shuffled)).unwrap();
            proptest::prop_assert!(a >= 0.0);
            proptest::prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        }

        #[test]
        fn frechet_is_symmetric(seed_a in 0u64..1000, seed_b in 0u64..1000,
                                shift in -2.0f64..2.0, scale in 0.1f64..3.0) {
            let a = gaussian_draw(seed_a, 64, [0.0, 0.0], [[1.0, 0.0], [0.2, 0.8]]);
            let b = gaussian_draw(seed_b, 80, [shift, 0.5], [[scale, 0.0], [0.0, 1.0]]);
            let ab = frechet_gaussian(a.view(), b.view()).unwrap();
            let ba = frechet_gaussian(b.view(), a.view()).unwrap();
            proptest::prop_assert!(ab >= 0.0);
            proptest::prop_assert!((ab - ba).abs() < 1e-10);
        }
    }

    #[test]
    fn report_row_format() {
        let r = EvalReport {
            model_id: "student".into(),
            steps: 3,
            guidance_w: 1.5,
            frechet_gauss: 0.25,
            cond_fidelity: 1.0,
            pred_drift: 0.0,
            endpoint_gap: 0.125,
            n_samples: 4096,
            seed: 7,
        };
        r.validate().unwrap();
        assert_eq!(r.csv_row(), "student,3,1.5,0.25,1,0,0.125,4096,7");
        assert_eq!(EvalReport::CSV_HEADER.split(',').count(), 9);
        let bad = EvalReport {
            pred_drift: f64::NAN,
            ..r
        };
        assert!(bad.validate().is_err());
    }
}
