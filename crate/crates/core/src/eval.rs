//! Sweep cells: every metric for one `(model, steps, guidance)` combination.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{make_dataset, DatasetKind};
use crate::denoiser::Condition;
use crate::error::{arg, Result};
use crate::metrics::{
    condition_fidelity, endpoint_gap, frechet_gaussian, prediction_drift, EvalReport,
};
use crate::sampler::{make_grid, sample_batch, sample_many, GridScheme, NoisePredictor, Solver};
use crate::schedule::NoiseSchedule;

/// Sweep definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub steps: Vec<usize>,
    pub guidance: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    /// Trajectories averaged for the drift column.
    pub drift_trajectories: usize,
    /// Noises averaged for the endpoint-gap column.
    pub gap_noises: usize,
    /// Many-step solve the endpoint gap is measured against.
    pub gap_reference_steps: usize,
    pub grid: GridScheme,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            steps: vec![3, 5, 10, 25, 100, 200],
            guidance: vec![1.0, 1.5, 2.5, 5.0, 7.5],
            n_samples: 4096,
            seed: 1234,
            drift_trajectories: 256,
            gap_noises: 512,
            gap_reference_steps: 100,
            grid: GridScheme::UniformT,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() || self.guidance.is_empty() {
            return arg("evaluation needs nonempty step and guidance lists");
        }
        if self.steps.contains(&0) || self.gap_reference_steps == 0 {
            return arg("step counts must be positive");
        }
        if self.guidance.iter().any(|w| !w.is_finite()) {
            return arg("guidance scales must be finite");
        }
        if self.n_samples < 3 {
            return arg("evaluation needs at least 3 samples");
        }
        if self.drift_trajectories == 0 || self.gap_noises == 0 {
            return arg("drift_trajectories and gap_noises must be positive");
        }
        Ok(())
    }
}

/// Fixed reference samples, noises and intended labels shared by all cells.
#[derive(Debug, Clone)]
pub struct EvalSetup {
    pub kind: DatasetKind,
    pub reference: Array2<f64>,
    pub noise: Array2<f64>,
    pub labels: Vec<u32>,
    pub config: EvalConfig,
}

impl EvalSetup {
    pub fn new(kind: DatasetKind, config: EvalConfig) -> Result<Self> {
        config.validate()?;
        if kind != DatasetKind::Gauss8 {
            return arg(format!(
                "the evaluation harness scores condition fidelity on gauss8 only, not {kind}"
            ));
        }
        let n = config.n_samples;
        let reference = make_dataset(kind, n, config.seed)?.points;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        // Separate stream from the one that drew the reference set.
        rng.set_stream(1);
        let noise = Array2::from_shape_simple_fn((n, reference.ncols()), || rng.sample(StandardNormal));
        let k = kind.num_conditions() as u32;
        let labels = (0..n as u32).map(|i| i % k).collect();
        Ok(Self {
            kind,
            reference,
            noise,
            labels,
            config,
        })
    }

    fn conditions(&self, n: usize) -> Vec<Condition> {
        self.labels[..n].iter().map(|&c| Condition::Label(c)).collect()
    }

    /// Generated samples for one cell, one per noise row.
    pub fn generate<P: NoisePredictor + ?Sized>(
        &self,
        model: &P,
        schedule: &NoiseSchedule,
        steps: usize,
        w: f64,
    ) -> Result<Array2<f64>> {
        let grid = make_grid(schedule, steps, self.config.grid)?;
        let conds = self.conditions(self.noise.nrows());
        sample_many(model, schedule, &grid, &conds, w, self.noise.view(), Solver::Ddim)
    }

    /// Mean prediction drift over the first `drift_trajectories` noises.
    /// A single-step solve has no spread and reports 0.
    pub fn mean_drift<P: NoisePredictor + ?Sized>(
        &self,
        model: &P,
        schedule: &NoiseSchedule,
        steps: usize,
        w: f64,
    ) -> Result<f64> {
        if steps < 2 {
            return Ok(0.0);
        }
        let n = self.config.drift_trajectories.min(self.noise.nrows());
        let grid = make_grid(schedule, steps, self.config.grid)?;
        let conds = self.conditions(n);
        let (_, trajs) = sample_batch(
            model,
            schedule,
            &grid,
            &conds,
            w,
            self.noise.slice(s![..n, ..]),
            Solver::Ddim,
            true,
        )?;
        let trajs = trajs.expect("recorded");
        let mut total = 0.0;
        for tr in &trajs {
            total += prediction_drift(tr)?;
        }
        Ok(total / n as f64)
    }

    /// Mean endpoint gap between `steps` and the reference step count.
    pub fn gap<P: NoisePredictor + ?Sized>(
        &self,
        model: &P,
        schedule: &NoiseSchedule,
        steps: usize,
        w: f64,
    ) -> Result<f64> {
        let n = self.config.gap_noises.min(self.noise.nrows());
        let r = self.config.gap_reference_steps;
        endpoint_gap(
            model,
            schedule,
            &self.conditions(n),
            w,
            self.noise.slice(s![..n, ..]),
            steps.min(r),
            steps.max(r),
            self.config.grid,
        )
    }

    pub fn evaluate_cell<P: NoisePredictor + ?Sized>(
        &self,
        model: &P,
        schedule: &NoiseSchedule,
        model_id: &str,
        steps: usize,
        w: f64,
    ) -> Result<EvalReport> {
        let x = self.generate(model, schedule, steps, w)?;
        let report = EvalReport {
            model_id: model_id.to_string(),
            steps,
            guidance_w: w,
            frechet_gauss: frechet_gaussian(x.view(), self.reference.view())?,
            cond_fidelity: condition_fidelity(x.view(), &self.labels, self.kind)?,
            pred_drift: self.mean_drift(model, schedule, steps, w)?,
            endpoint_gap: self.gap(model, schedule, steps, w)?,
            n_samples: self.config.n_samples,
            seed: self.config.seed,
        };
        report.validate()?;
        Ok(report)
    }
}
