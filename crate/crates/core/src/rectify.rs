//! Teacher training, deterministic pair generation and student retraining.
//!
//! Both training loops minimize the same ε-regression loss on
//! `x_t = α_t·x₀ + σ_t·ε`. They differ only in where `(x₀, ε)` comes from:
//! the teacher pairs each data point with fresh noise every time it is drawn,
//! while the student always sees a record's own noise, the one the teacher
//! solved from to produce that record's `x₀`.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::SyntheticDataset;
use crate::denoiser::{Batch, Condition, DenoiserConfig, DenoiserModel};
use crate::error::{arg, Error, Result};
use crate::io::{put_string, write_atomic, Reader};
use crate::optim::{sgd_step, AdamState, AdamW};
use crate::sampler::{make_grid, sample_many, GridScheme, Solver};
use crate::schedule::{NoiseSchedule, T_MIN_CLIP};

const PAIR_MAGIC: &[u8; 8] = b"RDIFPAIR";
const PAIR_VERSION: u8 = 1;
/// Largest tolerated share of non-finite teacher solves.
const MAX_REJECT_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of replacing a row's condition with the null label.
    pub cond_dropout: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
}

/// Learning rate as a function of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` down to zero at the last iteration.
    Cosine,
}

impl LrSchedule {
    pub fn at(self, lr: f64, it: usize, iterations: usize) -> f64 {
        match self {
            LrSchedule::Constant => lr,
            LrSchedule::Cosine => {
                let frac = it as f64 / iterations.max(1) as f64;
                0.5 * lr * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 128,
            lr: 1e-3,
            cond_dropout: 0.1,
            weight_decay: 0.0,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Student runs may use zero iterations; the teacher needs at least one.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return arg("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return arg(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.cond_dropout) {
            return arg(format!("cond_dropout must lie in [0, 1), got {}", self.cond_dropout));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return arg("weight_decay must be a finite nonnegative number");
        }
        Ok(())
    }
}

/// Trained model and its per-iteration batch losses.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DenoiserModel,
    pub losses: Vec<f64>,
}

/// Called once per iteration with the batch about to be fitted and, for
/// every row, the index of the dataset sample or pair record it came from.
pub type BatchObserver<'a> = dyn FnMut(usize, &Batch, &[usize]) + 'a;

/// Where a training row's clean sample and noise come from.
trait PairSource {
    fn len(&self) -> usize;
    fn data_dim(&self) -> usize;
    fn label(&self, i: usize) -> u32;
    fn x0(&self, i: usize) -> &[f64];
    /// Coupled noise for record `i`, or `None` to draw fresh noise.
    fn noise(&self, i: usize) -> Option<&[f64]>;
}

struct RandomCoupling<'a>(&'a SyntheticDataset);

impl PairSource for RandomCoupling<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn data_dim(&self) -> usize {
        self.0.points.ncols()
    }
    fn label(&self, i: usize) -> u32 {
        self.0.labels[i]
    }
    fn x0(&self, i: usize) -> &[f64] {
        let row = self.0.points.row(i);
        row.to_slice().expect("standard layout")
    }
    fn noise(&self, _i: usize) -> Option<&[f64]> {
        None
    }
}

impl PairSource for PairDataset {
    fn len(&self) -> usize {
        self.records.len()
    }
    fn data_dim(&self) -> usize {
        self.data_dim
    }
    fn label(&self, i: usize) -> u32 {
        self.records[i].condition
    }
    fn x0(&self, i: usize) -> &[f64] {
        &self.records[i].x0
    }
    fn noise(&self, i: usize) -> Option<&[f64]> {
        Some(&self.records[i].eps)
    }
}

fn fit(
    mut model: DenoiserModel,
    source: &dyn PairSource,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    mut observer: Option<&mut BatchObserver<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source.len() == 0 {
        return arg("training set is empty");
    }
    let d = source.data_dim();
    if d != model.data_dim() {
        return arg(format!(
            "training data is {d}-D but the model expects {}-D",
            model.data_dim()
        ));
    }
    if let Some(bad) = (0..source.len()).find(|&i| source.label(i) as usize >= model.num_conditions()) {
        return arg(format!(
            "record {bad} has condition {} but the model knows {}",
            source.label(bad),
            model.num_conditions()
        ));
    }
    let opt = AdamW {
        weight_decay: cfg.weight_decay,
        ..AdamW::default()
    };
    let mut state = AdamState::new(model.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.iterations);
    let b = cfg.batch_size;
    let mut sources = vec![0usize; b];
    let mut eps = vec![0.0; d];
    let mut batch = Batch {
        x_t: Array2::zeros((b, d)),
        t: vec![0.0; b],
        cond: vec![Condition::Null; b],
        target: Array2::zeros((b, d)),
    };
    for it in 0..cfg.iterations {
        for row in 0..b {
            let i = rng.random_range(0..source.len());
            let t = rng.random_range(T_MIN_CLIP..=1.0);
            match source.noise(i) {
                Some(e) => eps.copy_from_slice(e),
                None => eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal)),
            }
            let drop = rng.random::<f64>() < cfg.cond_dropout;
            let (alpha, sigma) = schedule.alpha_sigma(t)?;
            let x0 = source.x0(i);
            for j in 0..d {
                batch.x_t[[row, j]] = alpha * x0[j] + sigma * eps[j];
                batch.target[[row, j]] = eps[j];
            }
            batch.t[row] = t;
            batch.cond[row] = if drop {
                Condition::Null
            } else {
                Condition::Label(source.label(i))
            };
            sources[row] = i;
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(it, &batch, &sources);
        }
        let bundle = model.loss_and_grad(&batch)?;
        if !bundle.loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite training loss at iteration {it}"
            )));
        }
        let lr = cfg.lr_schedule.at(cfg.lr, it, cfg.iterations);
        sgd_step(&mut model, &bundle, lr, &opt, &mut state)
            .map_err(|e| Error::Numerical(format!("iteration {it}: {e}")))?;
        losses.push(bundle.loss);
        let every = (cfg.iterations / 10).max(1);
        if (it + 1) % every == 0 {
            let recent = &losses[losses.len().saturating_sub(every)..];
            log::info!(
                "iteration {}/{}: mean loss {:.5}",
                it + 1,
                cfg.iterations,
                recent.iter().sum::<f64>() / recent.len() as f64
            );
        }
    }
    Ok(TrainOutcome { model, losses })
}

/// Standard diffusion training: fresh noise for every draw (random coupling).
pub fn train_teacher(
    arch: DenoiserConfig,
    data: &SyntheticDataset,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_teacher_observed(arch, data, schedule, cfg, None)
}

pub fn train_teacher_observed(
    arch: DenoiserConfig,
    data: &SyntheticDataset,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    observer: Option<&mut BatchObserver<'_>>,
) -> Result<TrainOutcome> {
    if cfg.iterations == 0 {
        return arg("teacher training needs at least one iteration");
    }
    if arch.num_conditions < data.num_conditions() {
        return arg(format!(
            "model has {} conditions, dataset needs {}",
            arch.num_conditions,
            data.num_conditions()
        ));
    }
    let model = DenoiserModel::init(arch, cfg.seed)?;
    fit(model, &RandomCoupling(data), schedule, cfg, observer)
}

/// Retrains a copy of `teacher` on the deterministic coupling in `pairs`.
pub fn rectify_student(
    teacher: &DenoiserModel,
    pairs: &PairDataset,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    rectify_student_observed(teacher, pairs, schedule, cfg, None)
}

pub fn rectify_student_observed(
    teacher: &DenoiserModel,
    pairs: &PairDataset,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    observer: Option<&mut BatchObserver<'_>>,
) -> Result<TrainOutcome> {
    if pairs.records.is_empty() {
        return arg("pair dataset is empty");
    }
    fit(teacher.clone(), pairs, schedule, cfg, observer)
}

/// How pair generation picks a condition for each record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionRule {
    /// Record `i` gets condition `i mod K`.
    #[default]
    RoundRobin,
    /// Uniform draw from the seeded stream before each record's noise.
    Uniform,
}

impl ConditionRule {
    pub fn name(self) -> &'static str {
        match self {
            ConditionRule::RoundRobin => "round-robin",
            ConditionRule::Uniform => "uniform",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "round-robin" => Ok(ConditionRule::RoundRobin),
            "uniform" => Ok(ConditionRule::Uniform),
            other => Err(Error::Format(format!("unknown condition rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub condition: u32,
    pub eps: Vec<f64>,
    pub x0: Vec<f64>,
}

/// Everything needed to regenerate a pair dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub teacher_hash: String,
    pub solver: Solver,
    pub steps: usize,
    pub guidance_w: f64,
    pub seed: u64,
    pub rule: ConditionRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub data_dim: usize,
    pub records: Vec<PairRecord>,
    pub provenance: Provenance,
}

/// Pair-generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairGenConfig {
    pub n_pairs: usize,
    pub solver_steps: usize,
    pub w: f64,
    pub seed: u64,
    pub conditions: ConditionRule,
}

impl Default for PairGenConfig {
    fn default() -> Self {
        Self {
            n_pairs: 20_000,
            solver_steps: 100,
            w: 1.5,
            seed: 1,
            conditions: ConditionRule::RoundRobin,
        }
    }
}

/// Solves the teacher's ODE from seeded noise and stores `(c, ε, x₀)`.
pub fn generate_pairs(
    teacher: &DenoiserModel,
    schedule: &NoiseSchedule,
    cfg: &PairGenConfig,
) -> Result<PairDataset> {
    if cfg.n_pairs == 0 {
        return arg("n_pairs must be positive");
    }
    let d = teacher.data_dim();
    let k = teacher.num_conditions() as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels = Vec::with_capacity(cfg.n_pairs);
    let mut noise = Array2::zeros((cfg.n_pairs, d));
    for (i, mut row) in noise.rows_mut().into_iter().enumerate() {
        labels.push(match cfg.conditions {
            ConditionRule::RoundRobin => i as u32 % k,
            ConditionRule::Uniform => rng.random_range(0..k),
        });
        row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    }
    let conds: Vec<Condition> = labels.iter().map(|&c| Condition::Label(c)).collect();
    let grid = make_grid(schedule, cfg.solver_steps, GridScheme::UniformT)?;
    let x0 = sample_many(teacher, schedule, &grid, &conds, cfg.w, noise.view(), Solver::Ddim)?;

    let mut records = Vec::with_capacity(cfg.n_pairs);
    let mut rejected = 0usize;
    for (i, (e, x)) in noise.rows().into_iter().zip(x0.rows()).enumerate() {
        if x.iter().all(|v| v.is_finite()) {
            records.push(PairRecord {
                condition: labels[i],
                eps: e.to_vec(),
                x0: x.to_vec(),
            });
        } else {
            rejected += 1;
            log::warn!("pair {i}: teacher solve produced a non-finite sample, rejected");
        }
    }
    if rejected as f64 > MAX_REJECT_FRACTION * cfg.n_pairs as f64 {
        return Err(Error::Numerical(format!(
            "{rejected} of {} teacher solves were non-finite",
            cfg.n_pairs
        )));
    }
    Ok(PairDataset {
        data_dim: d,
        records,
        provenance: Provenance {
            teacher_hash: teacher.checkpoint_hash(),
            solver: Solver::Ddim,
            steps: cfg.solver_steps,
            guidance_w: cfg.w,
            seed: cfg.seed,
            rule: cfg.conditions,
        },
    })
}

impl PairDataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.data_dim;
        let mut out = Vec::with_capacity(128 + self.records.len() * (4 + 16 * d));
        out.extend_from_slice(PAIR_MAGIC);
        out.push(PAIR_VERSION);
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        let p = &self.provenance;
        put_string(&mut out, &p.teacher_hash);
        put_string(&mut out, p.solver.name());
        put_string(&mut out, p.rule.name());
        out.extend_from_slice(&(p.steps as u32).to_le_bytes());
        out.extend_from_slice(&p.guidance_w.to_le_bytes());
        out.extend_from_slice(&p.seed.to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&r.condition.to_le_bytes());
            for v in r.eps.iter().chain(&r.x0) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != PAIR_MAGIC {
            return Err(Error::Format("not a pair file (bad magic)".into()));
        }
        let version = r.u8()?;
        if version != PAIR_VERSION {
            return Err(Error::Format(format!("unsupported pair file version {version}")));
        }
        let d = r.u32()? as usize;
        let n = r.u64()? as usize;
        let teacher_hash = r.string()?;
        let solver = match r.string()?.as_str() {
            "ddim" => Solver::Ddim,
            "euler" => Solver::Euler,
            other => return Err(Error::Format(format!("unknown solver {other:?}"))),
        };
        let rule = ConditionRule::parse(&r.string()?)?;
        let steps = r.u32()? as usize;
        let guidance_w = r.f64()?;
        let seed = r.u64()?;
        let record_len = 4 + 16 * d;
        if d == 0 || bytes.len().saturating_sub(r.position()) != n.saturating_mul(record_len) {
            return Err(Error::Format(format!(
                "record section does not hold {n} records of dimension {d}"
            )));
        }
        let mut records = Vec::with_capacity(n);
        for _ in 0..n {
            let condition = r.u32()?;
            let eps = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let x0 = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            records.push(PairRecord { condition, eps, x0 });
        }
        r.finish()?;
        Ok(PairDataset {
            data_dim: d,
            records,
            provenance: Provenance {
                teacher_hash,
                solver,
                steps,
                guidance_w,
                seed,
                rule,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Noise and samples as `(n, d)` arrays, in record order.
    pub fn arrays(&self) -> (Array2<f64>, Array2<f64>) {
        let n = self.records.len();
        let eps = Array2::from_shape_fn((n, self.data_dim), |(i, j)| self.records[i].eps[j]);
        let x0 = Array2::from_shape_fn((n, self.data_dim), |(i, j)| self.records[i].x0[j]);
        (eps, x0)
    }
}

/// Fraction of rows in `cond` that are the null label.
pub fn null_fraction(cond: &[Condition]) -> f64 {
    cond.iter().filter(|c| c.is_null()).count() as f64 / cond.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_dataset, DatasetKind};

    fn tiny_arch(k: usize) -> DenoiserConfig {
        DenoiserConfig {
            num_conditions: k,
            hidden_widths: vec![32, 32],
            ..DenoiserConfig::default()
        }
    }

    fn quick(iterations: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_size: 32,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { cond_dropout: 1.0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Argument(_))));
        }
        let ds = make_dataset(DatasetKind::Stdnormal, 10, 0).unwrap();
        let s = NoiseSchedule::default();
        assert!(train_teacher(tiny_arch(1), &ds, &s, &quick(0, 0)).is_err());
        let g8 = make_dataset(DatasetKind::Gauss8, 10, 0).unwrap();
        assert!(train_teacher(tiny_arch(2), &g8, &s, &quick(1, 0)).is_err());
    }

    #[test]
    fn cosine_schedule_decays_to_zero() {
        let c = LrSchedule::Cosine;
        assert_eq!(c.at(1e-3, 0, 100), 1e-3);
        assert!((c.at(1e-3, 50, 100) - 5e-4).abs() < 1e-15);
        assert!(c.at(1e-3, 100, 100).abs() < 1e-18);
        let lrs: Vec<f64> = (0..100).map(|i| c.at(1e-3, i, 100)).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(LrSchedule::Constant.at(1e-3, 99, 100), 1e-3);
    }

    #[test]
    fn dropout_rate_is_respected() {
        let ds = make_dataset(DatasetKind::Gauss8, 800, 2).unwrap();
        let s = NoiseSchedule::default();
        let cfg = TrainConfig {
            iterations: 10_000,
            batch_size: 1,
            cond_dropout: 0.1,
            seed: 5,
            ..TrainConfig::default()
        };
        let arch = DenoiserConfig {
            hidden_widths: vec![4],
            ..DenoiserConfig::default()
        };
        let mut conds = Vec::new();
        let mut obs = |_: usize, b: &Batch, _: &[usize]| conds.extend_from_slice(&b.cond);
        train_teacher_observed(arch, &ds, &s, &cfg, Some(&mut obs)).unwrap();
        assert_eq!(conds.len(), 10_000);
        let frac = null_fraction(&conds);
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }

    #[test]
    fn teacher_loss_trends_down_on_a_point_mass() {
        let mut ds = make_dataset(DatasetKind::Stdnormal, 1, 0).unwrap();
        ds.points.fill(0.0);
        let s = NoiseSchedule::default();
        let out = train_teacher(tiny_arch(1), &ds, &s, &quick(400, 9)).unwrap();
        let window = |k: usize| out.losses[k * 100..(k + 1) * 100].iter().sum::<f64>() / 100.0;
        assert!(window(3) < window(0), "{} vs {}", window(3), window(0));
    }

    #[test]
    fn training_is_reproducible() {
        let ds = make_dataset(DatasetKind::Gauss8, 200, 1).unwrap();
        let s = NoiseSchedule::default();
        let a = train_teacher(tiny_arch(8), &ds, &s, &quick(30, 4)).unwrap();
        let b = train_teacher(tiny_arch(8), &ds, &s, &quick(30, 4)).unwrap();
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn pairs_are_deterministic_and_round_trip() {
        let ds = make_dataset(DatasetKind::Gauss8, 200, 1).unwrap();
        let s = NoiseSchedule::default();
        let teacher = train_teacher(tiny_arch(8), &ds, &s, &quick(20, 4)).unwrap().model;
        let before = teacher.checkpoint_hash();
        let cfg = PairGenConfig {
            n_pairs: 300,
            solver_steps: 5,
            ..PairGenConfig::default()
        };
        let a = generate_pairs(&teacher, &s, &cfg).unwrap();
        let b = generate_pairs(&teacher, &s, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.records.len(), 300);
        assert_eq!(a.provenance.teacher_hash, before);
        assert_eq!(teacher.checkpoint_hash(), before);
        assert_eq!(a.records[9].condition, 1);

        let bytes = a.to_bytes();
        assert_eq!(&bytes[..8], b"RDIFPAIR");
        let back = PairDataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, a);

        let uniform = PairGenConfig {
            conditions: ConditionRule::Uniform,
            ..cfg.clone()
        };
        let u = generate_pairs(&teacher, &s, &uniform).unwrap();
        assert_eq!(PairDataset::from_bytes(&u.to_bytes()).unwrap(), u);

        assert!(PairDataset::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let zero = PairGenConfig { n_pairs: 0, ..cfg };
        assert!(matches!(generate_pairs(&teacher, &s, &zero), Err(Error::Argument(_))));
    }

    #[test]
    fn zero_iteration_student_is_the_teacher() {
        let ds = make_dataset(DatasetKind::Gauss8, 100, 1).unwrap();
        let s = NoiseSchedule::default();
        let teacher = train_teacher(tiny_arch(8), &ds, &s, &quick(10, 2)).unwrap().model;
        let pairs = generate_pairs(
            &teacher,
            &s,
            &PairGenConfig { n_pairs: 16, solver_steps: 3, ..PairGenConfig::default() },
        )
        .unwrap();
        let student = rectify_student(&teacher, &pairs, &s, &quick(0, 3)).unwrap();
        assert_eq!(student.model.to_bytes(), teacher.to_bytes());
        assert!(student.losses.is_empty());
    }

    #[test]
    fn student_batches_use_each_records_own_noise() {
        let ds = make_dataset(DatasetKind::Gauss8, 100, 1).unwrap();
        let s = NoiseSchedule::default();
        let teacher = train_teacher(tiny_arch(8), &ds, &s, &quick(10, 2)).unwrap().model;
        let pairs = generate_pairs(
            &teacher,
            &s,
            &PairGenConfig { n_pairs: 64, solver_steps: 4, ..PairGenConfig::default() },
        )
        .unwrap();
        let mut checked = 0;
        let mut obs = |_: usize, b: &Batch, src: &[usize]| {
            for (row, &i) in src.iter().enumerate() {
                let rec = &pairs.records[i];
                let (a, sg) = s.alpha_sigma(b.t[row]).unwrap();
                for j in 0..2 {
                    assert_eq!(b.target[[row, j]], rec.eps[j]);
                    assert_eq!(b.x_t[[row, j]], a * rec.x0[j] + sg * rec.eps[j]);
                }
                match b.cond[row] {
                    Condition::Label(c) => assert_eq!(c, rec.condition),
                    Condition::Null => {}
                }
                assert!(b.t[row] >= T_MIN_CLIP && b.t[row] <= 1.0);
                checked += 1;
            }
        };
        let out = rectify_student_observed(&teacher, &pairs, &s, &quick(25, 8), Some(&mut obs)).unwrap();
        assert_eq!(checked, 25 * 32);
        assert_ne!(out.model.to_bytes(), teacher.to_bytes());
    }
}
