//! Subcommand implementations. Every output file is written atomically.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rectikit::data::make_dataset;
use rectikit::eval::EvalSetup;
use rectikit::io::write_atomic;
use rectikit::metrics::EvalReport;
use rectikit::rectify::{generate_pairs, rectify_student, train_teacher, PairDataset};
use rectikit::sampler::{make_grid, sample_many, standard_noise, GridScheme, Solver};
use rectikit::{Condition, DenoiserModel, NoiseSchedule};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::svg::{self, Series};

pub const TEACHER_CKPT: &str = "teacher.ckpt";
pub const TEACHER_LOSS: &str = "teacher_loss.csv";
pub const PAIRS_FILE: &str = "pairs.bin";
pub const STUDENT_CKPT: &str = "student.ckpt";
pub const STUDENT_LOSS: &str = "student_loss.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const PLOT_DIR: &str = "plots";
pub const TIMINGS_CSV: &str = "timings.csv";

pub const THREADS_ENV: &str = "RECTIKIT_THREADS";

/// Sizes the global worker pool: one thread in deterministic mode, otherwise
/// the `RECTIKIT_THREADS` cap if set. Returns the pool size in effect.
pub fn configure_threads(deterministic: bool) -> Result<usize, CliError> {
    let cap = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => {
                return Err(CliError::Usage(format!(
                    "{THREADS_ENV} must be a positive integer, got {v:?}"
                )))
            }
        },
        Err(_) => None,
    };
    let n = if deterministic { Some(1) } else { cap };
    if let Some(n) = n {
        // Fails only if the pool was already built, e.g. by an earlier
        // command in the same process; keep that pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

fn output_dir(cfg: &ExperimentConfig) -> Result<&Path, CliError> {
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| {
        CliError::Io(format!("cannot create output directory {}: {e}", dir.display()))
    })?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<DenoiserModel, CliError> {
    DenoiserModel::load(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("iteration,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", i + 1);
    }
    s
}

pub fn cmd_train_teacher(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = output_dir(cfg)?;
    let data = make_dataset(cfg.dataset.kind, cfg.dataset.n_samples, cfg.dataset.seed)?;
    log::info!(
        "training teacher on {} ({} samples, {} iterations)",
        cfg.dataset.kind,
        data.len(),
        cfg.teacher_train.iterations
    );
    let out = train_teacher(cfg.model.clone(), &data, &cfg.schedule, &cfg.teacher_train)?;
    let path = dir.join(TEACHER_CKPT);
    write_file(&path, &out.model.to_bytes())?;
    write_file(&dir.join(TEACHER_LOSS), loss_csv(&out.losses).as_bytes())?;
    log::info!("teacher {} -> {}", out.model.checkpoint_hash(), path.display());
    Ok(path)
}

pub fn cmd_gen_pairs(cfg: &ExperimentConfig, teacher: &Path) -> Result<PathBuf, CliError> {
    let dir = output_dir(cfg)?;
    let model = load_model(teacher)?;
    log::info!(
        "generating {} pairs with {} DDIM steps at w={}",
        cfg.pairgen.n_pairs,
        cfg.pairgen.solver_steps,
        cfg.pairgen.w
    );
    let pairs = generate_pairs(&model, &cfg.schedule, &cfg.pairgen)?;
    let path = dir.join(PAIRS_FILE);
    write_file(&path, &pairs.to_bytes())?;
    log::info!("{} pairs -> {}", pairs.records.len(), path.display());
    Ok(path)
}

pub fn cmd_rectify(cfg: &ExperimentConfig, teacher: &Path, pairs: &Path) -> Result<PathBuf, CliError> {
    let dir = output_dir(cfg)?;
    let model = load_model(teacher)?;
    let pairs =
        PairDataset::load(pairs).map_err(|e| CliError::Io(format!("{}: {e}", pairs.display())))?;
    let hash = model.checkpoint_hash();
    if pairs.provenance.teacher_hash != hash {
        log::warn!(
            "pairs were generated by teacher {}, not {}",
            pairs.provenance.teacher_hash,
            hash
        );
    }
    log::info!(
        "rectifying on {} pairs ({} iterations)",
        pairs.records.len(),
        cfg.student_train.iterations
    );
    let out = rectify_student(&model, &pairs, &cfg.schedule, &cfg.student_train)?;
    let path = dir.join(STUDENT_CKPT);
    write_file(&path, &out.model.to_bytes())?;
    write_file(&dir.join(STUDENT_LOSS), loss_csv(&out.losses).as_bytes())?;
    log::info!("student {} -> {}", out.model.checkpoint_hash(), path.display());
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct SampleRequest {
    pub ckpt: PathBuf,
    pub steps: usize,
    pub guidance: f64,
    pub condition: u32,
    pub n: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub svg: Option<PathBuf>,
    pub solver: Solver,
    pub grid: GridScheme,
    pub schedule: NoiseSchedule,
}

/// Writes `n` samples as CSV (`x0,x1,...,c`) and optionally a scatter plot.
pub fn cmd_sample(req: &SampleRequest) -> Result<(), CliError> {
    let model = load_model(&req.ckpt)?;
    if req.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    if req.condition as usize >= model.num_conditions() {
        return Err(CliError::Usage(format!(
            "condition {} out of range, the model knows {}",
            req.condition,
            model.num_conditions()
        )));
    }
    let d = model.data_dim();
    let grid = make_grid(&req.schedule, req.steps, req.grid)?;
    let noise = standard_noise(req.n, d, req.seed);
    let cond = vec![Condition::Label(req.condition); req.n];
    let x = sample_many(&model, &req.schedule, &grid, &cond, req.guidance, noise.view(), req.solver)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numerical("sampler produced non-finite samples".into()));
    }

    let mut csv: String = (0..d).map(|j| format!("x{j},")).collect();
    csv.push_str("c\n");
    for row in x.rows() {
        for v in row {
            let _ = write!(csv, "{v},");
        }
        let _ = writeln!(csv, "{}", req.condition);
    }
    write_file(&req.out, csv.as_bytes())?;
    if let Some(path) = &req.svg {
        let pts: Vec<_> = x
            .rows()
            .into_iter()
            .map(|r| (r[0], if d > 1 { r[1] } else { 0.0 }, req.condition))
            .collect();
        let title = format!("{} steps, w = {}", req.steps, req.guidance);
        write_file(path, svg::scatter(&title, &pts).as_bytes())?;
    }
    Ok(())
}

fn model_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Full `model × steps × w` sweep. Writes `eval.csv` and the plots and
/// returns the rows in file order.
pub fn cmd_evaluate(cfg: &ExperimentConfig, ckpts: &[PathBuf]) -> Result<Vec<EvalReport>, CliError> {
    if ckpts.is_empty() {
        return Err(CliError::Usage("evaluate needs at least one --ckpt".into()));
    }
    let ids: Vec<String> = ckpts.iter().map(|p| model_id(p)).collect();
    if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
        return Err(CliError::Usage(format!("checkpoint names must be distinct, got {ids:?}")));
    }
    let models = ckpts.iter().map(|p| load_model(p)).collect::<Result<Vec<_>, _>>()?;
    let dir = output_dir(cfg)?;
    let setup = EvalSetup::new(cfg.dataset.kind, cfg.eval.clone())?;

    let mut rows = Vec::new();
    for (id, model) in ids.iter().zip(&models) {
        for &steps in &cfg.eval.steps {
            for &w in &cfg.eval.guidance {
                let t0 = Instant::now();
                let r = setup.evaluate_cell(model, &cfg.schedule, id, steps, w)?;
                log::info!(
                    "{id} steps={steps} w={w}: fd={:.4} fid={:.4} drift={:.4} gap={:.4} ({:.1?})",
                    r.frechet_gauss,
                    r.cond_fidelity,
                    r.pred_drift,
                    r.endpoint_gap,
                    t0.elapsed()
                );
                rows.push(r);
            }
        }
    }

    let mut csv = format!("{}\n", EvalReport::CSV_HEADER);
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_file(&dir.join(EVAL_CSV), csv.as_bytes())?;
    write_plots(&dir.join(PLOT_DIR), &ids, &rows)?;
    Ok(rows)
}

const METRICS: [(&str, &str, fn(&EvalReport) -> f64); 4] = [
    ("frechet_gauss", "Frechet distance", |r| r.frechet_gauss),
    ("cond_fidelity", "condition fidelity", |r| r.cond_fidelity),
    ("pred_drift", "prediction drift", |r| r.pred_drift),
    ("endpoint_gap", "endpoint gap", |r| r.endpoint_gap),
];

fn sorted_unique(v: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = v.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Metric against steps per model (one line per w), and metric against w
/// per step count (one line per model).
fn write_plots(dir: &Path, ids: &[String], rows: &[EvalReport]) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let ws = sorted_unique(rows.iter().map(|r| r.guidance_w));
    let steps = sorted_unique(rows.iter().map(|r| r.steps as f64));
    for (key, name, get) in METRICS {
        for id in ids {
            let series: Vec<Series> = ws
                .iter()
                .map(|&w| Series {
                    label: format!("w = {w}"),
                    points: rows
                        .iter()
                        .filter(|r| &r.model_id == id && r.guidance_w == w)
                        .map(|r| (r.steps as f64, get(r)))
                        .collect(),
                })
                .collect();
            let svg = svg::line_plot(&format!("{name} vs steps: {id}"), "steps", name, &series, true);
            write_file(&dir.join(format!("{key}_vs_steps_{id}.svg")), svg.as_bytes())?;
        }
        for &n in &steps {
            let series: Vec<Series> = ids
                .iter()
                .map(|id| Series {
                    label: id.clone(),
                    points: rows
                        .iter()
                        .filter(|r| &r.model_id == id && r.steps as f64 == n)
                        .map(|r| (r.guidance_w, get(r)))
                        .collect(),
                })
                .collect();
            let svg = svg::line_plot(&format!("{name} vs w: {n} steps"), "guidance w", name, &series, false);
            write_file(&dir.join(format!("{key}_vs_w_{n}steps.svg")), svg.as_bytes())?;
        }
    }
    Ok(())
}

/// train-teacher, gen-pairs, rectify and evaluate from one config. Stage
/// wall-clock times go to `timings.csv`.
pub fn cmd_pipeline(cfg: &ExperimentConfig) -> Result<Vec<EvalReport>, CliError> {
    let mut timings = String::from("stage,seconds\n");
    let mut stage = |name: &str, t: Instant| {
        let secs = t.elapsed().as_secs_f64();
        log::info!("{name} took {secs:.1}s");
        let _ = writeln!(timings, "{name},{secs:.3}");
    };
    let t = Instant::now();
    let teacher = cmd_train_teacher(cfg)?;
    stage("train-teacher", t);
    let t = Instant::now();
    let pairs = cmd_gen_pairs(cfg, &teacher)?;
    stage("gen-pairs", t);
    let t = Instant::now();
    let student = cmd_rectify(cfg, &teacher, &pairs)?;
    stage("rectify", t);
    let t = Instant::now();
    let rows = cmd_evaluate(cfg, &[teacher, student])?;
    stage("evaluate", t);
    write_file(&cfg.output_dir.join(TIMINGS_CSV), timings.as_bytes())?;
    Ok(rows)
}
