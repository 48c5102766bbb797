use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use rectikit::sampler::{GridScheme, Solver};
use rectikit::NoiseSchedule;
use rectikit_cli::commands::{self, SampleRequest};
use rectikit_cli::{CliError, ExperimentConfig};

/// Rectified diffusion on synthetic 2-D data.
///
/// Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical failure.
/// RECTIKIT_THREADS caps the number of worker threads.
#[derive(Parser)]
#[command(name = "rectikit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the teacher; writes teacher.ckpt and teacher_loss.csv.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve the teacher's ODE from seeded noise; writes pairs.bin.
    GenPairs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Retrain a copy of the teacher on the pairs; writes student.ckpt.
    Rectify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Draw samples for one condition into a CSV file.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        guidance: f64,
        #[arg(long)]
        condition: u32,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a scatter plot here.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SolverArg::Ddim)]
        solver: SolverArg,
        #[arg(long, value_enum, default_value_t = GridArg::UniformT)]
        grid: GridArg,
        /// Take the noise schedule from this experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Sweep every checkpoint over the configured steps and guidance scales.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        ckpt: Vec<PathBuf>,
    },
    /// train-teacher, gen-pairs, rectify and evaluate in one go.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Ddim,
    Euler,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridArg {
    UniformT,
    UniformLambda,
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, CliError> {
    let cfg = ExperimentConfig::load(path)?;
    commands::configure_threads(cfg.deterministic)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::TrainTeacher { config } => {
            commands::cmd_train_teacher(&load(&config)?)?;
        }
        Command::GenPairs { config, teacher } => {
            commands::cmd_gen_pairs(&load(&config)?, &teacher)?;
        }
        Command::Rectify { config, teacher, pairs } => {
            commands::cmd_rectify(&load(&config)?, &teacher, &pairs)?;
        }
        Command::Sample {
            ckpt,
            steps,
            guidance,
            condition,
            n,
            seed,
            out,
            svg,
            solver,
            grid,
            config,
        } => {
            let schedule = match config {
                Some(p) => load(&p)?.schedule,
                None => {
                    commands::configure_threads(false)?;
                    NoiseSchedule::default()
                }
            };
            commands::cmd_sample(&SampleRequest {
                ckpt,
                steps,
                guidance,
                condition,
                n,
                seed,
                out,
                svg,
                solver: match solver {
                    SolverArg::Ddim => Solver::Ddim,
                    SolverArg::Euler => Solver::Euler,
                },
                grid: match grid {
                    GridArg::UniformT => GridScheme::UniformT,
                    GridArg::UniformLambda => GridScheme::UniformLambda,
                },
                schedule,
            })?;
        }
        Command::Evaluate { config, ckpt } => {
            commands::cmd_evaluate(&load(&config)?, &ckpt)?;
        }
        Command::Pipeline { config } => {
            commands::cmd_pipeline(&load(&config)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rectikit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
