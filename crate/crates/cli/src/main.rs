mod document;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anisofilt::simulate::{default_burn_in, empirical_rms_ratio, simulate_chain, Shaping, SimulationConfig};
use anisofilt::statespace::{h2_norm, hinf_norm};
use anisofilt::synthesis::{build_error_operator, kalman_baseline, synthesize};
use anisofilt::{Error, SynthesisOptions};
use clap::{Parser, Subcommand};
use log::{info, LevelFilter};
use serde::Serialize;

use document::{Model, StoredSolution};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}:{line}:{column}: {field}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{0}")]
    Assumption(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Assumption(_) => 1,
            CliError::Parse { .. } | CliError::Io { .. } | CliError::Usage(_) => 2,
            CliError::Mismatch(_) => 5,
            CliError::Core(e) => match e {
                Error::Assumption(_) | Error::Unstable { .. } => 1,
                Error::InvalidArgument(_) | Error::Dimension(_) => 2,
                Error::UnreachableAnisotropy { .. } => 3,
                _ => 4,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "anisofilt", version, about = "Anisotropy-based robust estimator synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a plant model against the stability and rank assumptions.
    Validate {
        #[arg(long)]
        model: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize the optimal estimator for one anisotropy level.
    Synthesize {
        #[arg(long)]
        model: PathBuf,
        /// Mean anisotropy level of the disturbance class.
        #[arg(long, allow_negative_numbers = true)]
        a: f64,
        /// Allowed mismatch between achieved and requested anisotropy.
        #[arg(long, allow_negative_numbers = true)]
        tol: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize over an equispaced grid of levels and write a CSV table.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        a_max: f64,
        #[arg(long, allow_negative_numbers = true)]
        steps: i64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the empirical RMS ratio under the worst-case noise with the stored norm.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        /// Samples kept after the burn-in.
        #[arg(long)]
        length: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write the post-burn-in trajectory as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
}

fn init_logging() {
    let level = match std::env::var("ANISOFILT_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("info") => LevelFilter::Info,
        Ok("debug") => LevelFilter::Debug,
        _ => LevelFilter::Warn,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn validate(model_path: &Path, out: Option<&Path>) -> CliResult<()> {
    let model = Model::load(model_path)?;
    let Model { dims, plant, .. } = &model;
    let report = plant.validate();
    let mut text = format!(
        "model: {}\ndims: n={} m={} p={} r={}\nspectral radius of A: {}\nrank of D: {} of {}\n",
        model.display_name(),
        dims.n,
        dims.m,
        dims.p,
        dims.r,
        report.spectral_radius,
        report.rank_d,
        dims.p
    );
    if let Some(description) = &model.description {
        text.insert_str(0, &format!("# {description}\n"));
    }
    for v in &report.violations {
        text.push_str(&format!("violation: {v}\n"));
    }
    text.push_str(if report.is_valid() { "status: valid\n" } else { "status: invalid\n" });
    print!("{text}");
    if let Some(out) = out {
        document::write(out, &text)?;
    }
    match report.violations.first() {
        None => Ok(()),
        Some(v) => Err(CliError::Assumption(v.to_string())),
    }
}

fn options(tol: Option<f64>) -> CliResult<SynthesisOptions> {
    let mut opts = SynthesisOptions::default();
    if let Some(tol) = tol {
        if !(tol > 0.0) || !tol.is_finite() {
            return Err(CliError::Usage(format!("--tol must be positive, got {tol}")));
        }
        opts.a_tolerance = tol;
    }
    Ok(opts)
}

fn check_level(a: f64) -> CliResult<()> {
    if a >= 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--a must be a finite nonnegative number, got {a}")))
    }
}

fn synthesize_cmd(model_path: &Path, a: f64, tol: Option<f64>, out: &Path) -> CliResult<()> {
    check_level(a)?;
    let opts = options(tol)?;
    let model = Model::load(model_path)?;
    let sol = synthesize(&model.plant, a, &opts)?;
    let stored = StoredSolution::from_solution(&model, &sol);
    document::write(out, &stored.to_toml())?;
    println!(
        "a = {} achieved {} at q = {}\nanisotropic norm: {}\niterations: {}\nmax residual: {:e}",
        a,
        sol.achieved_anisotropy,
        sol.q,
        sol.anisotropic_norm,
        sol.iterations,
        sol.residuals.max()
    );
    if let Some(note) = &sol.note {
        println!("note: {note}");
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRecord {
    a: f64,
    q: f64,
    anorm: f64,
    h2_floor: f64,
    hinf_ceiling: f64,
    iterations: usize,
    max_residual: f64,
}

fn sweep(model_path: &Path, a_max: f64, steps: i64, out: &Path) -> CliResult<()> {
    if !(a_max > 0.0) || !a_max.is_finite() {
        return Err(CliError::Usage(format!("--a-max must be positive, got {a_max}")));
    }
    if steps < 2 {
        return Err(CliError::Usage(format!("--steps must be at least 2, got {steps}")));
    }
    let model = Model::load(model_path)?;
    let plant = &model.plant;
    if let Some(v) = plant.validate().violations.first() {
        return Err(CliError::Assumption(v.to_string()));
    }
    let kalman = kalman_baseline(plant)?;
    let m = plant.disturbances() as f64;
    let floor = h2_norm(&build_error_operator(plant, &kalman)?)? / m.sqrt();
    let opts = SynthesisOptions::default();

    let io_err = |e: csv::Error| CliError::Io {
        path: out.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(out).map_err(io_err)?;
    let mut failure = None;
    for k in 0..steps {
        let a = a_max * k as f64 / (steps - 1) as f64;
        let sol = match synthesize(plant, a, &opts) {
            Ok(sol) => sol,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        let ceiling = hinf_norm(&build_error_operator(plant, &sol.gains)?, 1e-10)?;
        info!("a = {a}: norm {}", sol.anisotropic_norm);
        writer
            .serialize(SweepRecord {
                a,
                q: sol.q,
                anorm: sol.anisotropic_norm,
                h2_floor: floor,
                hinf_ceiling: ceiling,
                iterations: sol.iterations,
                max_residual: sol.residuals.max(),
            })
            .map_err(io_err)?;
    }
    writer.flush().map_err(|e| CliError::Io {
        path: out.to_path_buf(),
        message: e.to_string(),
    })?;
    match failure {
        None => Ok(()),
        Some(e) => Err(e.into()),
    }
}

fn simulate_cmd(
    model_path: &Path,
    solution_path: &Path,
    length: usize,
    seed: u64,
    out: &Path,
    trajectory: Option<&Path>,
) -> CliResult<()> {
    let model = Model::load(model_path)?;
    let stored = StoredSolution::load(solution_path)?;
    stored.check_against(&model, solution_path)?;
    let plant = &model.plant;
    let shaping = Shaping::Feedback(stored.shaping.clone());
    let burn_in = default_burn_in(plant, &stored.gains, &shaping)?;
    let cfg = SimulationConfig::new(length + burn_in, burn_in, seed);
    let batch = simulate_chain(plant, &stored.gains, &shaping, &cfg)?;
    let est = empirical_rms_ratio(&batch)?;
    let analytic = stored.summary.anisotropic_norm;
    let gap = (est.ratio - analytic).abs();
    let agrees = gap <= 3.0 * est.stderr;
    let text = format!(
        "model: {}\nseed: {seed}\nsamples: {length}\nburn-in: {burn_in}\nempirical ratio: {} ± {}\nanalytic norm: {analytic}\ndifference: {gap} ({:.3} stderr)\nstatus: {}\n",
        model.display_name(),
        est.ratio,
        est.stderr,
        gap / est.stderr,
        if agrees { "agree" } else { "mismatch" }
    );
    print!("{text}");
    document::write(out, &text)?;
    if let Some(path) = trajectory {
        write_trajectory(path, &batch)?;
    }
    if agrees {
        Ok(())
    } else {
        Err(CliError::Mismatch(format!(
            "empirical ratio {} differs from the analytic norm {analytic} by more than 3 stderr",
            est.ratio
        )))
    }
}

fn write_trajectory(path: &Path, batch: &anisofilt::simulate::TrajectoryBatch) -> CliResult<()> {
    let io_err = |e: csv::Error| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = csv::Writer::from_path(path).map_err(io_err)?;
    let mut header = vec!["t".to_string()];
    header.extend(batch.column_names());
    writer.write_record(&header).map_err(io_err)?;
    for t in batch.burn_in..batch.length {
        let mut row = vec![t.to_string()];
        for (_, signal) in batch.signals() {
            row.extend(signal.at(t).iter().map(f64::to_string));
        }
        writer.write_record(&row).map_err(io_err)?;
    }
    writer.flush().map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Validate { model, out } => validate(&model, out.as_deref()),
        Command::Synthesize { model, a, tol, out } => synthesize_cmd(&model, a, tol, &out),
        Command::Sweep { model, a_max, steps, out } => sweep(&model, a_max, steps, &out),
        Command::Simulate {
            model,
            solution,
            length,
            seed,
            out,
            trajectory,
        } => simulate_cmd(&model, &solution, length, seed, &out, trajectory.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
