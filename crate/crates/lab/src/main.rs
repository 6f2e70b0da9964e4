use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use igm_core::dataset;
use igm_core::diagnostics::Checks;
use igm_core::optimal::certify;
use igm_core::problem::Loss;
use igm_lab::config::{ExperimentConfig, Seeds};
use igm_lab::generate::GeneratorSpec;
use igm_lab::runner::{self, run_experiment, LabError, EXIT_OK, EXIT_USAGE};
use igm_lab::sweep::{self, parse_values, Axis};

#[derive(Parser)]
#[command(
    name = "igm-lab",
    version,
    about = "Inexact gradient method experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config for each of its seeds and verify the trajectories.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use seeds 0..N instead of the configured ones.
        #[arg(long)]
        seeds: Option<u64>,
        /// Skip the inequality checks; fits are still reported.
        #[arg(long)]
        no_verify: bool,
    },
    /// Run a config once per value of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of rho, rank, iterations, initial_residual, flip_fraction, noise_sigma.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Write a synthetic dataset CSV from a generator spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Certify the optimal set of a dataset and write the certificate.
    Certify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        loss: Loss,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path, seeds: Option<u64>) -> Result<ExperimentConfig, LabError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(count) = seeds {
        if count == 0 {
            return Err(LabError::Usage("--seeds must be at least 1".into()));
        }
        cfg.seeds = Seeds::Count { count };
    }
    cfg.apply_env()?;
    Ok(cfg)
}

fn cmd_run(
    config: &Path,
    out: Option<PathBuf>,
    seeds: Option<u64>,
    no_verify: bool,
) -> Result<i32, LabError> {
    let mut cfg = load_config(config, seeds)?;
    if no_verify {
        cfg.verify = Checks {
            descent: false,
            iter_bounds: false,
            mu_delta: false,
            error_bounds: false,
        };
    }
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let outcome = run_experiment(&cfg, Some(&dir))?;
    for r in &outcome.runs {
        let v = &r.verdict;
        println!(
            "seed {}: {} (violations {}, final gap {:e})",
            v.seed,
            if v.passed { "pass" } else { "FAIL" },
            v.violations.total(),
            r.trajectory
                .records
                .last()
                .map_or(f64::NAN, |x| x.f - outcome.f_min)
        );
    }
    if let Some(fit) = outcome.aggregate.as_ref().and_then(|a| a.linear_fit) {
        println!("mean-gap linear fit: c = {:.6}, r2 = {:.4}", fit.c, fit.r2);
    }
    println!("artifacts in {}", dir.display());
    Ok(outcome.exit_code())
}

fn cmd_sweep(
    config: &Path,
    axis: &str,
    values: &str,
    out: Option<PathBuf>,
    seeds: Option<u64>,
) -> Result<i32, LabError> {
    let axis: Axis = axis.parse()?;
    let values = parse_values(values)?;
    let cfg = load_config(config, seeds)?;
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let rows = sweep::run_sweep(&cfg, axis, &values, Some(&dir))?;
    print!("{}", sweep::rows_csv(&rows));
    Ok(sweep::sweep_exit_code(&rows))
}

fn cmd_generate(spec: &Path, out: &Path) -> Result<i32, LabError> {
    let text = std::fs::read_to_string(spec).map_err(|source| LabError::Io {
        path: spec.to_path_buf(),
        source,
    })?;
    let spec: GeneratorSpec = serde_json::from_str(&text)
        .map_err(|e| LabError::Usage(format!("malformed generator spec: {e}")))?;
    let problem = spec.generate()?;
    dataset::save_problem(&problem, out)?;
    println!(
        "wrote {} samples x {} features to {}",
        problem.num_samples(),
        problem.num_features(),
        out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_certify(data: &Path, loss: Loss, out: &Path) -> Result<i32, LabError> {
    let problem = dataset::load_problem(data, loss)?;
    let cert = certify(&problem)?;
    runner::write_json(out, &cert)?;
    println!(
        "f_min = {}, wrote {}",
        igm_lab::output::format_float(cert.f_min),
        out.display()
    );
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            no_verify,
        } => cmd_run(&config, out, seeds, no_verify),
        Command::Sweep {
            config,
            axis,
            values,
            out,
            seeds,
        } => cmd_sweep(&config, &axis, &values, out, seeds),
        Command::Generate { spec, out } => cmd_generate(&spec, &out),
        Command::Certify { data, loss, out } => cmd_certify(&data, loss, &out),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("igm-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
