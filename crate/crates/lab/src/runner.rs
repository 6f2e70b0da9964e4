//! Executes experiment configs and writes their artifacts.

use std::path::{Path, PathBuf};

use igm_core::dataset::{self, DatasetError};
use igm_core::diagnostics::{aggregate_expectation, analyze, FitOptions, RateReport};
use igm_core::engine::{run, solver_rng, EngineError, Trajectory};
use igm_core::optimal::{CertifyError, OptimalSet, OptimalSetCertificate};
use igm_core::problem::ComposedProblem;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, ProblemSource};
use crate::generate::GenerateError;
use crate::output::{trajectory_csv, AggregateReport, Verdict};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;
pub const EXIT_CERTIFY: i32 = 3;

/// RNG stream reserved for initial points, separate from the solver's.
const X0_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error("certification failed: {0}")]
    Certify(#[from] CertifyError),
    #[error("solver failed: {0}")]
    Engine(#[from] EngineError),
    #[error("malformed certificate: {0}")]
    CertificateJson(serde_json::Error),
}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Certify(_) => EXIT_CERTIFY,
            _ => EXIT_USAGE,
        }
    }
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), LabError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| LabError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| LabError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), LabError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_certificate(path: &Path) -> Result<OptimalSetCertificate, LabError> {
    let text = std::fs::read_to_string(path).map_err(|source| LabError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(LabError::CertificateJson)
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<ComposedProblem, LabError> {
    Ok(match &cfg.problem {
        ProblemSource::Dataset(path) => dataset::load_problem(path, cfg.loss())?,
        ProblemSource::Generator(spec) => spec.generate()?,
    })
}

/// A problem paired with its certified optimal set.
pub struct Prepared {
    pub problem: ComposedProblem,
    pub set: OptimalSet,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, LabError> {
    let problem = build_problem(cfg)?;
    let set = match &cfg.certificate {
        Some(path) => OptimalSet::new(read_certificate(path)?, &problem)?,
        None => OptimalSet::certify(&problem)?,
    };
    Ok(Prepared { problem, set })
}

pub fn initial_point(cfg: &ExperimentConfig, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = solver_rng(seed);
    rng.set_stream(X0_STREAM);
    cfg.x0.draw(dim, &mut rng)
}

pub fn fit_options(cfg: &ExperimentConfig) -> FitOptions {
    FitOptions::with_tail(cfg.tail_fraction)
}

pub struct SeedOutcome {
    pub trajectory: Trajectory,
    pub report: RateReport,
    pub verdict: Verdict,
}

pub fn run_seed(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    seed: u64,
    config_digest: &str,
) -> Result<SeedOutcome, LabError> {
    let p = &prepared.problem;
    let x0 = initial_point(cfg, p.num_features(), seed);
    let mut trajectory = run(p, &cfg.error_model, &x0, cfg.iterations(), seed)?;
    prepared.set.annotate(&mut trajectory)?;
    let report = analyze(
        &trajectory,
        p,
        prepared.set.certificate(),
        &cfg.verify,
        &cfg.tolerances,
        &fit_options(cfg),
    );
    let verdict = Verdict::new(
        config_digest,
        seed,
        &report,
        cfg.verify.mu_delta,
        cfg.error_model.has_summable_errors(),
    );
    Ok(SeedOutcome {
        trajectory,
        report,
        verdict,
    })
}

pub struct ExperimentOutcome {
    pub f_min: f64,
    pub runs: Vec<SeedOutcome>,
    pub aggregate: Option<AggregateReport>,
}

impl ExperimentOutcome {
    pub fn passed(&self) -> bool {
        self.runs.iter().all(|r| r.verdict.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_OK
        } else {
            EXIT_VERIFY
        }
    }
}

pub fn trajectory_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("trajectory_seed{seed}.csv"))
}

pub fn verdict_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("verdict_seed{seed}.json"))
}

/// Runs every seed in order; writes artifacts when `out_dir` is given.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutcome, LabError> {
    let prepared = prepare(cfg)?;
    let digest = cfg.digest();
    let f_min = prepared.set.f_min();
    let seeds = cfg.seeds.expand();
    if let Some(dir) = out_dir {
        write_json(&dir.join("certificate.json"), prepared.set.certificate())?;
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let outcome = run_seed(cfg, &prepared, seed, &digest)?;
        if let Some(dir) = out_dir {
            let csv = trajectory_csv(&outcome.trajectory, f_min);
            write_file(&trajectory_path(dir, seed), csv.as_bytes())?;
            write_json(&verdict_path(dir, seed), &outcome.verdict)?;
        }
        runs.push(outcome);
    }
    let aggregate = if runs.len() > 1 {
        let trajectories: Vec<Trajectory> = runs.iter().map(|r| r.trajectory.clone()).collect();
        let agg =
            aggregate_expectation(&trajectories, prepared.set.certificate(), &fit_options(cfg))
                .expect("equal-length trajectories from one config");
        let passed = runs.iter().filter(|r| r.verdict.passed).count();
        let report = AggregateReport::new(&digest, seeds, passed, agg);
        if let Some(dir) = out_dir {
            write_json(&dir.join("aggregate.json"), &report)?;
        }
        Some(report)
    } else {
        None
    };
    Ok(ExperimentOutcome {
        f_min,
        runs,
        aggregate,
    })
}
