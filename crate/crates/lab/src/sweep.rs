//! One-axis parameter sweeps over a base config.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use igm_core::engine::{BatchKind, ErrorModel, NormSchedule};
use serde::Serialize;

use crate::config::{ExperimentConfig, ProblemSource};
use crate::output::format_float;
use crate::runner::{run_experiment, write_file, LabError, EXIT_OK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Geometric ratio or polynomial exponent of the error model.
    Rho,
    Rank,
    Iterations,
    InitialResidual,
    FlipFraction,
    NoiseSigma,
}

impl Axis {
    pub const NAMES: [&'static str; 6] = [
        "rho",
        "rank",
        "iterations",
        "initial_residual",
        "flip_fraction",
        "noise_sigma",
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }
}

impl FromStr for Axis {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "rho" => Axis::Rho,
            "rank" => Axis::Rank,
            "iterations" => Axis::Iterations,
            "initial_residual" => Axis::InitialResidual,
            "flip_fraction" => Axis::FlipFraction,
            "noise_sigma" => Axis::NoiseSigma,
            _ => {
                return Err(LabError::Usage(format!(
                    "unknown axis {s:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }
}

/// Parses `v1,v2,...`; an empty list is a usage error.
pub fn parse_values(text: &str) -> Result<Vec<f64>, LabError> {
    let values: Vec<f64> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| LabError::Usage(format!("bad sweep value {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(LabError::Usage("sweep needs at least one value".into()));
    }
    Ok(values)
}

fn as_count(axis: Axis, value: f64) -> Result<usize, LabError> {
    if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(LabError::Usage(format!(
            "{} needs a positive integer, got {value}",
            axis.name()
        )))
    }
}

fn not_applicable(axis: Axis) -> LabError {
    LabError::Usage(format!(
        "axis {} does not apply to this config",
        axis.name()
    ))
}

/// Returns a copy of `base` with the axis parameter set to `value`.
pub fn apply(
    base: &ExperimentConfig,
    axis: Axis,
    value: f64,
) -> Result<ExperimentConfig, LabError> {
    let mut cfg = base.clone();
    let generator = |cfg: &mut ExperimentConfig| match &mut cfg.problem {
        ProblemSource::Generator(g) => Ok(g.clone()),
        ProblemSource::Dataset(_) => Err(not_applicable(axis)),
    };
    match axis {
        Axis::Rho => match &mut cfg.error_model {
            ErrorModel::Synthetic { schedule, .. } => match schedule {
                NormSchedule::Geometric { ratio, .. } => *ratio = value,
                NormSchedule::Polynomial { exponent, .. } => *exponent = value,
            },
            ErrorModel::IncrementalBatch { schedule, .. } => match &mut schedule.kind {
                BatchKind::GeometricResidual { ratio, .. } => *ratio = value,
                BatchKind::PolynomialResidual { exponent, .. } => *exponent = value,
                BatchKind::Explicit { .. } => return Err(not_applicable(axis)),
            },
            ErrorModel::Zero => return Err(not_applicable(axis)),
        },
        Axis::InitialResidual => match &mut cfg.error_model {
            ErrorModel::IncrementalBatch { schedule, .. } => match &mut schedule.kind {
                BatchKind::GeometricResidual { initial, .. }
                | BatchKind::PolynomialResidual { initial, .. } => *initial = value,
                BatchKind::Explicit { .. } => return Err(not_applicable(axis)),
            },
            _ => return Err(not_applicable(axis)),
        },
        Axis::Iterations => cfg.iterations = Some(as_count(axis, value)?),
        Axis::Rank | Axis::FlipFraction | Axis::NoiseSigma => {
            let mut g = generator(&mut cfg)?;
            let res = match axis {
                Axis::Rank => g.set_rank(as_count(axis, value)?),
                Axis::FlipFraction => g.set_flip_fraction(value),
                _ => g.set_noise_sigma(value),
            };
            res.map_err(|e| LabError::Usage(e.to_string()))?;
            cfg.problem = ProblemSource::Generator(g);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub runs: usize,
    pub passed_runs: usize,
    pub exit_code: i32,
    pub c: Option<f64>,
    pub linear_r2: Option<f64>,
    pub p: Option<f64>,
    pub sublinear_r2: Option<f64>,
    pub mu: Option<f64>,
    pub tau_hat: Option<f64>,
}

pub const SWEEP_HEADER: &str =
    "axis,value,runs,passed_runs,exit_code,c,linear_r2,p,sublinear_r2,mu,tau_hat";

pub fn rows_csv(rows: &[SweepRow]) -> String {
    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.axis,
            format_float(r.value),
            r.runs,
            r.passed_runs,
            r.exit_code,
            opt(r.c),
            opt(r.linear_r2),
            opt(r.p),
            opt(r.sublinear_r2),
            opt(r.mu),
            opt(r.tau_hat)
        );
    }
    out
}

/// Runs `base` once per value. Fits come from the seed-mean gap when there
/// are several seeds, from the single run otherwise.
pub fn run_sweep(
    base: &ExperimentConfig,
    axis: Axis,
    values: &[f64],
    out_dir: Option<&Path>,
) -> Result<Vec<SweepRow>, LabError> {
    if values.is_empty() {
        return Err(LabError::Usage("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| apply(base, axis, v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (cfg, &value) in configs.iter().zip(values) {
        let sub = out_dir.map(|d| d.join(format!("{}_{}", axis.name(), format_float(value))));
        let outcome = run_experiment(cfg, sub.as_deref())?;
        let (linear, sublinear) = match &outcome.aggregate {
            Some(a) => (a.linear_fit, a.sublinear_fit),
            None => (
                outcome.runs[0].verdict.linear_fit,
                outcome.runs[0].verdict.sublinear_fit,
            ),
        };
        let first = &outcome.runs[0].verdict;
        rows.push(SweepRow {
            axis: axis.name().to_string(),
            value,
            runs: outcome.runs.len(),
            passed_runs: outcome.runs.iter().filter(|r| r.verdict.passed).count(),
            exit_code: outcome.exit_code(),
            c: linear.map(|f| f.c),
            linear_r2: linear.map(|f| f.r2),
            p: sublinear.map(|f| f.p),
            sublinear_r2: sublinear.map(|f| f.r2),
            mu: first.mu,
            tau_hat: first.tau_hat,
        });
    }
    if let Some(dir) = out_dir {
        write_file(&dir.join("sweep.csv"), rows_csv(&rows).as_bytes())?;
    }
    Ok(rows)
}

/// Worst exit code across rows.
pub fn sweep_exit_code(rows: &[SweepRow]) -> i32 {
    rows.iter().map(|r| r.exit_code).max().unwrap_or(EXIT_OK)
}
