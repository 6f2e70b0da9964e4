//! On-disk artifact formats: trajectory CSV, verdict and aggregate JSON.

use std::fmt::Write as _;

use igm_core::diagnostics::{Aggregate, CensusEntry, LinearRateFit, RateReport, SublinearFit};
use igm_core::engine::Trajectory;
use serde::{Deserialize, Serialize};

pub const TRAJECTORY_HEADER: &str = "k,f,f_gap,grad_norm,err_norm,step_norm,dist_to_opt,batch_size";

/// Shortest round-trip text for `v`, switching to exponent form outside
/// `[1e-4, 1e15)` so tiny gaps stay readable.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn trajectory_csv(trajectory: &Trajectory, f_min: f64) -> String {
    let mut out = String::with_capacity(64 * (trajectory.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in &trajectory.records {
        let dist = r.dist_to_opt.map(format_float).unwrap_or_default();
        let batch = r.batch_size.map(|b| b.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.k,
            format_float(r.f),
            format_float(r.f - f_min),
            format_float(r.grad_norm),
            format_float(r.err_norm),
            format_float(r.step_norm),
            dist,
            batch
        );
    }
    out
}

/// Violation counts; `null` for checks that were not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Violations {
    pub descent: Option<usize>,
    pub iter_bound_a: Option<usize>,
    pub iter_bound_b: Option<usize>,
    pub mu_delta_envelope: Option<usize>,
    pub ls_error_bound: Option<usize>,
    pub logistic_error_bound: Option<usize>,
}

impl Violations {
    fn from_report(report: &RateReport) -> Self {
        let count = |e: &Option<CensusEntry>| e.as_ref().map(|e| e.violations);
        let c = &report.census;
        Self {
            descent: count(&c.descent),
            iter_bound_a: count(&c.iter_bound_a),
            iter_bound_b: count(&c.iter_bound_b),
            mu_delta_envelope: count(&c.mu_delta_envelope),
            ls_error_bound: count(&c.ls_error_bound),
            logistic_error_bound: count(&c.logistic_error_bound),
        }
    }

    pub fn total(&self) -> usize {
        [
            self.descent,
            self.iter_bound_a,
            self.iter_bound_b,
            self.mu_delta_envelope,
            self.ls_error_bound,
            self.logistic_error_bound,
        ]
        .iter()
        .flatten()
        .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFitSummary {
    pub c: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SublinearFitSummary {
    pub p: f64,
    pub r2: f64,
}

impl From<LinearRateFit> for LinearFitSummary {
    fn from(f: LinearRateFit) -> Self {
        Self {
            c: f.rate,
            r2: f.r_squared,
        }
    }
}

impl From<SublinearFit> for SublinearFitSummary {
    fn from(f: SublinearFit) -> Self {
        Self {
            p: f.exponent,
            r2: f.r_squared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub config_digest: String,
    pub seed: u64,
    pub violations: Violations,
    pub tau_hat: Option<f64>,
    pub mu: Option<f64>,
    pub delta: Option<f64>,
    pub lambda1_hat: Option<f64>,
    pub lambda2_hat: Option<f64>,
    pub linear_fit: Option<LinearFitSummary>,
    pub sublinear_fit: Option<SublinearFitSummary>,
    /// Whether the error model has summable squared norms.
    pub theory_applies: bool,
    /// `false` when the recursion check ran and no grid pair fit.
    pub mu_delta_found: Option<bool>,
    pub passed: bool,
}

impl Verdict {
    pub fn new(
        config_digest: &str,
        seed: u64,
        report: &RateReport,
        mu_delta_checked: bool,
        theory_applies: bool,
    ) -> Self {
        let violations = Violations::from_report(report);
        let mu_delta_found = mu_delta_checked.then_some(report.mu_delta.is_some());
        let passed = violations.total() == 0 && mu_delta_found != Some(false);
        let rates = report.iterate_rates.as_ref();
        Self {
            config_digest: config_digest.to_string(),
            seed,
            violations,
            tau_hat: report.tau_hat,
            mu: report.mu_delta.map(|p| p.mu),
            delta: report.mu_delta.map(|p| p.delta),
            lambda1_hat: rates.map(|r| r.lambda1),
            lambda2_hat: rates.and_then(|r| r.lambda2),
            linear_fit: report.linear_fit.map(Into::into),
            sublinear_fit: report.sublinear_fit.map(Into::into),
            theory_applies,
            mu_delta_found,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub passed_runs: usize,
    pub linear_fit: Option<LinearFitSummary>,
    pub sublinear_fit: Option<SublinearFitSummary>,
    pub mean_gap: Vec<f64>,
    pub se_gap: Vec<f64>,
    pub mean_step: Vec<f64>,
    pub se_step: Vec<f64>,
    pub mean_dist: Option<Vec<f64>>,
    pub se_dist: Option<Vec<f64>>,
    pub mean_sq_err: Vec<f64>,
    pub se_sq_err: Vec<f64>,
}

impl AggregateReport {
    pub fn new(config_digest: &str, seeds: Vec<u64>, passed_runs: usize, agg: Aggregate) -> Self {
        Self {
            config_digest: config_digest.to_string(),
            seeds,
            passed_runs,
            linear_fit: agg.linear_fit.map(Into::into),
            sublinear_fit: agg.sublinear_fit.map(Into::into),
            mean_gap: agg.mean_gap,
            se_gap: agg.se_gap,
            mean_step: agg.mean_step,
            se_step: agg.se_step,
            mean_dist: agg.mean_dist,
            se_dist: agg.se_dist,
            mean_sq_err: agg.mean_sq_err,
            se_sq_err: agg.se_sq_err,
        }
    }
}
