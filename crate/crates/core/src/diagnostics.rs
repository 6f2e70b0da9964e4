//! Verdicts on recorded trajectories.
//!
//! Each `verify_*` function counts the iterations where a convergence
//! inequality fails beyond its tolerance. Constants that the theory only
//! asserts to exist (error-bound modulus, recursion parameters, envelope
//! multipliers) are estimated as the smallest values consistent with the
//! observed trajectory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Trajectory;
use crate::optimal::OptimalSetCertificate;
use crate::problem::{ComposedProblem, LipschitzConstants, Loss};

/// Candidate recursion factors for [`find_mu_delta`].
pub const MU_GRID: [f64; 12] = [
    0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.97, 0.98, 0.99, 0.995, 0.998, 0.999,
];
pub const DELTA_MIN: f64 = 1e-3;
pub const DELTA_MAX: f64 = 1e6;

/// Gradient norms at or below this are excluded from error-bound ratios.
pub const TAU_GRAD_FLOOR: f64 = 1e-8;
/// Numerators at or below this are excluded from envelope ratio statistics.
pub const ENVELOPE_FLOOR: f64 = 1e-12;
/// "Bounded" means max <= BOUNDED_FACTOR * median.
pub const BOUNDED_FACTOR: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("need at least {needed} qualifying points, found {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("trajectory has no point with gradient norm above {0:e}")]
    NoQualifyingPoints(f64),
    #[error("trajectory distances have not been annotated")]
    MissingDistances,
    #[error("need at least 2 trajectories, got {0}")]
    TooFewTrajectories(usize),
    #[error("trajectories have different lengths")]
    LengthMismatch,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Absolute and relative slacks used by the checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Descent and per-iteration bounds: `descent_rel * (1 + |f(x^k)|)`.
    pub descent_rel: f64,
    /// Unrolled envelope: `envelope_rel * (1 + gap_0)`.
    pub envelope_rel: f64,
    /// Per-step recursion `gap_{k+1} <= mu gap_k + delta ||e||^2 + recursion_abs`.
    pub recursion_abs: f64,
    /// Sample-structure error-norm bounds.
    pub error_bound_abs: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            descent_rel: 1e-9,
            envelope_rel: 1e-10,
            recursion_abs: 1e-12,
            error_bound_abs: 1e-9,
        }
    }
}

/// Outcome of one inequality over a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CensusEntry {
    pub checked: usize,
    pub violations: usize,
    /// Smallest `allowed - observed` seen (before tolerance); negative means tight or broken.
    pub worst_slack: Option<f64>,
    /// For two-point inequalities, the index of the later iterate.
    pub first_violation: Option<usize>,
}

impl CensusEntry {
    fn record(&mut self, k: usize, slack: f64, tol: f64) {
        self.checked += 1;
        self.worst_slack = Some(self.worst_slack.map_or(slack, |w| w.min(slack)));
        if (slack + tol).is_nan() || slack + tol < 0.0 {
            self.violations += 1;
            self.first_violation.get_or_insert(k);
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// `f(x^k) - f(x^{k+1}) >= (L_f/2)||d||^2 - ||e^{k+1}|| ||d||`, `d = x^k - x^{k+1}`.
pub fn verify_descent(
    trajectory: &Trajectory,
    consts: &LipschitzConstants,
    tol: &Tolerances,
) -> CensusEntry {
    let lf = consts.lipschitz_f;
    let mut census = CensusEntry::default();
    for pair in trajectory.records.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        let d = cur.step_norm;
        let slack = (cur.f - next.f) - (0.5 * lf * d * d - cur.err_norm * d);
        census.record(next.k, slack, tol.descent_rel * (1.0 + cur.f.abs()));
    }
    census
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct IterBoundCensus {
    /// `||d||^2 <= (4/L_f)(f(x^k) - f(x^{k+1}) + ||e||^2 / L_f)`
    pub step: CensusEntry,
    /// `0 <= gap_{k+1} <= gap_k + ||e||^2 / (2 L_f)`
    pub gap: CensusEntry,
}

pub fn verify_iter_bounds(
    trajectory: &Trajectory,
    consts: &LipschitzConstants,
    cert: &OptimalSetCertificate,
    tol: &Tolerances,
) -> IterBoundCensus {
    let lf = consts.lipschitz_f;
    let mut out = IterBoundCensus::default();
    for pair in trajectory.records.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        let t = tol.descent_rel * (1.0 + cur.f.abs());
        let e2 = cur.err_norm * cur.err_norm;
        // compared in objective units: (L_f/4)||d||^2 <= decrease + ||e||^2 / L_f
        let slack_a = (cur.f - next.f + e2 / lf) - 0.25 * lf * cur.step_norm * cur.step_norm;
        out.step.record(next.k, slack_a, t);

        let (gap, gap_next) = (cur.f - cert.f_min, next.f - cert.f_min);
        let slack_b = (gap + e2 / (2.0 * lf) - gap_next).min(gap_next);
        out.gap.record(next.k, slack_b, t);
    }
    out
}

/// Error-norm bounds that follow from the per-sample structure.
///
/// Square loss, for every iteration with `|I_k| >= M/2`:
/// `||e^{k+1}||^2 <= 8 R^2 E_{k+1} f(x^k)`.
/// Logistic loss, every iteration: `||e^{k+1}||^2 <= 4 R^4 E_{k+1}^2`.
/// Here `E_{k+1} = (M - |I_k|)/M`. Returns `None` for non-batch trajectories.
pub fn verify_error_bounds(
    trajectory: &Trajectory,
    problem: &ComposedProblem,
    tol: &Tolerances,
) -> Option<CensusEntry> {
    if trajectory.records.iter().any(|r| r.batch_size.is_none()) {
        return None;
    }
    let m = problem.num_samples() as f64;
    let r = problem.sample_radius();
    let mut census = CensusEntry::default();
    for rec in &trajectory.records {
        let s = rec.batch_size.unwrap_or(0) as f64;
        let residual = (m - s) / m;
        let e2 = rec.err_norm * rec.err_norm;
        let bound = match problem.loss() {
            Loss::Square => {
                if 2.0 * s < m {
                    continue;
                }
                8.0 * r * r * residual * rec.f
            }
            Loss::Logistic => 4.0 * r.powi(4) * residual * residual,
        };
        census.record(rec.k, bound - e2, tol.error_bound_abs);
    }
    Some(census)
}

/// Empirical error-bound ratios `dist(x^k, X) / ||grad f(x^k)||` over points
/// with gradient norm above [`TAU_GRAD_FLOOR`].
pub fn errbound_ratios(trajectory: &Trajectory) -> Result<Vec<f64>, DiagnosticsError> {
    let mut out = Vec::new();
    for r in &trajectory.records {
        let dist = r.dist_to_opt.ok_or(DiagnosticsError::MissingDistances)?;
        if r.grad_norm > TAU_GRAD_FLOOR {
            out.push(dist / r.grad_norm);
        }
    }
    Ok(out)
}

/// Largest observed error-bound ratio.
pub fn estimate_tau(trajectory: &Trajectory) -> Result<f64, DiagnosticsError> {
    let ratios = errbound_ratios(trajectory)?;
    ratios
        .into_iter()
        .reduce(f64::max)
        .ok_or(DiagnosticsError::NoQualifyingPoints(TAU_GRAD_FLOOR))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// `max <= factor * median`. Empty input counts as bounded.
pub fn bounded_by_median(values: &[f64], factor: f64) -> bool {
    match median(values) {
        None => true,
        Some(med) => values.iter().all(|&v| v <= factor * med),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Fraction of the qualifying iterations (after `skip`) used for the fit.
    pub tail_fraction: f64,
    /// Leading iterations dropped as transients.
    pub skip: usize,
    /// The window ends before the first gap below this value.
    pub floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tail_fraction: 0.5,
            skip: 10,
            floor: 1e-14,
        }
    }
}

impl FitOptions {
    pub fn with_tail(tail_fraction: f64) -> Self {
        Self {
            tail_fraction,
            ..Self::default()
        }
    }
}

pub const MIN_FIT_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearRateFit {
    /// Per-iteration contraction factor `exp(slope)`.
    pub rate: f64,
    pub r_squared: f64,
    /// Inclusive iteration range used.
    pub window: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SublinearFit {
    /// Slope of `log gap` against `log k`.
    pub exponent: f64,
    pub r_squared: f64,
    pub window: (usize, usize),
}

/// Iterations used for a fit, as `(first, last)` inclusive.
fn fit_window(
    gaps: &[f64],
    opts: &FitOptions,
    first_allowed: usize,
) -> Result<(usize, usize), DiagnosticsError> {
    if !(opts.tail_fraction > 0.0 && opts.tail_fraction <= 1.0) {
        return Err(DiagnosticsError::InvalidParameter(format!(
            "tail fraction {} outside (0, 1]",
            opts.tail_fraction
        )));
    }
    let qualifying = gaps
        .iter()
        .position(|&g| !(g.is_finite() && g > 0.0 && g >= opts.floor))
        .unwrap_or(gaps.len());
    let usable = qualifying.saturating_sub(first_allowed);
    if usable < MIN_FIT_POINTS {
        return Err(DiagnosticsError::TooFewPoints {
            needed: MIN_FIT_POINTS,
            found: usable,
        });
    }
    let skip = if usable - opts.skip.min(usable) >= MIN_FIT_POINTS {
        opts.skip
    } else {
        0
    };
    let remaining = usable - skip;
    let take =
        ((remaining as f64 * opts.tail_fraction).ceil() as usize).clamp(MIN_FIT_POINTS, remaining);
    Ok((qualifying - take, qualifying - 1))
}

/// Ordinary least squares `y = a + b x`; returns `(slope, r_squared)`.
pub fn linear_regression(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if syy > 0.0 {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    (slope, r2)
}

/// Fits `log gap_k ~ a + k log c` over the tail window.
pub fn fit_linear_rate(gaps: &[f64], opts: &FitOptions) -> Result<LinearRateFit, DiagnosticsError> {
    let (lo, hi) = fit_window(gaps, opts, 0)?;
    let xs: Vec<f64> = (lo..=hi).map(|k| k as f64).collect();
    let ys: Vec<f64> = gaps[lo..=hi].iter().map(|g| g.ln()).collect();
    let (slope, r_squared) = linear_regression(&xs, &ys);
    Ok(LinearRateFit {
        rate: slope.exp(),
        r_squared,
        window: (lo, hi),
    })
}

/// Fits `log gap_k ~ a + p log k` over the tail window (`k >= 1`).
pub fn fit_sublinear_exponent(
    gaps: &[f64],
    opts: &FitOptions,
) -> Result<SublinearFit, DiagnosticsError> {
    let (lo, hi) = fit_window(gaps, opts, 1)?;
    let lo = lo.max(1);
    let xs: Vec<f64> = (lo..=hi).map(|k| (k as f64).ln()).collect();
    let ys: Vec<f64> = gaps[lo..=hi].iter().map(|g| g.ln()).collect();
    let (exponent, r_squared) = linear_regression(&xs, &ys);
    Ok(SublinearFit {
        exponent,
        r_squared,
        window: (lo, hi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuDelta {
    pub mu: f64,
    pub delta: f64,
}

/// Gaps and squared error norms paired for the one-step recursion:
/// `(gap_k, gap_{k+1}, ||e^{k+1}||^2)`.
fn recursion_terms(trajectory: &Trajectory, f_min: f64) -> Vec<(f64, f64, f64)> {
    trajectory
        .records
        .windows(2)
        .map(|w| {
            (
                w[0].f - f_min,
                w[1].f - f_min,
                w[0].err_norm * w[0].err_norm,
            )
        })
        .collect()
}

/// Whether `gap_{k+1} <= mu gap_k + delta ||e^{k+1}||^2 + tol` holds at every step.
pub fn mu_delta_feasible(
    trajectory: &Trajectory,
    cert: &OptimalSetCertificate,
    pair: MuDelta,
    tol: &Tolerances,
) -> bool {
    recursion_terms(trajectory, cert.f_min)
        .into_iter()
        .all(|(g, g1, e2)| g1 <= pair.mu * g + pair.delta * e2 + tol.recursion_abs)
}

/// Smallest grid `mu` admitting some `delta` in `[DELTA_MIN, DELTA_MAX]`,
/// with the smallest such `delta`.
///
/// For fixed `mu` the feasible deltas form a half-line, so the minimal delta
/// is computed exactly rather than searched.
pub fn find_mu_delta(
    trajectory: &Trajectory,
    cert: &OptimalSetCertificate,
    tol: &Tolerances,
) -> Option<MuDelta> {
    let terms = recursion_terms(trajectory, cert.f_min);
    'mu: for &mu in &MU_GRID {
        let mut delta = DELTA_MIN;
        for &(g, g1, e2) in &terms {
            let excess = g1 - mu * g - tol.recursion_abs;
            if excess <= 0.0 {
                continue;
            }
            if e2 == 0.0 {
                continue 'mu;
            }
            delta = delta.max(excess / e2);
        }
        if delta <= DELTA_MAX {
            // tiny headroom so the returned pair passes re-evaluation
            let delta = (delta * (1.0 + 1e-12)).min(DELTA_MAX);
            return Some(MuDelta { mu, delta });
        }
    }
    None
}

/// `mu = (8 nu / L_f) / (1 + 8 nu / L_f)`, `delta = 2 nu (1 + 1/L_f^2) / (1 + 8 nu / L_f)`.
pub fn mu_delta_formula(nu: f64, lipschitz_f: f64) -> Result<MuDelta, DiagnosticsError> {
    if !(nu > 0.0 && nu.is_finite()) || !(lipschitz_f > 0.0 && lipschitz_f.is_finite()) {
        return Err(DiagnosticsError::InvalidParameter(format!(
            "nu and L_f must be positive, got {nu}, {lipschitz_f}"
        )));
    }
    let ratio = 8.0 * nu / lipschitz_f;
    Ok(MuDelta {
        mu: ratio / (1.0 + ratio),
        delta: 2.0 * nu * (1.0 + 1.0 / (lipschitz_f * lipschitz_f)) / (1.0 + ratio),
    })
}

/// `gap_k <= mu^k gap_0 + delta sum_{j=1}^k mu^{k-j} ||e^j||^2`.
pub fn envelope_check(
    trajectory: &Trajectory,
    pair: MuDelta,
    cert: &OptimalSetCertificate,
    tol: &Tolerances,
) -> CensusEntry {
    let mut census = CensusEntry::default();
    let Some(first) = trajectory.records.first() else {
        return census;
    };
    let gap0 = first.f - cert.f_min;
    let t = tol.envelope_rel * (1.0 + gap0.abs());
    let mut envelope = gap0;
    for (k, rec) in trajectory.records.iter().enumerate() {
        if k > 0 {
            let prev = &trajectory.records[k - 1];
            envelope = pair.mu * envelope + pair.delta * prev.err_norm * prev.err_norm;
        }
        census.record(rec.k, envelope - (rec.f - cert.f_min), t);
    }
    census
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRateReport {
    /// Smallest multiplier making the step-norm envelope hold at every k.
    pub lambda1: f64,
    /// Same for the distance envelope; `None` when distances are missing.
    pub lambda2: Option<f64>,
    pub step_bounded: bool,
    pub dist_bounded: Option<bool>,
}

/// Envelope shape `sum_{j=1}^{k+1} mu^{(k+1-j)/2} ||e^j|| + ((1+mu)/2)^{k/2}` for every record.
pub fn envelope_shape(trajectory: &Trajectory, mu: f64) -> Vec<f64> {
    let root = mu.sqrt();
    let base = (0.5 * (1.0 + mu)).sqrt();
    let mut acc = 0.0;
    trajectory
        .records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            acc = root * acc + r.err_norm;
            acc + base.powi(k as i32)
        })
        .collect()
}

/// Growth test for envelope ratios: the latter half of the qualifying ratios
/// may not exceed `BOUNDED_FACTOR` times the median of all of them.
fn ratios_bounded(numerators: &[f64], shape: &[f64]) -> bool {
    let ratios: Vec<f64> = numerators
        .iter()
        .zip(shape)
        .filter(|(n, _)| **n > ENVELOPE_FLOOR)
        .map(|(n, s)| n / s)
        .collect();
    let Some(med) = median(&ratios) else {
        return true;
    };
    ratios[ratios.len() / 2..]
        .iter()
        .all(|&r| r <= BOUNDED_FACTOR * med)
}

/// Fits the step and distance envelope multipliers for a feasible `mu`.
pub fn iterate_rate_check(trajectory: &Trajectory, mu: f64) -> IterateRateReport {
    let shape = envelope_shape(trajectory, mu);
    let steps: Vec<f64> = trajectory.records.iter().map(|r| r.step_norm).collect();
    let lambda1 = steps
        .iter()
        .zip(&shape)
        .map(|(s, e)| s / e)
        .fold(0.0, f64::max);
    let dists: Option<Vec<f64>> = trajectory.records.iter().map(|r| r.dist_to_opt).collect();
    let (lambda2, dist_bounded) = match &dists {
        Some(d) => (
            Some(d.iter().zip(&shape).map(|(d, e)| d / e).fold(0.0, f64::max)),
            Some(ratios_bounded(d, &shape)),
        ),
        None => (None, None),
    };
    IterateRateReport {
        lambda1,
        lambda2,
        step_bounded: ratios_bounded(&steps, &shape),
        dist_bounded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ViolationCensus {
    pub descent: Option<CensusEntry>,
    pub iter_bound_a: Option<CensusEntry>,
    pub iter_bound_b: Option<CensusEntry>,
    pub mu_delta_envelope: Option<CensusEntry>,
    pub ls_error_bound: Option<CensusEntry>,
    pub logistic_error_bound: Option<CensusEntry>,
}

impl ViolationCensus {
    pub fn entries(&self) -> [(&'static str, Option<&CensusEntry>); 6] {
        [
            ("descent", self.descent.as_ref()),
            ("iter_bound_a", self.iter_bound_a.as_ref()),
            ("iter_bound_b", self.iter_bound_b.as_ref()),
            ("mu_delta_envelope", self.mu_delta_envelope.as_ref()),
            ("ls_error_bound", self.ls_error_bound.as_ref()),
            ("logistic_error_bound", self.logistic_error_bound.as_ref()),
        ]
    }

    pub fn total_violations(&self) -> usize {
        self.entries()
            .iter()
            .filter_map(|(_, e)| e.map(|e| e.violations))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RateReport {
    pub linear_fit: Option<LinearRateFit>,
    pub sublinear_fit: Option<SublinearFit>,
    pub tau_hat: Option<f64>,
    pub tau_bounded: Option<bool>,
    pub mu_delta: Option<MuDelta>,
    pub iterate_rates: Option<IterateRateReport>,
    pub census: ViolationCensus,
}

/// Which checks [`analyze`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Checks {
    pub descent: bool,
    pub iter_bounds: bool,
    pub mu_delta: bool,
    pub error_bounds: bool,
}

impl Default for Checks {
    fn default() -> Self {
        Self {
            descent: true,
            iter_bounds: true,
            mu_delta: true,
            error_bounds: true,
        }
    }
}

/// Runs every enabled check and fit on one annotated trajectory.
pub fn analyze(
    trajectory: &Trajectory,
    problem: &ComposedProblem,
    cert: &OptimalSetCertificate,
    checks: &Checks,
    tol: &Tolerances,
    fit: &FitOptions,
) -> RateReport {
    let consts = problem.lipschitz();
    let mut report = RateReport::default();
    if checks.descent {
        report.census.descent = Some(verify_descent(trajectory, &consts, tol));
    }
    if checks.iter_bounds {
        let ib = verify_iter_bounds(trajectory, &consts, cert, tol);
        report.census.iter_bound_a = Some(ib.step);
        report.census.iter_bound_b = Some(ib.gap);
    }
    if checks.error_bounds {
        let entry = verify_error_bounds(trajectory, problem, tol);
        match problem.loss() {
            Loss::Square => report.census.ls_error_bound = entry,
            Loss::Logistic => report.census.logistic_error_bound = entry,
        }
    }
    if checks.mu_delta {
        report.mu_delta = find_mu_delta(trajectory, cert, tol);
        if let Some(pair) = report.mu_delta {
            report.census.mu_delta_envelope = Some(envelope_check(trajectory, pair, cert, tol));
            report.iterate_rates = Some(iterate_rate_check(trajectory, pair.mu));
        }
    }
    if let Ok(ratios) = errbound_ratios(trajectory) {
        report.tau_hat = ratios.iter().copied().reduce(f64::max);
        report.tau_bounded = Some(bounded_by_median(&ratios, BOUNDED_FACTOR));
    }
    let gaps = trajectory.gaps(cert.f_min);
    report.linear_fit = fit_linear_rate(&gaps, fit).ok();
    report.sublinear_fit = fit_sublinear_exponent(&gaps, fit).ok();
    report
}

/// Per-iteration means over independent runs of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub mean_gap: Vec<f64>,
    pub se_gap: Vec<f64>,
    pub mean_step: Vec<f64>,
    pub se_step: Vec<f64>,
    pub mean_dist: Option<Vec<f64>>,
    pub se_dist: Option<Vec<f64>>,
    pub mean_sq_err: Vec<f64>,
    pub se_sq_err: Vec<f64>,
    pub linear_fit: Option<LinearRateFit>,
    pub sublinear_fit: Option<SublinearFit>,
}

/// Sample mean and standard error of each column, summed in run order.
fn column_stats(columns: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let runs = columns.len() as f64;
    let len = columns[0].len();
    let mut mean = vec![0.0; len];
    let mut se = vec![0.0; len];
    for k in 0..len {
        let m = columns.iter().map(|c| c[k]).sum::<f64>() / runs;
        let var = columns.iter().map(|c| (c[k] - m) * (c[k] - m)).sum::<f64>() / (runs - 1.0);
        mean[k] = m;
        se[k] = (var / runs).sqrt();
    }
    (mean, se)
}

pub fn aggregate_expectation(
    trajectories: &[Trajectory],
    cert: &OptimalSetCertificate,
    fit: &FitOptions,
) -> Result<Aggregate, DiagnosticsError> {
    if trajectories.len() < 2 {
        return Err(DiagnosticsError::TooFewTrajectories(trajectories.len()));
    }
    let len = trajectories[0].len();
    if trajectories.iter().any(|t| t.len() != len) {
        return Err(DiagnosticsError::LengthMismatch);
    }
    let column = |f: &dyn Fn(&crate::engine::IterationRecord) -> f64| -> Vec<Vec<f64>> {
        trajectories
            .iter()
            .map(|t| t.records.iter().map(f).collect())
            .collect()
    };
    let (mean_gap, se_gap) = column_stats(&column(&|r| r.f - cert.f_min));
    let (mean_step, se_step) = column_stats(&column(&|r| r.step_norm));
    let (mean_sq_err, se_sq_err) = column_stats(&column(&|r| r.err_norm * r.err_norm));
    let has_dist = trajectories
        .iter()
        .all(|t| t.records.iter().all(|r| r.dist_to_opt.is_some()));
    let (mean_dist, se_dist) = if has_dist {
        let (m, s) = column_stats(&column(&|r| r.dist_to_opt.unwrap_or(0.0)));
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    Ok(Aggregate {
        runs: trajectories.len(),
        linear_fit: fit_linear_rate(&mean_gap, fit).ok(),
        sublinear_fit: fit_sublinear_exponent(&mean_gap, fit).ok(),
        mean_gap,
        se_gap,
        mean_step,
        se_step,
        mean_dist,
        se_dist,
        mean_sq_err,
        se_sq_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, ErrorModel, IterationRecord};
    use crate::optimal::certify;
    use crate::problem::fixtures::ls_tiny;
    use approx::assert_abs_diff_eq;

    fn synthetic(fs: &[f64], errs: &[f64], steps: &[f64]) -> Trajectory {
        Trajectory {
            records: fs
                .iter()
                .enumerate()
                .map(|(k, &f)| IterationRecord {
                    k,
                    x: vec![0.0],
                    f,
                    grad_norm: 1.0,
                    err_norm: errs[k],
                    step_norm: steps[k],
                    batch_size: None,
                    dist_to_opt: None,
                })
                .collect(),
            seed: 0,
            problem_digest: String::new(),
            model: String::new(),
        }
    }

    fn cert_with_fmin(f_min: f64) -> OptimalSetCertificate {
        let mut c = certify(&ls_tiny()).unwrap();
        c.f_min = f_min;
        c
    }

    #[test]
    fn descent_holds_on_ls_tiny_and_flags_corruption() {
        let p = ls_tiny();
        let consts = p.lipschitz();
        let tol = Tolerances::default();
        let t = run(&p, &ErrorModel::Zero, &[0.0, 0.0], 8, 0).unwrap();
        assert!(verify_descent(&t, &consts, &tol).passed());

        let mut bad = t.clone();
        bad.records[3].f += 1.0;
        let census = verify_descent(&bad, &consts, &tol);
        assert!(census.violations >= 1);
        assert_eq!(census.first_violation, Some(3));

        let cert = certify(&p).unwrap();
        let ib = verify_iter_bounds(&t, &consts, &cert, &tol);
        assert!(ib.step.passed() && ib.gap.passed());
        let ib = verify_iter_bounds(&bad, &consts, &cert, &tol);
        assert!(!ib.gap.passed());
    }

    #[test]
    fn fit_exact_geometric() {
        let gaps: Vec<f64> = (0..=50).map(|k| 0.5f64.powi(k)).collect();
        let fit = fit_linear_rate(&gaps, &FitOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.rate, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        // floor stops the window before 0.5^47
        assert_eq!(fit.window.1, 46);
    }

    #[test]
    fn fit_noisy_geometric() {
        // deterministic pseudo-noise of size 1e-15
        let gaps: Vec<f64> = (0..=100)
            .map(|k| 3.0 * 0.8f64.powi(k) + 1e-15 * ((k * 7919 % 13) as f64 / 13.0))
            .collect();
        let fit = fit_linear_rate(&gaps, &FitOptions::default()).unwrap();
        assert!((0.79..=0.81).contains(&fit.rate), "{fit:?}");
    }

    fn inverse_square(n: usize) -> Vec<f64> {
        (0..=n)
            .map(|k| if k == 0 { 1.0 } else { 1.0 / (k * k) as f64 })
            .collect()
    }

    #[test]
    fn sublinear_fit_recovers_exponent() {
        let fit = fit_sublinear_exponent(&inverse_square(400), &FitOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.exponent, -2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-12);

        let gaps: Vec<f64> = (0..=400)
            .map(|k| {
                if k == 0 {
                    5.0
                } else {
                    5.0 / (k as f64).powf(1.5)
                }
            })
            .collect();
        let fit = fit_sublinear_exponent(&gaps, &FitOptions::default()).unwrap();
        assert!((-1.55..=-1.45).contains(&fit.exponent));
    }

    #[test]
    fn fits_discriminate_regimes() {
        let full = FitOptions::with_tail(1.0);
        let lin = fit_linear_rate(&inverse_square(400), &full).unwrap();
        assert!(lin.r_squared < 0.9, "{lin:?}");

        let gaps: Vec<f64> = (0..=40).map(|k| 0.5f64.powi(k)).collect();
        let lin = fit_linear_rate(&gaps, &full).unwrap();
        let sub = fit_sublinear_exponent(&gaps, &full).unwrap();
        assert!(sub.r_squared < lin.r_squared);
    }

    #[test]
    fn fit_needs_five_points() {
        let gaps = [1.0, 0.5, 0.25, 1e-20];
        assert!(matches!(
            fit_linear_rate(&gaps, &FitOptions::default()),
            Err(DiagnosticsError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn mu_delta_formula_examples() {
        let p = mu_delta_formula(1.0, 8.0).unwrap();
        assert_abs_diff_eq!(p.mu, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.delta, 65.0 / 64.0, epsilon = 1e-15);
        let p = mu_delta_formula(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(p.mu, 8.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.delta, 4.0 / 9.0, epsilon = 1e-15);
        assert!(mu_delta_formula(1e-12, 1.0).unwrap().mu < 1e-10);
        assert!(mu_delta_formula(0.0, 1.0).is_err());
        assert!(mu_delta_formula(1.0, -1.0).is_err());
    }

    #[test]
    fn mu_delta_on_ls_tiny() {
        let p = ls_tiny();
        let t = run(&p, &ErrorModel::Zero, &[0.0, 0.0], 5, 0).unwrap();
        let cert = certify(&p).unwrap();
        let tol = Tolerances::default();
        let pair = find_mu_delta(&t, &cert, &tol).unwrap();
        assert_eq!(pair.mu, MU_GRID[0]);
        assert!(envelope_check(&t, pair, &cert, &tol).passed());
    }

    #[test]
    fn mu_delta_rejects_growth() {
        let t = synthetic(&[1.0, 2.0, 4.0, 8.0], &[0.0; 4], &[1.0; 4]);
        assert_eq!(
            find_mu_delta(&t, &cert_with_fmin(0.0), &Tolerances::default()),
            None
        );
    }

    #[test]
    fn tight_envelope_is_violated() {
        let fs: Vec<f64> = (0..50).map(|k| 0.99f64.powi(k)).collect();
        let t = synthetic(&fs, &[0.0; 50], &[0.1; 50]);
        let census = envelope_check(
            &t,
            MuDelta {
                mu: 0.01,
                delta: 0.01,
            },
            &cert_with_fmin(0.0),
            &Tolerances::default(),
        );
        assert!(census.violations > 0);
    }

    #[test]
    fn iterate_rates_flag_stalled_tail() {
        let n = 200;
        let fs: Vec<f64> = (0..n).map(|k| 0.5f64.powi(k as i32)).collect();
        let steps: Vec<f64> = (0..n)
            .map(|k| if k < 100 { 0.8f64.powi(k as i32) } else { 1e-1 })
            .collect();
        let t = synthetic(&fs, &vec![0.0; n], &steps);
        let report = iterate_rate_check(&t, 0.5);
        assert!(!report.step_bounded);

        let steps: Vec<f64> = (0..n).map(|k| 0.8f64.powi(k as i32)).collect();
        let t = synthetic(&fs, &vec![0.0; n], &steps);
        let report = iterate_rate_check(&t, 0.5);
        assert!(report.step_bounded);
        assert!(report.lambda1.is_finite() && report.lambda1 > 0.0);
        assert_eq!(report.lambda2, None);
    }

    #[test]
    fn tau_requires_distances_and_gradient() {
        let p = ls_tiny();
        let set = crate::optimal::OptimalSet::certify(&p).unwrap();
        let mut t = run(&p, &ErrorModel::Zero, &[0.0, 0.0], 3, 0).unwrap();
        assert_eq!(estimate_tau(&t), Err(DiagnosticsError::MissingDistances));
        set.annotate(&mut t).unwrap();
        assert_abs_diff_eq!(estimate_tau(&t).unwrap(), 0.2, epsilon = 1e-14);

        let mut inside = run(&p, &ErrorModel::Zero, &[1.0, 4.0], 3, 0).unwrap();
        set.annotate(&mut inside).unwrap();
        assert_eq!(
            estimate_tau(&inside),
            Err(DiagnosticsError::NoQualifyingPoints(TAU_GRAD_FLOOR))
        );
    }

    #[test]
    fn aggregate_of_identical_runs() {
        let p = ls_tiny();
        let cert = certify(&p).unwrap();
        let t = run(&p, &ErrorModel::Zero, &[0.0, 0.0], 4, 0).unwrap();
        let agg = aggregate_expectation(
            &[t.clone(), t.clone(), t.clone()],
            &cert,
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(agg.mean_gap, t.gaps(cert.f_min));
        assert!(agg.se_gap.iter().all(|&s| s == 0.0));
        assert!(aggregate_expectation(&[t], &cert, &FitOptions::default()).is_err());
    }

    #[test]
    fn boundedness_helper() {
        assert!(bounded_by_median(&[1.0, 2.0, 3.0], 1e3));
        assert!(!bounded_by_median(&[1.0, 1.0, 1.0, 5000.0], 1e3));
        assert!(bounded_by_median(&[], 1e3));
    }
}
