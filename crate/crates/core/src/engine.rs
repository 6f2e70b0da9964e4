//! The inexact gradient iteration `x+ = x - (grad f(x) + e) / L_f`.
//!
//! An [`ErrorModel`] produces the perturbation `e^{k+1}` at iteration `k`:
//! nothing, a vector with a prescribed norm, or the error made by averaging a
//! subset of the per-sample gradients.
//!
//! RNG consumption per iteration is fixed: synthetic models draw `n` standard
//! normals for the direction (none for a fixed direction); sampled batches
//! draw one index subset via `rand::seq::index::sample`. Zero and
//! deterministic-prefix models consume nothing.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::problem::{ComposedProblem, Evaluation, ProblemError};

pub type SolverRng = ChaCha8Rng;

pub fn solver_rng(seed: u64) -> SolverRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("objective became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("batch at iteration {iteration} is empty")]
    EmptyBatch { iteration: usize },
    #[error("batch size {size} outside [1, {samples}]")]
    BatchSize { size: usize, samples: usize },
    #[error("invalid error model: {0}")]
    InvalidModel(String),
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Norm schedule for synthetic errors, indexed by `j >= 1` for `e^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormSchedule {
    /// `||e^j||^2 = scale * ratio^j`
    Geometric { scale: f64, ratio: f64 },
    /// `||e^j||^2 = scale / j^(1 + exponent)`
    Polynomial { scale: f64, exponent: f64 },
}

impl NormSchedule {
    pub fn squared_norm(&self, j: usize) -> f64 {
        let j = j.max(1) as f64;
        match *self {
            NormSchedule::Geometric { scale, ratio } => scale * ratio.powf(j),
            NormSchedule::Polynomial { scale, exponent } => scale / j.powf(1.0 + exponent),
        }
    }

    pub fn norm(&self, j: usize) -> f64 {
        self.squared_norm(j).sqrt()
    }

    fn validate(&self) -> Result<(), EngineError> {
        match *self {
            NormSchedule::Geometric { scale, ratio } => {
                if !(scale >= 0.0 && scale.is_finite()) || !(ratio > 0.0 && ratio < 1.0) {
                    return Err(EngineError::InvalidModel(format!(
                        "geometric schedule needs scale >= 0 and ratio in (0,1), got {scale}, {ratio}"
                    )));
                }
            }
            NormSchedule::Polynomial { scale, exponent } => {
                if !(scale >= 0.0 && scale.is_finite()) || !(exponent > 0.0 && exponent.is_finite())
                {
                    return Err(EngineError::InvalidModel(format!(
                        "polynomial schedule needs scale >= 0 and exponent > 0, got {scale}, {exponent}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Direction {
    /// Uniform on the unit sphere (normalized standard normal draw).
    RandomUnit,
    /// A fixed direction; normalized before use.
    Fixed { vector: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchKind {
    /// `|I_k| = min(M, ceil(M (1 - initial * ratio^k)))`
    GeometricResidual { initial: f64, ratio: f64 },
    /// `|I_k| = min(M, ceil(M (1 - initial / (k+1)^(1+exponent))))`
    PolynomialResidual { initial: f64, exponent: f64 },
    /// `sizes[k]`, holding the last entry once the list runs out.
    Explicit { sizes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSchedule {
    #[serde(flatten)]
    pub kind: BatchKind,
    pub samples: usize,
}

impl BatchSchedule {
    pub fn new(kind: BatchKind, samples: usize) -> Result<Self, EngineError> {
        let s = Self { kind, samples };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidModel(msg));
        if self.samples == 0 {
            return bad("batch schedule over zero samples".into());
        }
        match &self.kind {
            BatchKind::GeometricResidual { initial, ratio } => {
                if !(*initial > 0.0 && *initial < 1.0) || !(*ratio > 0.0 && *ratio < 1.0) {
                    return bad(format!(
                        "geometric residual needs initial and ratio in (0,1), got {initial}, {ratio}"
                    ));
                }
            }
            BatchKind::PolynomialResidual { initial, exponent } => {
                if !(*initial > 0.0 && *initial < 1.0) || !(*exponent > 0.0 && exponent.is_finite())
                {
                    return bad(format!(
                        "polynomial residual needs initial in (0,1) and exponent > 0, got {initial}, {exponent}"
                    ));
                }
            }
            BatchKind::Explicit { sizes } => {
                if sizes.is_empty() {
                    return bad("explicit schedule is empty".into());
                }
                if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > self.samples) {
                    return Err(EngineError::BatchSize {
                        size: s,
                        samples: self.samples,
                    });
                }
                if sizes.windows(2).any(|w| w[1] < w[0]) {
                    return bad("explicit batch sizes must be nondecreasing".into());
                }
            }
        }
        Ok(())
    }

    /// `|I_k|` for iteration `k >= 0`.
    pub fn batch_size_at(&self, k: usize) -> usize {
        let m = self.samples;
        let from_residual = |residual: f64| -> usize {
            let raw = (m as f64 * (1.0 - residual)).ceil();
            if raw >= m as f64 {
                m
            } else {
                (raw.max(1.0)) as usize
            }
        };
        match &self.kind {
            BatchKind::GeometricResidual { initial, ratio } => {
                from_residual(initial * ratio.powf(k as f64))
            }
            BatchKind::PolynomialResidual { initial, exponent } => {
                from_residual(initial / ((k + 1) as f64).powf(1.0 + exponent))
            }
            BatchKind::Explicit { sizes } => sizes[k.min(sizes.len() - 1)].clamp(1, m),
        }
    }

    /// `E_{k+1} = (M - |I_k|) / M`.
    pub fn residual_fraction(&self, k: usize) -> f64 {
        (self.samples - self.batch_size_at(k)) as f64 / self.samples as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// `I_k = {0, ..., |I_k| - 1}`
    DeterministicPrefix,
    /// A fresh uniform subset every iteration, independent of earlier ones.
    UniformWithoutReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorModel {
    Zero,
    Synthetic {
        schedule: NormSchedule,
        direction: Direction,
    },
    IncrementalBatch {
        schedule: BatchSchedule,
        selection: Selection,
    },
}

impl ErrorModel {
    pub fn validate(&self, problem: &ComposedProblem) -> Result<(), EngineError> {
        match self {
            ErrorModel::Zero => Ok(()),
            ErrorModel::Synthetic {
                schedule,
                direction,
            } => {
                schedule.validate()?;
                if let Direction::Fixed { vector } = direction {
                    if vector.len() != problem.num_features() {
                        return Err(EngineError::InvalidModel(format!(
                            "fixed direction has dimension {}, problem has {}",
                            vector.len(),
                            problem.num_features()
                        )));
                    }
                    let n = linalg::norm(vector);
                    if !(n > 0.0 && n.is_finite()) {
                        return Err(EngineError::InvalidModel(
                            "fixed direction must be nonzero and finite".into(),
                        ));
                    }
                }
                Ok(())
            }
            ErrorModel::IncrementalBatch { schedule, .. } => {
                schedule.validate()?;
                if schedule.samples != problem.num_samples() {
                    return Err(EngineError::InvalidModel(format!(
                        "batch schedule is over {} samples, problem has {}",
                        schedule.samples,
                        problem.num_samples()
                    )));
                }
                Ok(())
            }
        }
    }

    /// True when the squared error norms are summable, i.e. the convergence
    /// theory applies. Explicit schedules that never reach the full sample
    /// set leave a persistent error.
    pub fn has_summable_errors(&self) -> bool {
        match self {
            ErrorModel::Zero | ErrorModel::Synthetic { .. } => true,
            ErrorModel::IncrementalBatch { schedule, .. } => match &schedule.kind {
                BatchKind::Explicit { sizes } => sizes.last() == Some(&schedule.samples),
                _ => true,
            },
        }
    }

    pub fn descriptor(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{self:?}"))
    }
}

/// One draw of `e^{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDraw {
    pub vector: Vec<f64>,
    pub batch_size: Option<usize>,
}

/// Draws `e^{k+1}` at the point `x` (iteration `k`).
pub fn make_error<R: Rng + ?Sized>(
    model: &ErrorModel,
    problem: &ComposedProblem,
    x: &[f64],
    k: usize,
    rng: &mut R,
) -> Result<ErrorDraw, EngineError> {
    model.validate(problem)?;
    let eval = problem.evaluate(x)?;
    draw_error(model, problem, &eval, k, rng)
}

fn draw_error<R: Rng + ?Sized>(
    model: &ErrorModel,
    problem: &ComposedProblem,
    eval: &Evaluation,
    k: usize,
    rng: &mut R,
) -> Result<ErrorDraw, EngineError> {
    let n = problem.num_features();
    match model {
        ErrorModel::Zero => Ok(ErrorDraw {
            vector: vec![0.0; n],
            batch_size: None,
        }),
        ErrorModel::Synthetic {
            schedule,
            direction,
        } => {
            let target = schedule.norm(k + 1);
            let mut v: Vec<f64> = match direction {
                Direction::RandomUnit => loop {
                    let draw: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                    if linalg::norm(&draw) > 0.0 {
                        break draw;
                    }
                },
                Direction::Fixed { vector } => vector.clone(),
            };
            let scale = target / linalg::norm(&v);
            v.iter_mut().for_each(|c| *c *= scale);
            Ok(ErrorDraw {
                vector: v,
                batch_size: None,
            })
        }
        ErrorModel::IncrementalBatch {
            schedule,
            selection,
        } => {
            let m = problem.num_samples();
            let size = schedule.batch_size_at(k);
            if size == 0 {
                return Err(EngineError::EmptyBatch { iteration: k });
            }
            let excluded = excluded_samples(*selection, m, size, rng);
            Ok(ErrorDraw {
                vector: batch_error(problem, eval, size, &excluded),
                batch_size: Some(size),
            })
        }
    }
}

/// Indices left out of `I_k`, sorted ascending.
fn excluded_samples<R: Rng + ?Sized>(
    selection: Selection,
    samples: usize,
    size: usize,
    rng: &mut R,
) -> Vec<usize> {
    match selection {
        Selection::DeterministicPrefix => (size..samples).collect(),
        Selection::UniformWithoutReplacement => {
            // uniform subsets and uniform complements have the same law;
            // draw whichever is smaller
            let mut out = if samples - size <= size {
                index::sample(rng, samples, samples - size).into_vec()
            } else {
                let chosen = index::sample(rng, samples, size).into_vec();
                let mut keep = vec![true; samples];
                for i in chosen {
                    keep[i] = false;
                }
                (0..samples).filter(|&i| keep[i]).collect()
            };
            out.sort_unstable();
            out
        }
    }
}

/// `e = ((M-s)/(M s)) sum_{I} grad f_i - (1/M) sum_{not I} grad f_i`,
/// evaluated as `((M - s) grad f - sum_{not I} grad f_i) / s`.
fn batch_error(
    problem: &ComposedProblem,
    eval: &Evaluation,
    size: usize,
    excluded: &[usize],
) -> Vec<f64> {
    let m = problem.num_samples();
    let s = size as f64;
    let mut e: Vec<f64> = eval
        .gradient
        .iter()
        .map(|g| g * (m - size) as f64)
        .collect();
    let design = problem.design();
    for &i in excluded {
        linalg::axpy(-eval.derivatives[i], design.row(i), &mut e);
    }
    e.iter_mut().for_each(|c| *c /= s);
    e
}

/// Batch-average gradient `G_k = (1/|I|) sum_{i in I} grad f_i(x)`.
pub fn batch_average_gradient(
    problem: &ComposedProblem,
    x: &[f64],
    batch: &[usize],
) -> Result<Vec<f64>, EngineError> {
    if batch.is_empty() {
        return Err(EngineError::EmptyBatch { iteration: 0 });
    }
    let mut g = vec![0.0; problem.num_features()];
    for &i in batch {
        let gi = problem.sample_gradient(i, x)?;
        linalg::axpy(1.0, &gi, &mut g);
    }
    g.iter_mut().for_each(|c| *c /= batch.len() as f64);
    Ok(g)
}

/// One IGM update with step `1 / L_f`.
pub fn igm_step(
    problem: &ComposedProblem,
    x: &[f64],
    error: &[f64],
) -> Result<Vec<f64>, EngineError> {
    let grad = problem.full_gradient(x)?;
    step_from_gradient(problem, x, &grad, error)
}

fn step_from_gradient(
    problem: &ComposedProblem,
    x: &[f64],
    grad: &[f64],
    error: &[f64],
) -> Result<Vec<f64>, EngineError> {
    if error.len() != x.len() {
        return Err(ProblemError::Dimension {
            expected: x.len(),
            got: error.len(),
        }
        .into());
    }
    let step = 1.0 / problem.lipschitz().lipschitz_f;
    Ok(x.iter()
        .zip(grad)
        .zip(error)
        .map(|((xi, gi), ei)| xi - step * (gi + ei))
        .collect())
}

/// Exact expectation of `||e||^2` over uniform size-`batch` subsets:
/// `((M-s)/(M s)) (1/(M-1)) sum_i ||grad f_i - grad f||^2`.
pub fn expected_sq_error(
    problem: &ComposedProblem,
    x: &[f64],
    batch: usize,
) -> Result<f64, EngineError> {
    let m = problem.num_samples();
    if batch == 0 || batch > m {
        return Err(EngineError::BatchSize {
            size: batch,
            samples: m,
        });
    }
    if m == 1 {
        return Ok(0.0);
    }
    let eval = problem.evaluate(x)?;
    let design = problem.design();
    let mut spread = 0.0;
    for i in 0..m {
        let d = eval.derivatives[i];
        spread += design
            .row(i)
            .iter()
            .zip(&eval.gradient)
            .map(|(a, g)| {
                let diff = d * a - g;
                diff * diff
            })
            .sum::<f64>();
    }
    let (mf, s) = (m as f64, batch as f64);
    Ok((mf - s) / (mf * s) * spread / (mf - 1.0))
}

/// State of the iterate at step `k`, with the error and step taken from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    /// `||e^{k+1}||`
    pub err_norm: f64,
    /// `||x^k - x^{k+1}||`
    pub step_norm: f64,
    pub batch_size: Option<usize>,
    /// `dist(x^k, X)`, filled in by the optimal-set oracle.
    pub dist_to_opt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<IterationRecord>,
    pub seed: u64,
    pub problem_digest: String,
    pub model: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn objective_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.f).collect()
    }

    /// `f(x^k) - f_min` for every record.
    pub fn gaps(&self, f_min: f64) -> Vec<f64> {
        self.records.iter().map(|r| r.f - f_min).collect()
    }
}

/// Runs `iterations` IGM steps from `x0`.
///
/// The trajectory holds `iterations + 1` records, `x^0 ..= x^K`. The error
/// and step of the last record describe the move to `x^{K+1}`, which is not
/// stored.
pub fn run(
    problem: &ComposedProblem,
    model: &ErrorModel,
    x0: &[f64],
    iterations: usize,
    seed: u64,
) -> Result<Trajectory, EngineError> {
    if iterations == 0 {
        return Err(EngineError::NoIterations);
    }
    model.validate(problem)?;
    if x0.len() != problem.num_features() {
        return Err(ProblemError::Dimension {
            expected: problem.num_features(),
            got: x0.len(),
        }
        .into());
    }
    let mut rng = solver_rng(seed);
    let mut x = x0.to_vec();
    let mut records = Vec::with_capacity(iterations + 1);
    for k in 0..=iterations {
        let eval = problem.evaluate(&x)?;
        if !eval.value.is_finite() || !linalg::all_finite(&eval.gradient) {
            return Err(EngineError::Diverged { iteration: k });
        }
        let draw = draw_error(model, problem, &eval, k, &mut rng)?;
        let next = step_from_gradient(problem, &x, &eval.gradient, &draw.vector)?;
        if !linalg::all_finite(&next) {
            return Err(EngineError::Diverged { iteration: k + 1 });
        }
        records.push(IterationRecord {
            k,
            f: eval.value,
            grad_norm: linalg::norm(&eval.gradient),
            err_norm: linalg::norm(&draw.vector),
            step_norm: linalg::norm(&linalg::sub(&x, &next)),
            batch_size: draw.batch_size,
            dist_to_opt: None,
            x: std::mem::replace(&mut x, next),
        });
    }
    Ok(Trajectory {
        records,
        seed,
        problem_digest: problem.digest(),
        model: model.descriptor(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::fixtures::{log_tiny, ls_tiny};
    use approx::assert_abs_diff_eq;

    fn geometric(scale: f64, ratio: f64) -> NormSchedule {
        NormSchedule::Geometric { scale, ratio }
    }

    #[test]
    fn geometric_norm_example() {
        assert_abs_diff_eq!(geometric(1.0, 0.25).norm(2), 0.25, epsilon = 1e-15);
        let model = ErrorModel::Synthetic {
            schedule: geometric(1.0, 0.25),
            direction: Direction::RandomUnit,
        };
        // iteration k = 1 produces e^2
        let e = make_error(&model, &ls_tiny(), &[0.0, 0.0], 1, &mut solver_rng(3)).unwrap();
        assert_abs_diff_eq!(linalg::norm(&e.vector), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn polynomial_norm_schedule() {
        let s = NormSchedule::Polynomial {
            scale: 4.0,
            exponent: 1.0,
        };
        assert_abs_diff_eq!(s.squared_norm(2), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.norm(1), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn fixed_direction_is_normalized() {
        let model = ErrorModel::Synthetic {
            schedule: geometric(4.0, 0.5),
            direction: Direction::Fixed {
                vector: vec![0.0, -3.0],
            },
        };
        let e = make_error(&model, &ls_tiny(), &[0.0, 0.0], 0, &mut solver_rng(0)).unwrap();
        assert_abs_diff_eq!(e.vector[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.vector[1], -(2f64).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn two_sample_batch_error() {
        let p = ls_tiny();
        let x = [0.3, -0.7];
        let schedule = BatchSchedule::new(BatchKind::Explicit { sizes: vec![1] }, 2).unwrap();
        let model = ErrorModel::IncrementalBatch {
            schedule,
            selection: Selection::DeterministicPrefix,
        };
        let e = make_error(&model, &p, &x, 0, &mut solver_rng(0)).unwrap();
        let g1 = p.sample_gradient(0, &x).unwrap();
        let g2 = p.sample_gradient(1, &x).unwrap();
        for c in 0..2 {
            assert_abs_diff_eq!(e.vector[c], (g1[c] - g2[c]) / 2.0, epsilon = 1e-12);
        }
        assert_eq!(e.batch_size, Some(1));
    }

    #[test]
    fn full_batch_has_no_error() {
        let p = ls_tiny();
        let schedule = BatchSchedule::new(BatchKind::Explicit { sizes: vec![2] }, 2).unwrap();
        for selection in [
            Selection::DeterministicPrefix,
            Selection::UniformWithoutReplacement,
        ] {
            let model = ErrorModel::IncrementalBatch {
                schedule: schedule.clone(),
                selection,
            };
            let e = make_error(&model, &p, &[1.5, 2.0], 4, &mut solver_rng(9)).unwrap();
            assert_eq!(e.vector, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn igm_step_examples() {
        let p = ls_tiny();
        let x1 = igm_step(&p, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(x1[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x1[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.objective(&x1).unwrap(), 0.0, epsilon = 1e-15);

        assert_eq!(
            igm_step(&p, &[1.0, 3.0], &[0.0, 0.0]).unwrap(),
            vec![1.0, 3.0]
        );
        let x1 = igm_step(&p, &[0.0, 0.0], &[5.0, 0.0]).unwrap();
        assert_abs_diff_eq!(x1[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x1[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_error_run_on_ls_tiny() {
        let t = run(&ls_tiny(), &ErrorModel::Zero, &[0.0, 0.0], 3, 0).unwrap();
        let f = t.objective_values();
        assert_eq!(f.len(), 4);
        assert_abs_diff_eq!(f[0], 2.5, epsilon = 1e-15);
        for v in &f[1..] {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_model_matches_plain_gradient_descent() {
        let p = log_tiny();
        let t = run(&p, &ErrorModel::Zero, &[2.0], 20, 5).unwrap();
        let step = 1.0 / p.lipschitz().lipschitz_f;
        let mut x = vec![2.0];
        for r in &t.records {
            assert_eq!(r.x, x);
            let g = p.full_gradient(&x).unwrap();
            x = vec![x[0] - step * g[0]];
        }
    }

    #[test]
    fn batch_sizes() {
        let s = BatchSchedule::new(
            BatchKind::GeometricResidual {
                initial: 0.5,
                ratio: 0.5,
            },
            100,
        )
        .unwrap();
        assert_eq!(
            (0..3).map(|k| s.batch_size_at(k)).collect::<Vec<_>>(),
            vec![50, 75, 88]
        );
        assert_eq!(s.batch_size_at(10_000), 100);
        let sizes: Vec<usize> = (0..200).map(|k| s.batch_size_at(k)).collect();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
        assert!((0..200).all(|k| s.residual_fraction(k) <= 0.5 * 0.5f64.powi(k as i32) + 1e-15));

        let e = BatchSchedule::new(
            BatchKind::Explicit {
                sizes: vec![10, 20, 40],
            },
            50,
        )
        .unwrap();
        assert_eq!(e.batch_size_at(1), 20);
        assert_eq!(e.batch_size_at(99), 40);

        let p = BatchSchedule::new(
            BatchKind::PolynomialResidual {
                initial: 0.5,
                exponent: 1.0,
            },
            1000,
        )
        .unwrap();
        assert_eq!(p.batch_size_at(0), 500);
        assert_eq!(p.batch_size_at(1), 875);
        assert_eq!(p.batch_size_at(1_000_000), 1000);
    }

    #[test]
    fn schedule_validation() {
        assert!(BatchSchedule::new(BatchKind::Explicit { sizes: vec![3, 2] }, 5).is_err());
        assert!(BatchSchedule::new(BatchKind::Explicit { sizes: vec![0] }, 5).is_err());
        assert!(BatchSchedule::new(BatchKind::Explicit { sizes: vec![6] }, 5).is_err());
        assert!(BatchSchedule::new(
            BatchKind::GeometricResidual {
                initial: 1.5,
                ratio: 0.5
            },
            5
        )
        .is_err());
    }

    #[test]
    fn expected_sq_error_cases() {
        let p = ls_tiny();
        let x = [0.2, 0.4];
        assert_eq!(expected_sq_error(&p, &x, 2).unwrap(), 0.0);
        let g1 = p.sample_gradient(0, &x).unwrap();
        let g2 = p.sample_gradient(1, &x).unwrap();
        let want = linalg::norm_sq(&linalg::sub(&g1, &g2)) / 4.0;
        assert_abs_diff_eq!(expected_sq_error(&p, &x, 1).unwrap(), want, epsilon = 1e-12);
        assert!(expected_sq_error(&p, &x, 0).is_err());
        assert!(expected_sq_error(&p, &x, 3).is_err());

        let one = ComposedProblem::new(
            crate::linalg::Matrix::identity(1),
            vec![1.0],
            crate::problem::Loss::Square,
        )
        .unwrap();
        assert_eq!(expected_sq_error(&one, &[0.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn run_rejects_bad_input() {
        let p = ls_tiny();
        assert_eq!(
            run(&p, &ErrorModel::Zero, &[0.0, 0.0], 0, 0),
            Err(EngineError::NoIterations)
        );
        assert!(run(&p, &ErrorModel::Zero, &[0.0], 3, 0).is_err());
        let model = ErrorModel::IncrementalBatch {
            schedule: BatchSchedule::new(BatchKind::Explicit { sizes: vec![1] }, 3).unwrap(),
            selection: Selection::DeterministicPrefix,
        };
        assert!(matches!(
            run(&p, &model, &[0.0, 0.0], 3, 0),
            Err(EngineError::InvalidModel(_))
        ));
    }

    #[test]
    fn model_serde_shape() {
        let model = ErrorModel::IncrementalBatch {
            schedule: BatchSchedule::new(
                BatchKind::GeometricResidual {
                    initial: 0.5,
                    ratio: 0.8,
                },
                200,
            )
            .unwrap(),
            selection: Selection::UniformWithoutReplacement,
        };
        let json = serde_json::to_string(&model).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"incremental_batch","schedule":{"kind":"geometric_residual","initial":0.5,"ratio":0.8,"samples":200},"selection":"uniform_without_replacement"}"#
        );
        let back: ErrorModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, model);
    }
}
