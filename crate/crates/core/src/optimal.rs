//! Optimal value, the invariant image `t* = E x*`, and exact distances to the
//! optimal set.
//!
//! For `f = g(Ex)` with strictly convex `g`, every minimizer maps to the same
//! `t*`, and every `x` with `Ex = t*` is a minimizer. The optimal set is the
//! affine set `{x : Ex = t*}`, so `dist(x, X)` is the norm of the
//! minimum-norm solution of `E d = Ex - t*`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Trajectory;
use crate::linalg::{self, LinalgError, Matrix, SvdFactor};
use crate::problem::{ComposedProblem, Loss, ProblemError};

/// Gradients at or below this norm leave the error-bound ratio undefined.
pub const RATIO_GRAD_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error(
        "gradient descent stopped after {iterations} iterations with gradient norm {grad_norm:e}; \
         the data may be (nearly) separable"
    )]
    NotConverged { iterations: u64, grad_norm: f64 },
    #[error("certificate does not satisfy its invariants: {0}")]
    Invalid(String),
    #[error("certificate was issued for problem {expected}, not {got}")]
    WrongProblem { expected: String, got: String },
    #[error("gradient norm {0:e} too small for an error-bound ratio")]
    GradientTooSmall(f64),
    #[error("trajectory has no point with gradient norm above {0:e}")]
    NoQualifyingPoints(f64),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolveMethod {
    /// Pseudoinverse solution of the least-squares system.
    MinNormLeastSquares,
    /// Exact gradient descent with step `1/L_f`, then projection onto the row space.
    GradientDescent { iterations: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    /// Stop gradient descent once `||grad f|| <= grad_tol`.
    pub grad_tol: f64,
    pub max_iterations: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-12,
            max_iterations: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalSetCertificate {
    pub f_min: f64,
    pub t_star: Vec<f64>,
    /// Minimum-norm minimizer.
    pub x_ref: Vec<f64>,
    pub grad_norm_at_ref: f64,
    pub method: SolveMethod,
    pub tolerances: CertifyOptions,
    pub problem_digest: String,
}

impl OptimalSetCertificate {
    /// Checks the stored invariants against `problem`.
    pub fn validate(&self, problem: &ComposedProblem) -> Result<(), CertifyError> {
        let digest = problem.digest();
        if digest != self.problem_digest {
            return Err(CertifyError::WrongProblem {
                expected: self.problem_digest.clone(),
                got: digest,
            });
        }
        if self.x_ref.len() != problem.num_features() || self.t_star.len() != problem.num_samples()
        {
            return Err(CertifyError::Invalid(
                "dimensions do not match the problem".into(),
            ));
        }
        let lf = problem.lipschitz().lipschitz_f;
        let g = linalg::norm(&problem.full_gradient(&self.x_ref)?);
        if g > 1e-11 * (1.0 + lf) {
            return Err(CertifyError::Invalid(format!(
                "gradient norm {g:e} at the reference point"
            )));
        }
        let image = problem.design().matvec(&self.x_ref)?;
        let mismatch = linalg::norm(&linalg::sub(&image, &self.t_star));
        if mismatch > 1e-12 * (1.0 + linalg::norm(&self.t_star)) {
            return Err(CertifyError::Invalid(format!(
                "||E x_ref - t*|| = {mismatch:e}"
            )));
        }
        Ok(())
    }
}

pub fn certify(problem: &ComposedProblem) -> Result<OptimalSetCertificate, CertifyError> {
    certify_with(problem, &CertifyOptions::default())
}

pub fn certify_with(
    problem: &ComposedProblem,
    options: &CertifyOptions,
) -> Result<OptimalSetCertificate, CertifyError> {
    let factor = SvdFactor::new(problem.design())?;
    let (x_ref, method) = match problem.loss() {
        Loss::Square => (
            factor.pinv_apply(problem.targets())?,
            SolveMethod::MinNormLeastSquares,
        ),
        Loss::Logistic => {
            let (x, iterations) = exact_descent(problem, options)?;
            (
                factor.project_row_space(&x)?,
                SolveMethod::GradientDescent { iterations },
            )
        }
    };
    let t_star = problem.design().matvec(&x_ref)?;
    let f_min = problem.objective_from_margins(&t_star);
    let grad_norm_at_ref = linalg::norm(&problem.full_gradient(&x_ref)?);
    let cert = OptimalSetCertificate {
        f_min,
        t_star,
        x_ref,
        grad_norm_at_ref,
        method,
        tolerances: *options,
        problem_digest: problem.digest(),
    };
    cert.validate(problem)?;
    Ok(cert)
}

fn exact_descent(
    problem: &ComposedProblem,
    options: &CertifyOptions,
) -> Result<(Vec<f64>, u64), CertifyError> {
    let step = 1.0 / problem.lipschitz().lipschitz_f;
    let mut x = vec![0.0; problem.num_features()];
    let mut grad_norm = f64::INFINITY;
    for it in 0..=options.max_iterations {
        let g = problem.full_gradient(&x)?;
        grad_norm = linalg::norm(&g);
        if grad_norm <= options.grad_tol {
            return Ok((x, it));
        }
        linalg::axpy(-step, &g, &mut x);
    }
    Err(CertifyError::NotConverged {
        iterations: options.max_iterations,
        grad_norm,
    })
}

/// A certificate bound to a factorization of `E`, for repeated distance queries.
#[derive(Debug, Clone)]
pub struct OptimalSet {
    cert: OptimalSetCertificate,
    design: Matrix,
    factor: SvdFactor,
}

impl OptimalSet {
    pub fn new(
        cert: OptimalSetCertificate,
        problem: &ComposedProblem,
    ) -> Result<Self, CertifyError> {
        cert.validate(problem)?;
        Ok(Self::from_parts(cert, problem.design())?)
    }

    fn from_parts(cert: OptimalSetCertificate, design: &Matrix) -> Result<Self, LinalgError> {
        Ok(Self {
            factor: SvdFactor::new(design)?,
            design: design.clone(),
            cert,
        })
    }

    pub fn certify(problem: &ComposedProblem) -> Result<Self, CertifyError> {
        Self::new(certify(problem)?, problem)
    }

    pub fn certificate(&self) -> &OptimalSetCertificate {
        &self.cert
    }

    pub fn f_min(&self) -> f64 {
        self.cert.f_min
    }

    pub fn factor(&self) -> &SvdFactor {
        &self.factor
    }

    /// `dist(x, X)`.
    pub fn dist(&self, x: &[f64]) -> Result<f64, CertifyError> {
        let residual = linalg::sub(&self.design.matvec(x)?, &self.cert.t_star);
        let d = linalg::min_norm_solve_with(&self.factor, &self.design, &residual)?;
        Ok(linalg::norm(&d))
    }

    /// `dist(x, X) / ||grad f(x)||`.
    pub fn errbound_ratio(
        &self,
        problem: &ComposedProblem,
        x: &[f64],
    ) -> Result<f64, CertifyError> {
        let g = linalg::norm(&problem.full_gradient(x)?);
        if g <= RATIO_GRAD_FLOOR {
            return Err(CertifyError::GradientTooSmall(g));
        }
        Ok(self.dist(x)? / g)
    }

    /// Fills `dist_to_opt` on every record.
    pub fn annotate(&self, trajectory: &mut Trajectory) -> Result<(), CertifyError> {
        for r in &mut trajectory.records {
            r.dist_to_opt = Some(self.dist(&r.x)?);
        }
        Ok(())
    }
}

/// `dist(x, X)` for a one-off query; prefer [`OptimalSet`] for many points.
pub fn dist_to_optimal(
    cert: &OptimalSetCertificate,
    design: &Matrix,
    x: &[f64],
) -> Result<f64, CertifyError> {
    OptimalSet::from_parts(cert.clone(), design)?.dist(x)
}

pub fn errbound_ratio(
    cert: &OptimalSetCertificate,
    problem: &ComposedProblem,
    x: &[f64],
) -> Result<f64, CertifyError> {
    OptimalSet::from_parts(cert.clone(), problem.design())?.errbound_ratio(problem, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::fixtures::{log_tiny, ls_tiny};
    use approx::assert_abs_diff_eq;

    #[test]
    fn ls_tiny_certificate() {
        let c = certify(&ls_tiny()).unwrap();
        assert_abs_diff_eq!(c.f_min, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.t_star[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.t_star[1], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.x_ref[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c.x_ref[1], 0.0, epsilon = 1e-14);
        assert_eq!(c.method, SolveMethod::MinNormLeastSquares);
    }

    #[test]
    fn log_tiny_certificate() {
        let c = certify(&log_tiny()).unwrap();
        assert_abs_diff_eq!(c.f_min, std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(c.t_star[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.x_ref[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn identity_square_loss() {
        let p =
            ComposedProblem::new(Matrix::identity(3), vec![1.0, -2.0, 0.5], Loss::Square).unwrap();
        let c = certify(&p).unwrap();
        assert_abs_diff_eq!(c.f_min, 0.0, epsilon = 1e-15);
        for (x, b) in c.x_ref.iter().zip(p.targets()) {
            assert_abs_diff_eq!(x, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn distance_examples() {
        let p = ls_tiny();
        let set = OptimalSet::certify(&p).unwrap();
        assert_abs_diff_eq!(set.dist(&[0.0, 0.0]).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(set.dist(&[1.0, 7.0]).unwrap(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(set.dist(&[3.0, 0.0]).unwrap(), 2.0, epsilon = 1e-14);
        let d = dist_to_optimal(set.certificate(), p.design(), &[3.0, -4.0]).unwrap();
        assert_abs_diff_eq!(d, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn ratio_examples() {
        let p = ls_tiny();
        let set = OptimalSet::certify(&p).unwrap();
        for x in [[0.0, 0.0], [3.0, -2.0], [1.5, 9.0], [-7.0, 0.1]] {
            assert_abs_diff_eq!(set.errbound_ratio(&p, &x).unwrap(), 0.2, epsilon = 1e-14);
        }
        assert!(matches!(
            set.errbound_ratio(&p, &[1.0, 5.0]),
            Err(CertifyError::GradientTooSmall(_))
        ));

        let q = log_tiny();
        let c = certify(&q).unwrap();
        let r = errbound_ratio(&c, &q, &[1.0]).unwrap();
        // dist = 1, grad = (sigma(1) - sigma(-1)) / 2 = tanh(1/2) / 2
        assert_abs_diff_eq!(r, 2.0 / (0.5f64).tanh(), epsilon = 1e-12);
    }

    #[test]
    fn certificate_is_bound_to_its_problem() {
        let c = certify(&ls_tiny()).unwrap();
        let other =
            ComposedProblem::new(Matrix::identity(2), vec![1.0, 2.0], Loss::Square).unwrap();
        assert!(matches!(
            OptimalSet::new(c, &other),
            Err(CertifyError::WrongProblem { .. })
        ));
    }

    #[test]
    fn separable_data_fails_certification() {
        let e = Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let p = ComposedProblem::new(e, vec![1.0, -1.0], Loss::Logistic).unwrap();
        let opts = CertifyOptions {
            grad_tol: 1e-12,
            max_iterations: 2000,
        };
        assert!(matches!(
            certify_with(&p, &opts),
            Err(CertifyError::NotConverged {
                iterations: 2000,
                ..
            })
        ));
    }

    #[test]
    fn certificate_json_round_trip() {
        let c = certify(&log_tiny()).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        let back: OptimalSetCertificate = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        back.validate(&log_tiny()).unwrap();
    }
}
