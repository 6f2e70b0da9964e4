//! Composed objectives `f(x) = g(Ex)` built from per-sample losses.
//!
//! Row `i` of the design matrix is the sample `a_i`, and
//! `f(x) = (1/M) sum_i loss(b_i, a_i^T x)`. The square loss carries no
//! one-half factor.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};

/// Margins below this use the rearranged logistic branch.
const LOGISTIC_BRANCH: f64 = -30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("problem needs at least one sample and one feature")]
    Empty,
    #[error("{samples} samples but {targets} targets")]
    TargetCount { samples: usize, targets: usize },
    #[error("logistic label at row {row} is {value}, expected -1 or +1")]
    Label { row: usize, value: f64 },
    #[error("non-finite target at row {0}")]
    NonFiniteTarget(usize),
    #[error("sample radius must be positive")]
    ZeroRadius,
    #[error("point has dimension {got}, problem has {expected} features")]
    Dimension { expected: usize, got: usize },
    #[error("sample index {index} out of range for {samples} samples")]
    SampleIndex { index: usize, samples: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Square,
    Logistic,
}

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::Square => "square",
            Loss::Logistic => "logistic",
        }
    }

    /// `loss(b, u)` where `u = a^T x`.
    pub fn value(self, label: f64, margin: f64) -> f64 {
        match self {
            Loss::Square => (margin - label) * (margin - label),
            Loss::Logistic => log1p_exp_neg(label * margin),
        }
    }

    /// Derivative of `loss(b, u)` with respect to `u`.
    pub fn derivative(self, label: f64, margin: f64) -> f64 {
        match self {
            Loss::Square => 2.0 * (margin - label),
            Loss::Logistic => -label * sigmoid(-label * margin),
        }
    }
}

impl std::str::FromStr for Loss {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "square" => Ok(Loss::Square),
            "logistic" => Ok(Loss::Logistic),
            other => Err(format!(
                "unknown loss '{other}' (expected square or logistic)"
            )),
        }
    }
}

/// `log(1 + exp(-u))` without overflow.
pub fn log1p_exp_neg(u: f64) -> f64 {
    if u < LOGISTIC_BRANCH {
        -u + u.exp().ln_1p()
    } else {
        (-u).exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    /// Lipschitz constant of the gradient of the outer function `g`.
    pub outer: f64,
    /// `outer * spec_norm^2`, the Lipschitz constant of `grad f`.
    pub lipschitz_f: f64,
    pub spec_norm: f64,
}

/// Objective value, gradient and per-sample loss derivatives at one point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// `d_i` with `grad f_i(x) = d_i a_i`.
    pub derivatives: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ComposedProblem {
    design: Matrix,
    targets: Vec<f64>,
    loss: Loss,
    lipschitz: LipschitzConstants,
    radius: f64,
}

impl ComposedProblem {
    pub fn new(design: Matrix, targets: Vec<f64>, loss: Loss) -> Result<Self, ProblemError> {
        if design.is_empty() {
            return Err(ProblemError::Empty);
        }
        if targets.len() != design.rows() {
            return Err(ProblemError::TargetCount {
                samples: design.rows(),
                targets: targets.len(),
            });
        }
        if let Some(row) = targets.iter().position(|b| !b.is_finite()) {
            return Err(ProblemError::NonFiniteTarget(row));
        }
        if loss == Loss::Logistic {
            if let Some((row, &value)) = targets
                .iter()
                .enumerate()
                .find(|(_, &b)| b != 1.0 && b != -1.0)
            {
                return Err(ProblemError::Label { row, value });
            }
        }
        let radius = (0..design.rows())
            .map(|i| linalg::norm(design.row(i)).max(targets[i].abs()))
            .fold(0.0, f64::max);
        if radius <= 0.0 {
            return Err(ProblemError::ZeroRadius);
        }
        let m = design.rows() as f64;
        let outer = match loss {
            Loss::Square => 2.0 / m,
            Loss::Logistic => targets.iter().map(|b| b * b).fold(0.0, f64::max) / (4.0 * m),
        };
        let spec_norm = linalg::spectral_norm(&design)?;
        let lipschitz = LipschitzConstants {
            outer,
            lipschitz_f: outer * spec_norm * spec_norm,
            spec_norm,
        };
        Ok(Self {
            design,
            targets,
            loss,
            lipschitz,
            radius,
        })
    }

    pub fn design(&self) -> &Matrix {
        &self.design
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn num_samples(&self) -> usize {
        self.design.rows()
    }

    pub fn num_features(&self) -> usize {
        self.design.cols()
    }

    pub fn lipschitz(&self) -> LipschitzConstants {
        self.lipschitz
    }

    /// `R = max_i max(||a_i||, |b_i|)`.
    pub fn sample_radius(&self) -> f64 {
        self.radius
    }

    fn check_point(&self, x: &[f64]) -> Result<(), ProblemError> {
        if x.len() != self.num_features() {
            return Err(ProblemError::Dimension {
                expected: self.num_features(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> Result<f64, ProblemError> {
        self.check_point(x)?;
        let margins = self.design.matvec(x)?;
        Ok(self.objective_from_margins(&margins))
    }

    /// `f` evaluated from precomputed margins `E x`.
    pub fn objective_from_margins(&self, margins: &[f64]) -> f64 {
        let total: f64 = margins
            .iter()
            .zip(&self.targets)
            .map(|(&u, &b)| self.loss.value(b, u))
            .sum();
        total / self.num_samples() as f64
    }

    pub fn full_gradient(&self, x: &[f64]) -> Result<Vec<f64>, ProblemError> {
        Ok(self.evaluate(x)?.gradient)
    }

    /// `grad f_i(x)` for a zero-based sample index, without the `1/M` factor.
    pub fn sample_gradient(&self, index: usize, x: &[f64]) -> Result<Vec<f64>, ProblemError> {
        self.check_point(x)?;
        if index >= self.num_samples() {
            return Err(ProblemError::SampleIndex {
                index,
                samples: self.num_samples(),
            });
        }
        let row = self.design.row(index);
        let d = self
            .loss
            .derivative(self.targets[index], linalg::dot(row, x));
        Ok(row.iter().map(|a| d * a).collect())
    }

    /// Value, gradient and per-sample derivatives in one pass over the data.
    pub fn evaluate(&self, x: &[f64]) -> Result<Evaluation, ProblemError> {
        self.check_point(x)?;
        let margins = self.design.matvec(x)?;
        let value = self.objective_from_margins(&margins);
        let derivatives: Vec<f64> = margins
            .iter()
            .zip(&self.targets)
            .map(|(&u, &b)| self.loss.derivative(b, u))
            .collect();
        let m = self.num_samples() as f64;
        let weights: Vec<f64> = derivatives.iter().map(|d| d / m).collect();
        let gradient = self.design.matvec_t(&weights)?;
        Ok(Evaluation {
            value,
            gradient,
            derivatives,
        })
    }

    /// True if two identical feature rows carry opposite labels.
    ///
    /// Such a pair defeats every separating hyperplane, so a logistic problem
    /// with one has a nonempty optimal set.
    pub fn has_opposite_label_duplicate(&self) -> bool {
        let rows = self.num_samples();
        let mut order: Vec<usize> = (0..rows).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (self.design.row(a), self.design.row(b));
            ra.iter()
                .zip(rb)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut start = 0;
        while start < rows {
            let mut end = start + 1;
            while end < rows && self.design.row(order[end]) == self.design.row(order[start]) {
                end += 1;
            }
            let group = &order[start..end];
            let pos = group.iter().any(|&i| self.targets[i] > 0.0);
            let neg = group.iter().any(|&i| self.targets[i] < 0.0);
            if pos && neg {
                return true;
            }
            start = end;
        }
        false
    }

    /// Hex SHA-256 over loss, shape and the raw bits of the data.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.loss.name().as_bytes());
        h.update((self.num_samples() as u64).to_le_bytes());
        h.update((self.num_features() as u64).to_le_bytes());
        for v in self.design.as_slice().iter().chain(&self.targets) {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
