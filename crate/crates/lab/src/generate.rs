//! Synthetic problem generators.

use igm_core::linalg::{self, Matrix, SvdFactor};
use igm_core::problem::{ComposedProblem, Loss};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest sample radius a generated least-squares problem may have.
pub const MAX_RADIUS: f64 = 10.0;
/// Fraction of samples replaced by duplicated opposite-label pairs.
pub const DUPLICATE_FRACTION: f64 = 0.02;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid generator spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error(transparent)]
    Problem(#[from] igm_core::problem::ProblemError),
}

fn default_min_singular_value() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    RankDeficientLs {
        samples: usize,
        features: usize,
        rank: usize,
        noise_sigma: f64,
        seed: u64,
        /// Smallest nonzero singular value; the others are log-spaced up to 1.
        #[serde(default = "default_min_singular_value")]
        min_singular_value: f64,
    },
    NonSeparableLogistic {
        samples: usize,
        features: usize,
        flip_fraction: f64,
        seed: u64,
    },
}

impl GeneratorSpec {
    pub fn loss(&self) -> Loss {
        match self {
            GeneratorSpec::RankDeficientLs { .. } => Loss::Square,
            GeneratorSpec::NonSeparableLogistic { .. } => Loss::Logistic,
        }
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        let bad = |msg: String| Err(GenerateError::Invalid(msg));
        match *self {
            GeneratorSpec::RankDeficientLs {
                samples,
                features,
                rank,
                noise_sigma,
                min_singular_value,
                ..
            } => {
                if samples == 0 || features == 0 {
                    return bad("samples and features must be positive".into());
                }
                if rank == 0 || rank > samples.min(features) {
                    return bad(format!(
                        "rank {rank} outside [1, min({samples}, {features})]"
                    ));
                }
                if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
                    return bad(format!("noise_sigma {noise_sigma} must be finite and >= 0"));
                }
                if !(min_singular_value > 0.0 && min_singular_value <= 1.0) {
                    return bad(format!(
                        "min_singular_value {min_singular_value} outside (0, 1]"
                    ));
                }
            }
            GeneratorSpec::NonSeparableLogistic {
                samples,
                features,
                flip_fraction,
                ..
            } => {
                if samples < 2 || samples % 2 != 0 {
                    return bad(format!("samples must be even and >= 2, got {samples}"));
                }
                if features == 0 {
                    return bad("features must be positive".into());
                }
                if !(flip_fraction > 0.0 && flip_fraction <= 0.5) {
                    return bad(format!("flip_fraction {flip_fraction} outside (0, 0.5]"));
                }
            }
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<ComposedProblem, GenerateError> {
        match self {
            GeneratorSpec::RankDeficientLs { .. } => generate_ls(self),
            GeneratorSpec::NonSeparableLogistic { .. } => generate_logistic(self),
        }
    }

    pub fn set_rank(&mut self, value: usize) -> Result<(), GenerateError> {
        match self {
            GeneratorSpec::RankDeficientLs { rank, .. } => *rank = value,
            _ => {
                return Err(GenerateError::Invalid(
                    "rank applies to least squares only".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn set_noise_sigma(&mut self, value: f64) -> Result<(), GenerateError> {
        match self {
            GeneratorSpec::RankDeficientLs { noise_sigma, .. } => *noise_sigma = value,
            _ => {
                return Err(GenerateError::Invalid(
                    "noise_sigma applies to least squares only".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn set_flip_fraction(&mut self, value: f64) -> Result<(), GenerateError> {
        match self {
            GeneratorSpec::NonSeparableLogistic { flip_fraction, .. } => *flip_fraction = value,
            _ => {
                return Err(GenerateError::Invalid(
                    "flip_fraction applies to logistic problems only".into(),
                ))
            }
        }
        Ok(())
    }
}

fn gaussian_matrix(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
) -> Result<Matrix, GenerateError> {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Ok(Matrix::new(rows, cols, data)?)
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// `rows x rank` matrix with orthonormal columns.
fn orthonormal_columns(
    rng: &mut ChaCha8Rng,
    rows: usize,
    rank: usize,
) -> Result<Matrix, GenerateError> {
    // a gaussian matrix has full column rank with probability one; retry otherwise
    loop {
        let g = gaussian_matrix(rng, rows, rank)?;
        let factor = SvdFactor::new(&g)?;
        if factor.rank() == rank {
            return Ok(factor.column_space_basis().clone());
        }
    }
}

/// `E = U S V^T` with log-spaced singular values, `b = E x_true + noise`.
pub fn generate_ls(spec: &GeneratorSpec) -> Result<ComposedProblem, GenerateError> {
    spec.validate()?;
    let GeneratorSpec::RankDeficientLs {
        samples,
        features,
        rank,
        noise_sigma,
        seed,
        min_singular_value,
    } = *spec
    else {
        return Err(GenerateError::Invalid(
            "expected a least-squares spec".into(),
        ));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = orthonormal_columns(&mut rng, samples, rank)?;
    let v = orthonormal_columns(&mut rng, features, rank)?;
    let singular: Vec<f64> = (0..rank)
        .map(|j| {
            if rank == 1 {
                1.0
            } else {
                min_singular_value.powf(j as f64 / (rank - 1) as f64)
            }
        })
        .collect();
    let e = u
        .matmul(&Matrix::diagonal(&singular)?)?
        .matmul(&v.transpose())?;
    let x_true = gaussian_vector(&mut rng, features);
    let mut b = e.matvec(&x_true)?;
    for bi in &mut b {
        let z: f64 = StandardNormal.sample(&mut rng);
        *bi += noise_sigma * z;
    }

    let radius = (0..samples)
        .map(|i| linalg::norm(e.row(i)).max(b[i].abs()))
        .fold(0.0, f64::max);
    let (e, b) = if radius > MAX_RADIUS {
        let s = MAX_RADIUS / radius;
        (e.scaled(s), b.iter().map(|v| v * s).collect())
    } else {
        (e, b)
    };
    Ok(ComposedProblem::new(e, b, Loss::Square)?)
}

/// Gaussian features labelled by a planted hyperplane, with a fixed number of
/// flipped labels and trailing duplicated pairs carrying opposite labels.
pub fn generate_logistic(spec: &GeneratorSpec) -> Result<ComposedProblem, GenerateError> {
    spec.validate()?;
    let GeneratorSpec::NonSeparableLogistic {
        samples,
        features,
        flip_fraction,
        seed,
    } = *spec
    else {
        return Err(GenerateError::Invalid("expected a logistic spec".into()));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = (0..samples)
        .map(|_| gaussian_vector(&mut rng, features))
        .collect();
    let w = gaussian_vector(&mut rng, features);
    let mut labels: Vec<f64> = rows
        .iter()
        .map(|a| if linalg::dot(a, &w) >= 0.0 { 1.0 } else { -1.0 })
        .collect();

    let flips = ((flip_fraction * samples as f64).round() as usize).min(samples);
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut rng);
    for &i in &order[..flips] {
        labels[i] = -labels[i];
    }

    let pairs = duplicate_pairs(samples);
    let start = samples - 2 * pairs;
    for j in 0..pairs {
        let (i, k) = (start + 2 * j, start + 2 * j + 1);
        rows[k] = rows[i].clone();
        labels[i] = 1.0;
        labels[k] = -1.0;
    }
    Ok(ComposedProblem::new(
        Matrix::from_rows(&rows)?,
        labels,
        Loss::Logistic,
    )?)
}

/// `ceil(0.02 M)` pairs, at least one.
pub fn duplicate_pairs(samples: usize) -> usize {
    ((DUPLICATE_FRACTION * samples as f64).ceil() as usize).clamp(1, samples / 2)
}
