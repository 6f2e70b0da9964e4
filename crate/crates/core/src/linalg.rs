//! Dense linear algebra used by the solver and the optimal-set oracle.
//!
//! Everything here is deterministic: products accumulate in index order and
//! the SVD is delegated to faer, built without its thread pool so results do
//! not depend on scheduling.

use faer::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Singular values below `RANK_RTOL * ||E|| * max(rows, cols)` count as zero.
pub const RANK_RTOL: f64 = 1e-10;

/// Relative residual above which `min_norm_solve` rejects a system.
pub const CONSISTENCY_RTOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix data has {got} entries, expected {rows}x{cols}")]
    Shape {
        rows: usize,
        cols: usize,
        got: usize,
    },
    #[error("non-finite entry at flat index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("operation requires a nonempty matrix")]
    Empty,
    #[error("linear system is inconsistent (residual {residual:e})")]
    Infeasible { residual: f64 },
    #[error("singular value decomposition failed to converge")]
    NoConvergence,
}

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = LinalgError;

    fn try_from(raw: RawMatrix) -> Result<Self, Self::Error> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> Self {
        RawMatrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(LinalgError::Shape {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(LinalgError::Dimension {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Result<Self, LinalgError> {
        let n = values.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in values.iter().enumerate() {
            data[i * n + i] = *v;
        }
        Self::new(n, n, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.data[i * self.cols + l];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(l);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// `E x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        check_len(self.cols, x.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `E^T y`, accumulated row by row in index order.
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>, LinalgError> {
        check_len(self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &w) in y.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            axpy(w, self.row(i), &mut out);
        }
        Ok(out)
    }

    fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.data[i * self.cols + j])
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), LinalgError> {
    if expected == got {
        Ok(())
    } else {
        Err(LinalgError::Dimension { expected, got })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    // scaled to avoid overflow on huge entries
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let ss: f64 = a.iter().map(|v| (v / scale) * (v / scale)).sum();
    scale * ss.sqrt()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Thin SVD truncated to the numerical rank: `E = U_r diag(s) V_r^T`.
///
/// Build it once per matrix and reuse it for repeated pseudoinverse actions;
/// the distance oracle queries it at every trajectory point.
#[derive(Debug, Clone)]
pub struct SvdFactor {
    rows: usize,
    cols: usize,
    top: f64,
    singular: Vec<f64>,
    /// rows x rank, orthonormal columns
    left: Matrix,
    /// cols x rank, orthonormal columns spanning the row space of E
    right: Matrix,
}

impl SvdFactor {
    pub fn new(e: &Matrix) -> Result<Self, LinalgError> {
        if e.is_empty() {
            return Err(LinalgError::Empty);
        }
        let svd = e
            .to_faer()
            .thin_svd()
            .map_err(|_| LinalgError::NoConvergence)?;
        let (u, v) = (svd.U(), svd.V());
        let sv: Vec<f64> = svd.S().column_vector().iter().copied().collect();

        let mut order: Vec<usize> = (0..sv.len()).collect();
        // descending, ties broken by index for determinism
        order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
        let top = order.first().map_or(0.0, |&i| sv[i]);
        let cutoff = RANK_RTOL * top * e.rows.max(e.cols) as f64;
        let kept: Vec<usize> = order.into_iter().filter(|&i| sv[i] > cutoff).collect();
        let rank = kept.len();

        let mut left = Matrix::zeros(e.rows, rank);
        let mut right = Matrix::zeros(e.cols, rank);
        for (c, &idx) in kept.iter().enumerate() {
            for r in 0..e.rows {
                left.data[r * rank + c] = u[(r, idx)];
            }
            for r in 0..e.cols {
                right.data[r * rank + c] = v[(r, idx)];
            }
        }
        Ok(Self {
            rows: e.rows,
            cols: e.cols,
            top,
            singular: kept.iter().map(|&i| sv[i]).collect(),
            left,
            right,
        })
    }

    pub fn rank(&self) -> usize {
        self.singular.len()
    }

    pub fn spectral_norm(&self) -> f64 {
        self.top
    }

    /// Nonzero singular values, descending.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular
    }

    /// Orthonormal basis (as columns) of the row space of E.
    pub fn row_space_basis(&self) -> &Matrix {
        &self.right
    }

    /// Orthonormal basis (as columns) of the column space of E.
    pub fn column_space_basis(&self) -> &Matrix {
        &self.left
    }

    /// Pseudoinverse action `E^+ t`: the minimum-norm least-squares solution.
    pub fn pinv_apply(&self, t: &[f64]) -> Result<Vec<f64>, LinalgError> {
        check_len(self.rows, t.len())?;
        let mut coeff = self.left.matvec_t(t)?;
        for (c, s) in coeff.iter_mut().zip(&self.singular) {
            *c /= s;
        }
        self.right.matvec(&coeff)
    }

    /// Orthogonal projection onto the row space of E (the complement of null(E)).
    pub fn project_row_space(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        check_len(self.cols, x.len())?;
        let coeff = self.right.matvec_t(x)?;
        self.right.matvec(&coeff)
    }

    /// Component of `x` lying in null(E).
    pub fn project_null_space(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let row = self.project_row_space(x)?;
        Ok(sub(x, &row))
    }
}

/// Largest singular value of `e`.
pub fn spectral_norm(e: &Matrix) -> Result<f64, LinalgError> {
    Ok(SvdFactor::new(e)?.spectral_norm())
}

/// Minimum 2-norm solution of the consistent system `E u = t`.
pub fn min_norm_solve(e: &Matrix, t: &[f64]) -> Result<Vec<f64>, LinalgError> {
    min_norm_solve_with(&SvdFactor::new(e)?, e, t)
}

/// As [`min_norm_solve`], reusing a precomputed factorization of `e`.
pub fn min_norm_solve_with(
    factor: &SvdFactor,
    e: &Matrix,
    t: &[f64],
) -> Result<Vec<f64>, LinalgError> {
    check_len(e.rows, t.len())?;
    if !all_finite(t) {
        return Err(LinalgError::NonFinite(
            t.iter().position(|v| !v.is_finite()).unwrap(),
        ));
    }
    let u = factor.pinv_apply(t)?;
    let residual = norm(&sub(&e.matvec(&u)?, t));
    if residual > CONSISTENCY_RTOL * (1.0 + norm(t)) {
        return Err(LinalgError::Infeasible { residual });
    }
    Ok(u)
}

/// Numerical rank and an orthonormal basis of the row space.
#[derive(Debug, Clone)]
pub struct RankFactorization {
    pub rank: usize,
    /// cols x rank
    pub basis: Matrix,
}

pub fn rank_factorization(e: &Matrix) -> Result<RankFactorization, LinalgError> {
    if e.is_empty() {
        return Ok(RankFactorization {
            rank: 0,
            basis: Matrix::zeros(e.cols, 0),
        });
    }
    let factor = SvdFactor::new(e)?;
    Ok(RankFactorization {
        rank: factor.rank(),
        basis: factor.right,
    })
}
