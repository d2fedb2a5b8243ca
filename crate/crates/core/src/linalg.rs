//! Dense helpers over faer plus the row-major design container.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// `n x d` sample matrix, row-major so each sample is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn from_row_major(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(dim) != Some(data.len()) {
            return Err(Error::usage(format!(
                "design of {rows} x {dim} needs {} entries, got {}",
                rows.saturating_mul(dim),
                data.len()
            )));
        }
        Ok(Design { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::usage("ragged rows"));
        }
        Self::from_row_major(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }
}

/// Lower Cholesky factor, or `Degenerate` when a pivot is not positive.
pub fn cholesky_lower(a: &Mat<f64>) -> Result<Mat<f64>> {
    let llt = a
        .llt(Side::Lower)
        .map_err(|e| Error::Degenerate(format!("Cholesky failed: {e:?}")))?;
    Ok(llt.L().to_owned())
}

/// Inverse of a lower-triangular matrix by forward substitution.
pub fn lower_triangular_inverse(l: &Mat<f64>) -> Mat<f64> {
    let n = l.nrows();
    let mut inv = Mat::<f64>::zeros(n, n);
    for col in 0..n {
        inv[(col, col)] = 1.0 / l[(col, col)];
        for row in col + 1..n {
            let mut s = 0.0;
            for k in col..row {
                s += l[(row, k)] * inv[(k, col)];
            }
            inv[(row, col)] = -s / l[(row, row)];
        }
    }
    inv
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numeric(format!("symmetric eigenvalues: {e:?}")))
}

/// Factorization used to apply `K^{-1}` or its regularized pseudo-inverse.
pub enum SymSolver {
    Cholesky(faer::linalg::solvers::Llt<f64>),
    /// Eigenvectors and inverted eigenvalues (zero below the cutoff).
    Pinv { u: Mat<f64>, inv: Vec<f64> },
}

impl SymSolver {
    pub fn solve(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        match self {
            SymSolver::Cholesky(llt) => llt.solve(rhs),
            SymSolver::Pinv { u, inv } => {
                let mut proj = u.transpose() * rhs;
                for (i, s) in inv.iter().enumerate() {
                    for j in 0..proj.ncols() {
                        proj[(i, j)] *= s;
                    }
                }
                u * proj
            }
        }
    }

    pub fn is_pinv(&self) -> bool {
        matches!(self, SymSolver::Pinv { .. })
    }
}

/// Eigen pseudo-inverse dropping eigenvalues below `rel_cutoff * lambda_max`.
/// Also returns the ascending spectrum.
pub fn sym_pinv(a: &Mat<f64>, rel_cutoff: f64) -> Result<(SymSolver, Vec<f64>)> {
    let eig = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numeric(format!("symmetric eigendecomposition: {e:?}")))?;
    let s: Vec<f64> = (0..a.nrows()).map(|i| eig.S()[i]).collect();
    let top = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(top > 0.0) {
        return Err(Error::Degenerate("matrix has no positive spectrum".into()));
    }
    let cut = rel_cutoff * top;
    let inv = s.iter().map(|&v| if v > cut { 1.0 / v } else { 0.0 }).collect();
    Ok((
        SymSolver::Pinv {
            u: eig.U().to_owned(),
            inv,
        },
        s,
    ))
}

/// Copy of the upper triangle of `m` mirrored below, forcing exact symmetry.
pub fn symmetrize_from_upper(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in j + 1..n {
            m[(i, j)] = m[(j, i)];
        }
    }
}
