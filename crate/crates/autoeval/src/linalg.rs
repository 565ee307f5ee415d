//! Small dense-matrix helpers and a cyclic Jacobi symmetric eigensolver.
//!
//! Everything here operates on class-sized matrices (K x K with K in the
//! tens), so a plain row-major `Vec<f64>` is enough.

use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
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

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r > 0 { rows[0].len() } else { 0 };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    /// A^T * A without materializing the transpose.
    pub fn gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.cols, self.cols);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for i in 0..self.cols {
                for j in i..self.cols {
                    g.data[i * self.cols + j] += row[i] * row[j];
                }
            }
        }
        for i in 0..self.cols {
            for j in 0..i {
                g.data[i * self.cols + j] = g.data[j * self.cols + i];
            }
        }
        g
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    fn off_diagonal_norm(&self) -> f64 {
        let n = self.rows;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += self.get(i, j).powi(2);
                }
            }
        }
        s.sqrt()
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors stored as
/// columns, unordered. Errors if the off-diagonal mass has not vanished
/// after the sweep cap.
pub fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    assert_eq!(a.rows, a.cols, "sym_eigen needs a square matrix");
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    if n == 1 {
        return Ok((vec![m.get(0, 0)], v));
    }
    let scale = m.data.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    let tol = 1e-14 * scale;

    for _ in 0..JACOBI_MAX_SWEEPS {
        if m.off_diagonal_norm() <= tol {
            let eigvals = (0..n).map(|i| m.get(i, i)).collect();
            return Ok((eigvals, v));
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq.abs() <= tol / (n * n) as f64 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rotate rows/cols p and q of m
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if m.off_diagonal_norm() <= tol {
        let eigvals = (0..n).map(|i| m.get(i, i)).collect();
        return Ok((eigvals, v));
    }
    Err(Error::EigenNonConvergence {
        sweeps: JACOBI_MAX_SWEEPS,
    })
}

/// Symmetric positive-semidefinite square root via `sym_eigen`; negative
/// eigenvalues are clamped to zero.
pub fn psd_sqrt(a: &Matrix) -> Result<Matrix> {
    let n = a.rows;
    let (vals, vecs) = sym_eigen(a)?;
    let mut out = Matrix::zeros(n, n);
    for k in 0..n {
        let s = vals[k].max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = vecs.get(i, k);
            if vik == 0.0 {
                continue;
            }
            for j in 0..n {
                out.data[i * n + j] += s * vik * vecs.get(j, k);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn eigen_of_diagonal() {
        let m = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -1.0]]);
        let (mut vals, _) = sym_eigen(&m).unwrap();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_close(vals[0], -1.0, 1e-12);
        assert_close(vals[1], 3.0, 1e-12);
    }

    #[test]
    fn eigen_reconstructs() {
        let m = Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -0.25],
            vec![0.5, -0.25, 2.0],
        ]);
        let (vals, vecs) = sym_eigen(&m).unwrap();
        // V diag(vals) V^T == m
        let n = 3;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += vecs.get(i, k) * vals[k] * vecs.get(j, k);
                }
                assert_close(s, m.get(i, j), 1e-10);
            }
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let s = psd_sqrt(&m).unwrap();
        let sq = s.matmul(&s);
        for i in 0..2 {
            for j in 0..2 {
                assert_close(sq.get(i, j), m.get(i, j), 1e-10);
            }
        }
    }

    #[test]
    fn gram_matches_naive() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let g = m.gram();
        assert_close(g.get(0, 0), 35.0, 1e-12);
        assert_close(g.get(0, 1), 44.0, 1e-12);
        assert_close(g.get(1, 1), 56.0, 1e-12);
    }
}
