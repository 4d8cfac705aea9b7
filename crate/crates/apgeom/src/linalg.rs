//! Small dense matrices over a generic scalar.
//!
//! Chart dimensions never exceed a handful, so everything is a row-major
//! `Vec` with Gauss-Jordan style algorithms pivoted on the value part.

use crate::error::GeomError;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Matrix<S> {
    pub rows: usize,
    pub cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = S::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                *m.at_mut(i, j) = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut S {
        &mut self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.at(j, i))
    }

    pub fn matmul(&self, o: &Self) -> Self {
        assert_eq!(self.cols, o.rows);
        Matrix::from_fn(self.rows, o.cols, |i, j| {
            let mut s = S::zero();
            for k in 0..self.cols {
                s = s + self.at(i, k) * o.at(k, j);
            }
            s
        })
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut s = S::zero();
                for k in 0..self.cols {
                    s = s + self.at(i, k) * v[k];
                }
                s
            })
            .collect()
    }

    pub fn add(&self, o: &Self) -> Self {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.at(i, j) + o.at(i, j))
    }

    pub fn sub(&self, o: &Self) -> Self {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.at(i, j) - o.at(i, j))
    }

    pub fn scale(&self, s: S) -> Self {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.at(i, j) * s)
    }

    /// Trace of a square matrix.
    pub fn trace(&self) -> S {
        let mut t = S::zero();
        for i in 0..self.rows.min(self.cols) {
            t = t + self.at(i, i);
        }
        t
    }

    /// LU determinant with partial pivoting on the value part.
    pub fn det(&self) -> S {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut det = S::one();
        for col in 0..n {
            let mut piv = col;
            let mut best = a.at(col, col).value().abs();
            for r in col + 1..n {
                let v = a.at(r, col).value().abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 {
                return S::zero();
            }
            if piv != col {
                for j in 0..n {
                    let tmp = a.at(col, j);
                    *a.at_mut(col, j) = a.at(piv, j);
                    *a.at_mut(piv, j) = tmp;
                }
                det = -det;
            }
            let d = a.at(col, col);
            det = det * d;
            for r in col + 1..n {
                let f = a.at(r, col) / d;
                for j in col..n {
                    let v = a.at(r, j) - f * a.at(col, j);
                    *a.at_mut(r, j) = v;
                }
            }
        }
        det
    }

    /// Gauss-Jordan inverse; fails when the value-part pivot underflows.
    pub fn inverse(&self) -> Result<Self, GeomError> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let mut piv = col;
            let mut best = a.at(col, col).value().abs();
            for r in col + 1..n {
                let v = a.at(r, col).value().abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-14 {
                return Err(GeomError::DegenerateMetric);
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(col * n + j, piv * n + j);
                    inv.data.swap(col * n + j, piv * n + j);
                }
            }
            let d = a.at(col, col).recip();
            for j in 0..n {
                *a.at_mut(col, j) = a.at(col, j) * d;
                *inv.at_mut(col, j) = inv.at(col, j) * d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                // Eliminate even when the value part is zero: dual parts
                // of the entry may still be nonzero.
                let f = a.at(r, col);
                for j in 0..n {
                    let va = a.at(r, j) - f * a.at(col, j);
                    let vi = inv.at(r, j) - f * inv.at(col, j);
                    *a.at_mut(r, j) = va;
                    *inv.at_mut(r, j) = vi;
                }
            }
        }
        Ok(inv)
    }

    /// Max |value| over all entries.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.value().abs())
            .fold(0.0, f64::max)
    }
}

/// Dot product against a bilinear form: `u^T g v`.
pub fn form<S: Scalar>(g: &Matrix<S>, u: &[S], v: &[S]) -> S {
    let mut s = S::zero();
    for i in 0..u.len() {
        for j in 0..v.len() {
            s = s + u[i] * g.at(i, j) * v[j];
        }
    }
    s
}

/// Rank-3 array `t[i][j][k]` over a cubical index range.
#[derive(Clone, Debug)]
pub struct Tensor3<S> {
    pub dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor3<S> {
    pub fn zeros(dim: usize) -> Self {
        Tensor3 {
            dim,
            data: vec![S::zero(); dim * dim * dim],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> S {
        self.data[(i * self.dim + j) * self.dim + k]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize) -> &mut S {
        &mut self.data[(i * self.dim + j) * self.dim + k]
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.value().abs())
            .fold(0.0, f64::max)
    }
}

/// Rank-4 array over a cubical index range.
#[derive(Clone, Debug)]
pub struct Tensor4<S> {
    pub dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor4<S> {
    pub fn zeros(dim: usize) -> Self {
        Tensor4 {
            dim,
            data: vec![S::zero(); dim * dim * dim * dim],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize, l: usize) -> S {
        self.data[((i * self.dim + j) * self.dim + k) * self.dim + l]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize, l: usize) -> &mut S {
        &mut self.data[((i * self.dim + j) * self.dim + k) * self.dim + l]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let m = Matrix::from_fn(3, 3, |i, j| {
            [[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]][i][j]
        });
        let inv = m.inverse().unwrap();
        let id = m.matmul(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id.at(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn det_matches_cofactor_expansion() {
        let m = Matrix::from_fn(2, 2, |i, j| [[3.0, 1.0], [2.0, -4.0]][i][j]);
        assert!((m.det() - (-14.0)).abs() < 1e-12);
    }

    #[test]
    fn singular_inverse_fails() {
        let m = Matrix::from_fn(2, 2, |i, j| [[1.0, 2.0], [2.0, 4.0]][i][j]);
        assert!(m.inverse().is_err());
    }
}
