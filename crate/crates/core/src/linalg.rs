//! Small dense linear-algebra kernel: row-major matrices, GEMM, Cholesky and
//! triangular solves, generic over [`Real`].

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Real};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Leading `r x c` block.
    pub fn leading(&self, r: usize, c: usize) -> Self {
        Self::from_fn(r, c, |i, j| self[(i, j)])
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Replaces the matrix by `(A + A')/2`.
    pub fn symmetrize(&mut self) {
        let half = T::lit(0.5);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let m = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = m;
                self[(j, i)] = m;
            }
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len(), "mul_vec shape");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `x' A` for a row vector `x`.
    pub fn vec_mul(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.rows, x.len(), "vec_mul shape");
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != T::zero() {
                axpy(xi, self.row(i), &mut out);
            }
        }
        out
    }

    /// Dense matrix product. Plain GEMM with row and column blocking; no
    /// sparsity shortcuts.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape");
        const RB: usize = 4;
        const CB: usize = 512;
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        let mut jb = 0;
        while jb < n {
            let je = (jb + CB).min(n);
            let mut ib = 0;
            while ib < m {
                let ie = (ib + RB).min(m);
                for kk in 0..k {
                    let b_row = &other.data[kk * n + jb..kk * n + je];
                    for i in ib..ie {
                        let a = self.data[i * k + kk];
                        let c_row = &mut out.data[i * n + jb..i * n + je];
                        axpy(a, b_row, c_row);
                    }
                }
                ib = ie;
            }
            jb = je;
        }
        out
    }

    /// Lower Cholesky factor `L` with `L L' = self`.
    pub fn cholesky(&self) -> Result<Self> {
        let mut l = self.clone();
        cholesky_in_place(&mut l)?;
        Ok(l)
    }

    /// Solves `self * x = b` for symmetric positive definite `self`.
    pub fn solve_spd(&self, b: &[T]) -> Result<Vec<T>> {
        let l = self.cholesky()?;
        let z = forward_solve(&l, b);
        Ok(backward_solve_transposed(&l, &z))
    }

    /// Inverse of a symmetric positive definite matrix.
    pub fn inverse_spd(&self) -> Result<Self> {
        let n = self.rows;
        let l = self.cholesky()?;
        let mut inv = Self::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = T::zero());
            e[j] = T::one();
            let z = forward_solve(&l, &e);
            let x = backward_solve_transposed(&l, &z);
            for i in 0..n {
                inv[(i, j)] = x[i];
            }
        }
        inv.symmetrize();
        Ok(inv)
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        let n = self.rows;
        if n != self.cols {
            return Err(Error::Shape("inverse of a non-square matrix".into()));
        }
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[(i, col)].abs().partial_cmp(&a[(j, col)].abs()).unwrap())
                .unwrap();
            let pv = a[(piv, col)];
            if pv.abs() <= T::epsilon() * a.max_abs() * T::from_count(n) || !pv.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: col,
                    value: pv.to_f64_lossy(),
                });
            }
            if piv != col {
                for j in 0..n {
                    let (x, y) = (a[(col, j)], a[(piv, j)]);
                    a[(col, j)] = y;
                    a[(piv, j)] = x;
                    let (x, y) = (inv[(col, j)], inv[(piv, j)]);
                    inv[(col, j)] = y;
                    inv[(piv, j)] = x;
                }
            }
            let d = T::one() / a[(col, col)];
            for j in 0..n {
                a[(col, j)] *= d;
                inv[(col, j)] *= d;
            }
            for i in 0..n {
                if i != col {
                    let f = a[(i, col)];
                    if f != T::zero() {
                        for j in 0..n {
                            let (ac, ic) = (a[(col, j)], inv[(col, j)]);
                            a[(i, j)] -= f * ac;
                            inv[(i, j)] -= f * ic;
                        }
                    }
                }
            }
        }
        Ok(inv)
    }

    /// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending. Meant
    /// for small matrices.
    pub fn symmetric_eigenvalues(&self) -> Vec<T> {
        let n = self.rows;
        let mut a = self.clone();
        a.symmetrize();
        for _sweep in 0..100 {
            let mut off = T::zero();
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            if off.sqrt() <= T::epsilon() * (a.max_abs() + T::min_positive_value()) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ev
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// In-place row-oriented Cholesky. On return the lower triangle holds `L`
/// and the strict upper triangle is zeroed. The factor of every leading
/// principal block is the corresponding leading block of `L`.
pub fn cholesky_in_place<T: Real>(a: &mut Matrix<T>) -> Result<()> {
    let n = a.rows;
    if n != a.cols {
        return Err(Error::Shape("Cholesky of a non-square matrix".into()));
    }
    for i in 0..n {
        let (done, rest) = a.data.split_at_mut(i * n);
        let row_i = &mut rest[..n];
        for j in 0..i {
            let row_j = &done[j * n..j * n + j];
            let s = row_i[j] - dot(&row_i[..j], row_j);
            row_i[j] = s / done[j * n + j];
        }
        let d = row_i[i] - dot(&row_i[..i], &row_i[..i]);
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite {
                pivot: i,
                value: d.to_f64_lossy(),
            });
        }
        row_i[i] = d.sqrt();
        for x in &mut row_i[i + 1..] {
            *x = T::zero();
        }
    }
    Ok(())
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn forward_solve<T: Real>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    forward_solve_from(l, b, 0)
}

/// Forward solve when `b[..start]` is known to be zero.
pub fn forward_solve_from<T: Real>(l: &Matrix<T>, b: &[T], start: usize) -> Vec<T> {
    let n = b.len();
    let mut x = vec![T::zero(); n];
    for i in start..n {
        let row = l.row(i);
        x[i] = (b[i] - dot(&row[start..i], &x[start..i])) / row[i];
    }
    x
}

/// Solves `L' x = b` for lower-triangular `L`.
pub fn backward_solve_transposed<T: Real>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = b.len();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        x[i] /= l[(i, i)];
        let xi = x[i];
        let row = l.row(i);
        axpy(-xi, &row[..i], &mut x[..i]);
    }
    x
}

/// Log-determinant of a symmetric positive definite matrix.
pub fn log_det_spd<T: Real>(a: &Matrix<T>) -> Result<T> {
    let l = a.cholesky()?;
    Ok((0..l.rows()).map(|i| l[(i, i)].ln()).sum::<T>() * T::lit(2.0))
}
