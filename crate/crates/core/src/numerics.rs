//! Dense vector/matrix kernels and the two warping functions.
//!
//! Everything is `f64`. Shapes are checked on every binary operation and a
//! mismatch is reported as [`Error::DimensionMismatch`] naming both operands.

use std::fmt;

use crate::error::{Error, Result};

/// Control warping function: the logistic sigmoid, saturating in (0, 1).
pub fn gc(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Data warping function: the hyperbolic tangent, saturating in (-1, 1).
pub fn gd(z: f64) -> f64 {
    z.tanh()
}

/// `G_c(z)(1 − G_c(z))`, evaluated as `e/(1 + e)²` with `e = exp(−|z|)` so
/// that it keeps full relative precision in saturation.
pub fn gc_prime(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `1 − G_d(z)²`, evaluated as `1/cosh²(z)` to avoid the cancellation near ±1.
pub fn gd_prime(z: f64) -> f64 {
    let c = z.cosh();
    1.0 / (c * c)
}

/// A non-empty column vector.
#[derive(Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty);
        }
        Ok(Vector(data))
    }

    /// # Panics
    /// If `len == 0`.
    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "zero-length vector");
        Vector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        assert!(len > 0, "zero-length vector");
        Vector(vec![value; len])
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> f64) -> Self {
        assert!(len > 0, "zero-length vector");
        Vector((0..len).map(f).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector(self.0.iter().map(|&z| f(z)).collect())
    }

    fn zip_with(&self, other: &Vector, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vector> {
        self.check_same(other, op)?;
        Ok(Vector(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect()))
    }

    fn check_same(&self, other: &Vector, op: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::mismatch(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn shape(&self) -> String {
        format!("[{}]", self.len())
    }

    pub fn add(&self, other: &Vector) -> Result<Vector> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Element-wise product (⊙).
    pub fn hadamard(&self, other: &Vector) -> Result<Vector> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Vector {
        self.map(|z| k * z)
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        self.check_same(other, "dot")?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// `self += other` in place.
    pub fn add_assign(&mut self, other: &Vector) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }

    /// `self += k * other` in place.
    pub fn axpy(&mut self, k: f64, other: &Vector) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|z| z * z).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, z| m.max(z.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.is_finite())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

/// Row-major dense matrix with at least one row and one column.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// One eigenvalue of a real matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty);
        }
        if data.len() != rows * cols {
            return Err(Error::mismatch(
                "from_row_major",
                format!("{rows}x{cols}"),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(Error::mismatch("from_rows", format!("row of {c}"), format!("row of {}", bad.len())));
        }
        Self::from_row_major(r, c, rows.concat())
    }

    pub fn from_diag(d: &Vector) -> Self {
        Self::from_fn(d.len(), d.len(), |i, j| if i == j { d[i] } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diagonal(&self) -> Vector {
        Vector::from_fn(self.rows.min(self.cols), |i| self.get(i, i))
    }

    pub fn matvec(&self, v: &Vector) -> Result<Vector> {
        if self.cols != v.len() {
            return Err(Error::mismatch("matvec", self.shape(), v.shape()));
        }
        Ok(Vector::from_fn(self.rows, |i| {
            let mut acc = 0.0;
            for (w, x) in self.row(i).iter().zip(v.iter()) {
                acc += w * x;
            }
            acc
        }))
    }

    /// `selfᵀ · v` without materializing the transpose.
    pub fn matvec_t(&self, v: &Vector) -> Result<Vector> {
        if self.rows != v.len() {
            return Err(Error::mismatch("matvec_t", format!("({})ᵀ", self.shape()), v.shape()));
        }
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            for (o, w) in out.iter_mut().zip(self.row(i)) {
                *o += w * vi;
            }
        }
        Ok(Vector(out))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::mismatch("matmul", self.shape(), other.shape()));
        }
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
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::mismatch(op, self.shape(), other.shape()));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| k * z).collect(),
        }
    }

    /// `u vᵀ`.
    pub fn outer(u: &Vector, v: &Vector) -> Matrix {
        Matrix::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    /// `self += u vᵀ` in place.
    pub fn add_outer(&mut self, u: &Vector, v: &Vector) -> Result<()> {
        if self.rows != u.len() || self.cols != v.len() {
            return Err(Error::mismatch("add_outer", self.shape(), format!("{}x{}", u.len(), v.len())));
        }
        for i in 0..self.rows {
            let ui = u[i];
            for (m, vj) in self.data[i * self.cols..(i + 1) * self.cols].iter_mut().zip(v.iter()) {
                *m += ui * vj;
            }
        }
        Ok(())
    }

    /// `diag(d) · self`, i.e. row `i` scaled by `d[i]`.
    pub fn scale_rows(&self, d: &Vector) -> Result<Matrix> {
        if self.rows != d.len() {
            return Err(Error::mismatch("scale_rows", self.shape(), d.shape()));
        }
        Ok(Matrix::from_fn(self.rows, self.cols, |i, j| d[i] * self.get(i, j)))
    }

    /// `self · diag(d)`, i.e. column `j` scaled by `d[j]`.
    pub fn scale_cols(&self, d: &Vector) -> Result<Matrix> {
        if self.cols != d.len() {
            return Err(Error::mismatch("scale_cols", self.shape(), d.shape()));
        }
        Ok(Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) * d[j]))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z * z).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.is_finite())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square() && (0..self.rows).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// Gauss-Jordan inverse with partial pivoting. The result is accepted only
    /// if `max |A·A⁻¹ − I| ≤ tolerance`.
    pub fn inverse(&self, tolerance: f64) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::mismatch("inverse", self.shape(), "square matrix"));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&p, &q| a.get(p, col).abs().total_cmp(&a.get(q, col).abs()))
                .unwrap_or(col);
            if a.get(pivot, col) == 0.0 {
                return Err(Error::Singular {
                    residual: f64::INFINITY,
                    tolerance,
                });
            }
            if pivot != col {
                a.swap_rows(pivot, col);
                inv.swap_rows(pivot, col);
            }
            let p = a.get(col, col);
            for j in 0..n {
                a.set(col, j, a.get(col, j) / p);
                inv.set(col, j, inv.get(col, j) / p);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a.get(r, col);
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a.set(r, j, a.get(r, j) - f * a.get(col, j));
                    inv.set(r, j, inv.get(r, j) - f * inv.get(col, j));
                }
            }
        }
        let residual = self.matmul(&inv)?.sub(&Matrix::identity(n))?.max_abs();
        if residual.is_nan() || residual > tolerance {
            return Err(Error::Singular { residual, tolerance });
        }
        Ok(inv)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    /// Largest singular value, by power iteration on `selfᵀ·self`.
    pub fn spectral_norm(&self) -> f64 {
        const MAX_ITER: usize = 10_000;
        if self.max_abs() == 0.0 {
            return 0.0;
        }
        // Start from the image of the heaviest column so the iterate cannot
        // begin inside the null space.
        let heaviest = (0..self.cols)
            .max_by(|&p, &q| self.col_norm2(p).total_cmp(&self.col_norm2(q)))
            .unwrap_or(0);
        let column = Vector::from_fn(self.rows, |i| self.get(i, heaviest));
        let mut x = self.matvec_t(&column).expect("shape");
        let mut lambda = 0.0;
        for _ in 0..MAX_ITER {
            let norm = x.norm2();
            if norm == 0.0 {
                return 0.0;
            }
            x = x.scale(1.0 / norm);
            let mx = self.matvec(&x).expect("shape");
            let next = mx.dot(&mx).expect("shape");
            let y = self.matvec_t(&mx).expect("shape");
            let converged = (next - lambda).abs() <= 1e-15 * next;
            lambda = next;
            x = y;
            if converged {
                break;
            }
        }
        lambda.sqrt()
    }

    fn col_norm2(&self, j: usize) -> f64 {
        (0..self.rows).map(|i| self.get(i, j).powi(2)).sum()
    }

    /// Eigenvalues of a square real matrix.
    ///
    /// Symmetric input uses cyclic Jacobi rotations and yields real values in
    /// ascending order. Other input goes through a real Schur decomposition.
    pub fn eigenvalues(&self) -> Result<Vec<Eigenvalue>> {
        if !self.is_square() {
            return Err(Error::mismatch("eigenvalues", self.shape(), "square matrix"));
        }
        if self.is_symmetric(0.0) {
            let mut vals = jacobi_eigenvalues(self)?;
            vals.sort_by(f64::total_cmp);
            return Ok(vals.into_iter().map(|re| Eigenvalue { re, im: 0.0 }).collect());
        }
        const MAX_ITER: usize = 10_000;
        let n = self.rows;
        let m = nalgebra::DMatrix::from_row_slice(n, n, &self.data);
        let schur = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, MAX_ITER).ok_or(Error::NoConvergence { iterations: MAX_ITER })?;
        Ok(schur
            .complex_eigenvalues()
            .iter()
            .map(|c| Eigenvalue { re: c.re, im: c.im })
            .collect())
    }
}

fn jacobi_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    const MAX_SWEEPS: usize = 100;
    let n = m.rows();
    let mut a = m.clone();
    let scale = m.frobenius().max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            return Ok((0..n).map(|i| a.get(i, i)).collect());
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    Err(Error::NoConvergence { iterations: MAX_SWEEPS })
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = (0..self.rows).map(|i| self.row(i)).collect();
        f.debug_list().entries(rows).finish()
    }
}
