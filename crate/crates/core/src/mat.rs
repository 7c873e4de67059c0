//! Dense column-major matrix used throughout the crate.
//!
//! Storage is a single `Vec<f64>` in column-major order (the element at row
//! `r`, column `c` lives at `c * rows + r`), which makes `vec`/`unfold`
//! round-trips plain reshapes and keeps every numeric routine deterministic:
//! there is no threading and every reduction runs in a fixed order.

use crate::error::{Error, Result};
use std::fmt;
use std::ops::{Index, IndexMut};

/// Column-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// All-ones matrix.
    pub fn ones(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![1.0; rows * cols] }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from a closure over (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Mat {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    /// Wrap an existing column-major buffer.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "buffer of length {} cannot form a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Build from row slices (convenient for literal test fixtures).
    pub fn from_rows(rows: &[&[f64]]) -> Mat {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        assert!(rows.iter().all(|row| row.len() == c), "ragged row list");
        Mat::from_fn(r, c, |i, j| rows[i][j])
    }

    /// A single column vector as an `n x 1` matrix.
    pub fn col_vec(v: &[f64]) -> Mat {
        Mat { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Underlying column-major buffer.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Column `c` as a slice.
    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    /// Copy `v` into column `c`.
    pub fn set_col(&mut self, c: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows, "column length mismatch");
        self.col_mut(c).copy_from_slice(v);
    }

    /// Matrix with the given columns of `self`, in the given order.
    pub fn select_cols(&self, idx: &[usize]) -> Mat {
        let mut out = Mat::zeros(self.rows, idx.len());
        for (j, &c) in idx.iter().enumerate() {
            out.set_col(j, self.col(c));
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self * other`.
    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let out_col = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for k in 0..self.cols {
                let a_col = &self.data[k * self.rows..(k + 1) * self.rows];
                let b = other[(k, j)];
                if b != 0.0 {
                    for r in 0..self.rows {
                        out_col[r] += a_col[r] * b;
                    }
                }
            }
        }
        out
    }

    /// `self^T * other`.
    pub fn t_mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "t_mul row mismatch");
        let mut out = Mat::zeros(self.cols, other.cols);
        for j in 0..other.cols {
            let b_col = other.col(j);
            for i in 0..self.cols {
                out[(i, j)] = dot(self.col(i), b_col);
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn mul_t(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "mul_t column mismatch");
        let mut out = Mat::zeros(self.rows, other.rows);
        for k in 0..self.cols {
            let a_col = self.col(k);
            for j in 0..other.rows {
                let b = other[(j, k)];
                if b != 0.0 {
                    let out_col = &mut out.data[j * self.rows..(j + 1) * self.rows];
                    for r in 0..self.rows {
                        out_col[r] += a_col[r] * b;
                    }
                }
            }
        }
        out
    }

    /// `self * v` for a vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec length mismatch");
        let mut out = vec![0.0; self.rows];
        for k in 0..self.cols {
            let a_col = self.col(k);
            let x = v[k];
            if x != 0.0 {
                for r in 0..self.rows {
                    out[r] += a_col[r] * x;
                }
            }
        }
        out
    }

    /// `self^T * v` for a vector `v`.
    pub fn t_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "t_mul_vec length mismatch");
        (0..self.cols).map(|c| dot(self.col(c), v)).collect()
    }

    /// `self += s * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Mat, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
    }

    /// `self += s * u * v^T` (rank-one update).
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], s: f64) {
        assert_eq!(u.len(), self.rows, "add_outer row mismatch");
        assert_eq!(v.len(), self.cols, "add_outer col mismatch");
        for c in 0..self.cols {
            let sv = s * v[c];
            if sv != 0.0 {
                let col = self.col_mut(c);
                for r in 0..col.len() {
                    col[r] += sv * u[r];
                }
            }
        }
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "sub shape mismatch");
        let data = self.data.iter().zip(other.data.iter()).map(|(a, b)| a - b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    /// Squared Frobenius norm.
    pub fn frob_sq(&self) -> f64 {
        norm_sq(&self.data)
    }

    /// Frobenius inner product with `other`.
    pub fn frob_dot(&self, other: &Mat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "frob_dot shape mismatch");
        dot(&self.data, &other.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Solve `self * X = rhs` by LU decomposition with partial pivoting.
    ///
    /// Returns the solution together with the smallest absolute pivot
    /// encountered, which callers can use to detect near rank-deficiency.
    /// An exactly zero pivot is an error.
    pub fn lu_solve(&self, rhs: &Mat) -> Result<(Mat, f64)> {
        if self.rows != self.cols {
            return Err(Error::InvalidArgument(format!(
                "lu_solve needs a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        if rhs.rows != self.rows {
            return Err(Error::ShapeMismatch(format!(
                "lu_solve rhs has {} rows, expected {}",
                rhs.rows, self.rows
            )));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut x = rhs.clone();
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            // Partial pivoting: pick the largest |entry| in column k at or below row k.
            let mut piv = k;
            let mut best = a[(k, k)].abs();
            for r in k + 1..n {
                let v = a[(r, k)].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular(format!("zero pivot at elimination step {k}")));
            }
            if piv != k {
                for c in 0..n {
                    let tmp = a[(k, c)];
                    a[(k, c)] = a[(piv, c)];
                    a[(piv, c)] = tmp;
                }
                for c in 0..x.cols {
                    let tmp = x[(k, c)];
                    x[(k, c)] = x[(piv, c)];
                    x[(piv, c)] = tmp;
                }
            }
            let pivot = a[(k, k)];
            min_pivot = min_pivot.min(pivot.abs());
            for r in k + 1..n {
                let factor = a[(r, k)] / pivot;
                if factor != 0.0 {
                    a[(r, k)] = 0.0;
                    for c in k + 1..n {
                        a[(r, c)] -= factor * a[(k, c)];
                    }
                    for c in 0..x.cols {
                        x[(r, c)] -= factor * x[(k, c)];
                    }
                }
            }
        }
        // Back substitution.
        for c in 0..x.cols {
            for k in (0..n).rev() {
                let mut v = x[(k, c)];
                for j in k + 1..n {
                    v -= a[(k, j)] * x[(j, c)];
                }
                x[(k, c)] = v / a[(k, k)];
            }
        }
        Ok((x, min_pivot))
    }

    /// Solve `(self + ridge * I) * X = rhs`; `self` must be square.
    pub fn ridge_solve(&self, rhs: &Mat, ridge: f64) -> Result<(Mat, f64)> {
        let mut a = self.clone();
        let n = a.rows.min(a.cols);
        for i in 0..n {
            a[(i, i)] += ridge;
        }
        a.lu_solve(rhs)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[c * self.rows + r]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[c * self.rows + r]
    }
}

impl fmt::Display for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{:.6}", self[(r, c)])?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Squared Euclidean norm.
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// `a += s * b`, elementwise.
pub fn axpy(a: &mut [f64], b: &[f64], s: f64) {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter_mut().zip(b.iter()) {
        *x += s * y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn storage_is_column_major() {
        let m = Mat::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]);
        assert_eq!(m.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m[(0, 1)], 3.0);
        assert_eq!(m.col(1), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_matches_hand_arithmetic() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Mat::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let c = a.mul(&b);
        assert_eq!(c.data(), Mat::from_rows(&[&[19.0, 22.0], &[43.0, 50.0]]).data());
        let ct = a.t_mul(&b);
        assert_eq!(ct.data(), Mat::from_rows(&[&[26.0, 30.0], &[38.0, 44.0]]).data());
        let cmt = a.mul_t(&b);
        assert_eq!(cmt.data(), Mat::from_rows(&[&[17.0, 23.0], &[39.0, 53.0]]).data());
    }

    #[test]
    fn lu_solve_recovers_known_solution() {
        let a = Mat::from_rows(&[&[4.0, 1.0, 0.0], &[1.0, 3.0, 1.0], &[0.0, 1.0, 2.0]]);
        let x_true = Mat::from_rows(&[&[1.0], &[-2.0], &[0.5]]);
        let rhs = a.mul(&x_true);
        let (x, min_pivot) = a.lu_solve(&rhs).unwrap();
        for (got, want) in x.data().iter().zip(x_true.data()) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(min_pivot > 0.0);
    }

    #[test]
    fn lu_solve_rejects_singular() {
        let a = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        let rhs = Mat::col_vec(&[1.0, 2.0]);
        assert!(matches!(a.lu_solve(&rhs), Err(Error::Singular(_))));
    }

    #[test]
    fn lu_solve_rejects_non_square() {
        let a = Mat::zeros(2, 3);
        let rhs = Mat::col_vec(&[1.0, 2.0]);
        assert!(matches!(a.lu_solve(&rhs), Err(Error::InvalidArgument(_))));
    }
}
