//! Dense row-major matrices and the handful of vector kernels the cell
//! updates and backward passes are built from. Sizes here are small (tens to
//! a few hundred per side), so plain loops with a little manual unrolling are
//! fast enough and keep summation order fixed, which the bit-identical rerun
//! guarantee depends on.

use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `out = self * x`.
    pub fn matvec(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for i in 0..self.rows {
            out[i] = dot(self.row(i), x);
        }
    }

    /// `out += self * x`.
    pub fn matvec_acc(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for i in 0..self.rows {
            out[i] += dot(self.row(i), x);
        }
    }

    /// `out += self * [x; last]`, for matrices whose final column multiplies
    /// a separately stored channel.
    pub fn matvec_split_acc(&self, x: &[T], last: T, out: &mut [T]) {
        debug_assert_eq!(x.len() + 1, self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            out[i] += dot(&row[..x.len()], x) + row[x.len()] * last;
        }
    }

    /// `out += selfᵀ * v`, computed as a sum of scaled rows so the matrix is
    /// walked in storage order.
    pub fn matvec_t_acc(&self, v: &[T], out: &mut [T]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for i in 0..self.rows {
            axpy(v[i], self.row(i), out);
        }
    }

    /// Rank-one update `self += u vᵀ`.
    pub fn add_outer(&mut self, u: &[T], v: &[T]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for i in 0..self.rows {
            let ui = u[i];
            axpy(ui, v, &mut self.data[i * v.len()..(i + 1) * v.len()]);
        }
    }

    /// Rank-one update against the split vector `[x; last]`.
    pub fn add_outer_split(&mut self, u: &[T], x: &[T], last: T) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(x.len() + 1, self.cols);
        let cols = self.cols;
        for i in 0..self.rows {
            let ui = u[i];
            let row = &mut self.data[i * cols..(i + 1) * cols];
            axpy(ui, x, &mut row[..x.len()]);
            row[x.len()] += ui * last;
        }
    }
}

/// Dot product with four running sums; the fixed association keeps results
/// reproducible and lets the compiler vectorize.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (qa, qb) in (&mut ca).zip(&mut cb) {
        acc[0] += qa[0] * qb[0];
        acc[1] += qa[1] * qb[1];
        acc[2] += qa[2] * qb[2];
        acc[3] += qa[3] * qb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&xa, &xb) in ca.remainder().iter().zip(cb.remainder()) {
        s += xa * xb;
    }
    s
}

/// `y += alpha * x`.
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale<T: Real>(alpha: T, x: &mut [T]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

/// Euclidean norm.
pub fn norm2<T: Real>(x: &[T]) -> T {
    dot(x, x).sqrt()
}

/// Largest absolute entry, zero for an empty slice.
pub fn norm_inf<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
}

pub fn sub<T: Real>(a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(a.len(), out.len());
    for i in 0..a.len() {
        out[i] = a[i] - b[i];
    }
}
