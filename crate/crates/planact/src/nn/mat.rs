//! Dense row-major matrices and the handful of GEMM variants the layers need.

use crate::scalar::Scalar;
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    /// Uniform init in [-bound, bound].
    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn add_assign(&mut self, other: &Mat<S>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// out = a (m,k) * b (k,n)
pub fn matmul<S: Scalar>(a: &Mat<S>, b: &Mat<S>) -> Mat<S> {
    assert_eq!(a.cols, b.rows);
    let mut out = Mat::zeros(a.rows, b.cols);
    matmul_acc(a, b, &mut out);
    out
}

/// out += a * b, with the i-k-j loop order so the inner loop vectorizes.
pub fn matmul_acc<S: Scalar>(a: &Mat<S>, b: &Mat<S>, out: &mut Mat<S>) {
    assert_eq!(a.cols, b.rows);
    assert_eq!(out.rows, a.rows);
    assert_eq!(out.cols, b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * n..k * n + n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
}

/// out = a (m,k) * bᵀ where b is (n,k) -> (m,n)
pub fn matmul_nt<S: Scalar>(a: &Mat<S>, b: &Mat<S>) -> Mat<S> {
    assert_eq!(a.cols, b.cols);
    let mut out = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for j in 0..b.rows {
            let brow = b.row(j);
            let mut acc = S::zero();
            for k in 0..a.cols {
                acc += arow[k] * brow[k];
            }
            orow[j] = acc;
        }
    }
    out
}

/// out += aᵀ * b where a is (m,k), b is (m,n) -> accumulates into (k,n)
pub fn matmul_tn_acc<S: Scalar>(a: &Mat<S>, b: &Mat<S>, out: &mut [S]) {
    assert_eq!(a.rows, b.rows);
    assert_eq!(out.len(), a.cols * b.cols);
    let n = b.cols;
    for i in 0..a.rows {
        let arow = a.row(i);
        let brow = b.row(i);
        for (k, &aik) in arow.iter().enumerate() {
            let orow = &mut out[k * n..k * n + n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
}
