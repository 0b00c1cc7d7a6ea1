//! Row-major dense matrix used for embeddings, features, and autodiff values.
//!
//! All training-time arithmetic is done in f64; 32-bit precision only appears
//! at the file-format boundary (see [`crate::cmf`]).

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows*cols");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Xavier (Glorot) uniform initialization: U(-a, a) with a = sqrt(6 / (rows + cols)).
    pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        Self { rows, cols, data }
    }

    /// Standard-normal entries (Box-Muller free: rand's StandardNormal needs
    /// rand_distr, so sample via the polar-free inverse of two uniforms).
    pub fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        while data.len() < rows * cols {
            // Box-Muller transform; generates two values per draw.
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            data.push(r * theta.cos());
            if data.len() < rows * cols {
                data.push(r * theta.sin());
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Vertical stack: `self` on top of `other`.
    pub fn vstack(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return Err(Error::DimMismatch(format!(
                "vstack: {} vs {} columns",
                self.cols, other.cols
            )));
        }
        let mut data = Vec::with_capacity((self.rows + other.rows) * self.cols);
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(DenseMatrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> DenseMatrix {
        assert!(start <= end && end <= self.rows);
        DenseMatrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Output row count below which the matmul kernels stay single-threaded.
const PAR_ROW_THRESHOLD: usize = 256;

fn par_rows(out: &mut DenseMatrix, f: impl Fn(usize, &mut [f64]) + Sync) {
    let d = out.cols();
    if out.rows() >= PAR_ROW_THRESHOLD {
        use rayon::prelude::*;
        out.as_mut_slice()
            .par_chunks_mut(d)
            .enumerate()
            .for_each(|(r, row)| f(r, row));
    } else {
        for r in 0..out.rows() {
            f(r, out.row_mut(r));
        }
    }
}

/// a (n x m) times b (m x p). Each output row is a fixed-order sum over m,
/// so the result does not depend on the thread count.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols(), b.rows());
    let (n, p) = (a.rows(), b.cols());
    let mut out = DenseMatrix::zeros(n, p);
    par_rows(&mut out, |r, row| {
        let ar = a.row(r);
        for (k, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(b.row(k)) {
                *o += av * bv;
            }
        }
    });
    out
}

/// a (n x m) times b^T (p x m), yielding n x p.
pub fn matmul_abt(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols(), b.cols());
    let (n, p) = (a.rows(), b.rows());
    let mut out = DenseMatrix::zeros(n, p);
    par_rows(&mut out, |r, row| {
        let ar = a.row(r);
        for (o, j) in row.iter_mut().zip(0..p) {
            *o = dot(ar, b.row(j));
        }
    });
    out
}

/// a^T (m x n) times b (n x p), yielding m x p; a is n x m.
pub fn matmul_atb(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.rows(), b.rows());
    let (n, m, p) = (a.rows(), a.cols(), b.cols());
    let mut out = DenseMatrix::zeros(m, p);
    par_rows(&mut out, |i, row| {
        for r in 0..n {
            let av = a.get(r, i);
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(b.row(r)) {
                *o += av * bv;
            }
        }
    });
    out
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity with the zero-vector convention: if either vector has
/// zero norm the similarity is 0, not NaN.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}
