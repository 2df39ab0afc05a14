//! Compressed sparse row storage and a Jacobi-preconditioned conjugate
//! gradient solver for the SPD systems produced by the P1 assembly.

use crate::error::{invalid, Error, Result};

/// Square sparse matrix in CSR format with sorted, unique column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < nrows);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { nrows, row_ptr, col_idx, values }
    }

    pub fn identity(nrows: usize) -> Self {
        Self::from_diagonal(&vec![1.0; nrows])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self {
            nrows: diag.len(),
            row_ptr: (0..=diag.len()).collect(),
            col_idx: (0..diag.len()).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    /// Entry `(r, c)`, zero when not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.col_idx[range.clone()].binary_search(&c) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Rows that store at least one entry.
    pub fn nonempty_rows(&self) -> Vec<usize> {
        (0..self.nrows).filter(|&r| self.row_ptr[r + 1] > self.row_ptr[r]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.get(r, r)).collect()
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut acc = 0.0;
            for (c, v) in self.col_idx[lo..hi].iter().zip(&self.values[lo..hi]) {
                acc += v * x[*c];
            }
            *yr = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Bilinear form `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut total = 0.0;
        for (r, xr) in x.iter().enumerate() {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            if lo == hi {
                continue;
            }
            let mut acc = 0.0;
            for (c, v) in self.col_idx[lo..hi].iter().zip(&self.values[lo..hi]) {
                acc += v * y[*c];
            }
            total += xr * acc;
        }
        total
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows, self.nrows);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                d[(r, c)] = v;
            }
        }
        d
    }

    /// Largest entry of `|A - A^T|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Stopping rule for [`ConjugateGradient`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConjugateGradient {
    /// Relative residual target `||Ax - b|| <= tol ||b||`.
    pub tol: f64,
    pub max_iter: usize,
}

/// Outcome of a converged solve.
#[derive(Clone, Debug)]
pub struct SolveInfo {
    pub iterations: usize,
    pub relative_residual: f64,
}

impl ConjugateGradient {
    /// Default cap of `50 * sqrt(nrows)` iterations (`50 n` on an `n x n` grid).
    pub fn for_size(nrows: usize, tol: f64) -> Self {
        let side = (nrows as f64).sqrt().ceil() as usize;
        Self { tol, max_iter: 50 * side.max(1) }
    }

    /// Solves `A x = b` starting from `x` (overwritten with the solution).
    pub fn solve_in_place(&self, a: &CsrMatrix, b: &[f64], x: &mut [f64]) -> Result<SolveInfo> {
        let n = a.nrows();
        if b.len() != n || x.len() != n {
            return invalid(format!("dimension mismatch: matrix {n}, rhs {}, solution {}", b.len(), x.len()));
        }
        if !(self.tol > 0.0) {
            return invalid("solver tolerance must be positive");
        }
        let b_norm = norm2(b);
        if b_norm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(SolveInfo { iterations: 0, relative_residual: 0.0 });
        }
        let inv_diag: Vec<f64> = a.diagonal().into_iter().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();

        let target = self.tol * b_norm;
        let mut r = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut ap = vec![0.0; n];
        let mut iterations = 0;

        // Restart from the true residual when the recursive one drifts.
        for _restart in 0..4 {
            a.mul_vec_into(x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
            let mut r_norm = norm2(&r);
            if r_norm <= target {
                return Ok(SolveInfo { iterations, relative_residual: r_norm / b_norm });
            }
            for i in 0..n {
                z[i] = inv_diag[i] * r[i];
            }
            p.copy_from_slice(&z);
            let mut rz = dot(&r, &z);
            while r_norm > target {
                if iterations >= self.max_iter {
                    return Err(Error::SolverFailure { iterations, residual: r_norm / b_norm });
                }
                a.mul_vec_into(&p, &mut ap);
                let pap = dot(&p, &ap);
                if !(pap > 0.0) {
                    return Err(Error::SolverFailure { iterations, residual: r_norm / b_norm });
                }
                let alpha = rz / pap;
                for i in 0..n {
                    x[i] += alpha * p[i];
                    r[i] -= alpha * ap[i];
                }
                for i in 0..n {
                    z[i] = inv_diag[i] * r[i];
                }
                let rz_new = dot(&r, &z);
                let beta = rz_new / rz;
                rz = rz_new;
                for i in 0..n {
                    p[i] = z[i] + beta * p[i];
                }
                r_norm = norm2(&r);
                iterations += 1;
            }
        }
        a.mul_vec_into(x, &mut ap);
        let true_res = b.iter().zip(&ap).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt();
        if true_res <= target {
            Ok(SolveInfo { iterations, relative_residual: true_res / b_norm })
        } else {
            Err(Error::SolverFailure { iterations, residual: true_res / b_norm })
        }
    }
}

/// Solves the SPD system `A x = rhs` to relative residual `tol` from a zero
/// start, with the default iteration cap.
pub fn solve_sparse(a: &CsrMatrix, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let mut x = vec![0.0; a.nrows()];
    ConjugateGradient::for_size(a.nrows(), tol).solve_in_place(a, rhs, &mut x)?;
    Ok(x)
}

/// Dense-band Cholesky factor `A = L L^T` of an SPD matrix.
///
/// Row `i` of `L` is stored for columns `i - bw ..= i`; the fill-in of a
/// sparse band matrix stays inside the band, so work is `O(n bw^2)` for the
/// factorization and `O(n bw)` per solve.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        let bw = (0..n).flat_map(|r| a.row(r).map(move |(c, _)| r.abs_diff(c))).max().unwrap_or(0);
        let mut f = Self { n, bw, l: vec![0.0; n * (bw + 1)] };
        f.refactor(a)?;
        Ok(f)
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Factors `a` into the existing storage. Entries of `a` outside the
    /// band of the first factorization are an error.
    pub fn refactor(&mut self, a: &CsrMatrix) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        if a.nrows() != n {
            return invalid(format!("matrix has {} rows, factor has {n}", a.nrows()));
        }
        let w = bw + 1;
        self.l.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..n {
            for (c, v) in a.row(r) {
                if c <= r {
                    if r - c > bw {
                        return invalid("matrix entry outside the factor's band");
                    }
                    self.l[r * w + c + bw - r] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                // L[i][k] and L[j][k] for k in lo..j are contiguous in their rows
                let k0 = lo.max(j.saturating_sub(bw));
                let row_i = &self.l[i * w + k0 + bw - i..i * w + j + bw - i];
                let row_j = &self.l[j * w + k0 + bw - j..j * w + bw];
                let s = self.l[i * w + j + bw - i] - dot(row_i, row_j);
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::SolverFailure { iterations: 0, residual: f64::NAN });
                    }
                    self.l[i * w + bw] = s.sqrt();
                } else {
                    self.l[i * w + j + bw - i] = s / self.l[j * w + bw];
                }
            }
        }
        Ok(())
    }

    /// Overwrites `b` with `A^{-1} b`.
    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        if b.len() != n {
            return invalid(format!("rhs has length {}, factor has {n}", b.len()));
        }
        let w = bw + 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let s = dot(&self.l[i * w + lo + bw - i..i * w + bw], &b[lo..i]);
            b[i] = (b[i] - s) / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            b[i] /= self.l[i * w + bw];
            let xi = b[i];
            let lo = i.saturating_sub(bw);
            let row = &self.l[i * w + lo + bw - i..i * w + bw];
            b[lo..i].iter_mut().zip(row).for_each(|(bk, lik)| *bk -= lik * xi);
        }
        Ok(())
    }
}
