//! Minimal sparse symmetric linear algebra for the Newton linear solves:
//! compressed sparse rows plus a Jacobi-preconditioned conjugate-gradient
//! iteration.

use crate::error::{Error, Result};

/// Square sparse matrix in compressed-sparse-row layout with a fixed
/// symmetric sparsity pattern and per-row sorted column indices.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a zero matrix from per-row column lists; each list is sorted
    /// and deduplicated.
    pub fn from_pattern(rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut cols in rows {
            cols.sort_unstable();
            cols.dedup();
            col_idx.extend_from_slice(&cols);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    /// Matrix dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Resets all stored values to zero, keeping the pattern.
    pub fn zero_values(&mut self) {
        self.values.fill(0.0);
    }

    /// Adds `v` to entry `(i, j)`; the position must exist in the pattern.
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        let k = self.col_idx[lo..hi]
            .binary_search(&j)
            .unwrap_or_else(|_| panic!("entry ({i}, {j}) is outside the sparsity pattern"));
        self.values[lo + k] += v;
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// The stored value at `(i, j)`, or `None` if outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .binary_search(&j)
            .ok()
            .map(|k| self.values[lo + k])
    }

    /// The diagonal entries (zero where the pattern has no diagonal).
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col_idx[k] == i {
                    d[i] = self.values[k];
                }
            }
        }
        d
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct PcgResult {
    /// Approximate solution.
    pub x: Vec<f64>,
    /// Iterations performed.
    pub iterations: usize,
    /// Final `|A x - b| / |b|`.
    pub relative_residual: f64,
    /// Whether the requested tolerance was reached.
    pub converged: bool,
}

/// Solves `A x = b` for symmetric positive definite `A` by conjugate
/// gradients with Jacobi (diagonal) preconditioning, starting from zero.
/// Stops at `|A x - b| <= rel_tol |b|` or after `max_iters` iterations;
/// only breakdowns (non-SPD behavior, non-finite numbers) are errors, an
/// unmet tolerance is reported through [`PcgResult::converged`].
pub fn pcg_jacobi(a: &CsrMatrix, b: &[f64], rel_tol: f64, max_iters: usize) -> Result<PcgResult> {
    let n = a.n();
    debug_assert_eq!(b.len(), n);
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return Ok(PcgResult { x: vec![0.0; n], iterations: 0, relative_residual: 0.0, converged: true });
    }

    let diag = a.diagonal();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::LinearSolveFailed {
            reason: "matrix has a non-positive diagonal entry".into(),
        });
    }
    let precondition = |r: &[f64], z: &mut [f64]| {
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
    };

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];

    let mut iterations = 0;
    let mut res = 1.0f64;
    for _ in 0..max_iters {
        a.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) || !pap.is_finite() {
            return Err(Error::LinearSolveFailed {
                reason: format!("conjugate gradients broke down (p'Ap = {pap})"),
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / norm_b;
        if res <= rel_tol {
            break;
        }
        precondition(&r, &mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }

    if !res.is_finite() {
        return Err(Error::LinearSolveFailed {
            reason: "residual became non-finite".into(),
        });
    }
    Ok(PcgResult { x, iterations, relative_residual: res, converged: res <= rel_tol })
}
