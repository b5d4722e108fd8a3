//! Compressed sparse rows and a preconditioned conjugate gradient solver.

use rayon::prelude::*;

/// Row-major compressed sparse matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row entry lists. Duplicate columns within a row are summed.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let nrows = rows.len();
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                debug_assert!(c < cols);
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            rows: nrows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    #[inline]
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in self.indptr[r]..self.indptr[r + 1] {
            acc += self.values[k] * x[self.indices[k]];
        }
        acc
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .into_par_iter()
            .with_min_len(256)
            .map(|r| self.row_dot(r, x))
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                let slot = next[c];
                indices[slot] = r;
                values[slot] = v;
                next[c] += 1;
            }
        }
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
            values,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// Final residual norm relative to the right-hand side norm.
    pub relative_residual: f64,
    pub converged: bool,
    /// Set when a non-positive curvature or non-finite value stopped the iteration.
    pub breakdown: bool,
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// (semi)definite operator. `x` holds the warm start and receives the result.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    diag: Option<&[f64]>,
    max_iter: usize,
    rel_tol: f64,
) -> CgReport {
    let precond = |r: &[f64], z: &mut [f64]| match diag {
        Some(d) => {
            for i in 0..r.len() {
                z[i] = if d[i] > 0.0 { r[i] / d[i] } else { r[i] };
            }
        }
        None => z.copy_from_slice(r),
    };
    preconditioned_cg(apply, precond, b, x, max_iter, rel_tol)
}

/// Conjugate gradients with an arbitrary symmetric positive definite preconditioner.
pub fn preconditioned_cg(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    max_iter: usize,
    rel_tol: f64,
) -> CgReport {
    let n = b.len();
    assert_eq!(x.len(), n);
    let bnorm = dot(b, b).sqrt();
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let rel = |r: &[f64]| {
        let rn = dot(r, r).sqrt();
        if bnorm > 0.0 {
            rn / bnorm
        } else {
            rn
        }
    };
    let mut report = CgReport {
        iterations: 0,
        relative_residual: rel(&r),
        converged: false,
        breakdown: false,
    };
    if report.relative_residual <= rel_tol || dot(&r, &r) == 0.0 {
        report.converged = true;
        return report;
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            report.breakdown = true;
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        report.iterations = it;
        report.relative_residual = rel(&r);
        if !report.relative_residual.is_finite() {
            report.breakdown = true;
            break;
        }
        if report.relative_residual <= rel_tol {
            report.converged = true;
            break;
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    report
}
