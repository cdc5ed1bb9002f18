//! Active-set nonnegative least squares (Lawson-Hanson).
//!
//! Minimizes ||A x - b|| subject to x >= 0 where the columns of A are given
//! explicitly. Sizes here are small (tens of columns), so each passive-set
//! subproblem is solved from scratch with an SVD.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    /// Coefficients, exactly nonnegative.
    pub x: Vec<f64>,
    /// Euclidean residual ||A x - b||.
    pub residual: f64,
    pub iterations: usize,
}

fn matvec(cols: &[&[f64]], x: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (c, &xj) in cols.iter().zip(x) {
        if xj != 0.0 {
            out.iter_mut().zip(c.iter()).for_each(|(o, a)| *o += xj * a);
        }
    }
    out
}

fn residual_vec(cols: &[&[f64]], x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = matvec(cols, x, b.len());
    b.iter().zip(ax).map(|(bi, ai)| bi - ai).collect()
}

fn lstsq_on(cols: &[&[f64]], passive: &[usize], b: &[f64]) -> Vec<f64> {
    let dim = b.len();
    let a = DMatrix::from_fn(dim, passive.len(), |i, j| cols[passive[j]][i]);
    let rhs = DVector::from_column_slice(b);
    let svd = a.svd(true, true);
    let eps = 1e-13 * svd.singular_values.max().max(1.0);
    match svd.solve(&rhs, eps) {
        Ok(s) => s.iter().copied().collect(),
        Err(_) => vec![0.0; passive.len()],
    }
}

/// Solves min ||sum_j x_j cols[j] - b|| over x >= 0.
///
/// `max_iter` bounds the total number of passive-set solves; `tol` is the
/// dual-feasibility threshold on A^T(b - Ax), scaled by max(1, ||b||).
pub fn nnls(cols: &[&[f64]], b: &[f64], max_iter: usize, tol: f64) -> Result<NnlsSolution> {
    let m = cols.len();
    if m == 0 {
        return Err(Error::InvalidInput("nnls needs at least one column".into()));
    }
    if cols.iter().any(|c| c.len() != b.len()) {
        return Err(Error::InvalidInput("nnls column/rhs dimension mismatch".into()));
    }
    let scale = crate::sphere::norm(b).max(1.0);
    let tol = tol * scale;

    let mut x = vec![0.0; m];
    let mut passive = vec![false; m];
    // Columns that were just added but came out nonpositive; excluded until x changes.
    let mut blocked = vec![false; m];
    let mut iterations = 0usize;

    let finish = |x: Vec<f64>, iterations: usize| {
        let r = residual_vec(cols, &x, b);
        NnlsSolution {
            residual: crate::sphere::norm(&r),
            x,
            iterations,
        }
    };

    loop {
        let r = residual_vec(cols, &x, b);
        let w: Vec<f64> = cols.iter().map(|c| crate::sphere::dot(c, &r)).collect();
        let entering = (0..m)
            .filter(|&j| !passive[j] && !blocked[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = entering else {
            return Ok(finish(x, iterations));
        };
        if w[j] <= tol {
            return Ok(finish(x, iterations));
        }
        passive[j] = true;
        let mut first_solve = true;

        loop {
            iterations += 1;
            if iterations > max_iter {
                let sol = finish(x, iterations);
                return Err(Error::NnlsNonConvergence {
                    iterations: sol.iterations,
                    residual: sol.residual,
                    best: sol.x,
                });
            }
            let idx: Vec<usize> = (0..m).filter(|&i| passive[i]).collect();
            let s = lstsq_on(cols, &idx, b);
            if s.iter().all(|&v| v > 0.0) {
                x.iter_mut().for_each(|v| *v = 0.0);
                for (&i, &v) in idx.iter().zip(&s) {
                    x[i] = v;
                }
                blocked.iter_mut().for_each(|v| *v = false);
                break;
            }
            // The entering column came out nonpositive on its first solve:
            // numerically dependent on the passive set.
            if first_solve {
                let pos = idx.iter().position(|&i| i == j).unwrap();
                if s[pos] <= 0.0 {
                    passive[j] = false;
                    blocked[j] = true;
                    break;
                }
            }
            first_solve = false;
            let mut step = f64::INFINITY;
            for (&i, &si) in idx.iter().zip(&s) {
                if si <= 0.0 {
                    let denom = x[i] - si;
                    if denom > 0.0 {
                        step = step.min(x[i] / denom);
                    }
                }
            }
            if !step.is_finite() {
                step = 0.0;
            }
            for (&i, &si) in idx.iter().zip(&s) {
                x[i] += step * (si - x[i]);
            }
            for &i in &idx {
                if x[i] <= 1e-15 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
}
