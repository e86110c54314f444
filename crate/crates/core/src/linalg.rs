//! Small symmetric eigenvalue helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Matrices up to this side length are handled with a dense eigensolver.
pub const DENSE_LIMIT: usize = 1024;

/// `(lambda_min, lambda_max)` of a symmetric matrix.
pub fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() <= DENSE_LIMIT {
        let ev = m.clone().symmetric_eigenvalues();
        let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    } else {
        let hi = lanczos_top(m, 200, 1e-12).value;
        let lo = -lanczos_top(&(-m), 200, 1e-12).value;
        (lo, hi)
    }
}

/// Largest eigenvalue and a unit eigenvector.
pub fn top_eigenpair(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    if m.nrows() <= DENSE_LIMIT {
        let eig = SymmetricEigen::new(m.clone());
        let i = eig.eigenvalues.imax();
        (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned())
    } else {
        let r = lanczos_top(m, 200, 1e-12);
        (r.value, r.vector)
    }
}

#[derive(Debug, Clone)]
pub struct RitzPair {
    pub value: f64,
    pub vector: DVector<f64>,
    /// `||M v - value v||`; some eigenvalue lies within this distance of `value`.
    pub residual: f64,
    pub iterations: usize,
}

/// Lanczos iteration with full reorthogonalisation for the top eigenpair.
///
/// The start vector is deterministic so repeated calls agree bit for bit.
pub fn lanczos_top(m: &DMatrix<f64>, max_iter: usize, tol: f64) -> RitzPair {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix must be square");
    if n == 0 {
        return RitzPair {
            value: 0.0,
            vector: DVector::zeros(0),
            residual: 0.0,
            iterations: 0,
        };
    }
    let k_max = max_iter.min(n).max(1);
    let mut q = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 97) as f64 / 97.0);
    q.normalize_mut();

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k_max);
    let mut alpha = Vec::with_capacity(k_max);
    let mut beta: Vec<f64> = Vec::with_capacity(k_max);
    let mut best = RitzPair {
        value: f64::NEG_INFINITY,
        vector: q.clone(),
        residual: f64::INFINITY,
        iterations: 0,
    };

    for j in 0..k_max {
        basis.push(q.clone());
        let mut w = m * &q;
        let a = w.dot(&q);
        alpha.push(a);
        for b in &basis {
            let c = w.dot(b);
            w.axpy(-c, b, 1.0);
        }
        let b_next = w.norm();

        // Ritz pair of the tridiagonal projection
        let k = alpha.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let top = eig.eigenvalues.imax();
        let s = eig.eigenvectors.column(top);
        let residual = (b_next * s[k - 1]).abs();
        let mut v = DVector::zeros(n);
        for (i, bi) in basis.iter().enumerate() {
            v.axpy(s[i], bi, 1.0);
        }
        best = RitzPair {
            value: eig.eigenvalues[top],
            vector: v,
            residual,
            iterations: j + 1,
        };
        if residual <= tol * (1.0 + best.value.abs()) || b_next <= f64::EPSILON {
            break;
        }
        beta.push(b_next);
        q = w / b_next;
    }
    best
}
