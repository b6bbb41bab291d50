//! Dense linear-algebra kernel for the model-fitting stack.
//!
//! Small, self-contained routines on symmetric positive (semi-)definite
//! matrices of modest dimension (p a few dozen): Cholesky factorization and
//! solves for the IRLS normal equations, a zero-pivot-tolerant PSD Cholesky
//! for sampling from possibly degenerate covariances, cyclic Jacobi
//! eigenvalues for rank diagnostics, and Householder QR least squares for the
//! ill-conditioned spline bases.

use ndarray::{Array1, Array2};

/// Plain Cholesky factorization A = L L' for positive definite A.
///
/// Returns the lower factor, or `None` when a pivot is not strictly positive.
pub(crate) fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let p = a.nrows();
    debug_assert_eq!(p, a.ncols());
    let mut l = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[[j, j]] = dj;
        for i in (j + 1)..p {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / dj;
        }
    }
    Some(l)
}

/// Cholesky factorization for positive *semi*-definite matrices.
///
/// Pivots within `tol * max_diag` of zero produce a zero column in the
/// factor, provided the rest of that column is compatibly small; this is what
/// makes a degenerate (e.g. all-zero) covariance factorizable. Returns `None`
/// when the matrix is indefinite beyond the tolerance.
pub(crate) fn cholesky_psd(a: &Array2<f64>, tol: f64) -> Option<Array2<f64>> {
    let p = a.nrows();
    let max_diag = (0..p).map(|i| a[[i, i]].abs()).fold(0.0_f64, f64::max);
    let thresh = tol * max_diag.max(1e-300);
    let mut l = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !d.is_finite() {
            return None;
        }
        if d > thresh {
            let dj = d.sqrt();
            l[[j, j]] = dj;
            for i in (j + 1)..p {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / dj;
            }
        } else if d < -thresh {
            return None;
        } else {
            // Semi-definite pivot: the whole column must vanish.
            for i in (j + 1)..p {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                if s.abs() > thresh.sqrt().max(tol) {
                    return None;
                }
            }
        }
    }
    Some(l)
}

/// Solve L y = b with L lower triangular (zero diagonal entries propagate
/// zeros, matching the PSD factorization convention).
pub(crate) fn solve_lower(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let p = l.nrows();
    let mut y = Array1::<f64>::zeros(p);
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = if l[[i, i]] != 0.0 { s / l[[i, i]] } else { 0.0 };
    }
    y
}

/// Solve L' x = y with L lower triangular.
pub(crate) fn solve_upper_t(l: &Array2<f64>, y: &Array1<f64>) -> Array1<f64> {
    let p = l.nrows();
    let mut x = Array1::<f64>::zeros(p);
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in (i + 1)..p {
            s -= l[[k, i]] * x[k];
        }
        x[i] = if l[[i, i]] != 0.0 { s / l[[i, i]] } else { 0.0 };
    }
    x
}

/// Solve A x = b for positive definite A via Cholesky.
pub(crate) fn cholesky_solve(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let l = cholesky(a)?;
    Some(solve_upper_t(&l, &solve_lower(&l, b)))
}

/// Invert a positive definite matrix via Cholesky column solves.
pub(crate) fn invert_spd(a: &Array2<f64>) -> Option<Array2<f64>> {
    let p = a.nrows();
    let l = cholesky(a)?;
    let mut inv = Array2::<f64>::zeros((p, p));
    let mut e = Array1::<f64>::zeros(p);
    for j in 0..p {
        e.fill(0.0);
        e[j] = 1.0;
        let col = solve_upper_t(&l, &solve_lower(&l, &e));
        inv.column_mut(j).assign(&col);
    }
    // Symmetrize against accumulated round-off.
    for i in 0..p {
        for j in (i + 1)..p {
            let m = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = m;
            inv[[j, i]] = m;
        }
    }
    Some(inv)
}

/// Singular values of the matrix whose columns are given, via one-sided
/// Jacobi rotations (in place). Unlike an eigendecomposition of the Gram
/// matrix, this keeps high relative accuracy for tiny singular values, which
/// the collinearity check needs.
pub(crate) fn singular_values_columns(columns: &mut [Vec<f64>]) -> Vec<f64> {
    let p = columns.len();
    for _ in 0..30 {
        let mut max_cosine = 0.0_f64;
        for i in 0..p {
            for j in (i + 1)..p {
                let (mut aii, mut ajj, mut aij) = (0.0, 0.0, 0.0);
                for (x, y) in columns[i].iter().zip(columns[j].iter()) {
                    aii += x * x;
                    ajj += y * y;
                    aij += x * y;
                }
                let denom = (aii * ajj).sqrt();
                if denom == 0.0 {
                    continue;
                }
                let cosine = aij.abs() / denom;
                if cosine < 1e-15 {
                    continue;
                }
                max_cosine = max_cosine.max(cosine);
                let tau = (ajj - aii) / (2.0 * aij);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let (head, tail) = columns.split_at_mut(j);
                let ci = &mut head[i];
                let cj = &mut tail[0];
                for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
                    let xi = *x;
                    let yj = *y;
                    *x = c * xi - s * yj;
                    *y = s * xi + c * yj;
                }
            }
        }
        if max_cosine < 1e-14 {
            break;
        }
    }
    let mut sv: Vec<f64> =
        columns.iter().map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sv
}

/// Least squares min ||A x - b|| via Householder QR.
///
/// Avoids forming the normal equations; the spline bases this serves are too
/// ill-conditioned for a Gram-matrix solve at the required accuracy. Returns
/// `None` when a diagonal of R collapses (rank-deficient design).
pub(crate) fn householder_lstsq(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    let p = a.ncols();
    if n < p {
        return None;
    }
    let mut r = a.clone();
    let mut qtb = b.clone();
    for j in 0..p {
        // Householder vector for column j below the diagonal.
        let mut norm = 0.0;
        for i in j..n {
            norm += r[[i, j]] * r[[i, j]];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            return None;
        }
        let alpha = if r[[j, j]] >= 0.0 { -norm } else { norm };
        let mut v = Array1::<f64>::zeros(n - j);
        for i in j..n {
            v[i - j] = r[[i, j]];
        }
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in j..p {
                let mut dot = 0.0;
                for i in j..n {
                    dot += v[i - j] * r[[i, col]];
                }
                let scale = 2.0 * dot / vnorm2;
                for i in j..n {
                    r[[i, col]] -= scale * v[i - j];
                }
            }
            let mut dot = 0.0;
            for i in j..n {
                dot += v[i - j] * qtb[i];
            }
            let scale = 2.0 * dot / vnorm2;
            for i in j..n {
                qtb[i] -= scale * v[i - j];
            }
        }
        r[[j, j]] = alpha;
    }
    // Back substitution on the p x p upper triangle.
    let mut x = Array1::<f64>::zeros(p);
    for i in (0..p).rev() {
        let mut s = qtb[i];
        for k in (i + 1)..p {
            s -= r[[i, k]] * x[k];
        }
        if r[[i, i]].abs() < 1e-300 {
            return None;
        }
        x[i] = s / r[[i, i]];
    }
    Some(x)
}
