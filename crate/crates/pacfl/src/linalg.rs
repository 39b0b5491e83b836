//! Dense linear-algebra kernels: one-sided Jacobi SVD and Cholesky solves.
//!
//! Everything here is deterministic: fixed sweep order, fixed tie-breaking,
//! no randomized pivoting. Dimensions are desk-scale, so simplicity and
//! reproducibility win over blocked performance.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_TOL: f64 = 1e-14;

/// Orthogonalize the columns of `w` in place with Hestenes one-sided Jacobi
/// rotations, accumulating the applied rotations into `v`.
fn one_sided_jacobi(w: &mut Array2<f64>, v: &mut Array2<f64>) {
    let cols = w.ncols();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols.saturating_sub(1) {
            for q in (p + 1)..cols {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for r in 0..w.nrows() {
                    let wp = w[[r, p]];
                    let wq = w[[r, q]];
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..w.nrows() {
                    let wp = w[[r, p]];
                    let wq = w[[r, q]];
                    w[[r, p]] = c * wp - s * wq;
                    w[[r, q]] = s * wp + c * wq;
                }
                for r in 0..v.nrows() {
                    let vp = v[[r, p]];
                    let vq = v[[r, q]];
                    v[[r, p]] = c * vp - s * vq;
                    v[[r, q]] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
}

/// Fix the sign of each column so its largest-magnitude entry is positive.
/// Ties go to the lowest row index, which keeps the output byte-stable.
fn normalize_column_signs(u: &mut Array2<f64>) {
    for j in 0..u.ncols() {
        let mut best_row = 0;
        let mut best_mag = 0.0;
        for i in 0..u.nrows() {
            let mag = u[[i, j]].abs();
            if mag > best_mag {
                best_mag = mag;
                best_row = i;
            }
        }
        if u[[best_row, j]] < 0.0 {
            for i in 0..u.nrows() {
                u[[i, j]] = -u[[i, j]];
            }
        }
    }
}

/// Left singular vectors and singular values of `a` (m x n).
///
/// Returns `(u, sigma)` with `u` m x r, `sigma` length r = min(m, n),
/// singular values sorted nonincreasing and columns sign-normalized.
/// Columns of `u` beyond the numerical rank are only meaningful when
/// m >= n does not hold (the rotation route keeps them orthonormal);
/// callers must not request more directions than the rank supports.
pub(crate) fn left_singular(a: &ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let (m, n) = a.dim();
    let r = m.min(n);
    let (mut u, mut sigma): (Array2<f64>, Vec<f64>) = if m <= n {
        // Rotate columns of a^T; accumulated rotations are the left vectors of a.
        let mut w = a.t().to_owned();
        let mut v = Array2::eye(m);
        one_sided_jacobi(&mut w, &mut v);
        let norms: Vec<f64> = (0..m)
            .map(|j| w.column(j).dot(&w.column(j)).sqrt())
            .collect();
        (v, norms)
    } else {
        // Rotate columns of a directly; normalized columns are the left vectors.
        let mut w = a.to_owned();
        let mut v = Array2::eye(n);
        one_sided_jacobi(&mut w, &mut v);
        let norms: Vec<f64> = (0..n)
            .map(|j| w.column(j).dot(&w.column(j)).sqrt())
            .collect();
        let mut u = Array2::zeros((m, n));
        for j in 0..n {
            if norms[j] > 0.0 {
                for i in 0..m {
                    u[[i, j]] = w[[i, j]] / norms[j];
                }
            }
        }
        (u, norms)
    };

    // Stable sort by descending singular value; ties keep original order.
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap());
    let sorted_sigma = Array1::from_iter(order.iter().map(|&j| sigma[j]));
    let mut sorted_u = Array2::zeros((m, r));
    for (dst, &src) in order.iter().enumerate() {
        sorted_u.column_mut(dst).assign(&u.column(src));
    }
    u = sorted_u;
    sigma = sorted_sigma.to_vec();

    normalize_column_signs(&mut u);
    (u, Array1::from(sigma))
}

/// Singular values only, sorted nonincreasing.
pub(crate) fn singular_values(a: &ArrayView2<f64>) -> Array1<f64> {
    left_singular(a).1
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub(crate) fn cholesky(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut l: Array2<f64> = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(sum > 0.0) {
                    return Err(Error::Numerical(format!(
                        "matrix is not positive definite (pivot {} = {:e})",
                        i, sum
                    )));
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve `L L^T x = b` given the lower Cholesky factor `L`.
pub(crate) fn cholesky_solve(l: &Array2<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// ln det(A) from the lower Cholesky factor of A.
pub(crate) fn cholesky_log_det(l: &Array2<f64>) -> f64 {
    (0..l.nrows()).map(|i| l[[i, i]].ln()).sum::<f64>() * 2.0
}

/// Largest absolute entry of `U^T U - I`; zero for perfectly orthonormal columns.
pub(crate) fn orthonormality_defect(u: &ArrayView2<f64>) -> f64 {
    let gram = u.t().dot(u);
    let p = gram.nrows();
    let mut worst = 0.0f64;
    for i in 0..p {
        for j in 0..p {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[[i, j]] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    // Independent route for the tests: cyclic Jacobi eigendecomposition of the
    // symmetric Gram matrix a a^T. Eigenvalues are squared singular values and
    // eigenvectors are left singular vectors.
    fn gram_eigen_oracle(a: &ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        let m = a.nrows();
        let mut g = a.dot(&a.t());
        let mut q: Array2<f64> = Array2::eye(m);
        for _ in 0..200 {
            let mut off = 0.0f64;
            for i in 0..m {
                for j in (i + 1)..m {
                    off = off.max(g[[i, j]].abs());
                }
            }
            if off < 1e-13 {
                break;
            }
            for p in 0..m {
                for qi in (p + 1)..m {
                    if g[[p, qi]].abs() < 1e-300 {
                        continue;
                    }
                    let theta = 0.5 * (2.0 * g[[p, qi]]).atan2(g[[p, p]] - g[[qi, qi]]);
                    let (c, s) = (theta.cos(), theta.sin());
                    for k in 0..m {
                        let gkp = g[[k, p]];
                        let gkq = g[[k, qi]];
                        g[[k, p]] = c * gkp + s * gkq;
                        g[[k, qi]] = -s * gkp + c * gkq;
                    }
                    for k in 0..m {
                        let gpk = g[[p, k]];
                        let gqk = g[[qi, k]];
                        g[[p, k]] = c * gpk + s * gqk;
                        g[[qi, k]] = -s * gpk + c * gqk;
                    }
                    for k in 0..m {
                        let qkp = q[[k, p]];
                        let qkq = q[[k, qi]];
                        q[[k, p]] = c * qkp + s * qkq;
                        q[[k, qi]] = -s * qkp + c * qkq;
                    }
                }
            }
        }
        let mut pairs: Vec<(f64, usize)> = (0..m).map(|i| (g[[i, i]].max(0.0).sqrt(), i)).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let sigma = Array1::from_iter(pairs.iter().map(|p| p.0));
        let mut u = Array2::zeros((m, m));
        for (dst, &(_, src)) in pairs.iter().enumerate() {
            u.column_mut(dst).assign(&q.column(src));
        }
        (u, sigma)
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let a: Array2<f64> = Array2::eye(3);
        let (u, s) = left_singular(&a.view());
        assert!(s.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert!(orthonormality_defect(&u.view()) < 1e-12);
    }

    #[test]
    fn diagonal_matrix_is_exact() {
        let a = array![[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let (u, s) = left_singular(&a.view());
        assert_eq!(s.to_vec(), vec![3.0, 2.0, 1.0]);
        for (j, col) in u.columns().into_iter().enumerate() {
            assert!((col[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_gram_eigen_oracle_on_random_matrices() {
        let mut rng = crate::seed::rng(11, "linalg-oracle");
        for trial in 0..12 {
            let (m, n) = if trial % 2 == 0 { (8, 20) } else { (20, 8) };
            let a = Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0));
            let (u, s) = left_singular(&a.view());
            let (uo, so) = gram_eigen_oracle(&a.view());
            for j in 0..m.min(n) {
                assert!(
                    (s[j] - so[j]).abs() <= 1e-6 * so[0].max(1.0),
                    "singular value {} mismatch: {} vs {}",
                    j,
                    s[j],
                    so[j]
                );
                // Compare directions up to sign via |dot| = 1.
                let dot: f64 = u.column(j).dot(&uo.column(j));
                assert!(
                    (dot.abs() - 1.0).abs() < 1e-6,
                    "column {} direction mismatch, |dot| = {}",
                    j,
                    dot.abs()
                );
            }
        }
    }

    #[test]
    fn output_is_bitwise_deterministic() {
        let mut rng = crate::seed::rng(3, "linalg-det");
        let a = Array2::from_shape_fn((7, 13), |_| rng.gen_range(-1.0..1.0));
        let (u1, s1) = left_singular(&a.view());
        let (u2, s2) = left_singular(&a.view());
        assert!(u1
            .iter()
            .zip(u2.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(s1
            .iter()
            .zip(s2.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn cholesky_solves_spd_systems() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let l = cholesky(&a.view()).unwrap();
        let x = cholesky_solve(&l, &[1.0, -2.0, 0.5]);
        let back = a.dot(&Array1::from(x.clone()));
        for (bi, want) in back.iter().zip([1.0, -2.0, 0.5]) {
            assert!((bi - want).abs() < 1e-12);
        }
        let det_direct: f64 = 4.0 * (5.0 * 3.0 - 1.0) - 2.0 * (2.0 * 3.0 - 0.6) + 0.6 * (2.0 - 3.0);
        assert!((cholesky_log_det(&l) - det_direct.ln()).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a.view()).is_err());
    }
}
