//! Independent oracles used by the integration and acceptance suites. These
//! deliberately take different computational routes from the library: eigen
//! decomposition of the Gram matrix instead of one-sided rotations, grid
//! search instead of product SVD, explicit member lists instead of
//! Lance-Williams updates, Monte Carlo instead of closed forms.

#![allow(dead_code)]
#![allow(clippy::needless_range_loop)]

use ndarray::{Array1, Array2, ArrayView2};

/// Full left SVD via cyclic Jacobi eigendecomposition of a a^T.
pub fn gram_eigen_svd(a: &ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let m = a.nrows();
    let mut g = a.dot(&a.t());
    let mut q: Array2<f64> = Array2::eye(m);
    for _ in 0..300 {
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
            for r in (p + 1)..m {
                if g[[p, r]].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (2.0 * g[[p, r]]).atan2(g[[p, p]] - g[[r, r]]);
                let (c, s) = (theta.cos(), theta.sin());
                for k in 0..m {
                    let gkp = g[[k, p]];
                    let gkr = g[[k, r]];
                    g[[k, p]] = c * gkp + s * gkr;
                    g[[k, r]] = -s * gkp + c * gkr;
                }
                for k in 0..m {
                    let gpk = g[[p, k]];
                    let grk = g[[r, k]];
                    g[[p, k]] = c * gpk + s * grk;
                    g[[r, k]] = -s * gpk + c * grk;
                }
                for k in 0..m {
                    let qkp = q[[k, p]];
                    let qkr = q[[k, r]];
                    q[[k, p]] = c * qkp + s * qkr;
                    q[[k, r]] = -s * qkp + c * qkr;
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

/// Unit vectors covering the sphere in 1, 2, or 3 dimensions at roughly
/// `resolution_rad` angular spacing (Fibonacci lattice in 3D).
fn sphere_grid(dim: usize, resolution_rad: f64) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0]],
        2 => {
            let steps = (std::f64::consts::PI / resolution_rad).ceil() as usize;
            (0..steps)
                .map(|i| {
                    let t = i as f64 * std::f64::consts::PI / steps as f64;
                    vec![t.cos(), t.sin()]
                })
                .collect()
        }
        3 => {
            let count =
                (4.0 * std::f64::consts::PI / (resolution_rad * resolution_rad)).ceil() as usize;
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            (0..count)
                .map(|i| {
                    let y = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let r = (1.0 - y * y).max(0.0).sqrt();
                    let t = golden * i as f64;
                    vec![r * t.cos(), y, r * t.sin()]
                })
                .collect()
        }
        other => panic!("sphere grid supports dims 1..=3, got {other}"),
    }
}

fn orthonormalize_against(basis: &Array2<f64>, against: &[f64]) -> Array2<f64> {
    let dim = basis.nrows();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..basis.ncols() {
        let mut v: Vec<f64> = (0..dim).map(|i| basis[[i, j]]).collect();
        let dot: f64 = v.iter().zip(against).map(|(a, b)| a * b).sum();
        for (vi, ai) in v.iter_mut().zip(against) {
            *vi -= dot * ai;
        }
        for prev in &cols {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (vi, pi) in v.iter_mut().zip(prev) {
                *vi -= dot * pi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for vi in &mut v {
                *vi /= norm;
            }
            cols.push(v);
        }
    }
    let mut out = Array2::zeros((dim, cols.len()));
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            out[[i, j]] = v;
        }
    }
    out
}

/// Principal angles by brute-force grid search with deflation: at each level
/// the best |u^T w| over unit vectors of both subspaces is found by scanning
/// a grid on one side (the other side's maximizer has a closed form), then
/// both subspaces are deflated by the maximizing directions. Degrees,
/// ascending. Supports subspace dimensions up to 3.
pub fn grid_principal_angles(
    a_basis: &Array2<f64>,
    b_basis: &Array2<f64>,
    resolution_rad: f64,
) -> Vec<f64> {
    let q = a_basis.ncols().min(b_basis.ncols());
    let mut u = a_basis.clone();
    let mut v = b_basis.clone();
    let mut angles = Vec::with_capacity(q);
    for _ in 0..q {
        let m = u.t().dot(&v);
        let grid = sphere_grid(v.ncols(), resolution_rad);
        let mut best_cos = -1.0;
        let mut best_b: Vec<f64> = Vec::new();
        for b in grid {
            let mut norm_sq = 0.0;
            for i in 0..m.nrows() {
                let mut dot = 0.0;
                for (k, bk) in b.iter().enumerate() {
                    dot += m[[i, k]] * bk;
                }
                norm_sq += dot * dot;
            }
            let cos = norm_sq.sqrt();
            if cos > best_cos {
                best_cos = cos;
                best_b = b;
            }
        }
        angles.push(best_cos.clamp(0.0, 1.0).acos().to_degrees());

        // Maximizing directions in ambient coordinates.
        let w_star: Vec<f64> = (0..v.nrows())
            .map(|i| (0..v.ncols()).map(|k| v[[i, k]] * best_b[k]).sum::<f64>())
            .collect();
        let mut u_star: Vec<f64> = (0..u.nrows())
            .map(|i| {
                (0..u.ncols())
                    .map(|j| {
                        let mb: f64 = (0..v.ncols()).map(|k| m[[j, k]] * best_b[k]).sum();
                        u[[i, j]] * mb
                    })
                    .sum::<f64>()
            })
            .collect();
        let norm: f64 = u_star.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for x in &mut u_star {
                *x /= norm;
            }
        } else {
            // Orthogonal subspaces: any in-span direction works for deflation.
            u_star = (0..u.nrows()).map(|i| u[[i, 0]]).collect();
        }
        u = orthonormalize_against(&u, &u_star);
        v = orthonormalize_against(&v, &w_star);
        if u.ncols() == 0 || v.ncols() == 0 {
            break;
        }
    }
    angles
}

/// Naive agglomerative clustering straight from the definition: explicit
/// member lists, linkage distances recomputed from the original matrix at
/// every step, ties broken by the lowest pair of smallest member indices.
/// Returns co-membership after applying every merge at height <= beta.
pub fn naive_hc_cut(entries: &Array2<f64>, beta: f64, linkage: &str) -> Vec<usize> {
    let k = entries.nrows();
    let mut clusters: Vec<Vec<usize>> = (0..k).map(|i| vec![i]).collect();
    loop {
        if clusters.len() == 1 {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in (i + 1)..clusters.len() {
                let mut dists: Vec<f64> = Vec::new();
                for &a in &clusters[i] {
                    for &b in &clusters[j] {
                        dists.push(entries[[a, b]]);
                    }
                }
                let d = match linkage {
                    "single" => dists.iter().cloned().fold(f64::INFINITY, f64::min),
                    "complete" => dists.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    "average" => dists.iter().sum::<f64>() / dists.len() as f64,
                    other => panic!("unknown linkage {other}"),
                };
                let key = (
                    *clusters[i].iter().min().unwrap(),
                    *clusters[j].iter().min().unwrap(),
                );
                let better = match best {
                    None => true,
                    Some((bd, bi, bj)) => {
                        let bkey = (
                            *clusters[bi].iter().min().unwrap(),
                            *clusters[bj].iter().min().unwrap(),
                        );
                        d < bd || (d == bd && key < bkey)
                    }
                };
                if better {
                    best = Some((d, i, j));
                }
            }
        }
        let (d, i, j) = best.unwrap();
        if d > beta {
            break;
        }
        let merged: Vec<usize> = clusters[i]
            .iter()
            .chain(clusters[j].iter())
            .copied()
            .collect();
        clusters.remove(j);
        clusters.remove(i);
        clusters.push(merged);
    }
    clusters.sort_by_key(|c| *c.iter().min().unwrap());
    let mut assignment = vec![0usize; k];
    for (id, members) in clusters.iter().enumerate() {
        for &m in members {
            assignment[m] = id;
        }
    }
    assignment
}

/// Log density of a multivariate normal via its Cholesky factor.
pub struct MvnDensity {
    mean: Vec<f64>,
    chol: Array2<f64>,
    log_norm: f64,
}

impl MvnDensity {
    pub fn new(mean: &[f64], cov: &Array2<f64>) -> Self {
        let d = mean.len();
        let mut l: Array2<f64> = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..=i {
                let mut sum = cov[[i, j]];
                for k in 0..j {
                    sum -= l[[i, k]] * l[[j, k]];
                }
                if i == j {
                    l[[i, j]] = sum.sqrt();
                } else {
                    l[[i, j]] = sum / l[[j, j]];
                }
            }
        }
        let log_det: f64 = (0..d).map(|i| l[[i, i]].ln()).sum::<f64>() * 2.0;
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        MvnDensity {
            mean: mean.to_vec(),
            chol: l,
            log_norm,
        }
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        // Solve L y = (x - mean); quadratic form is |y|^2.
        let mut y = vec![0.0; d];
        for i in 0..d {
            let mut sum = x[i] - self.mean[i];
            for k in 0..i {
                sum -= self.chol[[i, k]] * y[k];
            }
            y[i] = sum / self.chol[[i, i]];
        }
        self.log_norm - 0.5 * y.iter().map(|v| v * v).sum::<f64>()
    }

    /// Draw one sample given iid standard normals `z`.
    pub fn sample(&self, z: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        (0..d)
            .map(|i| {
                let mut v = self.mean[i];
                for k in 0..=i {
                    v += self.chol[[i, k]] * z[k];
                }
                v
            })
            .collect()
    }
}
