//! Independent distribution-distance measures and training diagnostics.
//!
//! Closed-form Bhattacharyya and KL distances between Gaussians, an unbiased
//! RBF-kernel MMD estimator, and the gradient-diversity diagnostic. These are
//! the reference measures the angle-based proximity is checked against: a
//! useful subspace metric must order distribution pairs the same way.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, ModelParams};
use crate::partition::ClientShard;
use crate::seed;
use crate::subspace::{build_proximity_matrix, make_signature, DataMatrix, MetricKind, Normalize};

/// A d x n matrix of independent standard normal draws.
pub fn standard_normal_matrix(d: usize, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((d, n), |_| rng.sample::<f64, _>(StandardNormal))
}

/// A multivariate Gaussian given by its true parameters.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    mean: Array1<f64>,
    covariance: Array2<f64>,
}

impl GaussianSpec {
    pub fn new(mean: Array1<f64>, covariance: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::Dimension(format!(
                "covariance is {}x{} for a {d}-dim mean",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        for i in 0..d {
            for j in 0..d {
                if (covariance[[i, j]] - covariance[[j, i]]).abs() > 1e-10 {
                    return Err(Error::InvalidData(format!(
                        "covariance is asymmetric at [{i}][{j}]"
                    )));
                }
            }
        }
        // Positive definiteness is what Cholesky checks.
        linalg::cholesky(&covariance.view())?;
        Ok(GaussianSpec { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    /// Same covariance, mean scaled by `c`.
    pub fn scale_mean(&self, c: f64) -> GaussianSpec {
        GaussianSpec {
            mean: self.mean.mapv(|v| c * v),
            covariance: self.covariance.clone(),
        }
    }

    /// Same mean, covariance scaled by `c > 0`.
    pub fn scale_covariance(&self, c: f64) -> GaussianSpec {
        GaussianSpec {
            mean: self.mean.clone(),
            covariance: self.covariance.mapv(|v| c * v),
        }
    }

    /// Draw `n` samples as the columns of a data matrix.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<DataMatrix> {
        let noise = standard_normal_matrix(self.dim(), n, rng);
        self.sample_from_noise(&noise)
    }

    /// Transform pre-drawn standard-normal noise (one column per sample)
    /// through this Gaussian: x = mean + chol(cov) z. Reusing one noise
    /// matrix across several distributions gives common-random-number
    /// sampling, which is what makes distance orderings comparable.
    pub fn sample_from_noise(&self, noise: &Array2<f64>) -> Result<DataMatrix> {
        let d = self.dim();
        if noise.nrows() != d {
            return Err(Error::Dimension(format!(
                "noise has {} rows for a {d}-dim gaussian",
                noise.nrows()
            )));
        }
        let l = linalg::cholesky(&self.covariance.view())?;
        let n = noise.ncols();
        let mut values = Array2::zeros((d, n));
        for col in 0..n {
            for i in 0..d {
                let mut v = self.mean[i];
                for k in 0..=i {
                    v += l[[i, k]] * noise[[k, col]];
                }
                values[[i, col]] = v;
            }
        }
        DataMatrix::new(values)
    }
}

fn check_dims(a: &GaussianSpec, b: &GaussianSpec) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "gaussian dims differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Bhattacharyya distance between two Gaussians (closed form):
/// (1/8)(m2-m1)^T S^-1 (m2-m1) + (1/2) ln(det S / sqrt(det S1 det S2))
/// with S the average covariance. Symmetric, zero iff equal.
pub fn bhattacharyya_gaussian(a: &GaussianSpec, b: &GaussianSpec) -> Result<f64> {
    check_dims(a, b)?;
    let d = a.dim();
    let mut avg = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            avg[[i, j]] = 0.5 * (a.covariance[[i, j]] + b.covariance[[i, j]]);
        }
    }
    let l_avg = linalg::cholesky(&avg.view())?;
    let l_a = linalg::cholesky(&a.covariance.view())?;
    let l_b = linalg::cholesky(&b.covariance.view())?;
    let diff: Vec<f64> = (0..d).map(|i| b.mean[i] - a.mean[i]).collect();
    let solved = linalg::cholesky_solve(&l_avg, &diff);
    let quad: f64 = diff.iter().zip(&solved).map(|(x, y)| x * y).sum();
    let log_det_term = linalg::cholesky_log_det(&l_avg)
        - 0.5 * (linalg::cholesky_log_det(&l_a) + linalg::cholesky_log_det(&l_b));
    Ok(quad / 8.0 + 0.5 * log_det_term)
}

/// KL divergence KL(a || b) between two Gaussians (closed form):
/// (1/2)[tr(S2^-1 S1) + (m2-m1)^T S2^-1 (m2-m1) - d + ln(det S2 / det S1)].
/// Asymmetric in general.
pub fn kl_gaussian(a: &GaussianSpec, b: &GaussianSpec) -> Result<f64> {
    check_dims(a, b)?;
    let d = a.dim();
    let l_b = linalg::cholesky(&b.covariance.view())?;
    let l_a = linalg::cholesky(&a.covariance.view())?;
    let mut trace = 0.0;
    let mut col = vec![0.0; d];
    for j in 0..d {
        for (i, c) in col.iter_mut().enumerate() {
            *c = a.covariance[[i, j]];
        }
        let solved = linalg::cholesky_solve(&l_b, &col);
        trace += solved[j];
    }
    let diff: Vec<f64> = (0..d).map(|i| b.mean[i] - a.mean[i]).collect();
    let solved = linalg::cholesky_solve(&l_b, &diff);
    let quad: f64 = diff.iter().zip(&solved).map(|(x, y)| x * y).sum();
    let log_det = linalg::cholesky_log_det(&l_b) - linalg::cholesky_log_det(&l_a);
    Ok(0.5 * (trace + quad - d as f64 + log_det))
}

/// Unbiased U-statistic estimator of squared MMD with the Gaussian kernel
/// exp(-||u-v||^2 / (2 bandwidth^2)). Can be slightly negative on close
/// samples; that is the estimator, not a bug.
pub fn mmd_rbf(x: &DataMatrix, y: &DataMatrix, bandwidth: f64) -> Result<f64> {
    if x.feature_dim() != y.feature_dim() {
        return Err(Error::Dimension(format!(
            "sample dims differ: {} vs {}",
            x.feature_dim(),
            y.feature_dim()
        )));
    }
    if x.sample_count() < 2 || y.sample_count() < 2 {
        return Err(Error::Dimension(
            "mmd needs at least two samples per side".into(),
        ));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Config(format!(
            "bandwidth must be > 0, got {bandwidth}"
        )));
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let sq_dist = |a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize| -> f64 {
        let mut s = 0.0;
        for r in 0..a.nrows() {
            let diff = a[[r, i]] - b[[r, j]];
            s += diff * diff;
        }
        s
    };
    let (xs, ys) = (x.values(), y.values());
    let (m, n) = (x.sample_count(), y.sample_count());
    let mut xx = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                xx += (-gamma * sq_dist(xs, i, xs, j)).exp();
            }
        }
    }
    let mut yy = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                yy += (-gamma * sq_dist(ys, i, ys, j)).exp();
            }
        }
    }
    let mut xy = 0.0;
    for i in 0..m {
        for j in 0..n {
            xy += (-gamma * sq_dist(xs, i, ys, j)).exp();
        }
    }
    Ok(xx / (m * (m - 1)) as f64 + yy / (n * (n - 1)) as f64 - 2.0 * xy / (m * n) as f64)
}

/// Median pairwise distance over the pooled samples; the usual bandwidth
/// choice when none is given. Falls back to 1.0 if all points coincide.
pub fn median_heuristic_bandwidth(x: &DataMatrix, y: &DataMatrix) -> f64 {
    let mut dists: Vec<f64> = Vec::new();
    let cols: Vec<Vec<f64>> = x
        .values()
        .columns()
        .into_iter()
        .chain(y.values().columns())
        .map(|c| c.to_vec())
        .collect();
    for i in 0..cols.len() {
        for j in (i + 1)..cols.len() {
            let d: f64 = cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dists.push(d);
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if dists.is_empty() {
        0.0
    } else {
        dists[dists.len() / 2]
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Gradient diversity of a set of client objectives at `params`: the ratio
/// of summed squared per-client gradient norms to the squared norm of the
/// summed gradient. Identical gradients give 1/(number of shards); the more
/// the gradients cancel, the larger the value. When the summed gradient is
/// exactly zero the quantity is undefined and the sentinel is returned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientDiversity {
    /// The ratio, or +infinity when degenerate.
    pub value: f64,
    /// True when the summed gradient vanished.
    pub degenerate: bool,
}

pub fn gradient_diversity(
    params: &ModelParams,
    shards: &[ClientShard],
) -> Result<GradientDiversity> {
    if shards.is_empty() {
        return Err(Error::Dimension("gradient diversity of zero shards".into()));
    }
    let mut sum_sq_norms = 0.0;
    let mut summed: Vec<f64> = vec![0.0; params.theta().len()];
    for shard in shards {
        if shard.train.n_features() != params.arch().n_features() {
            return Err(Error::Dimension(format!(
                "shard '{}' feature dim {} does not match model {}",
                shard.client_id,
                shard.train.n_features(),
                params.arch().n_features()
            )));
        }
        let batch: Vec<usize> = (0..shard.train.n_samples()).collect();
        let (_, grad) = model::loss_and_grad(
            params,
            &shard.train.features().view(),
            shard.train.labels(),
            &batch,
        );
        sum_sq_norms += grad.iter().map(|g| g * g).sum::<f64>();
        for (s, g) in summed.iter_mut().zip(&grad) {
            *s += g;
        }
    }
    let denom: f64 = summed.iter().map(|g| g * g).sum();
    if denom == 0.0 {
        return Ok(GradientDiversity {
            value: f64::INFINITY,
            degenerate: true,
        });
    }
    Ok(GradientDiversity {
        value: sum_sq_norms / denom,
        degenerate: false,
    })
}

/// A random Gaussian whose sampled subspaces respond systematically to mean
/// and covariance perturbations: a few well-separated covariance spikes over
/// a small isotropic bulk, and a generic mean strong enough to shape the top
/// directions without drowning them.
pub fn random_structured_gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Result<GaussianSpec> {
    const SPIKES: [f64; 3] = [16.0, 9.0, 4.0];
    const BULK: f64 = 0.5;
    const MEAN_SQ_NORM: f64 = 6.0;
    // Random orthogonal basis by Gram-Schmidt on a Gaussian matrix.
    let mut q: Array2<f64> = Array2::zeros((dim, dim));
    for j in 0..dim {
        let mut v: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        for k in 0..j {
            let dot: f64 = (0..dim).map(|i| v[i] * q[[i, k]]).sum();
            for (i, vi) in v.iter_mut().enumerate() {
                *vi -= dot * q[[i, k]];
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (i, vi) in v.iter().enumerate() {
            q[[i, j]] = vi / norm;
        }
    }
    let mut lambdas = vec![BULK; dim];
    for (slot, spike) in lambdas.iter_mut().zip(SPIKES) {
        *slot = spike;
    }
    let mut cov = Array2::zeros((dim, dim));
    for i in 0..dim {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..dim {
                s += q[[i, k]] * lambdas[k] * q[[j, k]];
            }
            cov[[i, j]] = s;
            cov[[j, i]] = s;
        }
    }
    let mut mean: Vec<f64> = (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm: f64 = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    for m in &mut mean {
        *m *= MEAN_SQ_NORM.sqrt() / norm;
    }
    GaussianSpec::new(Array1::from(mean), cov)
}

/// One comparison in the distance-consistency experiment: the named variant
/// of the base distribution against the base itself, under every measure.
#[derive(Debug, Clone)]
pub struct ConsistencyRow {
    pub seed: u64,
    pub variant: String,
    pub min_angle: f64,
    pub trace_sum: f64,
    pub bhattacharyya: f64,
    pub kl: f64,
    pub mmd: f64,
}

/// Distance-consistency experiment: sample from a base Gaussian and four
/// perturbed variants (mean scaled by 2 and 3, covariance scaled by 2 and 5),
/// then measure each variant's distance from the base with the angle metrics
/// (on samples), the Gaussian closed forms (on true parameters), and MMD (on
/// samples, median-heuristic bandwidth).
pub fn consistency_report(
    dim: usize,
    n_samples: usize,
    p: usize,
    seeds: &[u64],
) -> Result<Vec<ConsistencyRow>> {
    let mut rows = Vec::with_capacity(seeds.len() * 4);
    for &seed_value in seeds {
        let mut rng = seed::rng(seed_value, "consistency");
        let base = random_structured_gaussian(dim, &mut rng)?;
        let variants: [(String, GaussianSpec); 4] = [
            ("mean_x2".into(), base.scale_mean(2.0)),
            ("mean_x3".into(), base.scale_mean(3.0)),
            ("cov_x2".into(), base.scale_covariance(2.0)),
            ("cov_x5".into(), base.scale_covariance(5.0)),
        ];
        // One shared noise draw for the base and all four variants: with
        // common random numbers, a larger perturbation reads as a larger
        // distance instead of drowning in independent sampling noise.
        let shared_noise = standard_normal_matrix(dim, n_samples, &mut rng);
        let base_samples = base.sample_from_noise(&shared_noise)?;
        let base_sig = make_signature(&base_samples, p, Normalize::None, "base")?;
        for (name, variant) in variants {
            let samples = variant.sample_from_noise(&shared_noise)?;
            let sig = make_signature(&samples, p, Normalize::None, "variant")?;
            let both = [base_sig.clone(), sig];
            let min_angle = build_proximity_matrix(&both, MetricKind::MinAngle)?.entry(0, 1);
            let trace_sum = build_proximity_matrix(&both, MetricKind::AngleTraceSum)?.entry(0, 1);
            let bandwidth = median_heuristic_bandwidth(&base_samples, &samples);
            rows.push(ConsistencyRow {
                seed: seed_value,
                variant: name,
                min_angle,
                trace_sum,
                bhattacharyya: bhattacharyya_gaussian(&base, &variant)?,
                kl: kl_gaussian(&base, &variant)?,
                mmd: mmd_rbf(&base_samples, &samples, bandwidth)?,
            });
        }
    }
    Ok(rows)
}
