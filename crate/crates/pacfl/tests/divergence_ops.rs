//! Monte-Carlo validation of the Gaussian closed forms and brute-force
//! checks of the sample-based estimators.

mod common;

use ndarray::{array, Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use pacfl::divergence::{
    bhattacharyya_gaussian, gradient_diversity, kl_gaussian, mmd_rbf, GaussianSpec,
};
use pacfl::model::{init_model, loss_and_grad, Arch};
use pacfl::partition::generate_conflicting_groups;
use pacfl::subspace::DataMatrix;

fn spd(d: usize, rng: &mut impl Rng) -> Array2<f64> {
    let a = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
    let mut cov = a.dot(&a.t());
    for i in 0..d {
        for j in 0..d {
            cov[[i, j]] /= d as f64;
        }
    }
    for i in 0..d {
        cov[[i, i]] += 1.0;
    }
    // Exact symmetry against accumulated rounding.
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = avg;
            cov[[j, i]] = avg;
        }
    }
    cov
}

/// Closed-form Bhattacharyya distance against a Monte-Carlo estimate of the
/// Bhattacharyya coefficient, within 2%, at d = 3 and at the d = 20 scale.
#[test]
fn bhattacharyya_matches_monte_carlo() {
    for (d, seed) in [(3usize, 1u64), (20, 2)] {
        let mut rng = pacfl::seed::rng(seed, "bd-mc");
        let mean_a = Array1::from_iter((0..d).map(|_| rng.gen_range(-1.0..1.0)));
        let mean_b = mean_a.mapv(|m| m + 0.4);
        let cov = spd(d, &mut rng);
        let a = GaussianSpec::new(mean_a.clone(), cov.clone()).unwrap();
        let b = GaussianSpec::new(mean_b.clone(), cov.clone()).unwrap();
        let closed = bhattacharyya_gaussian(&a, &b).unwrap();

        // BC = E_a[ sqrt(q(x)/p(x)) ], estimated over 1e6 draws from a.
        let pa = common::MvnDensity::new(mean_a.as_slice().unwrap(), &cov);
        let pb = common::MvnDensity::new(mean_b.as_slice().unwrap(), &cov);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut z = vec![0.0; d];
        for _ in 0..n {
            for zv in z.iter_mut() {
                *zv = rng.sample(StandardNormal);
            }
            let x = pa.sample(&z);
            sum += (0.5 * (pb.log_pdf(&x) - pa.log_pdf(&x))).exp();
        }
        let bc = sum / n as f64;
        let mc = -bc.ln();
        assert!(
            (closed - mc).abs() <= 0.02 * mc.abs().max(0.02),
            "d = {d}: closed {closed} vs monte carlo {mc}"
        );
    }
}

/// Closed-form KL against a Monte-Carlo estimate at d <= 5, within 2%.
#[test]
fn kl_matches_monte_carlo() {
    for (d, seed) in [(2usize, 3u64), (5, 4)] {
        let mut rng = pacfl::seed::rng(seed, "kl-mc");
        let mean_a = Array1::from_iter((0..d).map(|_| rng.gen_range(-1.0..1.0)));
        let mean_b = Array1::from_iter((0..d).map(|_| rng.gen_range(-1.0..1.0)));
        let cov_a = spd(d, &mut rng);
        let cov_b = spd(d, &mut rng);
        let a = GaussianSpec::new(mean_a.clone(), cov_a.clone()).unwrap();
        let b = GaussianSpec::new(mean_b.clone(), cov_b.clone()).unwrap();
        let closed = kl_gaussian(&a, &b).unwrap();

        let pa = common::MvnDensity::new(mean_a.as_slice().unwrap(), &cov_a);
        let pb = common::MvnDensity::new(mean_b.as_slice().unwrap(), &cov_b);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut z = vec![0.0; d];
        for _ in 0..n {
            for zv in z.iter_mut() {
                *zv = rng.sample(StandardNormal);
            }
            let x = pa.sample(&z);
            sum += pa.log_pdf(&x) - pb.log_pdf(&x);
        }
        let mc = sum / n as f64;
        assert!(
            (closed - mc).abs() <= 0.02 * mc.abs().max(0.02),
            "d = {d}: closed {closed} vs monte carlo {mc}"
        );
    }
}

/// The MMD estimator equals a from-scratch double loop, and the 2+2 point
/// hand computation comes out as expected.
#[test]
fn mmd_matches_brute_force_double_loop() {
    let mut rng = pacfl::seed::rng(5, "mmd-brute");
    let x = DataMatrix::new(Array2::from_shape_fn((4, 9), |_| rng.gen_range(-2.0..2.0))).unwrap();
    let y = DataMatrix::new(Array2::from_shape_fn((4, 7), |_| rng.gen_range(-1.0..3.0))).unwrap();
    let bandwidth = 1.3;
    let fast = mmd_rbf(&x, &y, bandwidth).unwrap();

    let kernel = |u: &[f64], v: &[f64]| -> f64 {
        let sq: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        (-sq / (2.0 * bandwidth * bandwidth)).exp()
    };
    let cols = |m: &DataMatrix| -> Vec<Vec<f64>> {
        m.values()
            .columns()
            .into_iter()
            .map(|c| c.to_vec())
            .collect()
    };
    let (xs, ys) = (cols(&x), cols(&y));
    let (m, n) = (xs.len(), ys.len());
    let mut xx = 0.0;
    let mut yy = 0.0;
    let mut xy = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                xx += kernel(&xs[i], &xs[j]);
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i != j {
                yy += kernel(&ys[i], &ys[j]);
            }
        }
    }
    for xi in &xs {
        for yj in &ys {
            xy += kernel(xi, yj);
        }
    }
    let brute = xx / (m * (m - 1)) as f64 + yy / (n * (n - 1)) as f64 - 2.0 * xy / (m * n) as f64;
    assert!((fast - brute).abs() < 1e-12, "{fast} vs {brute}");
}

/// Hand-computed 1+1-dimensional two-point example: clouds at separation 8
/// with bandwidth 2 give nearly the maximum discrepancy.
#[test]
fn mmd_two_plus_two_hand_value() {
    let x = DataMatrix::new(array![[0.0, 0.1]]).unwrap();
    let y = DataMatrix::new(array![[8.0, 8.1]]).unwrap();
    let v = mmd_rbf(&x, &y, 2.0).unwrap();
    // 2 sigma^2 = 8. Within-cloud kernel: exp(-0.01/8) twice on each side,
    // normalized by m(m-1) = 2. Cross kernels at squared distances 64,
    // 65.61, 62.41, 64, normalized by m*n = 4.
    let within = (-0.01f64 / 8.0).exp();
    let xy = (-64.0f64 / 8.0).exp()
        + (-65.61f64 / 8.0).exp()
        + (-62.41f64 / 8.0).exp()
        + (-64.0f64 / 8.0).exp();
    let hand = within + within - 2.0 * xy / 4.0;
    assert!((v - hand).abs() < 1e-12, "{v} vs hand {hand}");
    assert!(v > 0.9);
}

/// Gradient diversity equals an independent recomputation from per-shard
/// gradients, within 1e-10.
#[test]
fn gradient_diversity_matches_recomputation() {
    let shards = generate_conflicting_groups(3, 20, 0.25, 11).unwrap();
    let arch = Arch::LogReg {
        n_features: 10,
        n_classes: 2,
    };
    let params = init_model(arch, 5);
    let gd = gradient_diversity(&params, &shards).unwrap();
    assert!(!gd.degenerate);

    let mut sum_norms = 0.0;
    let mut total = vec![0.0; arch.param_count()];
    for shard in &shards {
        let batch: Vec<usize> = (0..shard.train.n_samples()).collect();
        let (_, grad) = loss_and_grad(
            &params,
            &shard.train.features().view(),
            shard.train.labels(),
            &batch,
        );
        sum_norms += grad.iter().map(|g| g * g).sum::<f64>();
        for (t, g) in total.iter_mut().zip(&grad) {
            *t += g;
        }
    }
    let expected = sum_norms / total.iter().map(|g| g * g).sum::<f64>();
    assert!(
        (gd.value - expected).abs() < 1e-10,
        "{} vs {expected}",
        gd.value
    );
}

/// KL mean-shift ordering mirrors the reference table: tripling the mean
/// shift more than doubles the divergence for a shared covariance.
#[test]
fn kl_mean_shift_ratio() {
    let mut rng = pacfl::seed::rng(9, "kl-ratio");
    let mean = Array1::from_iter((0..6).map(|_| rng.gen_range(0.2..1.0)));
    let base = GaussianSpec::new(mean, spd(6, &mut rng)).unwrap();
    let kl2 = kl_gaussian(&base, &base.scale_mean(2.0)).unwrap();
    let kl3 = kl_gaussian(&base, &base.scale_mean(3.0)).unwrap();
    // (3-1)^2 / (2-1)^2 = 4 exactly, for the same covariance.
    assert!((kl3 / kl2 - 4.0).abs() < 1e-9, "ratio {}", kl3 / kl2);
}
