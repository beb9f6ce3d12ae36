//! Cross-checks of the library's numerics against independent oracles:
//! adaptive quadrature, dense Gaussian elimination, and finite
//! differences.

mod common;

use common::{central_diff, dense_log_det, dense_solve, integrate, weighted_moments};
use weakgp_core::classification::{ep_fit, weak_moments, WeakClassificationDataset};
use weakgp_core::kernel::{kernel_matrix_grad, rbf, KernelParams, DEFAULT_JITTER};
use weakgp_core::math::{
    cholesky_factor, std_normal_cdf, std_normal_pdf, RngStream, SymMatrix,
};
use weakgp_core::regression::{fit, nll, BaseNoise, NoiseModel, WeakRegressionDataset};

fn normal_pdf(f: f64, mean: f64, var: f64) -> f64 {
    let d = f - mean;
    (-(d * d) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

fn weak_likelihood(omega: f64, y: f64, f: f64) -> f64 {
    (2.0 * omega - 1.0) * std_normal_cdf(y * f) + 1.0 - omega
}

#[test]
fn normal_cdf_matches_quadrature_of_pdf() {
    for &x in &[-5.0, -2.3, -0.7, 0.0, 0.4, 1.9, 4.2] {
        let byq = 0.5 + integrate(&|t: f64| std_normal_pdf(t), 0.0, x, 1e-14);
        assert!((std_normal_cdf(x) - byq).abs() < 1e-12, "x = {x}");
    }
}

#[test]
fn cholesky_agrees_with_dense_elimination() {
    let mut rng = RngStream::new(11);
    for n in 1..=8usize {
        let raw: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| 2.0 * rng.uniform() - 1.0).collect())
            .collect();
        let spd = SymMatrix::from_fn(n, |i, j| {
            let mut acc = if i == j { 0.5 } else { 0.0 };
            for (a, b) in raw[i].iter().zip(&raw[j]) {
                acc += a * b;
            }
            acc
        });
        let dense: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| spd.get(i, j)).collect())
            .collect();
        let b: Vec<f64> = (0..n).map(|_| 2.0 * rng.uniform() - 1.0).collect();

        let chol = cholesky_factor(&spd).unwrap();
        let x = chol.solve(&b);
        let x_ref = dense_solve(&dense, &b);
        for i in 0..n {
            assert!((x[i] - x_ref[i]).abs() < 1e-9, "n={n} i={i}");
        }
        assert!((chol.log_det() - dense_log_det(&dense)).abs() < 1e-9, "n={n}");
    }
}

#[test]
fn regression_posterior_matches_dense_algebra() {
    let mut rng = RngStream::new(17);
    let kp = KernelParams::new(1.2, 0.9);
    let nm = NoiseModel::new(BaseNoise::Constant(0.05), 0.09);
    let n = 6;
    let mut data = WeakRegressionDataset::new(1);
    let mut xs = Vec::new();
    for i in 0..n {
        let x = 4.0 * rng.uniform();
        let y = rng.standard_normal();
        let beta = if i % 2 == 0 { 0.0 } else { 0.09 * rng.uniform() };
        data.push(&[x], y, beta);
        xs.push((x, beta));
    }
    let jitter = 0.0;
    let model = fit(&data, &kp, &nm, jitter).unwrap();

    let dense: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let v = rbf(&[xs[i].0], &[xs[j].0], &kp);
                    if i == j {
                        v + nm.base_variance(&[xs[i].0]) + xs[i].1
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    let w_ref = dense_solve(&dense, data.ys());
    for &probe in &[0.3, 1.7, 3.9] {
        let k_star: Vec<f64> = (0..n).map(|i| rbf(&[probe], &[xs[i].0], &kp)).collect();
        let mean_ref: f64 = k_star.iter().zip(&w_ref).map(|(a, b)| a * b).sum();
        let sol = dense_solve(&dense, &k_star);
        let var_ref = kp.amplitude * kp.amplitude
            - k_star.iter().zip(&sol).map(|(a, b)| a * b).sum::<f64>();
        let (mean, var) = model.predict_latent(&[probe]);
        assert!((mean - mean_ref).abs() < 1e-8);
        assert!((var - var_ref).abs() < 1e-8);
    }

    let quad: f64 = data
        .ys()
        .iter()
        .zip(&w_ref)
        .map(|(a, b)| a * b)
        .sum();
    let nll_ref = dense_log_det(&dense) + quad;
    let nll_val = nll(&data, &kp, &nm, jitter).unwrap();
    assert!((nll_val - nll_ref).abs() < 1e-9);
}

#[test]
fn kernel_gradients_match_finite_differences() {
    let xs = [0.3, 1.1, 2.9, 3.4];
    let kp = KernelParams::new(1.4, 0.8);
    let (ga, gl) = kernel_matrix_grad(&xs, 1, &kp);
    let h = 1e-6;
    for i in 0..4 {
        for j in 0..4 {
            let fd_a = central_diff(
                |la: f64| {
                    let p = KernelParams::from_log(la, kp.length_scale.ln());
                    rbf(&xs[i..=i], &xs[j..=j], &p)
                },
                kp.amplitude.ln(),
                h,
            );
            let fd_l = central_diff(
                |ll: f64| {
                    let p = KernelParams::from_log(kp.amplitude.ln(), ll);
                    rbf(&xs[i..=i], &xs[j..=j], &p)
                },
                kp.length_scale.ln(),
                h,
            );
            assert!((ga.get(i, j) - fd_a).abs() < 1e-6, "amp grad {i},{j}");
            assert!((gl.get(i, j) - fd_l).abs() < 1e-6, "len grad {i},{j}");
        }
    }
}

/// Quadrature moments of f under N(f; mu, var) x weak likelihood.
fn quadrature_moments(omega: f64, y: f64, mu: f64, var: f64) -> (f64, f64, f64) {
    let sd = var.sqrt();
    let (a, b) = (mu - 12.0 * sd, mu + 12.0 * sd);
    let w = |f: f64| weak_likelihood(omega, y, f) * normal_pdf(f, mu, var);
    let m0 = integrate(&w, a, b, 1e-13);
    let m1 = integrate(&|f: f64| f * w(f), a, b, 1e-13);
    let m2 = integrate(&|f: f64| f * f * w(f), a, b, 1e-13);
    let mean = m1 / m0;
    (m0, mean, m2 / m0 - mean * mean)
}

#[test]
fn weak_moments_match_quadrature_on_grid() {
    for &omega in &[0.6, 0.75, 0.9, 1.0] {
        for &mu in &[-2.0, -0.5, 0.5, 2.0] {
            for &var in &[0.1, 0.5, 1.0, 3.0] {
                for &y in &[-1.0, 1.0] {
                    let (z, m, v) = weak_moments(omega, y, mu, var);
                    let (zq, mq, vq) = quadrature_moments(omega, y, mu, var);
                    assert!(z > 0.0 && z < 1.0);
                    assert!((z - zq).abs() < 1e-8, "Z omega={omega} mu={mu} var={var} y={y}");
                    assert!((m - mq).abs() < 1e-8, "mean omega={omega} mu={mu} var={var} y={y}");
                    assert!((v - vq).abs() < 1e-8, "var omega={omega} mu={mu} var={var} y={y}");
                }

                // The two label posteriors mix back to the cavity exactly:
                // masses sum to 1, means average to mu_cav, and the law of
                // total variance recovers var_cav. On average over labels
                // the variance strictly shrinks (information is gained).
                let (zp, mp, vp) = weak_moments(omega, 1.0, mu, var);
                let (zn, mn, vn) = weak_moments(omega, -1.0, mu, var);
                assert!((zp + zn - 1.0).abs() < 1e-12);
                assert!((zp * mp + zn * mn - mu).abs() < 1e-10);
                let mixed = zp * (vp + (mp - mu) * (mp - mu))
                    + zn * (vn + (mn - mu) * (mn - mu));
                assert!((mixed - var).abs() < 1e-10, "omega={omega} mu={mu} var={var}");
                let avg_var = zp * vp + zn * vn;
                assert!(avg_var < var, "no average shrinkage at omega={omega} mu={mu} var={var}");
            }
        }
    }
}

#[test]
fn weak_moments_probit_reduction_at_exact_labels() {
    let (z, m, v) = weak_moments(1.0, 1.0, 0.3, 0.7);
    let (zq, mq, vq) = quadrature_moments(1.0, 1.0, 0.3, 0.7);
    assert!((z - zq).abs() < 1e-8);
    assert!((m - mq).abs() < 1e-8);
    assert!((v - vq).abs() < 1e-8);
}

#[test]
fn ep_single_point_matches_quadrature_posterior() {
    let mut data = WeakClassificationDataset::new(1);
    data.push(&[0.0], 1, 1.0);
    let kp = KernelParams::new(1.0, 1.0);
    let state = ep_fit(&data, &kp, DEFAULT_JITTER).unwrap();
    let (mean, _) = state.predict_latent(&[0.0]);
    let w = |f: f64| std_normal_cdf(f) * normal_pdf(f, 0.0, 1.0);
    let m0 = integrate(&w, -12.0, 12.0, 1e-13);
    let m1 = integrate(&|f: f64| f * w(f), -12.0, 12.0, 1e-13);
    let mean_ref = m1 / m0;
    assert!(mean > 0.0);
    assert!((mean - mean_ref).abs() < 1e-3, "{mean} vs {mean_ref}");
}

#[test]
fn ep_opposite_labels_at_same_point_cancel() {
    let mut data = WeakClassificationDataset::new(1);
    data.push(&[0.5], 1, 1.0);
    data.push(&[0.5], -1, 1.0);
    let state = ep_fit(&data, &KernelParams::new(1.0, 1.0), DEFAULT_JITTER).unwrap();
    let (mean, _) = state.predict_latent(&[0.5]);
    assert!(mean.abs() < 1e-6, "mean {mean}");
}

fn random_cls_dataset(rng: &mut RngStream, n: usize) -> WeakClassificationDataset {
    let mut data = WeakClassificationDataset::new(1);
    for _ in 0..n {
        let x = 4.0 * rng.uniform() - 2.0;
        let label = if rng.uniform() < 0.5 { -1 } else { 1 };
        let omega = 0.55 + 0.45 * rng.uniform();
        data.push(&[x], label, omega);
    }
    data
}

#[test]
fn ep_label_flip_symmetry() {
    let mut rng = RngStream::new(23);
    let kp = KernelParams::new(1.0, 1.0);
    for _ in 0..5 {
        let data = random_cls_dataset(&mut rng, 5);
        let mut flipped = WeakClassificationDataset::new(1);
        for i in 0..data.len() {
            flipped.push(data.x(i), -data.labels()[i], data.omegas()[i]);
        }
        let a = ep_fit(&data, &kp, DEFAULT_JITTER).unwrap();
        let b = ep_fit(&flipped, &kp, DEFAULT_JITTER).unwrap();
        for &probe in &[-1.5, -0.2, 0.8, 2.4] {
            let (ma, va) = a.predict_latent(&[probe]);
            let (mb, vb) = b.predict_latent(&[probe]);
            assert!((ma + mb).abs() < 1e-8, "probe {probe}: {ma} vs {mb}");
            assert!((va - vb).abs() < 1e-8, "probe {probe} variance");
        }
    }
}

#[test]
fn ep_noisier_labels_never_amplify_the_posterior_mean() {
    let mut rng = RngStream::new(29);
    let kp = KernelParams::new(1.0, 1.0);
    for round in 0..5 {
        let data = random_cls_dataset(&mut rng, 5);
        let target = round % 5;
        let mut noisier = WeakClassificationDataset::new(1);
        for i in 0..data.len() {
            let omega = if i == target {
                0.5 + 0.6 * (data.omegas()[i] - 0.5)
            } else {
                data.omegas()[i]
            };
            noisier.push(data.x(i), data.labels()[i], omega);
        }
        let a = ep_fit(&data, &kp, DEFAULT_JITTER).unwrap();
        let b = ep_fit(&noisier, &kp, DEFAULT_JITTER).unwrap();
        let (ma, _) = a.predict_latent(data.x(target));
        let (mb, _) = b.predict_latent(data.x(target));
        assert!(
            mb.abs() <= ma.abs() + 1e-8,
            "round {round}: |{mb}| > |{ma}|"
        );
    }
}

#[test]
fn ep_far_prediction_reverts_to_prior() {
    let mut rng = RngStream::new(31);
    let data = random_cls_dataset(&mut rng, 5);
    let kp = KernelParams::new(1.0, 1.0);
    let state = ep_fit(&data, &kp, DEFAULT_JITTER).unwrap();
    let (mean, var) = state.predict_latent(&[50.0]);
    assert!(mean.abs() < 1e-3);
    assert!((var - 1.0).abs() < 1e-3);
}

#[test]
fn ep_posterior_moments_match_tensor_grid_for_pair() {
    let kp = KernelParams::new(1.0, 1.0);
    let xs = [[-0.4], [0.9]];
    let labels = [1, -1];
    let omega = 0.8;
    let mut data = WeakClassificationDataset::new(1);
    for i in 0..2 {
        data.push(&xs[i], labels[i], omega);
    }
    let state = ep_fit(&data, &kp, 1e-10).unwrap();

    // Dense 2-D grid posterior: prior N(0, K) x weak likelihoods.
    let k01 = rbf(&xs[0], &xs[1], &kp);
    let det = 1.0 - k01 * k01;
    let n_nodes = 241;
    let lim = 6.0;
    let step = 2.0 * lim / (n_nodes - 1) as f64;
    let nodes: Vec<f64> = (0..n_nodes).map(|i| -lim + step * i as f64).collect();
    let mut weights = Vec::with_capacity(n_nodes * n_nodes);
    let mut f0s = Vec::with_capacity(n_nodes * n_nodes);
    let mut f1s = Vec::with_capacity(n_nodes * n_nodes);
    for &f0 in &nodes {
        for &f1 in &nodes {
            let quad = (f0 * f0 - 2.0 * k01 * f0 * f1 + f1 * f1) / det;
            let prior = (-0.5 * quad).exp();
            let w = prior
                * weak_likelihood(omega, labels[0] as f64, f0)
                * weak_likelihood(omega, labels[1] as f64, f1);
            weights.push(w);
            f0s.push(f0);
            f1s.push(f1);
        }
    }
    let (m0, v0) = weighted_moments(&f0s, &weights);
    let (m1, v1) = weighted_moments(&f1s, &weights);
    let (pm0, pv0) = state.predict_latent(&xs[0]);
    let (pm1, pv1) = state.predict_latent(&xs[1]);
    assert!((pm0 - m0).abs() < 5e-2, "{pm0} vs {m0}");
    assert!((pm1 - m1).abs() < 5e-2, "{pm1} vs {m1}");
    assert!((pv0 - v0).abs() < 5e-2, "{pv0} vs {v0}");
    assert!((pv1 - v1).abs() < 5e-2, "{pv1} vs {v1}");
}
