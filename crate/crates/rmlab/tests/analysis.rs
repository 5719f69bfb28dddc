//! Performance-limit tests: SE transfer closed forms, Stieltjes/R-transform
//! oracles, replica fixed points against closed forms and the SE iteration,
//! both capacity evaluations, and the convexity/dominance lemmas behind the
//! allocation objective.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rmlab::analysis::{
    c_mimo_area, c_mimo_area_with, c_siso, eigenvalues, eta_se, gamma_hat_dense_q, gamma_hat_se,
    r_transform, replica_solve, se_fixed_point, se_oamp_iterate, stieltjes, SEState,
};
use rmlab::channel::SpectralProfile;
use rmlab::constellation::{mmse_inverse, Constellation, TransferCurve};
use rmlab::C64;

fn unit_profile(n: usize) -> SpectralProfile {
    SpectralProfile::new(vec![1.0; n], n, "unit").unwrap()
}

fn random_profile(n: usize, seed: u64) -> SpectralProfile {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut sv: Vec<f64> = (0..n).map(|_| 0.1 + 1.9 * rng.gen::<f64>()).collect();
    // Normalize to sum sigma_i^2 = n.
    let ss: f64 = sv.iter().map(|s| s * s).sum();
    let scale = (n as f64 / ss).sqrt();
    sv.iter_mut().for_each(|s| *s *= scale);
    SpectralProfile::new(sv, n, "random").unwrap()
}

/// Bimodal spectrum with three replica fixed points at 12 dB QPSK: 8 of 32
/// singular values carry almost all the energy.
fn bimodal_profile() -> SpectralProfile {
    let n = 32;
    let mut sv = vec![0.05f64; n];
    for s in sv.iter_mut().take(8) {
        *s = 2.0;
    }
    let ss: f64 = sv.iter().map(|s| s * s).sum();
    let scale = (n as f64 / ss).sqrt();
    sv.iter_mut().for_each(|s| *s *= scale);
    SpectralProfile::new(sv, n, "bimodal").unwrap()
}

fn snr_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[test]
fn gamma_hat_closed_forms() {
    let prof = unit_profile(16);
    let sigma2 = 0.25;
    let v = 0.37;
    let expect = 1.0 / (1.0 / v + 1.0 / sigma2);
    assert!((gamma_hat_se(v, None, &prof, sigma2).unwrap() - expect).abs() < 1e-15);
    // Zero power: gamma_hat(v, 0) = v.
    let zeros = vec![0.0; 16];
    assert!((gamma_hat_se(v, Some(&zeros), &prof, sigma2).unwrap() - v).abs() < 1e-15);
    assert!(gamma_hat_se(-1.0, None, &prof, sigma2).is_err());
}

#[test]
fn gamma_hat_matches_dense_trace_oracle() {
    let n = 12;
    let prof = random_profile(n, 3);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let p: Vec<f64> = (0..n).map(|_| 2.0 * rng.gen::<f64>()).collect();
    let q = Array2::from_shape_fn((n, n), |(i, j)| {
        C64::new(if i == j { p[i] } else { 0.0 }, 0.0)
    });
    let sigma2 = 0.3;
    for v in [0.05, 0.4, 0.9] {
        let fast = gamma_hat_se(v, Some(&p), &prof, sigma2).unwrap();
        let dense = gamma_hat_dense_q(v, &q, &prof, sigma2).unwrap();
        assert!((fast - dense).abs() < 1e-12, "{fast} vs {dense}");
    }
}

#[test]
fn se_gaussian_identity_fixed_point() {
    for snr_db in [0.0, 6.0, 10.0] {
        let sigma2 = snr_to_sigma2(snr_db);
        let snr = 1.0 / sigma2;
        let prof = unit_profile(8);
        let curve = TransferCurve::gaussian_mmse(1e4, 10_000);
        let (state, v_post) = se_fixed_point(None, &prof, sigma2, &curve).unwrap();
        assert!((v_post - 1.0 / (1.0 + snr)).abs() < 1e-9, "v_post {v_post}");
        assert!((state.rho_gamma - snr).abs() < 1e-6 * snr.max(1.0));
    }
}

#[test]
fn se_qpsk_high_snr_drives_v_small() {
    let c = Constellation::qpsk();
    let prof = unit_profile(8);
    let (_, v_post) = se_fixed_point(None, &prof, snr_to_sigma2(20.0), c.mmse_table().as_ref())
        .unwrap();
    assert!(v_post < 1e-4, "v_post {v_post}");
}

#[test]
fn se_fixed_point_satisfies_both_updates() {
    let c = Constellation::qpsk();
    let prof = random_profile(16, 9);
    let sigma2 = snr_to_sigma2(8.0);
    let curve = c.mmse_table();
    let (state, _) = se_fixed_point(None, &prof, sigma2, &curve).unwrap();
    let next = se_oamp_iterate(&state, None, &prof, sigma2, &curve).unwrap();
    assert!((next.v_phi - state.v_phi).abs() < 1e-10);
    assert!((next.rho_gamma - state.rho_gamma).abs() < 1e-10 * (1.0 + state.rho_gamma));
}

#[test]
fn stieltjes_closed_forms_and_domain() {
    assert!((stieltjes(-1.0, &[1.0; 4]).unwrap() - 0.5).abs() < 1e-15);
    assert!((stieltjes(-1.0, &[0.0; 4]).unwrap() - 1.0).abs() < 1e-15);
    // Dense resolvent trace oracle on a random spectrum.
    let eigs = [0.3, 0.7, 1.1, 2.4];
    let w = -0.8;
    let oracle: f64 = eigs.iter().map(|l| 1.0 / (l - w)).sum::<f64>() / 4.0;
    assert!((stieltjes(w, &eigs).unwrap() - oracle).abs() < 1e-12);
    assert!(stieltjes(1.0, &eigs).is_err());
}

#[test]
fn r_transform_point_mass_and_zero() {
    for z in [1e-6, 0.01, 0.5, 3.0, 50.0] {
        assert!((r_transform(z, &[1.0; 5]).unwrap() - 1.0).abs() < 1e-10, "z={z}");
        assert!(r_transform(z, &[0.0; 5]).unwrap().abs() < 1e-10, "z={z}");
    }
    assert!((r_transform(0.0, &[0.5, 1.5]).unwrap() - 1.0).abs() < 1e-12);
    assert!(r_transform(-1.0, &[1.0]).is_err());
}

#[test]
fn r_transform_moment_expansion() {
    // R(-z) = m1 - (m2 - m1^2) z + O(z^2) for small z.
    let eigs = [0.4, 0.9, 1.3, 2.0, 3.1];
    let m1: f64 = eigs.iter().sum::<f64>() / 5.0;
    let m2: f64 = eigs.iter().map(|l| l * l).sum::<f64>() / 5.0;
    let kappa2 = m2 - m1 * m1;
    for z in [1e-3, 1e-4] {
        let r = r_transform(z, &eigs).unwrap();
        assert!(
            (r - (m1 - kappa2 * z)).abs() < 50.0 * z * z,
            "z={z}: r={r}"
        );
    }
}

#[test]
fn replica_gaussian_unit_spectrum_closed_form() {
    let c = Constellation::gaussian();
    for snr_db in [0.0, 10.0] {
        let sigma2 = snr_to_sigma2(snr_db);
        let snr = 1.0 / sigma2;
        let sol = replica_solve(&unit_profile(8), None, sigma2, &c).unwrap();
        assert!(sol.is_unique(), "roots {:?}", sol.all_fixed_points);
        assert!((sol.v_star - 1.0 / (1.0 + snr)).abs() < 1e-8);
        assert!((sol.capacity - (1.0 + snr).log2()).abs() < 1e-6);
        assert!(sol.ber_star.is_nan());
    }
}

#[test]
fn replica_matches_se_fixed_point() {
    let c = Constellation::qpsk();
    let prof = SpectralProfile::new(vec![1.5, 0.5], 2, "two-point").unwrap();
    let sigma2 = snr_to_sigma2(6.0);
    let sol = replica_solve(&prof, None, sigma2, &c).unwrap();
    assert!(sol.ber_star.is_finite() && sol.ber_star > 0.0);
    let (state, v_post) = se_fixed_point(None, &prof, sigma2, c.mmse_table().as_ref()).unwrap();
    assert!(
        (v_post - sol.v_star).abs() < 1e-8,
        "SE {v_post} vs replica {}",
        sol.v_star
    );
    let se_ber = c.map_demod_ber(state.rho_gamma).unwrap();
    assert!((se_ber - sol.ber_star).abs() < 1e-6);
    // rho_star consistency with the mmse inverse.
    let rho = mmse_inverse(sol.v_star, c.mmse_table().as_ref()).unwrap();
    assert!((rho - sol.rho_star).abs() < 1e-8 * (1.0 + rho));
}

#[test]
fn replica_bimodal_spectrum_reports_multiple_roots() {
    let c = Constellation::qpsk();
    let sol = replica_solve(&bimodal_profile(), None, snr_to_sigma2(12.0), &c).unwrap();
    assert!(
        sol.all_fixed_points.len() >= 2,
        "expected multiple roots, got {:?}",
        sol.all_fixed_points
    );
    assert!(!sol.is_unique());
    // Operational solution is the largest-v (first-reached) root.
    let max = sol
        .all_fixed_points
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(sol.v_star, max);
}

#[test]
fn c_siso_values() {
    let g = TransferCurve::gaussian_mmse(1e4, 10_000);
    assert!((c_siso(1.0, &g).unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(c_siso(0.0, &g).unwrap(), 0.0);
    let q = Constellation::qpsk();
    let c2 = c_siso(1e3, q.mmse_table().as_ref()).unwrap();
    assert!((c2 - 2.0).abs() < 1e-2, "QPSK saturation {c2}");
}

#[test]
fn eta_se_closed_forms() {
    let prof = unit_profile(8);
    let sigma2 = 0.2;
    for v in [1e-3, 0.1, 0.5, 0.99] {
        let eta = eta_se(v, None, &prof, sigma2).unwrap();
        assert!((eta - 1.0 / sigma2).abs() < 1e-9, "v={v}: {eta}");
    }
    let zeros = vec![0.0; 8];
    assert!(eta_se(0.5, Some(&zeros), &prof, sigma2).unwrap().abs() < 1e-10);
}

#[test]
fn eta_se_inner_inverse_monotone() {
    let prof = random_profile(16, 21);
    // High noise keeps the scaled spectrum weak so the inner inverse stays
    // inside (0, 1] for every v on the scan.
    let sigma2 = 5.0;
    // vtilde(v) = 1/(1/v - eta(v)) must increase in v.
    let mut prev = f64::NEG_INFINITY;
    for i in 1..=100 {
        let v = i as f64 / 101.0;
        let eta = eta_se(v, None, &prof, sigma2).unwrap();
        let u = 1.0 / v - eta;
        assert!(u > 0.0);
        let vt = 1.0 / u;
        assert!(vt > prev - 1e-12, "vtilde not monotone at v={v}");
        prev = vt;
    }
}

#[test]
fn capacity_area_gaussian_matches_log() {
    let g = TransferCurve::gaussian_mmse(1e4, 10_000);
    for snr_db in [0.0, 10.0] {
        let sigma2 = snr_to_sigma2(snr_db);
        let c = c_mimo_area(None, &unit_profile(8), sigma2, &g).unwrap();
        let expect = (1.0 + 1.0 / sigma2).log2();
        assert!((c - expect).abs() < 2e-3, "{c} vs {expect}");
    }
}

#[test]
fn capacity_area_matches_replica_form() {
    let c = Constellation::qpsk();
    let prof = random_profile(24, 8);
    for snr_db in [2.0, 8.0] {
        let sigma2 = snr_to_sigma2(snr_db);
        let sol = replica_solve(&prof, None, sigma2, &c).unwrap();
        let area = c_mimo_area(None, &prof, sigma2, c.mmse_table().as_ref()).unwrap();
        assert!(
            (area - sol.capacity).abs() < 5e-3,
            "snr {snr_db} dB: area {area} vs fixed-point {}",
            sol.capacity
        );
    }
}

#[test]
fn capacity_area_zero_power_and_node_control() {
    let prof = random_profile(8, 2);
    let g = TransferCurve::gaussian_mmse(1e4, 10_000);
    let zeros = vec![0.0; 8];
    assert_eq!(c_mimo_area(Some(&zeros), &prof, 0.5, &g).unwrap(), 0.0);
    // Reduced node count stays close to the default evaluation.
    let full = c_mimo_area(None, &prof, 0.1, &g).unwrap();
    let cheap = c_mimo_area_with(None, &prof, 0.1, &g, 1e-4, 200).unwrap();
    assert!((full - cheap).abs() < 5e-3);
    assert!(c_mimo_area_with(None, &prof, 0.1, &g, 0.0, 200).is_err());
    assert!(c_mimo_area_with(None, &prof, 0.1, &g, 1e-4, 4).is_err());
}

#[test]
fn reciprocal_gamma_hat_concave_in_power() {
    let prof = random_profile(12, 31);
    let sigma2 = 0.4;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(32);
    for _ in 0..1000 {
        let p1: Vec<f64> = (0..12).map(|_| 3.0 * rng.gen::<f64>()).collect();
        let p2: Vec<f64> = (0..12).map(|_| 3.0 * rng.gen::<f64>()).collect();
        let lam: f64 = rng.gen();
        let v: f64 = 0.05 + 0.9 * rng.gen::<f64>();
        let mix: Vec<f64> = p1
            .iter()
            .zip(&p2)
            .map(|(a, b)| lam * a + (1.0 - lam) * b)
            .collect();
        let f = |p: &[f64]| 1.0 / gamma_hat_se(v, Some(p), &prof, sigma2).unwrap();
        assert!(f(&mix) >= lam * f(&p1) + (1.0 - lam) * f(&p2) - 1e-12);
    }
}

#[test]
fn inverse_transfer_convex_in_power() {
    let prof = random_profile(10, 41);
    let sigma2 = 0.4;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    // u(v, p) = 1/v - eta(v, p) = [gamma_hat^{-1}]^{-1}: midpoint convexity.
    for _ in 0..200 {
        let p1: Vec<f64> = (0..10).map(|_| 3.0 * rng.gen::<f64>()).collect();
        let p2: Vec<f64> = (0..10).map(|_| 3.0 * rng.gen::<f64>()).collect();
        let v: f64 = 0.05 + 0.9 * rng.gen::<f64>();
        let mid: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| 0.5 * (a + b)).collect();
        let u = |p: &[f64]| 1.0 / v - eta_se(v, Some(p), &prof, sigma2).unwrap();
        assert!(u(&mid) <= 0.5 * (u(&p1) + u(&p2)) + 1e-10);
    }
}

#[test]
fn diagonal_coupling_dominates() {
    let n = 8;
    let prof = random_profile(n, 51);
    let sigma2 = 0.3;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(52);
    let dist = rand_distr::StandardNormal;
    for trial in 0..50 {
        // Random Hermitian PSD Q = B B^H.
        let b = Array2::from_shape_fn((n, n), |_| {
            C64::new(rng.sample(dist), rng.sample(dist))
        });
        let q = rmlab::util::matmul(&b, &rmlab::util::adjoint(&b));
        let q_diag = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                q[(i, i)]
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let v = 0.1 + 0.8 * rng.gen::<f64>();
        let full = gamma_hat_dense_q(v, &q, &prof, sigma2).unwrap();
        let diag = gamma_hat_dense_q(v, &q_diag, &prof, sigma2).unwrap();
        assert!(diag <= full + 1e-12, "trial {trial}: diag {diag} > full {full}");
    }
}

#[test]
fn permutation_mean_identity() {
    // E[P B P^H] over uniform permutations = beta 11^T + (alpha - beta) I
    // with alpha the diagonal mean and beta the off-diagonal mean of B.
    let n = 8;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(61);
    let dist = rand_distr::StandardNormal;
    let b = Array2::from_shape_fn((n, n), |_| {
        C64::new(rng.sample(dist), rng.sample(dist))
    });
    let alpha = (0..n).map(|i| b[(i, i)]).sum::<C64>() / n as f64;
    let mut beta = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                beta += b[(i, j)];
            }
        }
    }
    beta /= (n * (n - 1)) as f64;
    let trials = 10_000usize;
    let mut acc = Array2::from_elem((n, n), C64::new(0.0, 0.0));
    let mut idx: Vec<usize> = (0..n).collect();
    for _ in 0..trials {
        idx.shuffle(&mut rng);
        for i in 0..n {
            for j in 0..n {
                acc[(i, j)] += b[(idx[i], idx[j])];
            }
        }
    }
    acc.mapv_inplace(|z| z / trials as f64);
    // Entry standard error ~ |B|_max / sqrt(trials); allow 3 sigma.
    let bmax = b.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = 3.0 * bmax / (trials as f64).sqrt();
    for i in 0..n {
        for j in 0..n {
            let expect = if i == j { alpha } else { beta };
            assert!(
                (acc[(i, j)] - expect).norm() < tol,
                "entry ({i},{j}): {} vs {expect}",
                acc[(i, j)]
            );
        }
    }
}

#[test]
fn eigenvalue_helper_validates_power() {
    let prof = unit_profile(4);
    assert!(eigenvalues(&prof, Some(&[1.0, 2.0])).is_err());
    assert!(eigenvalues(&prof, Some(&[1.0, -1.0, 0.0, 0.0])).is_err());
    let e = eigenvalues(&prof, Some(&[0.0, 1.0, 2.0, 3.0])).unwrap();
    assert_eq!(e, vec![0.0, 1.0, 2.0, 3.0]);
    // SEState starts at v = 1.
    let s = SEState::start();
    assert_eq!(s.v_phi, 1.0);
}
