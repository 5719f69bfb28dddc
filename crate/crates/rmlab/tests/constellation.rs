//! Scalar-channel tests: posterior means, MMSE curves and inverses, and
//! MAP-demodulation BER bounds, checked against closed forms and Monte
//! Carlo oracles.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rmlab::constellation::{mmse_inverse, Constellation, Extrapolation, TransferCurve};
use rmlab::util::q_func;
use rmlab::C64;

fn bpsk() -> Constellation {
    Constellation::custom(
        vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)],
        vec![0.5, 0.5],
        vec![0, 1],
    )
    .unwrap()
}

fn cn01<R: Rng>(rng: &mut R) -> C64 {
    let dist = rand_distr::StandardNormal;
    C64::new(
        rng.sample::<f64, _>(dist) * std::f64::consts::FRAC_1_SQRT_2,
        rng.sample::<f64, _>(dist) * std::f64::consts::FRAC_1_SQRT_2,
    )
}

#[test]
fn posterior_mean_zero_snr_is_prior_mean() {
    let c = Constellation::qpsk();
    let m = c.posterior_mean(C64::new(1.7, -0.3), 0.0).unwrap();
    assert!(m.norm() < 1e-12);
}

#[test]
fn gaussian_posterior_mean_closed_form() {
    let c = Constellation::gaussian();
    let m = c.posterior_mean(C64::new(2.0, 0.0), 1.0).unwrap();
    assert!((m - C64::new(1.0, 0.0)).norm() < 1e-14);
    // Linear in y at fixed rho.
    let y = C64::new(-0.4, 2.2);
    let rho: f64 = 3.7;
    let expect = y * (rho.sqrt() / (1.0 + rho));
    assert!((c.posterior_mean(y, rho).unwrap() - expect).norm() < 1e-14);
}

#[test]
fn bpsk_posterior_matches_brute_force_bayes() {
    let c = bpsk();
    let rho: f64 = 4.0;
    let y = C64::new(0.5 * rho.sqrt(), 0.3);
    let m = c.posterior_mean(y, rho).unwrap();
    // Two-point Bayes sum computed directly.
    let w_p = (-(y - C64::new(rho.sqrt(), 0.0)).norm_sqr()).exp();
    let w_m = (-(y + C64::new(rho.sqrt(), 0.0)).norm_sqr()).exp();
    let brute = (w_p - w_m) / (w_p + w_m);
    assert!((m.re - brute).abs() < 1e-12);
    assert!(m.im.abs() < 1e-12);
    // Equivalent tanh form.
    assert!((m.re - (2.0 * rho.sqrt() * y.re).tanh()).abs() < 1e-12);
}

#[test]
fn posterior_mean_rejects_non_finite_input() {
    let c = Constellation::qpsk();
    assert!(c.posterior_mean(C64::new(f64::NAN, 0.0), 1.0).is_err());
    assert!(c.posterior_mean(C64::new(0.0, 0.0), f64::INFINITY).is_err());
    assert!(c.posterior_mean(C64::new(0.0, 0.0), -1.0).is_err());
}

#[test]
fn mmse_at_zero_snr_is_one() {
    for c in [Constellation::qpsk(), Constellation::qam16(), Constellation::gaussian()] {
        assert!((c.mmse_scalar(0.0).unwrap() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn gaussian_mmse_closed_form() {
    let c = Constellation::gaussian();
    assert_eq!(c.mmse_scalar(3.0).unwrap(), 0.25);
}

#[test]
fn qpsk_mmse_matches_monte_carlo() {
    let c = Constellation::qpsk();
    let rho: f64 = 2.0;
    let quad = c.mmse_scalar(rho).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let n = 10_000_000usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let idx = c.sample_index(&mut rng);
        let x = c.points[idx];
        let y = x * rho.sqrt() + cn01(&mut rng);
        let e = (x - c.posterior_mean(y, rho).unwrap()).norm_sqr();
        sum += e;
        sum_sq += e * e;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    let stderr = (var / n as f64).sqrt();
    assert!(
        (quad - mean).abs() < 3.0 * stderr + 1e-9,
        "quadrature {quad} vs MC {mean} +- {stderr}"
    );
}

#[test]
fn mmse_monotone_non_increasing() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for c in [Constellation::qpsk(), Constellation::psk8()] {
        for _ in 0..100 {
            let a: f64 = rng.gen::<f64>() * 20.0;
            let b: f64 = rng.gen::<f64>() * 20.0;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let m_lo = c.mmse_scalar(lo).unwrap();
            let m_hi = c.mmse_scalar(hi).unwrap();
            assert!(m_hi <= m_lo + 1e-10, "mmse not monotone: {m_lo} -> {m_hi}");
            assert!((0.0..=1.0).contains(&m_lo));
        }
    }
}

#[test]
fn gaussian_table_matches_closed_form() {
    let c = Constellation::gaussian();
    let curve = c.build_mmse_table(1e3, 10_000).unwrap();
    for (rho, m) in curve.abscissae.iter().zip(&curve.ordinates) {
        assert!((m - 1.0 / (1.0 + rho)).abs() < 1e-10);
    }
}

#[test]
fn qpsk_table_monotone_and_roundtrip() {
    let c = Constellation::qpsk();
    let curve = c.mmse_table();
    assert!(curve.ordinates.windows(2).all(|w| w[1] <= w[0]));
    // Inverse round-trip at v = 0.1.
    let rho = mmse_inverse(0.1, &curve).unwrap();
    assert!((c.mmse_scalar(rho).unwrap() - 0.1).abs() < 1e-4);
}

#[test]
fn qam16_table_endpoint_small() {
    let c = Constellation::qam16();
    let curve = c.mmse_table();
    assert!(*curve.ordinates.last().unwrap() < 1e-6);
}

#[test]
fn table_rejects_too_few_points() {
    let c = Constellation::qpsk();
    assert!(c.build_mmse_table(100.0, 100).is_err());
}

#[test]
fn mmse_inverse_gaussian_closed_form() {
    let curve = TransferCurve::gaussian_mmse(1e3, 10_000);
    assert!((mmse_inverse(0.25, &curve).unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(mmse_inverse(1.0, &curve).unwrap(), 0.0);
    assert!(mmse_inverse(0.0, &curve).is_err());
    assert!(mmse_inverse(-0.5, &curve).is_err());
}

#[test]
fn i_mmse_identity_gaussian() {
    let c = Constellation::gaussian();
    for snr in [0.5, 1.0, 4.0] {
        let integral = rmlab::util::adaptive_simpson(
            &|rho| c.mmse_scalar(rho).unwrap(),
            0.0,
            snr,
            1e-10,
        );
        assert!((integral - (1.0 + snr).ln()).abs() < 1e-6);
        // Table-backed integral agrees as well.
        let curve = c.build_mmse_table(1e3, 10_000).unwrap();
        assert!((curve.integral(0.0, snr) - (1.0 + snr).ln()).abs() < 1e-6);
    }
}

#[test]
fn union_bound_is_exact_for_bpsk() {
    let c = bpsk();
    for rho in [0.5, 1.0, 2.0, 4.0, 10.0] {
        let bound = c.map_demod_ber(rho).unwrap();
        assert!((bound - q_func((2.0 * rho).sqrt())).abs() < 1e-14);
    }
}

#[test]
fn union_bound_zero_snr_sanity() {
    // At rho = 0 every pairwise term evaluates Q(0) = 1/2; the raw QPSK sum
    // is 1.0 and the bound saturates at the 1/2 cap.
    let c = Constellation::qpsk();
    assert_eq!(c.map_demod_ber(0.0).unwrap(), 0.5);
}

#[test]
fn union_bound_near_mc_at_high_snr() {
    let c = Constellation::qpsk();
    let rho = 10.0;
    let bound = c.map_demod_ber(rho).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
    let mc = c.map_demod_ber_mc(rho, 10_000_000, &mut rng).unwrap();
    assert!(
        (bound - mc).abs() / mc < 0.05,
        "bound {bound} vs MC {mc}"
    );
}

#[test]
fn union_bound_rejects_gaussian() {
    assert!(Constellation::gaussian().map_demod_ber(1.0).is_err());
}

#[test]
fn custom_constellation_validation() {
    // Bad priors.
    assert!(Constellation::custom(
        vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)],
        vec![0.9, 0.9],
        vec![0, 1]
    )
    .is_err());
    // Not a power of two.
    assert!(Constellation::custom(
        vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0), C64::new(0.0, 1.0)],
        vec![1.0 / 3.0; 3],
        vec![0, 1, 2]
    )
    .is_err());
    // Power not normalized.
    assert!(Constellation::custom(
        vec![C64::new(2.0, 0.0), C64::new(-2.0, 0.0)],
        vec![0.5, 0.5],
        vec![0, 1]
    )
    .is_err());
}

#[test]
fn custom_constellation_json_roundtrip() {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let text = format!(
        r#"{{"points": [[{a},{a}],[-{a},{a}],[-{a},-{a}],[{a},-{a}]],
            "priors": [0.25,0.25,0.25,0.25], "labels": [0,1,3,2]}}"#
    );
    let c = Constellation::from_json_str(&text).unwrap();
    assert_eq!(c.points.len(), 4);
    assert_eq!(c.bits_per_symbol, 2);
    let reference = Constellation::qpsk();
    let rho = 1.5;
    assert!(
        (c.mmse_scalar(rho).unwrap() - reference.mmse_scalar(rho).unwrap()).abs() < 1e-12
    );
    // Malformed JSON is a configuration error.
    assert!(Constellation::from_json_str("{\"points\": 3}").is_err());
}

#[test]
fn transfer_curve_validation_and_extrapolation() {
    assert!(TransferCurve::new(vec![0.0], vec![1.0], Extrapolation::Clamp).is_err());
    assert!(TransferCurve::new(vec![0.0, 0.0], vec![1.0, 0.5], Extrapolation::Clamp).is_err());
    // Log-linear tail continues an exponential decay accurately.
    let xs: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (-x).exp()).collect();
    let curve = TransferCurve::new(xs, ys, Extrapolation::Asymptotic).unwrap();
    let x = 12.0;
    assert!((curve.eval(x) - (-x).exp()).abs() / (-x).exp() < 1e-3);
    let clamped = TransferCurve::new(
        vec![0.0, 1.0],
        vec![1.0, 0.5],
        Extrapolation::Clamp,
    )
    .unwrap();
    assert_eq!(clamped.eval(5.0), 0.5);
}

#[test]
fn nearest_point_hard_decision() {
    let c = Constellation::qpsk();
    for (i, x) in c.points.iter().enumerate() {
        assert_eq!(c.nearest_point(*x + C64::new(0.05, -0.02)), i);
    }
}
