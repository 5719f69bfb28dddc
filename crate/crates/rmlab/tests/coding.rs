//! Coding-layer tests: tunnel feasibility checks against fixed-point
//! oracles, rate identities against closed forms and the area capacity,
//! cascaded-rate crossings and decoder-curve CSV round trips.

use rand::Rng;
use rmlab::analysis;
use rmlab::channel::SpectralProfile;
use rmlab::coding::{
    achievable_rate, cascaded_rate, error_free_check, eta_se_inverse, optimal_decoder_curve,
    rho_ceiling, DecoderCurve,
};
use rmlab::constellation::{Constellation, TransferCurve};
use rmlab::util::trial_rng;
use rmlab::Error;

fn profile(sv: Vec<f64>) -> SpectralProfile {
    let n = sv.len();
    SpectralProfile::new(sv, n, "test").unwrap()
}

fn random_profile(n: usize, seed: u64) -> SpectralProfile {
    let mut rng = trial_rng(seed, 29, 0);
    let mut sv: Vec<f64> = (0..n).map(|_| 0.3 + rng.gen::<f64>() * 1.4).collect();
    let scale = (n as f64 / sv.iter().map(|s| s * s).sum::<f64>()).sqrt();
    sv.iter_mut().for_each(|s| *s *= scale);
    profile(sv)
}

#[test]
fn eta_inverse_roundtrip() {
    let prof = random_profile(8, 1);
    let sigma2 = 0.2;
    for v in [0.01, 0.1, 0.5, 2.0] {
        let rho = analysis::eta_se(v, None, &prof, sigma2).unwrap();
        let back = eta_se_inverse(rho, None, &prof, sigma2).unwrap();
        assert!((back / v - 1.0).abs() < 1e-9, "{back} vs {v}");
    }
    let rho_max = rho_ceiling(None, &prof, sigma2).unwrap();
    assert_eq!(eta_se_inverse(rho_max, None, &prof, sigma2).unwrap(), 0.0);
    assert_eq!(eta_se_inverse(2.0 * rho_max, None, &prof, sigma2).unwrap(), 0.0);
}

#[test]
fn genie_decoder_always_tunnels() {
    let prof = random_profile(6, 2);
    let sigma2 = 0.3;
    let rho_max = rho_ceiling(None, &prof, sigma2).unwrap();
    let dec = DecoderCurve::genie(rho_max).unwrap();
    let rep = error_free_check(&dec, None, &prof, sigma2).unwrap();
    assert!(rep.error_free);
    assert!(rep.margin > 0.0);
    assert_eq!(achievable_rate(&dec, rho_max).unwrap(), 0.0);
}

#[test]
fn uncoded_decoder_fails_when_fixed_point_is_away_from_zero() {
    // Strong noise: the uncoded QPSK fixed point sits at a macroscopic
    // variance, so the MMSE curve must cross the inverse transfer.
    let c = Constellation::qpsk();
    let curve = c.mmse_table();
    let prof = random_profile(8, 7);
    let sigma2 = 1.0;
    let (state, _) = analysis::se_fixed_point(None, &prof, sigma2, &curve).unwrap();
    assert!(state.v_phi > 1e-3, "oracle precondition: v* = {}", state.v_phi);
    let rho_max = rho_ceiling(None, &prof, sigma2).unwrap();
    let dec = DecoderCurve::uncoded(&curve, rho_max).unwrap();
    let rep = error_free_check(&dec, None, &prof, sigma2).unwrap();
    assert!(!rep.error_free, "margin {}", rep.margin);
}

#[test]
fn backed_off_optimal_curve_tunnels_with_small_margin() {
    let c = Constellation::qpsk();
    let curve = c.mmse_table();
    let prof = random_profile(8, 3);
    let sigma2 = 0.25;
    let opt = optimal_decoder_curve(None, &prof, sigma2, &curve).unwrap();
    let dec = opt.backoff(0.99).unwrap();
    let rep = error_free_check(&dec, None, &prof, sigma2).unwrap();
    assert!(rep.error_free, "margin {}", rep.margin);
    assert!(rep.margin > 0.0 && rep.margin < 0.5);
    // Dominance: the optimal curve never exceeds the MMSE curve.
    for (x, y) in opt.curve.abscissae.iter().zip(&opt.curve.ordinates) {
        assert!(*y <= curve.eval(*x) + 1e-12);
    }
}

#[test]
fn uncoded_rate_is_siso_capacity() {
    let c = Constellation::qpsk();
    let curve = c.mmse_table();
    let snr = 4.0;
    let dec = DecoderCurve::uncoded(&curve, snr).unwrap();
    let r = achievable_rate(&dec, snr).unwrap();
    let c_siso = analysis::c_siso(snr, &curve).unwrap();
    assert!((r - c_siso).abs() < 2e-3, "{r} vs {c_siso}");
}

#[test]
fn optimal_rate_matches_area_capacity() {
    let c = Constellation::qpsk();
    let curve = c.mmse_table();
    for seed in 0..10u64 {
        let prof = random_profile(8, 10 + seed);
        let mut rng = trial_rng(100 + seed, 5, 0);
        let sigma2 = 0.1 + rng.gen::<f64>() * 0.4;
        let opt = optimal_decoder_curve(None, &prof, sigma2, &curve).unwrap();
        let rho_max = rho_ceiling(None, &prof, sigma2).unwrap();
        let r = achievable_rate(&opt, rho_max).unwrap();
        let c_area = analysis::c_mimo_area(None, &prof, sigma2, &curve).unwrap();
        assert!(
            (r - c_area).abs() < 1e-2,
            "seed {seed}: rate {r} vs area capacity {c_area}"
        );
    }
}

#[test]
fn unit_spectrum_gaussian_closed_forms() {
    // Point-mass spectrum: the inverse transfer is a step at rho_max, so
    // the optimal curve coincides with the MMSE curve below it and the
    // cascaded crossing sits at rho_max itself.
    let curve = TransferCurve::gaussian_mmse(1e4, 64);
    let prof = profile(vec![1.0; 4]);
    let sigma2 = 0.25;
    let rho_max = rho_ceiling(None, &prof, sigma2).unwrap();
    assert!((rho_max - 4.0).abs() < 1e-12);
    let opt = optimal_decoder_curve(None, &prof, sigma2, &curve).unwrap();
    for (x, y) in opt.curve.abscissae.iter().zip(&opt.curve.ordinates) {
        if *x < rho_max * 0.999 {
            assert!((y - 1.0 / (1.0 + x)).abs() < 1e-9, "at {x}: {y}");
        }
    }
    let cas = cascaded_rate(None, &prof, sigma2, &curve).unwrap();
    assert!(cas.crossing_found);
    assert!((cas.rho_star - rho_max).abs() < rho_max / 100.0, "{}", cas.rho_star);
    let c_exact = (1.0f64 + rho_max).ln() / std::f64::consts::LN_2;
    assert!((cas.rate_bits - c_exact).abs() < 0.05, "{} vs {c_exact}", cas.rate_bits);
    assert!(cas.rate_loss_bits >= 0.0 && cas.rate_loss_bits < 0.05);
}

#[test]
fn cascaded_rate_never_exceeds_optimal() {
    let c = Constellation::qpsk();
    let curve = c.mmse_table();
    for seed in 0..5u64 {
        let prof = random_profile(10, 20 + seed);
        let sigma2 = 0.3;
        let cas = cascaded_rate(None, &prof, sigma2, &curve).unwrap();
        let opt = optimal_decoder_curve(None, &prof, sigma2, &curve).unwrap();
        let rho_max = rho_ceiling(None, &prof, sigma2).unwrap();
        let r_opt = achievable_rate(&opt, rho_max).unwrap();
        assert!(
            cas.rate_bits <= r_opt + 1e-9,
            "seed {seed}: cascaded {} > optimal {r_opt}",
            cas.rate_bits
        );
        // High-SNR sanity: a QPSK rate can never exceed 2 bits.
        assert!(cas.rate_bits <= 2.0 + 1e-9);
    }
}

#[test]
fn rate_monotone_in_curve_enlargement() {
    let c = Constellation::qpsk();
    let curve = c.mmse_table();
    let prof = random_profile(8, 30);
    let sigma2 = 0.2;
    let opt = optimal_decoder_curve(None, &prof, sigma2, &curve).unwrap();
    let rho_max = rho_ceiling(None, &prof, sigma2).unwrap();
    let mut prev = -1.0;
    for f in [0.25, 0.5, 0.75, 1.0] {
        let r = achievable_rate(&opt.backoff(f).unwrap(), rho_max).unwrap();
        assert!(r >= prev, "rate not monotone at back-off {f}");
        prev = r;
    }
}

#[test]
fn csv_roundtrip_and_rejection() {
    let c = Constellation::qpsk();
    let curve = c.mmse_table();
    let dec = DecoderCurve::uncoded(&curve, 6.0).unwrap();
    let text = dec.to_csv();
    let back = DecoderCurve::from_csv(&text, "roundtrip").unwrap();
    for x in [0.0, 0.7, 2.3, 5.9] {
        assert!((back.curve.eval(x) - dec.curve.eval(x)).abs() < 1e-12);
    }
    for bad in [
        "",                             // empty
        "snr,phi\n0,1\n1,0.5",          // wrong header
        "rho,phi\n0,1\n1,0.5,9",        // extra field
        "rho,phi\n0,1\n-1,0.5",         // negative rho
        "rho,phi\n0,nope",              // non-numeric
        "rho,phi\n0,1\n0,0.5",          // non-increasing abscissae
        "rho,phi\n0,0.5\n1,0.9",        // increasing ordinates
        "rho,phi\n0,1.5\n1,0.5",        // out of [0,1]
    ] {
        assert!(
            matches!(DecoderCurve::from_csv(bad, "t"), Err(Error::Config(_))),
            "accepted malformed input: {bad:?}"
        );
    }
}

#[test]
fn domain_shortfall_is_rejected() {
    let c = Constellation::qpsk();
    let curve = c.mmse_table();
    let prof = random_profile(6, 40);
    let sigma2 = 0.2;
    let short = DecoderCurve::uncoded(&curve, 0.5).unwrap();
    assert!(matches!(
        error_free_check(&short, None, &prof, sigma2),
        Err(Error::Domain(_))
    ));
}
