//! Detector tests: LMMSE closed forms and dense-solve oracles, CD-OAMP
//! against replica/SE predictions, CD-MAMP against CD-OAMP fixed points,
//! orthogonality audits, flop scaling, and BER counting.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rmlab::channel::svd_dense;
use rmlab::channel::SpectralProfile;
use rmlab::constellation::Constellation;
use rmlab::detector::{
    ber_count, cd_mamp_run, cd_oamp_run, lmmse_detect, orthogonality_audit,
    DetectorConfig, SystemInstance, VarianceMode,
};
use rmlab::operator::{LinearOperator, Stage, SvdForm};
use rmlab::transform::{sample_transform, FastBase, KindSpec};
use rmlab::util::trial_rng;
use rmlab::{analysis, C64, Error};

fn randn_c(rng: &mut impl Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Dense operator with its singular form attached.
fn dense_op(a: Array2<C64>) -> Arc<LinearOperator> {
    let f = svd_dense(&a).unwrap();
    let n = a.ncols();
    let mut sigma = f.sigma.clone();
    sigma.resize(n, 0.0);
    let v = &*f.v;
    let mut vh = Array2::from_elem((n, n), C64::new(0.0, 0.0));
    for i in 0..n {
        for j in 0..n {
            vh[(i, j)] = v[(j, i)].conj();
        }
    }
    let w = Arc::new(LinearOperator::new(vec![Stage::Dense(Arc::new(vh))]).unwrap());
    let mut op = LinearOperator::new(vec![Stage::Dense(Arc::new(a))]).unwrap();
    op.svd_form = Some(SvdForm { left_u: Some(f.u.clone()), sigma, w });
    Arc::new(op)
}

/// Fast operator A = diag(sigma) * Xi with an exactly known singular form.
fn synthetic_op(sigma: Vec<f64>, seed: u64) -> Arc<LinearOperator> {
    let n = sigma.len();
    let xi = Arc::new(
        sample_transform(&KindSpec::PermFast { base: FastBase::Dft, phase: true }, n, seed)
            .unwrap(),
    );
    let w = Arc::new(LinearOperator::new(vec![Stage::Transform(xi.clone())]).unwrap());
    let mut op = LinearOperator::new(vec![
        Stage::Transform(xi),
        Stage::DiagReal(Arc::new(sigma.clone())),
    ])
    .unwrap();
    op.svd_form = Some(SvdForm { left_u: None, sigma, w });
    Arc::new(op)
}

fn random_dense(m: usize, n: usize, seed: u64) -> Array2<C64> {
    let mut rng = trial_rng(seed, 11, 0);
    let scale = 1.0 / (n as f64).sqrt();
    Array2::from_shape_fn((m, n), |_| randn_c(&mut rng) * scale)
}

/// Draw symbols, pass through the operator, add noise.
fn make_instance(
    op: &Arc<LinearOperator>,
    c: &Arc<Constellation>,
    sigma2: f64,
    seed: u64,
) -> SystemInstance {
    let n = op.input_dim();
    let mut rng = trial_rng(seed, 13, 0);
    let s: Vec<C64> = if c.is_gaussian() {
        (0..n).map(|_| randn_c(&mut rng)).collect()
    } else {
        (0..n).map(|_| c.points[c.sample_index(&mut rng)]).collect()
    };
    let mut y = op.apply(&s).unwrap();
    let nscale = sigma2.sqrt();
    for v in &mut y {
        *v += randn_c(&mut rng) * nscale;
    }
    op.reset_flops();
    SystemInstance {
        operator: op.clone(),
        y,
        sigma2,
        constellation: c.clone(),
        truth: Some(s),
    }
}

fn identity_matrix(n: usize) -> Array2<C64> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }
    })
}

/// Solve the square complex system M x = b by Gaussian elimination.
fn solve_dense(m: &Array2<C64>, b: &[C64]) -> Vec<C64> {
    let n = b.len();
    let mut a = vec![vec![C64::new(0.0, 0.0); n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = m[(i, j)];
        }
        a[i][n] = b[i];
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].norm().partial_cmp(&a[y][col].norm()).unwrap()).unwrap();
        a.swap(col, piv);
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col] / a[col][col];
            for k in col..=n {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

#[test]
fn lmmse_identity_closed_forms() {
    let n = 8;
    let op = dense_op(identity_matrix(n));
    let c = Arc::new(Constellation::gaussian());
    // Moderate noise: scalar LMMSE shrinks by 1/(1 + sigma2) and the
    // posterior variance is sigma2/(1 + sigma2).
    let mut sys = make_instance(&op, &c, 0.5, 1);
    let (s_hat, v) = lmmse_detect(&sys).unwrap();
    assert!((v - 0.5 / 1.5).abs() < 1e-12);
    for (est, y) in s_hat.iter().zip(&sys.y) {
        assert!((est - y / 1.5).norm() < 1e-12);
    }
    // Vanishing noise: estimate approaches the truth.
    sys.sigma2 = 1e-12;
    sys.y = sys.truth.clone().unwrap();
    let (s_hat, v) = lmmse_detect(&sys).unwrap();
    for (est, tru) in s_hat.iter().zip(sys.truth.as_ref().unwrap()) {
        assert!((est - tru).norm() < 1e-9);
    }
    assert!(v < 1e-11);
}

#[test]
fn lmmse_matches_dense_solve_oracle() {
    let n = 64;
    let a = random_dense(n, n, 2);
    let op = dense_op(a.clone());
    let c = Arc::new(Constellation::qpsk());
    let sigma2 = 0.3;
    let sys = make_instance(&op, &c, sigma2, 3);
    let (s_hat, _) = lmmse_detect(&sys).unwrap();
    // Oracle: s = (sigma2 I + A^H A)^{-1} A^H y solved directly.
    let mut gram = Array2::from_elem((n, n), C64::new(0.0, 0.0));
    for i in 0..n {
        for j in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += a[(k, i)].conj() * a[(k, j)];
            }
            gram[(i, j)] = acc;
        }
        gram[(i, i)] += sigma2;
    }
    let rhs: Vec<C64> = (0..n)
        .map(|i| (0..n).map(|k| a[(k, i)].conj() * sys.y[k]).sum())
        .collect();
    let oracle = solve_dense(&gram, &rhs);
    for (est, want) in s_hat.iter().zip(&oracle) {
        assert!((est - want).norm() < 1e-8, "{est} vs {want}");
    }
}

#[test]
fn oamp_identity_low_noise_converges_immediately() {
    let n = 64;
    let op = synthetic_op(vec![1.0; n], 4);
    let c = Arc::new(Constellation::qpsk());
    let sys = make_instance(&op, &c, 1e-6, 5);
    let trace = cd_oamp_run(&sys, &DetectorConfig::default()).unwrap();
    assert_eq!(trace.iterations[0].ber_if_truth, Some(0.0));
    assert!(trace.iterations.len() <= 3);
    assert!(trace.final_v_phi().unwrap() < 1e-4);
}

#[test]
fn oamp_gaussian_prior_reaches_replica_fixed_point() {
    let n = 256;
    let mut sv = vec![1.5f64.sqrt(); n / 2];
    sv.extend(vec![0.5f64.sqrt(); n / 2]);
    let op = synthetic_op(sv.clone(), 6);
    let c = Arc::new(Constellation::gaussian());
    let sigma2 = 0.1;
    let sys = make_instance(&op, &c, sigma2, 7);
    let trace = cd_oamp_run(&sys, &DetectorConfig::default()).unwrap();
    let v_g = trace.final_v_gamma().unwrap();
    // Gaussian posterior variance at the detector's fixed point.
    let v_post = v_g / (1.0 + v_g);
    let profile = SpectralProfile::new(sv, n, "test").unwrap();
    let sol = analysis::replica_solve(&profile, None, sigma2, &c).unwrap();
    assert!(
        (v_post - sol.v_star).abs() < 1e-4,
        "detector {v_post} vs replica {}",
        sol.v_star
    );
}

#[test]
fn oamp_tracks_state_evolution_qpsk() {
    let n = 2048;
    let mut sv = vec![1.5f64.sqrt(); n / 2];
    sv.extend(vec![0.5f64.sqrt(); n / 2]);
    let op = synthetic_op(sv.clone(), 8);
    let c = Arc::new(Constellation::qpsk());
    let sigma2 = 0.12;
    let cfg = DetectorConfig { max_iters: 20, ..DetectorConfig::default() };
    // In analytic mode the variance trajectory is deterministic, so runs
    // from different seeds align iteration-by-iteration; average the
    // measured errors over a few instances to tame sampling noise.
    let runs = 6u64;
    let mut traces = Vec::new();
    for seed in 0..runs {
        let sys = make_instance(&op, &c, sigma2, 9 + seed);
        op.reset_flops();
        traces.push(cd_oamp_run(&sys, &cfg).unwrap());
    }
    let iters = traces.iter().map(|t| t.iterations.len()).min().unwrap();
    assert!(iters >= 3, "want a multi-iteration trajectory");

    let profile = SpectralProfile::new(sv, n, "test").unwrap();
    let curve = c.mmse_table();
    let mut state = analysis::SEState::start();
    for k in 0..iters {
        state = analysis::se_oamp_iterate(&state, None, &profile, sigma2, &curve).unwrap();
        // The detector's analytic variance recursion must coincide with SE.
        let rec = &traces[0].iterations[k];
        assert!(
            (rec.v_phi - state.v_phi).abs() < 1e-9 * state.v_phi.max(1e-12),
            "iter {}: {} vs {}",
            rec.iter,
            rec.v_phi,
            state.v_phi
        );
        // The measured extrinsic error must track the SE prediction.
        let emp: f64 = traces
            .iter()
            .map(|t| t.iterations[k].mse_ext_if_truth.unwrap())
            .sum::<f64>()
            / runs as f64;
        if state.v_phi > 1e-5 {
            assert!(
                (emp - state.v_phi).abs() < 0.1 * state.v_phi,
                "iter {}: empirical {} vs SE {}",
                rec.iter,
                emp,
                state.v_phi
            );
        }
    }
}

#[test]
fn mamp_identity_matches_lmmse_fixed_point() {
    let n = 64;
    let op = synthetic_op(vec![1.0; n], 10);
    let c = Arc::new(Constellation::gaussian());
    let sigma2 = 0.5;
    let sys = make_instance(&op, &c, sigma2, 11);
    let trace = cd_mamp_run(&sys, &DetectorConfig::default()).unwrap();
    let v_g = trace.final_v_gamma().unwrap();
    assert!((v_g - sigma2).abs() < 1e-9, "v_gamma {v_g}");
    // Posterior variance equals the scalar LMMSE value sigma2/(1+sigma2).
    let (_, v_lmmse) = lmmse_detect(&sys).unwrap();
    assert!((v_g / (1.0 + v_g) - v_lmmse).abs() < 1e-9);
}

#[test]
fn mamp_matches_oamp_across_random_instances() {
    let kinds = ["qpsk", "8psk", "16qam"];
    for trial in 0..20u64 {
        let n = 256;
        let mut rng = trial_rng(100 + trial, 17, 0);
        // Random two-point spectrum with condition number <= 10 in power.
        let hi: f64 = 1.2 + rng.gen::<f64>() * 0.6;
        let lo = (2.0 - hi).max(0.2);
        let mut sv = vec![hi.sqrt(); n / 2];
        sv.extend(vec![lo.sqrt(); n / 2]);
        let op = synthetic_op(sv, 200 + trial);
        let kind = kinds[trial as usize % 3];
        let c = Arc::new(Constellation::by_name(kind).unwrap());
        // Keep each constellation near its own waterfall so the fixed
        // point is informative.
        let snr_scale = match kind {
            "8psk" => 2.5,
            "16qam" => 5.0,
            _ => 1.0,
        };
        let sigma2 = (0.08 + 0.1 * rng.gen::<f64>()) / snr_scale;
        let sys = make_instance(&op, &c, sigma2, 300 + trial);
        let oamp = cd_oamp_run(&sys, &DetectorConfig::default()).unwrap();
        op.reset_flops();
        let mamp = cd_mamp_run(&sys, &DetectorConfig::default()).unwrap();
        let vo = oamp.final_v_phi().unwrap();
        let vm = mamp.final_v_phi().unwrap();
        assert!(
            (vo - vm).abs() <= 1e-3,
            "trial {trial}: OAMP {vo} vs MAMP {vm}"
        );
    }
}

#[test]
fn mamp_variance_monotone_on_well_conditioned_instance() {
    let n = 512;
    let mut sv = vec![1.5f64.sqrt(); n / 2];
    sv.extend(vec![0.5f64.sqrt(); n / 2]);
    let op = synthetic_op(sv, 12);
    let c = Arc::new(Constellation::qpsk());
    let sys = make_instance(&op, &c, 0.15, 13);
    let trace = cd_mamp_run(&sys, &DetectorConfig::default()).unwrap();
    let mut prev = f64::INFINITY;
    for rec in &trace.iterations {
        assert!(
            rec.v_phi <= prev * (1.0 + 1e-9),
            "iter {}: v_phi {} rose above {}",
            rec.iter,
            rec.v_phi,
            prev
        );
        prev = rec.v_phi;
    }
}

#[test]
fn mamp_flops_scale_linearly_in_n() {
    let per_iter_flops = |n: usize| -> f64 {
        let mut sv = vec![1.5f64.sqrt(); n / 2];
        sv.extend(vec![0.5f64.sqrt(); n / 2]);
        let op = synthetic_op(sv, 14);
        let c = Arc::new(Constellation::qpsk());
        let sys = make_instance(&op, &c, 0.2, 15);
        let cfg = DetectorConfig { max_iters: 6, stop_tol: 1e-30, ..DetectorConfig::default() };
        let trace = cd_mamp_run(&sys, &cfg).unwrap();
        let recs = &trace.iterations;
        assert_eq!(recs.len(), 6);
        (recs[5].flops - recs[1].flops) as f64 / 4.0
    };
    let f1 = per_iter_flops(512);
    let f2 = per_iter_flops(1024);
    let ratio = f2 / f1;
    assert!(
        (1.7..=2.3).contains(&ratio),
        "flop ratio {ratio} outside 2 +- 15%"
    );
}

#[test]
fn orthogonality_audit_oamp_and_mamp() {
    let n = 32;
    let a = random_dense(48, n, 16);
    let op = dense_op(a.clone());
    let c = Arc::new(Constellation::qpsk());
    let sys = make_instance(&op, &c, 0.2, 17);
    let cfg = DetectorConfig { max_iters: 5, stop_tol: 1e-30, ..DetectorConfig::default() };
    let oamp = cd_oamp_run(&sys, &cfg).unwrap();
    let rep = orthogonality_audit(&oamp, &a).unwrap();
    assert!(rep.max_residual() < 1e-8, "OAMP residual {}", rep.max_residual());
    op.reset_flops();
    let mamp = cd_mamp_run(&sys, &cfg).unwrap();
    let rep = orthogonality_audit(&mamp, &a).unwrap();
    assert!(rep.max_residual() < 1e-8, "MAMP residual {}", rep.max_residual());
    assert!(!rep.q_residuals.is_empty() && !rep.p_residuals.is_empty());
}

#[test]
fn orthogonality_audit_identity_scalar_case() {
    let n = 16;
    let a = identity_matrix(n);
    let op = dense_op(a.clone());
    let c = Arc::new(Constellation::qpsk());
    let sys = make_instance(&op, &c, 0.3, 18);
    let cfg = DetectorConfig { max_iters: 3, stop_tol: 1e-30, ..DetectorConfig::default() };
    for trace in [cd_oamp_run(&sys, &cfg).unwrap(), {
        op.reset_flops();
        cd_mamp_run(&sys, &cfg).unwrap()
    }] {
        let rep = orthogonality_audit(&trace, &a).unwrap();
        assert!(rep.max_residual() < 1e-10);
    }
}

#[test]
fn ber_count_exact_and_negated() {
    let c = Constellation::qpsk();
    let truth: Vec<C64> = (0..16).map(|i| c.points[i % 4]).collect();
    let (e, b) = ber_count(&truth, &truth, &c).unwrap();
    assert_eq!((e, b), (0, 32));
    // Negating a Gray-mapped QPSK point flips both bits.
    let flipped: Vec<C64> = truth.iter().map(|z| -z).collect();
    let (e, b) = ber_count(&flipped, &truth, &c).unwrap();
    assert_eq!((e, b), (32, 32));
    assert!(matches!(
        ber_count(&truth, &truth, &Constellation::gaussian()),
        Err(Error::Domain(_))
    ));
}

#[test]
fn ber_count_random_flip_rate_binomial() {
    let c = Constellation::qpsk();
    let n_sym = 500_000usize;
    let q = 0.02f64; // probability of a single-bit symbol flip
    let mut rng = trial_rng(19, 23, 0);
    let mut truth = Vec::with_capacity(n_sym);
    let mut est = Vec::with_capacity(n_sym);
    for _ in 0..n_sym {
        let idx = c.sample_index(&mut rng);
        truth.push(c.points[idx]);
        let out = if rng.gen::<f64>() < q {
            // Move to the point whose label differs in exactly one bit.
            let want = c.bit_labels[idx] ^ 1;
            let j = c.bit_labels.iter().position(|&l| l == want).unwrap();
            c.points[j]
        } else {
            c.points[idx]
        };
        est.push(out);
    }
    let (e, b) = ber_count(&est, &truth, &c).unwrap();
    assert_eq!(b, 2 * n_sym as u64);
    let mean = q * n_sym as f64;
    let sd = (n_sym as f64 * q * (1.0 - q)).sqrt();
    assert!(
        (e as f64 - mean).abs() < 3.0 * sd,
        "errors {e}, expected {mean} +- {sd}"
    );
}

#[test]
fn nld_input_error_uncorrelated_with_truth() {
    let n = 2048;
    let mut sv = vec![1.5f64.sqrt(); n / 2];
    sv.extend(vec![0.5f64.sqrt(); n / 2]);
    let op = synthetic_op(sv, 20);
    let c = Arc::new(Constellation::qpsk());
    let sys = make_instance(&op, &c, 0.2, 21);
    let cfg = DetectorConfig { max_iters: 2, stop_tol: 1e-30, ..DetectorConfig::default() };
    for trace in [cd_oamp_run(&sys, &cfg).unwrap(), {
        op.reset_flops();
        cd_mamp_run(&sys, &cfg).unwrap()
    }] {
        let truth = sys.truth.as_ref().unwrap();
        let mut corr = C64::new(0.0, 0.0);
        for (inp, s) in trace.nld_input_last.iter().zip(truth) {
            corr += (inp - s) * s.conj();
        }
        let stat = corr.norm() / n as f64;
        assert!(
            stat < 5.0 / (n as f64).sqrt(),
            "correlation {stat} vs bound {}",
            5.0 / (n as f64).sqrt()
        );
    }
}

#[test]
fn mamp_stochastic_moments_agree_with_exact() {
    let n = 256;
    let mut sv = vec![1.4f64.sqrt(); n / 2];
    sv.extend(vec![0.6f64.sqrt(); n / 2]);
    let exact_op = synthetic_op(sv.clone(), 22);
    let c = Arc::new(Constellation::qpsk());
    let sys = make_instance(&exact_op, &c, 0.15, 23);
    let exact = cd_mamp_run(&sys, &DetectorConfig::default()).unwrap();
    // Same operator without the singular form: moments come from probes.
    let xi = Arc::new(
        sample_transform(&KindSpec::PermFast { base: FastBase::Dft, phase: true }, n, 22)
            .unwrap(),
    );
    let blind = Arc::new(
        LinearOperator::new(vec![
            Stage::Transform(xi),
            Stage::DiagReal(Arc::new(sv)),
        ])
        .unwrap(),
    );
    let sys2 = SystemInstance {
        operator: blind,
        y: sys.y.clone(),
        sigma2: sys.sigma2,
        constellation: c,
        truth: sys.truth.clone(),
    };
    let stoch = cd_mamp_run(&sys2, &DetectorConfig::default()).unwrap();
    let ve = exact.final_v_phi().unwrap();
    let vs = stoch.final_v_phi().unwrap();
    assert!(
        vs > 0.5 * ve && vs < 2.0 * ve,
        "stochastic-moment fixed point {vs} far from exact {ve}"
    );
}

#[test]
fn empirical_variance_mode_converges_near_analytic() {
    let n = 512;
    let mut sv = vec![1.5f64.sqrt(); n / 2];
    sv.extend(vec![0.5f64.sqrt(); n / 2]);
    let op = synthetic_op(sv, 24);
    let c = Arc::new(Constellation::qpsk());
    let sys = make_instance(&op, &c, 0.5, 25);
    let analytic = cd_oamp_run(&sys, &DetectorConfig::default()).unwrap();
    op.reset_flops();
    let cfg = DetectorConfig { variance_mode: VarianceMode::Empirical, ..DetectorConfig::default() };
    let empirical = cd_oamp_run(&sys, &cfg).unwrap();
    let va = analytic.final_v_phi().unwrap();
    let ve = empirical.final_v_phi().unwrap();
    assert!(
        (va - ve).abs() < 0.5 * va.max(ve),
        "analytic {va} vs empirical {ve}"
    );
}

#[test]
fn detectors_validate_inputs() {
    let n = 16;
    // Operator without a singular form: CD-OAMP must refuse.
    let xi = Arc::new(sample_transform(&KindSpec::Identity, n, 0).unwrap());
    let op = Arc::new(LinearOperator::new(vec![Stage::Transform(xi)]).unwrap());
    let c = Arc::new(Constellation::qpsk());
    let sys = SystemInstance {
        operator: op,
        y: vec![C64::new(0.0, 0.0); n],
        sigma2: 0.1,
        constellation: c.clone(),
        truth: None,
    };
    assert!(matches!(cd_oamp_run(&sys, &DetectorConfig::default()), Err(Error::Size(_))));
    assert!(matches!(lmmse_detect(&sys), Err(Error::Size(_))));
    // Bad config values.
    let op2 = synthetic_op(vec![1.0; n], 1);
    let sys2 = make_instance(&op2, &c, 0.1, 2);
    let bad = DetectorConfig { max_iters: 0, ..DetectorConfig::default() };
    assert!(matches!(cd_oamp_run(&sys2, &bad), Err(Error::Config(_))));
    // Mismatched observation length.
    let sys3 = SystemInstance {
        operator: op2,
        y: vec![C64::new(0.0, 0.0); n - 1],
        sigma2: 0.1,
        constellation: c,
        truth: None,
    };
    assert!(matches!(cd_mamp_run(&sys3, &DetectorConfig::default()), Err(Error::Size(_))));
}
