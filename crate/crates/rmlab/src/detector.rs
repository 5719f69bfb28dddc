//! Iterative signal recovery.
//!
//! Two detectors share the LD/NLD split:
//!
//! * CD-OAMP/VAMP: per iteration an exact LMMSE linear stage evaluated
//!   through the operator's singular form `A = U diag(sigma) W`, followed by
//!   a divergence-free MMSE demodulator.
//! * CD-MAMP: a memory matched filter `r_t = B_t r_{t-1} + xi_t (y - A x_t)`
//!   with `B_t = theta (lambda_dagger I - A A^H)`, using only fast operator
//!   applies. Orthogonalization coefficients come from spectral moments, the
//!   relaxation weights `xi_t` minimize the predicted linear-stage variance,
//!   and inputs are damped over a sliding window with variance-optimal
//!   weights.
//!
//! Coefficient conventions used here (the orthogonality construction):
//! with `h_{t,i}(lambda) = [theta (lambda_dagger - lambda)]^{t-i}` the linear
//! stage is `x_t^out = (1/eps_t)(A^H r_t + sum_i xi_i w_{t,i} x_i^in)` where
//! `w_{t,i} = (1/N) tr{A A^H h_{t,i}(A A^H)}` and `eps_t = sum_i xi_i w_{t,i}`;
//! these choices enforce `tr{Q_t A}/N = 1` and `tr{P_{t,i}} = 0` exactly.
//! Cross-covariances of the nonlinear-stage errors are approximated by
//! `v_{i,j} = v_{max(i,j)}` (posterior errors are nearly orthogonal to
//! earlier, noisier estimates), which closes the variance recursion without
//! extra empirical averages.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::operator::LinearOperator;
use crate::util::{matvec_adj, trial_rng};
use crate::{Error, Result, C64};

/// How the nonlinear-stage MSE entering the orthogonalization is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// Expectation form: MSE read from the scalar MMSE table (default).
    AnalyticSe,
    /// Sample form: mean per-symbol posterior variance of the demodulator.
    Empirical,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub max_iters: usize,
    pub damping_window: usize,
    pub stop_tol: f64,
    pub variance_mode: VarianceMode,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            max_iters: 64,
            damping_window: 3,
            stop_tol: 1e-6,
            variance_mode: VarianceMode::AnalyticSe,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if self.damping_window == 0 {
            return Err(Error::Config("damping_window must be >= 1".into()));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::Config("stop_tol must be > 0".into()));
        }
        Ok(())
    }
}

/// One detection problem: `y = A s + n`, `n ~ CN(0, sigma2 I)`.
pub struct SystemInstance {
    pub operator: Arc<LinearOperator>,
    pub y: Vec<C64>,
    pub sigma2: f64,
    pub constellation: Arc<Constellation>,
    pub truth: Option<Vec<C64>>,
}

impl SystemInstance {
    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.operator.output_dim() {
            return Err(Error::Size(format!(
                "y length {} does not match operator output {}",
                self.y.len(),
                self.operator.output_dim()
            )));
        }
        if let Some(t) = &self.truth {
            if t.len() != self.operator.input_dim() {
                return Err(Error::Size("truth length does not match operator input".into()));
            }
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Domain("sigma2 must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iter: usize,
    pub v_gamma: f64,
    pub v_phi: f64,
    /// Hard-decision BER of the posterior mean against the truth, when known.
    pub ber_if_truth: Option<f64>,
    /// Empirical posterior MSE (1/N)||phi_hat - s||^2 against the truth.
    pub mse_if_truth: Option<f64>,
    /// Empirical extrinsic MSE (1/N)||s_out - s||^2 (compare with v_phi).
    pub mse_ext_if_truth: Option<f64>,
    /// Cumulative operator complex-MAC count after this iteration.
    pub flops: u64,
}

/// Coefficients recorded for the orthogonality audit.
#[derive(Clone, Debug)]
pub enum AuditData {
    /// Per-iteration regularizers lambda_t = sigma^2 / v_t^phi.
    Oamp { lambdas: Vec<f64> },
    Mamp {
        theta: f64,
        lambda_dagger: f64,
        xis: Vec<f64>,
        eps_gamma: Vec<f64>,
        /// p_coeffs[t-1][i-1] = p_{t,i} = -xi_i w_{t,i}.
        p_coeffs: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, Default)]
pub struct DetectorTrace {
    pub iterations: Vec<IterationRecord>,
    /// Final posterior-mean estimate of s.
    pub s_hat: Vec<C64>,
    /// Input of the last nonlinear stage (diagnostic for Gaussianity checks).
    pub nld_input_last: Vec<C64>,
    pub audit: Option<AuditData>,
}

impl DetectorTrace {
    pub fn final_v_phi(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.v_phi)
    }

    pub fn final_v_gamma(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.v_gamma)
    }
}

/// Count bit errors of a hard nearest-point demap against the truth.
pub fn ber_count(s_hat: &[C64], truth: &[C64], c: &Constellation) -> Result<(u64, u64)> {
    if c.is_gaussian() {
        return Err(Error::Domain("BER counting requires a discrete constellation".into()));
    }
    if s_hat.len() != truth.len() {
        return Err(Error::Size("estimate and truth lengths differ".into()));
    }
    let bits = c.bits_per_symbol as u64;
    let mut errors = 0u64;
    for (est, tru) in s_hat.iter().zip(truth) {
        let a = c.bit_labels[c.nearest_point(*est)];
        let b = c.bit_labels[c.nearest_point(*tru)];
        errors += (a ^ b).count_ones() as u64;
    }
    Ok((errors, bits * s_hat.len() as u64))
}

fn ber_fraction(s_hat: &[C64], sys: &SystemInstance) -> Option<f64> {
    match (&sys.truth, sys.constellation.is_gaussian()) {
        (Some(truth), false) => ber_count(s_hat, truth, &sys.constellation)
            .ok()
            .map(|(e, b)| e as f64 / b as f64),
        _ => None,
    }
}

fn mse_fraction(est: &[C64], sys: &SystemInstance) -> Option<f64> {
    sys.truth.as_ref().map(|truth| {
        est.iter()
            .zip(truth)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / est.len() as f64
    })
}

fn rotate_observation(
    form: &crate::operator::SvdForm,
    y: &[C64],
) -> Vec<C64> {
    match &form.left_u {
        Some(u) => matvec_adj(u, y),
        None => y.to_vec(),
    }
}

/// One-shot LMMSE baseline with unit prior variance: returns the estimate of
/// s and the average posterior variance (1/N) tr{(I + sigma^{-2} A^H A)^{-1}}.
pub fn lmmse_detect(sys: &SystemInstance) -> Result<(Vec<C64>, f64)> {
    sys.validate()?;
    let op = &sys.operator;
    let form = op.svd_form.as_ref().ok_or_else(|| {
        Error::Size("LMMSE detection needs the operator's singular form".into())
    })?;
    let n = op.input_dim();
    let m = op.output_dim();
    let r = n.min(m);
    let y_rot = rotate_observation(form, &sys.y);
    let mut d = vec![C64::new(0.0, 0.0); n];
    for i in 0..r {
        let s = form.sigma[i];
        d[i] = y_rot[i] * (s / (sys.sigma2 + s * s));
    }
    let s_hat = form.w.adjoint_apply(&d)?;
    let v = form
        .sigma
        .iter()
        .map(|s| 1.0 / (1.0 + s * s / sys.sigma2))
        .sum::<f64>()
        / n as f64;
    Ok((s_hat, v))
}

/// Shared nonlinear stage: divergence-free MMSE demodulation of
/// `s_in = s + sqrt(v_gamma) z`. Returns (posterior means, extrinsic output,
/// eps_phi, v_phi_next).
#[allow(clippy::type_complexity)]
fn nld_step(
    sys: &SystemInstance,
    cfg: &DetectorConfig,
    s_in: &[C64],
    v_gamma: f64,
) -> Result<(Vec<C64>, Vec<C64>, f64, f64)> {
    let c = &sys.constellation;
    let n = s_in.len();
    let mut phi_hat = vec![C64::new(0.0, 0.0); n];
    let mmse = match cfg.variance_mode {
        VarianceMode::AnalyticSe => {
            for (out, z) in phi_hat.iter_mut().zip(s_in) {
                *out = c.denoise(*z, v_gamma);
            }
            c.mmse_table().eval(1.0 / v_gamma)
        }
        VarianceMode::Empirical => {
            let mut acc = 0.0;
            for (out, z) in phi_hat.iter_mut().zip(s_in) {
                let (mean, var) = c.denoise_with_var(*z, v_gamma);
                *out = mean;
                acc += var;
            }
            acc / n as f64
        }
    };
    let mmse = mmse.clamp(1e-300, 1.0);
    let eps_phi = (1.0 - mmse / v_gamma).max(1e-12);
    let mut s_out = vec![C64::new(0.0, 0.0); n];
    for i in 0..n {
        s_out[i] = (phi_hat[i] + s_in[i] * (eps_phi - 1.0)) / eps_phi;
    }
    let v_next = v_gamma * (1.0 / eps_phi - 1.0);
    if !v_next.is_finite() || v_next < 0.0 {
        return Err(Error::Solver(format!(
            "nonlinear stage produced invalid variance {v_next}"
        )));
    }
    let v_next = v_next.clamp(1e-15, 1.0);
    Ok((phi_hat, s_out, eps_phi, v_next))
}

/// CD-OAMP/VAMP: exact LMMSE linear stage through the singular form.
pub fn cd_oamp_run(sys: &SystemInstance, cfg: &DetectorConfig) -> Result<DetectorTrace> {
    sys.validate()?;
    cfg.validate()?;
    let op = &sys.operator;
    let form = op.svd_form.as_ref().ok_or_else(|| {
        Error::Size("CD-OAMP needs the operator's singular form (dense SVD)".into())
    })?;
    let n = op.input_dim();
    let m = op.output_dim();
    let r = n.min(m);
    let y_rot = rotate_observation(form, &sys.y);
    let sig = &form.sigma;
    let sig_sq_sum: f64 = sig.iter().map(|s| s * s).sum();

    let mut trace = DetectorTrace::default();
    let mut lambdas = Vec::new();
    let mut s_in = vec![C64::new(0.0, 0.0); n];
    let mut v_phi = 1.0f64;
    let mut blowups = 0usize;

    let diverged = |msg: String, mut trace: DetectorTrace, audit: Vec<f64>| {
        trace.audit = Some(AuditData::Oamp { lambdas: audit });
        Error::Divergence { message: msg, trace: Box::new(trace) }
    };

    for t in 1..=cfg.max_iters {
        // LD: gamma_hat = A^H [(sigma^2/v) I + A A^H]^{-1} (y - A s_in).
        let lam = sys.sigma2 / v_phi;
        lambdas.push(lam);
        let eps_g = sig.iter().map(|s| s * s / (lam + s * s)).sum::<f64>() / n as f64;
        if !(eps_g > 0.0) || eps_g >= 1.0 {
            return Err(diverged(
                format!("LD orthogonalization parameter out of range: {eps_g}"),
                trace, lambdas,
            ));
        }
        let z = form.w.apply(&s_in)?;
        let mut d = vec![C64::new(0.0, 0.0); n];
        for i in 0..r {
            d[i] = (y_rot[i] - z[i] * sig[i]) * (sig[i] / (lam + sig[i] * sig[i]));
        }
        let gamma_hat = form.w.adjoint_apply(&d)?;
        let mut s_ld = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            s_ld[i] = s_in[i] + gamma_hat[i] / eps_g;
        }
        let mut v_gamma = v_phi * (1.0 / eps_g - 1.0);
        if cfg.variance_mode == VarianceMode::Empirical && sig_sq_sum > 0.0 {
            // Residual-power estimate of the LD output variance.
            let zl = form.w.apply(&s_ld)?;
            let mut res = 0.0;
            for i in 0..m {
                let pred = if i < r { zl[i] * sig[i] } else { C64::new(0.0, 0.0) };
                res += (y_rot[i] - pred).norm_sqr();
            }
            let est = (res - m as f64 * sys.sigma2) / sig_sq_sum;
            if est.is_finite() && est > 0.0 {
                v_gamma = est;
            }
        }
        if !v_gamma.is_finite() || v_gamma <= 0.0 {
            return Err(diverged(
                format!("LD variance became invalid: {v_gamma}"),
                trace, lambdas,
            ));
        }

        // NLD.
        let (phi_hat, s_out, _eps_phi, v_next) = match nld_step(sys, cfg, &s_ld, v_gamma) {
            Ok(x) => x,
            Err(Error::Solver(msg)) => return Err(diverged(msg, trace, lambdas)),
            Err(e) => return Err(e),
        };
        trace.iterations.push(IterationRecord {
            iter: t,
            v_gamma,
            v_phi: v_next,
            ber_if_truth: ber_fraction(&phi_hat, sys),
            mse_if_truth: mse_fraction(&phi_hat, sys),
            mse_ext_if_truth: mse_fraction(&s_out, sys),
            flops: op.flops_used() + form.w.flops_used(),
        });
        trace.s_hat = phi_hat;
        trace.nld_input_last = s_ld;

        if v_next > 10.0 * v_phi {
            blowups += 1;
            if blowups >= 3 {
                return Err(diverged(
                    format!("variance increased tenfold for 3 consecutive iterations (v = {v_next})"),
                    trace, lambdas,
                ));
            }
        } else {
            blowups = 0;
        }
        let done = (v_next - v_phi).abs() <= cfg.stop_tol * v_next;
        s_in = s_out;
        v_phi = v_next;
        if done {
            break;
        }
    }
    trace.audit = Some(AuditData::Oamp { lambdas });
    Ok(trace)
}

/// Spectral summaries driving the CD-MAMP coefficients, pre-scaled by the
/// contraction rate theta = 1/lambda_dagger so all powers stay bounded:
/// mu[j] = (1/N) tr{A A^H [theta (lambda_dagger I - A A^H)]^j} and
/// nu[j] = (1/N) tr{(A A^H)^2 [theta (lambda_dagger I - A A^H)]^j}.
struct SpectralMoments {
    lambda_min: f64,
    lambda_max: f64,
    mu: Vec<f64>,
    nu: Vec<f64>,
}

fn exact_moments(op: &LinearOperator, order: usize) -> Option<SpectralMoments> {
    let form = op.svd_form.as_ref()?;
    let m = op.output_dim();
    let n = op.input_dim();
    let r = n.min(m);
    // Eigenvalues of A A^H: sigma_i^2 plus M - r explicit zeros.
    let mut eigs: Vec<f64> = form.sigma.iter().take(r).map(|s| s * s).collect();
    eigs.resize(m, 0.0);
    let lambda_max = eigs.iter().cloned().fold(0.0, f64::max);
    let lambda_min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let lam_d = 0.5 * (lambda_max + lambda_min);
    if !(lam_d > 0.0) {
        return None;
    }
    let theta = 1.0 / lam_d;
    let mut mu = vec![0.0; order + 1];
    let mut nu = vec![0.0; order + 1];
    for &l in &eigs {
        let mut pow = 1.0;
        for j in 0..=order {
            mu[j] += l * pow;
            nu[j] += l * l * pow;
            pow *= theta * (lam_d - l);
        }
    }
    let nf = n as f64;
    mu.iter_mut().for_each(|v| *v /= nf);
    nu.iter_mut().for_each(|v| *v /= nf);
    Some(SpectralMoments { lambda_min, lambda_max, mu, nu })
}

fn stochastic_moments(op: &LinearOperator, order: usize) -> Result<SpectralMoments> {
    let m = op.output_dim();
    let n = op.input_dim();
    // Largest eigenvalue of A A^H by power iteration.
    let mut rng = trial_rng(0x4D41_4D50, 0, 0);
    let dist = rand_distr::StandardNormal;
    let mut v: Vec<C64> = (0..m)
        .map(|_| C64::new(rng.sample(dist), rng.sample(dist)))
        .collect();
    let mut lambda_max = 0.0;
    for _ in 0..100 {
        let w = op.gram_apply(&v)?;
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Solver("operator is the zero map".into()));
        }
        lambda_max = norm
            / v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v = w.into_iter().map(|z| z / norm).collect();
    }
    // Safety margin; lambda_min taken as 0 (conservative contraction).
    let lambda_max = lambda_max * 1.05;
    let lambda_min = 0.0;
    let lam_d = 0.5 * (lambda_max + lambda_min);
    let theta = 1.0 / lam_d;
    let probes = 16usize;
    let mut mu = vec![0.0; order + 1];
    let mut nu = vec![0.0; order + 1];
    for probe in 0..probes {
        let mut rng = trial_rng(0x4D41_4D50, 1, probe as u64);
        let z: Vec<C64> = (0..m)
            .map(|_| {
                C64::new(
                    rng.sample::<f64, _>(dist) * std::f64::consts::FRAC_1_SQRT_2,
                    rng.sample::<f64, _>(dist) * std::f64::consts::FRAC_1_SQRT_2,
                )
            })
            .collect();
        let mut q = z.clone();
        for j in 0..=order {
            let g = op.gram_apply(&q)?;
            let g2 = op.gram_apply(&g)?;
            let dot = |a: &[C64], b: &[C64]| -> f64 {
                a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum()
            };
            mu[j] += dot(&z, &g) / (probes as f64 * n as f64);
            nu[j] += dot(&z, &g2) / (probes as f64 * n as f64);
            for (qi, gi) in q.iter_mut().zip(&g) {
                *qi = (*qi * lam_d - gi) * theta;
            }
        }
    }
    Ok(SpectralMoments { lambda_min, lambda_max, mu, nu })
}

/// Solve the small symmetric system C zeta = 1 and normalize to sum 1.
/// Returns None when the system is numerically singular.
fn damping_weights(cov: &[Vec<f64>]) -> Option<(Vec<f64>, f64)> {
    let l = cov.len();
    let ridge = 1e-12
        * (cov.iter().enumerate().map(|(i, r)| r[i]).sum::<f64>() / l as f64).max(1e-300);
    let mut a: Vec<Vec<f64>> = cov
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r[i] += ridge;
            r.push(1.0); // RHS
            r
        })
        .collect();
    // Gaussian elimination with partial pivoting.
    for col in 0..l {
        let piv = (col..l).max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for row in 0..l {
            if row == col {
                continue;
            }
            let f = a[row][col] / a[col][col];
            for k in col..=l {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let raw: Vec<f64> = (0..l).map(|i| a[i][l] / a[i][i]).collect();
    let s: f64 = raw.iter().sum();
    if !s.is_finite() || s.abs() < 1e-300 {
        return None;
    }
    let zeta: Vec<f64> = raw.iter().map(|z| z / s).collect();
    // Post-damping variance zeta^T C zeta = 1 / (1^T C^{-1} 1) = 1/s up to
    // the ridge; compute it exactly from the quadratic form.
    let mut v = 0.0;
    for i in 0..l {
        for j in 0..l {
            v += zeta[i] * cov[i][j] * zeta[j];
        }
    }
    if !v.is_finite() || v < 0.0 {
        return None;
    }
    Some((zeta, v))
}

/// CD-MAMP: memory matched filter with orthogonalization from spectral
/// moments, variance-minimizing relaxation and sliding-window damping.
pub fn cd_mamp_run(sys: &SystemInstance, cfg: &DetectorConfig) -> Result<DetectorTrace> {
    sys.validate()?;
    cfg.validate()?;
    let op = &sys.operator;
    let n = op.input_dim();
    let m = op.output_dim();
    let order = 2 * cfg.max_iters;
    let moments = match exact_moments(op, order) {
        Some(mo) => mo,
        None => stochastic_moments(op, order)?,
    };
    let lam_d = 0.5 * (moments.lambda_max + moments.lambda_min);
    if !(lam_d > 0.0) {
        return Err(Error::Solver("operator spectrum is degenerate (lambda_dagger <= 0)".into()));
    }
    let theta = 1.0 / lam_d;
    // Moments arrive pre-scaled: tmu[j] = theta^j mu_j, tnu[j] = theta^j nu_j.
    let tmu = &moments.mu;
    let tnu = &moments.nu;

    let mut trace = DetectorTrace::default();
    let mut xis: Vec<f64> = Vec::new();
    let mut eps_list: Vec<f64> = Vec::new();
    let mut p_coeffs: Vec<Vec<f64>> = Vec::new();
    let diverged = |msg: String,
                    mut trace: DetectorTrace,
                    theta: f64,
                    lam_d: f64,
                    xis: Vec<f64>,
                    eps_list: Vec<f64>,
                    p_coeffs: Vec<Vec<f64>>| {
        trace.audit = Some(AuditData::Mamp {
            theta,
            lambda_dagger: lam_d,
            xis,
            eps_gamma: eps_list,
            p_coeffs,
        });
        Error::Divergence { message: msg, trace: Box::new(trace) }
    };

    // Inputs x_i^in with their error decomposition over the basis
    // {0: -s (unit variance, independent of demod errors),
    //  k >= 1: error of the k-th nonlinear-stage output}.
    let mut x_in: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); n]];
    let mut weights: Vec<Vec<f64>> = vec![vec![1.0]];
    let mut vphi_out: Vec<f64> = vec![]; // variance of demod error k (1-based)
    // Input-error covariance matrix V^in (grows by one row/col per input).
    let mut v_in: Vec<Vec<f64>> = vec![vec![1.0]];

    let kernel = |a: usize, b: usize, vphi_out: &[f64]| -> f64 {
        if a == 0 && b == 0 {
            1.0
        } else if a == 0 || b == 0 {
            0.0
        } else {
            vphi_out[a.max(b) - 1]
        }
    };
    let cov_of = |wa: &[f64], wb: &[f64], vphi_out: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (a, &xa) in wa.iter().enumerate() {
            if xa == 0.0 {
                continue;
            }
            for (b, &xb) in wb.iter().enumerate() {
                if xb == 0.0 {
                    continue;
                }
                acc += xa * xb * kernel(a, b, vphi_out);
            }
        }
        acc
    };

    let mut r_hat = vec![C64::new(0.0, 0.0); m];
    let mut v_phi_prev = 1.0f64;
    let mut blowups = 0usize;

    for t in 1..=cfg.max_iters {
        let ti = t - 1; // 0-based index of the newest input
        // w_{t,i} = theta^{t-i} mu_{t-i} for i = 1..t (0-based: tmu[t-i]).
        let w_t: Vec<f64> = (0..t).map(|i0| tmu[t - 1 - i0]).collect();
        // Relaxation xi_t minimizing the predicted v^gamma_{t,t}:
        // numerator a xi^2 + 2 b xi + c over (d xi + e)^2.
        let s2 = |i0: usize, j0: usize| tmu[(t - 1 - i0) + (t - 1 - j0)];
        let cprod = |i0: usize, j0: usize| {
            tnu[(t - 1 - i0) + (t - 1 - j0)] - w_t[i0] * w_t[j0]
        };
        let sigma2 = sys.sigma2;
        let a_co = sigma2 * s2(ti, ti) + v_in[ti][ti] * cprod(ti, ti);
        let mut b_co = 0.0;
        let mut c_co = 0.0;
        for i0 in 0..ti {
            b_co += xis[i0] * (sigma2 * s2(ti, i0) + v_in[ti][i0] * cprod(ti, i0));
            for j0 in 0..ti {
                c_co += xis[i0]
                    * xis[j0]
                    * (sigma2 * s2(i0, j0) + v_in[i0][j0] * cprod(i0, j0));
            }
        }
        let d_co = w_t[ti];
        let e_co: f64 = (0..ti).map(|i0| xis[i0] * w_t[i0]).sum();
        let objective = |xi: f64| {
            let num = a_co * xi * xi + 2.0 * b_co * xi + c_co;
            let den = d_co * xi + e_co;
            if den.abs() < 1e-300 {
                f64::INFINITY
            } else {
                num / (den * den)
            }
        };
        let denom = a_co * e_co - b_co * d_co;
        let mut xi_t = if denom.abs() > 1e-300 {
            (c_co * d_co - b_co * e_co) / denom
        } else {
            1.0
        };
        if !xi_t.is_finite() || objective(xi_t) > objective(1.0) {
            xi_t = 1.0;
        }
        let eps_t = d_co * xi_t + e_co;
        if !eps_t.is_finite() || eps_t.abs() < 1e-300 {
            return Err(diverged(
                format!("orthogonalization normalizer vanished (eps = {eps_t})"),
                trace, theta, lam_d, xis, eps_list, p_coeffs,
            ));
        }
        let v_gamma = objective(xi_t);
        if !v_gamma.is_finite() || v_gamma <= 0.0 {
            return Err(diverged(
                format!("linear-stage variance became invalid: {v_gamma}"),
                trace, theta, lam_d, xis, eps_list, p_coeffs,
            ));
        }
        xis.push(xi_t);
        eps_list.push(eps_t);
        p_coeffs.push((0..t).map(|i0| -xis[i0] * w_t[i0]).collect());

        // Memory matched filter update:
        // r_t = theta (lambda_dagger r_{t-1} - A A^H r_{t-1}) + xi_t (y - A x_t).
        let g = op.gram_apply(&r_hat)?;
        let ax = op.apply(&x_in[ti])?;
        for i in 0..m {
            r_hat[i] = (r_hat[i] * lam_d - g[i]) * theta + (sys.y[i] - ax[i]) * xi_t;
        }
        // MLD output: x_t^out = (1/eps)(A^H r_t + sum_i xi_i w_{t,i} x_i^in).
        let ar = op.adjoint_apply(&r_hat)?;
        let mut s_ld = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            let mut acc = ar[j];
            for i0 in 0..t {
                acc += x_in[i0][j] * (xis[i0] * w_t[i0]);
            }
            s_ld[j] = acc / eps_t;
        }

        // NLD (same as CD-OAMP's).
        let (phi_hat, s_out, _eps_phi, v_next) = match nld_step(sys, cfg, &s_ld, v_gamma) {
            Ok(x) => x,
            Err(Error::Solver(msg)) => {
                return Err(diverged(msg, trace, theta, lam_d, xis, eps_list, p_coeffs))
            }
            Err(e) => return Err(e),
        };
        vphi_out.push(v_next);
        trace.iterations.push(IterationRecord {
            iter: t,
            v_gamma,
            v_phi: v_next,
            ber_if_truth: ber_fraction(&phi_hat, sys),
            mse_if_truth: mse_fraction(&phi_hat, sys),
            mse_ext_if_truth: mse_fraction(&s_out, sys),
            flops: op.flops_used(),
        });
        trace.s_hat = phi_hat;
        trace.nld_input_last = s_ld;

        if v_next > 10.0 * v_phi_prev {
            blowups += 1;
            if blowups >= 3 {
                return Err(diverged(
                    format!(
                        "variance increased tenfold for 3 consecutive iterations (v = {v_next})"
                    ),
                    trace, theta, lam_d, xis, eps_list, p_coeffs,
                ));
            }
        } else {
            blowups = 0;
        }
        let done = (v_next - v_phi_prev).abs() <= cfg.stop_tol * v_next;
        v_phi_prev = v_next;
        if done {
            break;
        }

        // Damping over the sliding window (previous inputs + new candidate).
        let basis_len = vphi_out.len() + 1;
        let mut cand_weight = vec![0.0; basis_len];
        cand_weight[basis_len - 1] = 1.0;
        let window = cfg.damping_window.min(t + 1);
        let start = (t + 1) - window; // 0-based index of first window member
        let mut members: Vec<&[f64]> = Vec::with_capacity(window);
        for w in weights.iter().skip(start) {
            members.push(w);
        }
        members.push(&cand_weight);
        let mut cov = vec![vec![0.0; window]; window];
        for i in 0..window {
            for j in 0..window {
                cov[i][j] = cov_of(members[i], members[j], &vphi_out);
            }
        }
        let cand_var = cov[window - 1][window - 1];
        let zeta = match damping_weights(&cov) {
            Some((z, v)) if v <= cand_var + 1e-15 => Some(z),
            _ => None,
        };
        let (new_x, new_weight) = match zeta {
            Some(z) => {
                let mut nx = vec![C64::new(0.0, 0.0); n];
                let mut nw = vec![0.0; basis_len];
                for (k, &zk) in z.iter().enumerate() {
                    let (vecs, wts): (&[C64], &[f64]) = if k + 1 < window {
                        (&x_in[start + k], &weights[start + k])
                    } else {
                        (&s_out, &cand_weight)
                    };
                    for j in 0..n {
                        nx[j] += vecs[j] * zk;
                    }
                    for (b, &wb) in wts.iter().enumerate() {
                        nw[b] += zk * wb;
                    }
                }
                (nx, nw)
            }
            None => (s_out, cand_weight),
        };
        // Grow the input-covariance matrix with the damped entry.
        let mut new_row: Vec<f64> = Vec::with_capacity(x_in.len() + 1);
        for w in &weights {
            new_row.push(cov_of(w, &new_weight, &vphi_out));
        }
        new_row.push(cov_of(&new_weight, &new_weight, &vphi_out));
        for (i, row) in v_in.iter_mut().enumerate() {
            row.push(new_row[i]);
        }
        v_in.push(new_row);
        weights.push(new_weight);
        x_in.push(new_x);
    }

    trace.audit = Some(AuditData::Mamp {
        theta,
        lambda_dagger: lam_d,
        xis,
        eps_gamma: eps_list,
        p_coeffs,
    });
    Ok(trace)
}

#[derive(Clone, Debug)]
pub struct OrthogonalityReport {
    /// |tr{Q_t A}/N - 1| per iteration.
    pub q_residuals: Vec<f64>,
    /// max_i |tr{P_{t,i}}/N| per iteration.
    pub p_residuals: Vec<f64>,
}

impl OrthogonalityReport {
    pub fn max_residual(&self) -> f64 {
        self.q_residuals
            .iter()
            .chain(self.p_residuals.iter())
            .cloned()
            .fold(0.0, f64::max)
    }
}

/// Verify the trace constraints tr{Q_t A}/N = 1 and tr{P_{t,i}} = 0 against
/// an independently computed dense spectrum of A.
pub fn orthogonality_audit(
    trace: &DetectorTrace,
    a_dense: &Array2<C64>,
) -> Result<OrthogonalityReport> {
    let audit = trace
        .audit
        .as_ref()
        .ok_or_else(|| Error::Config("trace carries no audit data".into()))?;
    let n = a_dense.ncols();
    let m = a_dense.nrows();
    let f = crate::channel::svd_dense(a_dense)?;
    let mut eigs: Vec<f64> = f.sigma.iter().map(|s| s * s).collect();
    eigs.resize(m, 0.0);
    let nf = n as f64;
    let mut q_res = Vec::new();
    let mut p_res = Vec::new();
    match audit {
        AuditData::Oamp { lambdas } => {
            for &lam in lambdas {
                let eps: f64 = eigs.iter().map(|l| l / (lam + l)).sum::<f64>() / nf;
                // Q_t = (1/eps) A^H (lam I + A A^H)^{-1}; P_t = I - Q_t A.
                let tr_qa = eigs.iter().map(|l| l / (lam + l)).sum::<f64>() / (eps * nf);
                q_res.push((tr_qa - 1.0).abs());
                p_res.push((1.0 - tr_qa).abs());
            }
        }
        AuditData::Mamp { theta, lambda_dagger, xis, eps_gamma, p_coeffs } => {
            for (t0, (&eps, p_row)) in eps_gamma.iter().zip(p_coeffs).enumerate() {
                let t = t0 + 1;
                // tr{Q_t A}/N = (1/eps) sum_i xi_i (1/N) sum_n l_n h_{t,i}(l_n).
                let mut tr_qa = 0.0;
                let mut worst_p = 0.0f64;
                for i in 1..=t {
                    let pw = (t - i) as i32;
                    let trace_i: f64 = eigs
                        .iter()
                        .map(|l| l * (theta * (lambda_dagger - l)).powi(pw))
                        .sum::<f64>()
                        / nf;
                    tr_qa += xis[i - 1] * trace_i / eps;
                    // tr{P_{t,i}}/N = (1/eps)(-p_{t,i} stored as xi w) - same
                    // trace recomputed from the dense spectrum.
                    let res = ((-p_row[i - 1]) - xis[i - 1] * trace_i).abs() / eps.abs();
                    worst_p = worst_p.max(res);
                }
                q_res.push((tr_qa - 1.0).abs());
                p_res.push(worst_p);
            }
        }
    }
    Ok(OrthogonalityReport { q_residuals: q_res, p_residuals: p_res })
}
