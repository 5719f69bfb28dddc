//! Performance-limit engine: scalar state evolution, Stieltjes/R-transforms
//! over empirical spectra, replica MMSE/BER fixed points, and the two
//! constrained-capacity evaluations (fixed-point form and area form).
//!
//! All internal integrals are in natural-log units; public capacity values
//! are converted to bits at the boundary.

use ndarray::Array2;

use crate::channel::SpectralProfile;
use crate::constellation::{mmse_inverse, Constellation, TransferCurve};
use crate::util::adaptive_simpson;
use crate::{Error, Result, C64};

/// Log-grid size for the replica root scan.
const ROOT_SCAN_POINTS: usize = 400;
/// Geometric bracket expansions allowed when inverting the Stieltjes
/// transform.
const BRACKET_CAP: usize = 1000;

/// One state-evolution point of the LMMSE/denoiser recursion.
#[derive(Clone, Copy, Debug)]
pub struct SEState {
    /// Extrinsic denoiser output variance, in (0, 1].
    pub v_phi: f64,
    /// Effective scalar SNR delivered to the denoiser.
    pub rho_gamma: f64,
    pub iter: usize,
}

impl SEState {
    pub fn start() -> Self {
        Self { v_phi: 1.0, rho_gamma: 0.0, iter: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct ReplicaSolution {
    /// Predicted posterior MSE (largest fixed-point root reached from v=1).
    pub v_star: f64,
    /// mmse^{-1}(v_star).
    pub rho_star: f64,
    /// All fixed-point roots found by the scan, ascending.
    pub all_fixed_points: Vec<f64>,
    /// MAP-demodulation BER at rho_star (NaN for the Gaussian prior).
    pub ber_star: f64,
    /// Constrained capacity in bits per symbol (fixed-point form).
    pub capacity: f64,
}

impl ReplicaSolution {
    /// The fixed point is operationally meaningful only when unique.
    pub fn is_unique(&self) -> bool {
        self.all_fixed_points.len() == 1
    }
}

/// Eigenvalues sigma_i^2 * p_i of the effective Gram matrix (unscaled by
/// the noise variance). `p = None` means uniform unit power.
pub fn eigenvalues(profile: &SpectralProfile, p: Option<&[f64]>) -> Result<Vec<f64>> {
    let sv = &profile.singular_values;
    match p {
        None => Ok(sv.iter().map(|s| s * s).collect()),
        Some(p) => {
            if p.len() != sv.len() {
                return Err(Error::Size(format!(
                    "power vector length {} does not match profile length {}",
                    p.len(),
                    sv.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Domain("power entries must be finite and >= 0".into()));
            }
            Ok(sv.iter().zip(p).map(|(s, pi)| s * s * pi).collect())
        }
    }
}

fn check_v_sigma(v: f64, sigma2: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!("v must be positive and finite, got {v}")));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
    }
    Ok(())
}

/// SE transfer of the LMMSE stage: (1/N) sum_i (1/v + sigma_i^2 p_i / sigma^2)^{-1}.
pub fn gamma_hat_se(
    v: f64,
    p: Option<&[f64]>,
    profile: &SpectralProfile,
    sigma2: f64,
) -> Result<f64> {
    check_v_sigma(v, sigma2)?;
    let eigs = eigenvalues(profile, p)?;
    Ok(gamma_hat(v, &eigs, sigma2))
}

fn gamma_hat(v: f64, eigs: &[f64], sigma2: f64) -> f64 {
    let inv_v = 1.0 / v;
    eigs.iter().map(|l| 1.0 / (inv_v + l / sigma2)).sum::<f64>() / eigs.len() as f64
}

/// Dense-trace generalization (1/N) tr{(v^{-1} I + sigma^{-2} Sigma^H Q Sigma)^{-1}}
/// for a Hermitian PSD coupling matrix Q; with diagonal Q this reduces to
/// `gamma_hat_se`.
pub fn gamma_hat_dense_q(
    v: f64,
    q: &Array2<C64>,
    profile: &SpectralProfile,
    sigma2: f64,
) -> Result<f64> {
    check_v_sigma(v, sigma2)?;
    let n = profile.singular_values.len();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::Size("Q must be N x N".into()));
    }
    let sv = &profile.singular_values;
    let mut m = Array2::from_elem((n, n), C64::new(0.0, 0.0));
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = q[(i, j)] * (sv[i] * sv[j] / sigma2);
            if i == j {
                m[(i, j)] += 1.0 / v;
            }
        }
    }
    use faer::linalg::solvers::DenseSolveCore;
    let lu = crate::channel::to_faer(&m).partial_piv_lu();
    let inv = lu.inverse();
    let mut trace = 0.0;
    for i in 0..n {
        trace += inv[(i, i)].re;
    }
    Ok(trace / n as f64)
}

/// One SE step: rho = 1/gamma_hat - 1/v_phi, then the extrinsic update
/// v_phi' = (1/mmse(rho) - rho)^{-1}.
pub fn se_oamp_iterate(
    state: &SEState,
    p: Option<&[f64]>,
    profile: &SpectralProfile,
    sigma2: f64,
    mmse_curve: &TransferCurve,
) -> Result<SEState> {
    check_v_sigma(state.v_phi, sigma2)?;
    let eigs = eigenvalues(profile, p)?;
    // rho = 1/gamma_hat - 1/v, written as a ratio of positive sums so no
    // cancellation occurs when 1/v dominates.
    let u = 1.0 / state.v_phi;
    let n = eigs.len() as f64;
    let den: f64 = eigs.iter().map(|l| 1.0 / (u + l / sigma2)).sum::<f64>() / n;
    let num: f64 = eigs
        .iter()
        .map(|l| (l / sigma2) / (u + l / sigma2))
        .sum::<f64>()
        / n;
    let rho = (num / den).max(0.0);
    let m = mmse_curve.eval(rho).clamp(1e-300, 1.0);
    let denom = 1.0 / m - rho;
    if denom <= 0.0 {
        return Err(Error::Solver(format!(
            "extrinsic variance update lost positivity at rho = {rho}"
        )));
    }
    Ok(SEState {
        v_phi: (1.0 / denom).min(1.0),
        rho_gamma: rho,
        iter: state.iter + 1,
    })
}

/// Iterate SE from v_phi = 1 to its fixed point. Returns the final state and
/// the posterior MSE mmse(rho_gamma) it predicts.
pub fn se_fixed_point(
    p: Option<&[f64]>,
    profile: &SpectralProfile,
    sigma2: f64,
    mmse_curve: &TransferCurve,
) -> Result<(SEState, f64)> {
    let mut state = SEState::start();
    for _ in 0..10_000 {
        let next = se_oamp_iterate(&state, p, profile, sigma2, mmse_curve)?;
        let done = (next.v_phi - state.v_phi).abs() < 1e-13
            && (next.rho_gamma - state.rho_gamma).abs()
                < 1e-13 * (1.0 + next.rho_gamma);
        state = next;
        if done {
            return Ok((state, mmse_curve.eval(state.rho_gamma)));
        }
    }
    Err(Error::Solver(
        "state evolution did not converge within 10^4 iterations".into(),
    ))
}

/// Stieltjes transform (1/N) sum_i 1/(lambda_i - w) of an eigenvalue list,
/// for real w outside the spectral support.
pub fn stieltjes(w: f64, eigs: &[f64]) -> Result<f64> {
    if eigs.is_empty() {
        return Err(Error::Size("empty spectrum".into()));
    }
    let lo = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if w >= lo && w <= hi {
        return Err(Error::Domain(format!(
            "w = {w} lies inside the spectral support [{lo}, {hi}]"
        )));
    }
    Ok(eigs.iter().map(|l| 1.0 / (l - w)).sum::<f64>() / eigs.len() as f64)
}

/// Evaluate the R-transform at a negative argument: returns R(-z) for z > 0,
/// computed as S^{-1}(z) + 1/z by monotone bisection of the Stieltjes
/// transform on w < lambda_min. At z = 0 the limit tr{R}/N is returned.
pub fn r_transform(z: f64, eigs: &[f64]) -> Result<f64> {
    if eigs.is_empty() {
        return Err(Error::Size("empty spectrum".into()));
    }
    if !z.is_finite() || z < 0.0 {
        return Err(Error::Domain(format!("R-transform argument must be >= 0, got {z}")));
    }
    let n = eigs.len() as f64;
    if z < 1e-300 {
        return Ok(eigs.iter().sum::<f64>() / n);
    }
    let lam_min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let lam_max = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lam_max == lam_min {
        // Point mass at lambda: S(w) = 1/(lambda - w) inverts in closed form
        // and R(-z) = lambda exactly.
        return Ok(lam_min);
    }
    // Solve S(w) = z for w < lam_min, but parameterized by the final answer
    // u = w + 1/z to avoid the w / 1/z cancellation at small z: the map
    // g(u) = (1/N) sum 1/(lam_i - u + 1/z) increases in u with a pole at
    // lam_min + 1/z, and every denominator stays a sum of positives.
    let inv_z = 1.0 / z;
    let g = |u: f64| eigs.iter().map(|l| 1.0 / (l - u + inv_z)).sum::<f64>() / n;
    // g(lam_min - 1) <= 1/(1 + 1/z) = z/(1+z) < z, so this always brackets
    // from below.
    let mut u_lo = lam_min - 1.0;
    // Approach the pole geometrically until g >= z.
    let mut gap = 1.0;
    let mut u_hi = lam_min + inv_z - gap;
    let mut expansions = 0;
    while g(u_hi) < z {
        gap *= 0.5;
        u_hi = lam_min + inv_z - gap;
        expansions += 1;
        if expansions > BRACKET_CAP {
            return Err(Error::Domain(format!(
                "Stieltjes inversion bracket failed near lambda_min = {lam_min} at z = {z}"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (u_lo + u_hi);
        if g(mid) < z {
            u_lo = mid;
        } else {
            u_hi = mid;
        }
        if (u_hi - u_lo).abs() <= 1e-15 * (1.0 + u_hi.abs()) {
            break;
        }
    }
    Ok(0.5 * (u_lo + u_hi))
}

/// SISO constrained capacity in bits: integral of the MMSE curve up to snr,
/// converted from nats.
pub fn c_siso(snr: f64, mmse_curve: &TransferCurve) -> Result<f64> {
    if !snr.is_finite() || snr < 0.0 {
        return Err(Error::Domain(format!("snr must be >= 0, got {snr}")));
    }
    Ok(mmse_curve.integral(0.0, snr) / std::f64::consts::LN_2)
}

/// Variational transfer function of the linear stage:
/// eta_SE(v, p) = 1/v - 1/vtilde where gamma_hat(vtilde) = v. Equals the
/// R-transform of the noise-scaled spectrum evaluated at -v.
pub fn eta_se(
    v: f64,
    p: Option<&[f64]>,
    profile: &SpectralProfile,
    sigma2: f64,
) -> Result<f64> {
    check_v_sigma(v, sigma2)?;
    let eigs: Vec<f64> = eigenvalues(profile, p)?
        .into_iter()
        .map(|l| l / sigma2)
        .collect();
    r_transform(v, &eigs)
}

/// Replica fixed-point solution with the fixed-point-form capacity.
pub fn replica_solve(
    profile: &SpectralProfile,
    p: Option<&[f64]>,
    sigma2: f64,
    constellation: &Constellation,
) -> Result<ReplicaSolution> {
    check_v_sigma(1.0, sigma2)?;
    let curve = constellation.mmse_table();
    let eigs = eigenvalues(profile, p)?;
    let scaled: Vec<f64> = eigs.iter().map(|l| l / sigma2).collect();
    // f(v) = mmse^{-1}(v) - R_scaled(-v): positive at small v, negative near
    // the first fixed point approached from v = 1.
    let f = |v: f64| -> Result<f64> {
        Ok(mmse_inverse(v, &curve)? - r_transform(v, &scaled)?)
    };
    let (v_lo, v_hi) = (1e-8f64, 1.0f64);
    let ratio = (v_hi / v_lo).powf(1.0 / (ROOT_SCAN_POINTS - 1) as f64);
    let mut roots = Vec::new();
    let mut prev_v = v_lo;
    let mut prev_f = f(prev_v)?;
    for i in 1..ROOT_SCAN_POINTS {
        let v = v_lo * ratio.powi(i as i32);
        let fv = f(v)?;
        if prev_f == 0.0 {
            roots.push(prev_v);
        } else if prev_f * fv < 0.0 {
            // Refine by bisection to 1e-10 relative.
            let (mut a, mut b) = (prev_v, v);
            let mut fa = prev_f;
            for _ in 0..100 {
                let m = (a * b).sqrt();
                let fm = f(m)?;
                if fa * fm <= 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
                if (b - a) <= 1e-10 * b {
                    break;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev_v = v;
        prev_f = fv;
    }
    let v_star = *roots.last().ok_or_else(|| {
        Error::Solver("no replica fixed point found on the scan grid".into())
    })?;
    let rho_star = mmse_inverse(v_star, &curve)?;
    let ber_star = match constellation.map_demod_ber(rho_star) {
        Ok(b) => b,
        Err(_) => f64::NAN,
    };
    // Fixed-point-form capacity (nats, then bits):
    // integral of R(-z) on [0, v*/sigma^2] + C_SISO(rho*) - rho* v*.
    let upper = v_star / sigma2;
    let head = if upper > 0.0 {
        adaptive_simpson(
            &|z| r_transform(z, &eigs).unwrap_or(f64::NAN),
            0.0,
            upper,
            1e-8,
        )
    } else {
        0.0
    };
    let nats = head + curve.integral(0.0, rho_star) - rho_star * v_star;
    Ok(ReplicaSolution {
        v_star,
        rho_star,
        all_fixed_points: roots,
        ber_star,
        capacity: nats / std::f64::consts::LN_2,
    })
}

/// Area-form constrained capacity in bits:
/// integral over v of min{eta_SE(v,p), mmse^{-1}(v)} with the small-v tail
/// replaced by the rectangle v_low * g(v_low).
pub fn c_mimo_area(
    p: Option<&[f64]>,
    profile: &SpectralProfile,
    sigma2: f64,
    mmse_curve: &TransferCurve,
) -> Result<f64> {
    c_mimo_area_with(p, profile, sigma2, mmse_curve, 1e-4, 2000)
}

/// Area-form capacity with explicit v_low and node count.
pub fn c_mimo_area_with(
    p: Option<&[f64]>,
    profile: &SpectralProfile,
    sigma2: f64,
    mmse_curve: &TransferCurve,
    v_low: f64,
    nodes: usize,
) -> Result<f64> {
    if !(v_low > 0.0 && v_low < 1.0) {
        return Err(Error::Config("v_low must lie in (0, 1)".into()));
    }
    if nodes < 8 {
        return Err(Error::Config("need at least 8 quadrature nodes".into()));
    }
    let eigs: Vec<f64> = eigenvalues(profile, p)?
        .into_iter()
        .map(|l| l / sigma2)
        .collect();
    if eigs.iter().all(|l| *l == 0.0) {
        return Ok(0.0);
    }
    let g = |v: f64| -> Result<f64> {
        let eta = r_transform(v, &eigs)?;
        let inv = mmse_inverse(v, mmse_curve)?;
        Ok(eta.min(inv))
    };
    // Trapezoid rule on a log-spaced grid over [v_low, 1].
    let ratio = (1.0 / v_low).powf(1.0 / (nodes - 1) as f64);
    let mut prev_v = v_low;
    let mut prev_g = g(prev_v)?;
    let mut nats = v_low * prev_g; // rectangular tail correction
    for i in 1..nodes {
        let v = if i + 1 == nodes { 1.0 } else { v_low * ratio.powi(i as i32) };
        let gv = g(v)?;
        nats += 0.5 * (prev_g + gv) * (v - prev_v);
        prev_v = v;
        prev_g = gv;
    }
    Ok(nats / std::f64::consts::LN_2)
}
