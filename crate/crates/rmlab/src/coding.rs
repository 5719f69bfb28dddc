//! Coded-system transfer-curve analysis: error-free tunnel condition,
//! achievable rates, the optimal decoder curve and the cascaded
//! (detection-then-decoding) rate.
//!
//! Decoder curves are abstract transfer functions `phi(rho)` mapping the
//! detector-output SNR to the residual symbol-error variance of an ideal
//! a-posteriori decoder. No actual FEC decoding happens here; concrete code
//! constructions would plug in behind [`DecoderCurve`].

use crate::analysis;
use crate::channel::SpectralProfile;
use crate::constellation::{Extrapolation, TransferCurve};
use crate::{Error, Result};

/// Number of grid points used for curve construction and tunnel checks.
const GRID_POINTS: usize = 1000;
/// Cap on the inverse linear-stage transfer near `rho = 0`, where the exact
/// value diverges; decoder curves are bounded by 1, so any cap above that is
/// inert for feasibility checks.
const ETA_INV_CAP: f64 = 1e12;

/// An abstract decoder transfer function `phi(rho)` on `[0, rho_max]`.
#[derive(Clone, Debug)]
pub struct DecoderCurve {
    pub curve: TransferCurve,
    pub code_rate_tag: String,
}

impl DecoderCurve {
    /// Wraps a sampled transfer curve after validating the decoder-curve
    /// invariants: ordinates in `[0, 1]` and non-increasing.
    pub fn new(curve: TransferCurve, code_rate_tag: impl Into<String>) -> Result<Self> {
        if curve.ordinates.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::Config(
                "decoder curve ordinates must lie in [0, 1]".into(),
            ));
        }
        if curve.ordinates.windows(2).any(|w| w[1] > w[0] + 1e-12) {
            return Err(Error::Config("decoder curve must be non-increasing".into()));
        }
        Ok(DecoderCurve {
            curve,
            code_rate_tag: code_rate_tag.into(),
        })
    }

    /// The genie decoder: zero residual error at every SNR.
    pub fn genie(rho_max: f64) -> Result<Self> {
        if !(rho_max > 0.0) || !rho_max.is_finite() {
            return Err(Error::Domain(format!("rho_max must be positive, got {rho_max}")));
        }
        let curve = TransferCurve::new(
            vec![0.0, rho_max],
            vec![0.0, 0.0],
            Extrapolation::Clamp,
        )?;
        DecoderCurve::new(curve, "genie")
    }

    /// The uncoded decoder: the constellation MMSE curve resampled onto
    /// `[0, rho_max]`.
    pub fn uncoded(mmse_curve: &TransferCurve, rho_max: f64) -> Result<Self> {
        if !(rho_max > 0.0) || !rho_max.is_finite() {
            return Err(Error::Domain(format!("rho_max must be positive, got {rho_max}")));
        }
        let xs: Vec<f64> = (0..GRID_POINTS)
            .map(|k| rho_max * k as f64 / (GRID_POINTS - 1) as f64)
            .collect();
        let ys: Vec<f64> = xs.iter().map(|&r| mmse_curve.eval(r).clamp(0.0, 1.0)).collect();
        let curve = TransferCurve::new(xs, ys, Extrapolation::Asymptotic)?;
        DecoderCurve::new(curve, "uncoded")
    }

    /// Scales the curve ordinates by `factor` in `[0, 1]` (a uniform
    /// back-off used to carve out a tunnel margin).
    pub fn backoff(&self, factor: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&factor) {
            return Err(Error::Domain(format!("back-off factor must be in [0, 1], got {factor}")));
        }
        let ys: Vec<f64> = self.curve.ordinates.iter().map(|y| y * factor).collect();
        let curve = TransferCurve::new(self.curve.abscissae.clone(), ys, self.curve.extrapolation)?;
        DecoderCurve::new(curve, format!("{}*{}", self.code_rate_tag, factor))
    }

    /// Parses a decoder curve from CSV text with header `rho,phi` and one
    /// `rho,phi` pair per subsequent line.
    pub fn from_csv(text: &str, code_rate_tag: impl Into<String>) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty decoder curve file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["rho", "phi"] {
            return Err(Error::Config(format!(
                "decoder curve header must be 'rho,phi', got '{header}'"
            )));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.map(str::trim)
                    .ok_or_else(|| Error::Config(format!("line {}: missing field", idx + 2)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("line {}: {e}", idx + 2)))
            };
            let rho = parse(parts.next())?;
            let phi = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(Error::Config(format!("line {}: too many fields", idx + 2)));
            }
            if !rho.is_finite() || rho < 0.0 {
                return Err(Error::Config(format!("line {}: rho must be finite and >= 0", idx + 2)));
            }
            if !phi.is_finite() {
                return Err(Error::Config(format!("line {}: phi must be finite", idx + 2)));
            }
            xs.push(rho);
            ys.push(phi);
        }
        let curve = TransferCurve::new(xs, ys, Extrapolation::Clamp)?;
        DecoderCurve::new(curve, code_rate_tag)
    }

    /// Serializes the sampled curve back to the `rho,phi` CSV format.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rho,phi\n");
        for (x, y) in self.curve.abscissae.iter().zip(&self.curve.ordinates) {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

/// Maximum detector-output SNR of the linear stage: the `v -> 0` limit of
/// its variational transfer, i.e. the mean noise-scaled eigenvalue.
pub fn rho_ceiling(p: Option<&[f64]>, profile: &SpectralProfile, sigma2: f64) -> Result<f64> {
    analysis::eta_se(1e-301, p, profile, sigma2)
}

/// Inverse of the linear-stage variational transfer: the variance `v` with
/// `eta_SE(v, p) = rho`, found by monotone bisection. Values diverge as
/// `rho -> 0`; the result is capped at a level far above any decoder curve.
pub fn eta_se_inverse(
    rho: f64,
    p: Option<&[f64]>,
    profile: &SpectralProfile,
    sigma2: f64,
) -> Result<f64> {
    if !rho.is_finite() || rho < 0.0 {
        return Err(Error::Domain(format!("rho must be finite and >= 0, got {rho}")));
    }
    let eigs: Vec<f64> = analysis::eigenvalues(profile, p)?
        .into_iter()
        .map(|l| l / sigma2)
        .collect();
    let mean = eigs.iter().sum::<f64>() / eigs.len() as f64;
    if rho >= mean {
        return Ok(0.0);
    }
    let lam_min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    // The transfer decreases from the mean eigenvalue (v -> 0) down to the
    // smallest one (v -> infinity); below that floor no finite variance
    // reproduces rho, matching an unbounded inverse.
    if rho <= lam_min {
        return Ok(ETA_INV_CAP);
    }
    // With t = 1/v, the defining relation eta_SE(1/t) = rho rearranges to
    // psi(t) = sum_i (rho - lam_i) / (t + lam_i - rho) = 0, a form with no
    // large-magnitude cancellation. psi -> +inf at the pole t = rho -
    // lam_min and tends to 0 from below as t -> inf (since rho < mean);
    // the root is unique because the transfer is strictly monotone.
    let psi = |t: f64| -> f64 { eigs.iter().map(|l| (rho - l) / (t + l - rho)).sum() };
    let t_pole = rho - lam_min;
    let mut t_hi = t_pole.max(1.0) * 2.0;
    let mut guard = 0;
    while psi(t_hi) >= 0.0 {
        t_hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(Error::Solver(format!("inverse transfer bracket failed at rho = {rho}")));
        }
    }
    let mut dt = 0.5 * (t_hi - t_pole);
    let mut t_lo = t_pole + dt;
    while psi(t_lo) <= 0.0 {
        t_hi = t_lo;
        dt *= 0.5;
        t_lo = t_pole + dt;
        guard += 1;
        if guard > 400 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (t_lo + t_hi);
        if psi(mid) > 0.0 {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
        if t_hi - t_lo <= 1e-15 * t_hi {
            break;
        }
    }
    Ok((2.0 / (t_lo + t_hi)).min(ETA_INV_CAP))
}

/// Result of the error-free tunnel check.
#[derive(Clone, Copy, Debug)]
pub struct TunnelReport {
    pub error_free: bool,
    /// Minimal gap `eta_inv(rho) - phi(rho)` over the evaluation grid.
    pub margin: f64,
    /// SNR at which the minimal gap occurs.
    pub rho_at_margin: f64,
}

/// Checks the error-free condition: the decoder curve must lie strictly
/// below the inverse linear-stage transfer over `[0, rho_max)`. Evaluated on
/// a uniform grid that excludes the right endpoint, where the inverse
/// transfer vanishes identically.
pub fn error_free_check(
    dec: &DecoderCurve,
    p: Option<&[f64]>,
    profile: &SpectralProfile,
    sigma2: f64,
) -> Result<TunnelReport> {
    let rho_max = rho_ceiling(p, profile, sigma2)?;
    let last = *dec
        .curve
        .abscissae
        .last()
        .ok_or_else(|| Error::Config("empty decoder curve".into()))?;
    if last < rho_max * (1.0 - 1e-9) {
        return Err(Error::Domain(format!(
            "decoder curve domain ends at {last}, short of rho_max = {rho_max}"
        )));
    }
    let mut margin = f64::INFINITY;
    let mut rho_at = 0.0;
    for k in 0..GRID_POINTS {
        let rho = rho_max * k as f64 / GRID_POINTS as f64;
        let gap = eta_se_inverse(rho, p, profile, sigma2)? - dec.curve.eval(rho);
        if gap < margin {
            margin = gap;
            rho_at = rho;
        }
    }
    Ok(TunnelReport {
        error_free: margin > 1e-9,
        margin,
        rho_at_margin: rho_at,
    })
}

/// The optimal decoder transfer: the pointwise minimum of the constellation
/// MMSE curve and the inverse linear-stage transfer on `[0, rho_max]`.
pub fn optimal_decoder_curve(
    p: Option<&[f64]>,
    profile: &SpectralProfile,
    sigma2: f64,
    mmse_curve: &TransferCurve,
) -> Result<DecoderCurve> {
    let rho_max = rho_ceiling(p, profile, sigma2)?;
    let mut xs = Vec::with_capacity(GRID_POINTS);
    let mut ys = Vec::with_capacity(GRID_POINTS);
    for k in 0..GRID_POINTS {
        let rho = rho_max * k as f64 / (GRID_POINTS - 1) as f64;
        let eta_inv = eta_se_inverse(rho, p, profile, sigma2)?;
        xs.push(rho);
        ys.push(mmse_curve.eval(rho).min(eta_inv).clamp(0.0, 1.0));
    }
    let curve = TransferCurve::new(xs, ys, Extrapolation::Clamp)?;
    DecoderCurve::new(curve, "optimal")
}

/// Achievable rate in bits per transmit symbol: the area under the decoder
/// curve up to `rho_c`.
pub fn achievable_rate(dec: &DecoderCurve, rho_c: f64) -> Result<f64> {
    if !rho_c.is_finite() || rho_c < 0.0 {
        return Err(Error::Domain(format!("rho_c must be finite and >= 0, got {rho_c}")));
    }
    Ok(dec.curve.integral(0.0, rho_c) / std::f64::consts::LN_2)
}

/// Result of the cascaded (separate detection and decoding) rate analysis.
#[derive(Clone, Copy, Debug)]
pub struct CascadedRate {
    /// Rate in bits per transmit symbol.
    pub rate_bits: f64,
    /// Crossing SNR of the MMSE curve and the inverse linear-stage transfer,
    /// or `rho_max` when no crossing exists.
    pub rho_star: f64,
    /// Rate forfeited above the crossing in bits.
    pub rate_loss_bits: f64,
    /// False in the decoupled regime where the MMSE curve stays below the
    /// inverse transfer all the way to `rho_max`.
    pub crossing_found: bool,
}

/// Rate of the cascaded architecture: integrate the MMSE curve up to the
/// first crossing `mmse(rho) = eta_inv(rho)`; the residual area under the
/// inverse transfer beyond the crossing is reported as the loss against the
/// jointly optimized decoder.
pub fn cascaded_rate(
    p: Option<&[f64]>,
    profile: &SpectralProfile,
    sigma2: f64,
    mmse_curve: &TransferCurve,
) -> Result<CascadedRate> {
    let rho_max = rho_ceiling(p, profile, sigma2)?;
    let f = |rho: f64| -> Result<f64> {
        Ok(mmse_curve.eval(rho) - eta_se_inverse(rho, p, profile, sigma2)?)
    };
    // Scan for a sign change; mmse - eta_inv starts negative (eta_inv
    // diverges at rho = 0) and is positive at rho_max where eta_inv = 0.
    let mut prev_rho = 0.0;
    let mut prev_f = f(prev_rho)?;
    let mut bracket = None;
    for k in 1..=GRID_POINTS {
        let rho = rho_max * k as f64 / GRID_POINTS as f64;
        let fv = f(rho)?;
        if prev_f < 0.0 && fv >= 0.0 {
            bracket = Some((prev_rho, rho));
            break;
        }
        prev_rho = rho;
        prev_f = fv;
    }
    let Some((mut a, mut b)) = bracket else {
        // Decoupled regime: the detector alone supports the full SISO rate.
        return Ok(CascadedRate {
            rate_bits: mmse_curve.integral(0.0, rho_max) / std::f64::consts::LN_2,
            rho_star: rho_max,
            rate_loss_bits: 0.0,
            crossing_found: false,
        });
    };
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if f(mid)? < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let rho_star = 0.5 * (a + b);
    let rate_bits = mmse_curve.integral(0.0, rho_star) / std::f64::consts::LN_2;
    // Trapezoid for the loss integral of eta_inv over [rho_star, rho_max].
    let mut loss = 0.0;
    let nodes = 400;
    let mut prev = eta_se_inverse(rho_star, p, profile, sigma2)?;
    for k in 1..=nodes {
        let rho = rho_star + (rho_max - rho_star) * k as f64 / nodes as f64;
        let val = eta_se_inverse(rho, p, profile, sigma2)?;
        loss += 0.5 * (prev + val) * (rho_max - rho_star) / nodes as f64;
        prev = val;
    }
    Ok(CascadedRate {
        rate_bits,
        rho_star,
        rate_loss_bits: loss / std::f64::consts::LN_2,
        crossing_found: true,
    })
}
