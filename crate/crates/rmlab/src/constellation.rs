//! Scalar signal priors and AWGN scalar-channel machinery.
//!
//! A [`Constellation`] describes the IID prior of the transmit symbols:
//! either a discrete complex signal set with priors and Gray bit labels, or
//! the circularly-symmetric Gaussian prior (handled by closed forms). The
//! module provides the a-posteriori mean estimator for the observation
//! `y = sqrt(rho) x + z`, `z ~ CN(0,1)`, the scalar MMSE function
//! `mmse(rho)` evaluated by 2D Gauss-Hermite quadrature, tabulated
//! [`TransferCurve`]s with monotone inversion, and the MAP-demodulation BER
//! union bound together with a Monte Carlo exact evaluator.

use crate::util::{gauss_hermite, q_func};
use crate::{C64, Error, Result};
use rand::Rng;
use serde::Deserialize;
use std::sync::{Arc, Mutex, OnceLock};

/// Quadrature order per real dimension for the scalar MMSE integral.
const GH_ORDER: usize = 30;

/// Default number of grid points for MMSE lookup tables.
pub const DEFAULT_TABLE_POINTS: usize = 10_000;

fn gh_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(GH_ORDER))
}

/// Tag identifying the prior family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConstellationKind {
    Qpsk,
    Psk8,
    Qam16,
    Gaussian,
    Custom,
}

/// Discrete complex signal set with priors and bit labels, or the Gaussian
/// prior. Average power is normalized to one.
#[derive(Clone, Debug)]
pub struct Constellation {
    pub kind: ConstellationKind,
    /// Complex amplitudes; empty for the Gaussian kind.
    pub points: Vec<C64>,
    /// Prior probability of each point; sums to one.
    pub priors: Vec<f64>,
    /// Bit label of each point, `bits_per_symbol` bits wide.
    pub bit_labels: Vec<u32>,
    /// log2 of the constellation size; 0 for the Gaussian kind.
    pub bits_per_symbol: usize,
}

/// On-disk format for custom constellations:
/// `{"points": [[re, im], ...], "priors": [...], "labels": [...]}`.
#[derive(Deserialize)]
struct CustomFile {
    points: Vec<[f64; 2]>,
    priors: Vec<f64>,
    labels: Vec<u32>,
}

impl Constellation {
    /// Gray-labeled QPSK.
    pub fn qpsk() -> Self {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let points = vec![
            C64::new(a, a),
            C64::new(-a, a),
            C64::new(-a, -a),
            C64::new(a, -a),
        ];
        // One bit per axis: b0 = sign of Re, b1 = sign of Im.
        let bit_labels = vec![0b00, 0b01, 0b11, 0b10];
        Self::discrete(ConstellationKind::Qpsk, points, bit_labels)
    }

    /// Gray-labeled 8PSK.
    pub fn psk8() -> Self {
        let points: Vec<C64> = (0..8)
            .map(|k| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / 8.0))
            .collect();
        let bit_labels = vec![0b000, 0b001, 0b011, 0b010, 0b110, 0b111, 0b101, 0b100];
        Self::discrete(ConstellationKind::Psk8, points, bit_labels)
    }

    /// Gray-labeled square 16QAM.
    pub fn qam16() -> Self {
        let scale = 1.0 / 10.0f64.sqrt();
        let levels = [-3.0, -1.0, 1.0, 3.0];
        // Per-axis Gray code for the level index.
        let gray = [0b00u32, 0b01, 0b11, 0b10];
        let mut points = Vec::with_capacity(16);
        let mut bit_labels = Vec::with_capacity(16);
        for (i, &re) in levels.iter().enumerate() {
            for (q, &im) in levels.iter().enumerate() {
                points.push(C64::new(re * scale, im * scale));
                bit_labels.push((gray[i] << 2) | gray[q]);
            }
        }
        Self::discrete(ConstellationKind::Qam16, points, bit_labels)
    }

    /// Circularly-symmetric complex Gaussian prior CN(0,1); closed forms are
    /// used for all scalar-channel quantities.
    pub fn gaussian() -> Self {
        Constellation {
            kind: ConstellationKind::Gaussian,
            points: Vec::new(),
            priors: Vec::new(),
            bit_labels: Vec::new(),
            bits_per_symbol: 0,
        }
    }

    fn discrete(kind: ConstellationKind, points: Vec<C64>, bit_labels: Vec<u32>) -> Self {
        let n = points.len();
        let priors = vec![1.0 / n as f64; n];
        let bits = (n as f64).log2().round() as usize;
        let c = Constellation {
            kind,
            points,
            priors,
            bit_labels,
            bits_per_symbol: bits,
        };
        debug_assert!((c.mean_power() - 1.0).abs() < 1e-12);
        c
    }

    /// Custom constellation with explicit points, priors and bit labels.
    ///
    /// The size must be a power of two and the prior-weighted power must be
    /// one within 1e-9 (it is then rescaled to exactly one).
    pub fn custom(points: Vec<C64>, priors: Vec<f64>, bit_labels: Vec<u32>) -> Result<Self> {
        let n = points.len();
        if n == 0 || priors.len() != n || bit_labels.len() != n {
            return Err(Error::Config(
                "custom constellation requires equal-length points/priors/labels".into(),
            ));
        }
        if !n.is_power_of_two() {
            return Err(Error::Config(format!(
                "constellation size {n} is not a power of two"
            )));
        }
        let bits = n.trailing_zeros() as usize;
        if bit_labels.iter().any(|&l| l >= (1u32 << bits.max(1))) {
            return Err(Error::Config("bit label exceeds log2|S| bits".into()));
        }
        let psum: f64 = priors.iter().sum();
        if (psum - 1.0).abs() > 1e-9 || priors.iter().any(|&p| p < 0.0) {
            return Err(Error::Config("priors must be non-negative and sum to 1".into()));
        }
        if points.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Config("non-finite constellation point".into()));
        }
        let mut c = Constellation {
            kind: ConstellationKind::Custom,
            points,
            priors,
            bit_labels,
            bits_per_symbol: bits,
        };
        let power = c.mean_power();
        if (power - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "constellation power {power} is not normalized to 1"
            )));
        }
        let scale = power.sqrt().recip();
        for z in &mut c.points {
            *z *= scale;
        }
        Ok(c)
    }

    /// Parses the custom-constellation JSON format.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: CustomFile = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("constellation JSON: {e}")))?;
        let points = file.points.iter().map(|p| C64::new(p[0], p[1])).collect();
        Self::custom(points, file.priors, file.labels)
    }

    /// Looks up a constellation by CLI name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "qpsk" => Ok(Self::qpsk()),
            "8psk" | "psk8" => Ok(Self::psk8()),
            "16qam" | "qam16" => Ok(Self::qam16()),
            "gaussian" => Ok(Self::gaussian()),
            other => Err(Error::Config(format!("unknown constellation '{other}'"))),
        }
    }

    /// Prior-weighted average power.
    pub fn mean_power(&self) -> f64 {
        if self.kind == ConstellationKind::Gaussian {
            return 1.0;
        }
        self.points
            .iter()
            .zip(&self.priors)
            .map(|(x, p)| p * x.norm_sqr())
            .sum()
    }

    pub fn is_gaussian(&self) -> bool {
        self.kind == ConstellationKind::Gaussian
    }

    /// A-posteriori mean E{x | y} for the observation `y` of
    /// `sqrt(rho) x + z`, `z ~ CN(0,1)`.
    pub fn posterior_mean(&self, y: C64, rho: f64) -> Result<C64> {
        if !y.re.is_finite() || !y.im.is_finite() || !rho.is_finite() || rho < 0.0 {
            return Err(Error::Domain("non-finite observation or SNR".into()));
        }
        Ok(self.posterior_mean_unchecked(y, rho.sqrt()))
    }

    /// Posterior mean with `sqrt_rho` precomputed; hot path for quadrature
    /// and Monte Carlo loops.
    #[inline]
    pub fn posterior_mean_unchecked(&self, y: C64, sqrt_rho: f64) -> C64 {
        if self.kind == ConstellationKind::Gaussian {
            let rho = sqrt_rho * sqrt_rho;
            return y * (sqrt_rho / (1.0 + rho));
        }
        // Log-weights with max subtraction for numerical stability. A stack
        // buffer keeps the quadrature hot loop allocation-free; custom
        // constellations beyond 64 points take the heap path.
        if self.points.len() <= 64 {
            let mut logw = [0.0f64; 64];
            self.weighted_mean(y, sqrt_rho, &mut logw)
        } else {
            let mut logw = vec![0.0f64; self.points.len()];
            self.weighted_mean(y, sqrt_rho, &mut logw)
        }
    }

    #[inline]
    fn weighted_mean(&self, y: C64, sqrt_rho: f64, logw: &mut [f64]) -> C64 {
        let mut best = f64::NEG_INFINITY;
        for (i, (x, p)) in self.points.iter().zip(&self.priors).enumerate() {
            let d = y - x * sqrt_rho;
            let lw = p.ln() - d.norm_sqr();
            logw[i] = lw;
            if lw > best {
                best = lw;
            }
        }
        let mut num = C64::new(0.0, 0.0);
        let mut den = 0.0;
        for (i, x) in self.points.iter().enumerate() {
            let w = (logw[i] - best).exp();
            num += x * w;
            den += w;
        }
        num / den
    }

    /// Posterior-mean denoiser for the additive model `s_in = x + w`,
    /// `w ~ CN(0, v)`: equivalent to `posterior_mean(s_in/sqrt(v), 1/v)`.
    #[inline]
    pub fn denoise(&self, s_in: C64, v: f64) -> C64 {
        let sv = v.sqrt();
        self.posterior_mean_unchecked(s_in / sv, 1.0 / sv)
    }

    /// Posterior mean and conditional variance for `s_in = x + w`,
    /// `w ~ CN(0, v)`: returns (E{x|s_in}, E{|x|^2|s_in} - |E{x|s_in}|^2).
    pub fn denoise_with_var(&self, s_in: C64, v: f64) -> (C64, f64) {
        if self.kind == ConstellationKind::Gaussian {
            let mean = s_in / (1.0 + v);
            return (mean, v / (1.0 + v));
        }
        let sv = v.sqrt();
        let y = s_in / sv;
        let sqrt_rho = 1.0 / sv;
        let mut best = f64::NEG_INFINITY;
        let mut logw = vec![0.0f64; self.points.len()];
        for (i, (x, p)) in self.points.iter().zip(&self.priors).enumerate() {
            let d = y - x * sqrt_rho;
            let lw = p.ln() - d.norm_sqr();
            logw[i] = lw;
            if lw > best {
                best = lw;
            }
        }
        let mut num = C64::new(0.0, 0.0);
        let mut num2 = 0.0;
        let mut den = 0.0;
        for (i, x) in self.points.iter().enumerate() {
            let w = (logw[i] - best).exp();
            num += x * w;
            num2 += x.norm_sqr() * w;
            den += w;
        }
        let mean = num / den;
        (mean, (num2 / den - mean.norm_sqr()).max(0.0))
    }

    /// Scalar MMSE `E{|x - E{x|y}|^2}` at SNR `rho`.
    ///
    /// Gaussian kind: `1/(1+rho)` exactly. Discrete kinds: 2D Gauss-Hermite
    /// quadrature of order 30 per real axis over the complex noise.
    pub fn mmse_scalar(&self, rho: f64) -> Result<f64> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::Domain("rho must be finite and non-negative".into()));
        }
        if self.kind == ConstellationKind::Gaussian {
            return Ok(1.0 / (1.0 + rho));
        }
        let (nodes, weights) = gh_rule();
        let sqrt_rho = rho.sqrt();
        let inv_pi = std::f64::consts::FRAC_1_PI;
        let mut total = 0.0;
        for (xj, pj) in self.points.iter().zip(&self.priors) {
            let center = xj * sqrt_rho;
            let mut acc = 0.0;
            for (tr, wr) in nodes.iter().zip(weights) {
                for (tc, wc) in nodes.iter().zip(weights) {
                    let y = center + C64::new(*tr, *tc);
                    let err = xj - self.posterior_mean_unchecked(y, sqrt_rho);
                    acc += wr * wc * err.norm_sqr();
                }
            }
            total += pj * acc * inv_pi;
        }
        Ok(total.clamp(0.0, 1.0))
    }

    /// Builds a uniformly spaced MMSE lookup table on `[0, rho_max]`.
    ///
    /// `n` must be at least [`DEFAULT_TABLE_POINTS`] (the tables back
    /// interpolation-sensitive solvers); `rho_max` should satisfy
    /// `mmse(rho_max) < 1e-6`, which [`Constellation::default_rho_max`]
    /// guarantees.
    pub fn build_mmse_table(&self, rho_max: f64, n: usize) -> Result<TransferCurve> {
        if n < DEFAULT_TABLE_POINTS {
            return Err(Error::Config(format!(
                "mmse table needs at least {DEFAULT_TABLE_POINTS} points, got {n}"
            )));
        }
        if !(rho_max > 0.0) {
            return Err(Error::Config("rho_max must be positive".into()));
        }
        if self.kind == ConstellationKind::Gaussian {
            return Ok(TransferCurve::gaussian_mmse(rho_max, n));
        }
        let mut abscissae = Vec::with_capacity(n);
        let mut ordinates = Vec::with_capacity(n);
        let step = rho_max / (n - 1) as f64;
        let mut prev = f64::INFINITY;
        for i in 0..n {
            let rho = step * i as f64;
            // Quadrature jitter at the ~1e-15 level could break strict
            // monotonicity in the deep tail; clamp to keep the curve valid.
            let m = self.mmse_scalar(rho)?.min(prev);
            abscissae.push(rho);
            ordinates.push(m);
            prev = m;
        }
        TransferCurve::new(abscissae, ordinates, Extrapolation::Asymptotic)
    }

    /// Smallest power-of-two SNR with `mmse < 1e-6`, used as the default
    /// table endpoint.
    pub fn default_rho_max(&self) -> f64 {
        if self.kind == ConstellationKind::Gaussian {
            return 1e3;
        }
        let mut rho = 8.0;
        while self.mmse_scalar(rho).unwrap_or(0.0) >= 1e-6 && rho < 1e7 {
            rho *= 2.0;
        }
        rho
    }

    /// Default MMSE table; cached per standard kind (the quadrature sweep is
    /// expensive), rebuilt on every call for custom constellations.
    pub fn mmse_table(&self) -> Arc<TransferCurve> {
        static CACHE: OnceLock<Mutex<Vec<(ConstellationKind, Arc<TransferCurve>)>>> =
            OnceLock::new();
        if self.kind == ConstellationKind::Custom {
            return Arc::new(
                self.build_mmse_table(self.default_rho_max(), DEFAULT_TABLE_POINTS)
                    .expect("default table construction cannot fail"),
            );
        }
        let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
        let mut guard = cache.lock().unwrap();
        if let Some((_, curve)) = guard.iter().find(|(k, _)| *k == self.kind) {
            return curve.clone();
        }
        let curve = Arc::new(
            self.build_mmse_table(self.default_rho_max(), DEFAULT_TABLE_POINTS)
                .expect("default table construction cannot fail"),
        );
        guard.push((self.kind, curve.clone()));
        curve
    }

    /// Union bound on the MAP-demodulation bit error rate:
    /// `(1/(|S| log2|S|)) sum_i sum_{j!=i} N(x_i,x_j) Q(sqrt(rho) d_ij / sqrt(2))`
    /// where `N` counts differing label bits and `d_ij = |x_i - x_j|`.
    pub fn map_demod_ber(&self, rho: f64) -> Result<f64> {
        if self.kind == ConstellationKind::Gaussian {
            return Err(Error::Domain(
                "BER is undefined for the Gaussian prior".into(),
            ));
        }
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::Domain("rho must be finite and non-negative".into()));
        }
        let s = self.points.len() as f64;
        let b = self.bits_per_symbol as f64;
        let mut sum = 0.0;
        for (i, xi) in self.points.iter().enumerate() {
            for (j, xj) in self.points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let nbits = (self.bit_labels[i] ^ self.bit_labels[j]).count_ones() as f64;
                let d = (xi - xj).norm();
                sum += nbits * q_func(rho.sqrt() * d / std::f64::consts::SQRT_2);
            }
        }
        Ok((sum / (s * b)).min(0.5))
    }

    /// Monte Carlo exact MAP-demodulation BER over `n_symbols` draws.
    pub fn map_demod_ber_mc<R: Rng>(&self, rho: f64, n_symbols: usize, rng: &mut R) -> Result<f64> {
        if self.kind == ConstellationKind::Gaussian {
            return Err(Error::Domain(
                "BER is undefined for the Gaussian prior".into(),
            ));
        }
        let sqrt_rho = rho.sqrt();
        let dist = rand_distr::StandardNormal;
        let mut errors = 0u64;
        for _ in 0..n_symbols {
            let idx = self.sample_index(rng);
            let z = C64::new(
                rng.sample::<f64, _>(dist) * std::f64::consts::FRAC_1_SQRT_2,
                rng.sample::<f64, _>(dist) * std::f64::consts::FRAC_1_SQRT_2,
            );
            let y = self.points[idx] * sqrt_rho + z;
            let dec = self.map_decide(y, sqrt_rho);
            errors += (self.bit_labels[idx] ^ self.bit_labels[dec]).count_ones() as u64;
        }
        Ok(errors as f64 / (n_symbols * self.bits_per_symbol) as f64)
    }

    /// Draws a point index from the prior.
    pub fn sample_index<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.priors.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.priors.len() - 1
    }

    /// MAP symbol decision for the observation `y` of `sqrt(rho) x + z`.
    fn map_decide(&self, y: C64, sqrt_rho: f64) -> usize {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (i, (x, p)) in self.points.iter().zip(&self.priors).enumerate() {
            let metric = p.ln() - (y - x * sqrt_rho).norm_sqr();
            if metric > best {
                best = metric;
                arg = i;
            }
        }
        arg
    }

    /// Index of the constellation point nearest to `z` (hard decision).
    pub fn nearest_point(&self, z: C64) -> usize {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for (i, x) in self.points.iter().enumerate() {
            let d = (z - x).norm_sqr();
            if d < best {
                best = d;
                arg = i;
            }
        }
        arg
    }
}

/// Out-of-range behavior of a [`TransferCurve`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extrapolation {
    /// Hold the boundary ordinate.
    Clamp,
    /// Log-linear decay continuing the slope of the last segment (natural
    /// for MMSE tails).
    Asymptotic,
}

/// Monotone sampled scalar map with interpolation, used for `mmse(rho)`,
/// decoder transfer functions and related curves.
#[derive(Clone, Debug)]
pub struct TransferCurve {
    pub abscissae: Vec<f64>,
    pub ordinates: Vec<f64>,
    pub extrapolation: Extrapolation,
    /// Exact-bypass flag: the curve represents `1/(1+rho)` and evaluation /
    /// inversion / integration use the closed forms instead of the grid.
    gaussian_exact: bool,
}

impl TransferCurve {
    /// Validates and wraps a sampled curve.
    pub fn new(
        abscissae: Vec<f64>,
        ordinates: Vec<f64>,
        extrapolation: Extrapolation,
    ) -> Result<Self> {
        if abscissae.len() != ordinates.len() || abscissae.len() < 2 {
            return Err(Error::Config("curve needs >= 2 grid points".into()));
        }
        if abscissae.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("abscissae must be strictly increasing".into()));
        }
        if ordinates.iter().any(|y| !y.is_finite()) {
            return Err(Error::Config("non-finite ordinate".into()));
        }
        Ok(TransferCurve {
            abscissae,
            ordinates,
            extrapolation,
            gaussian_exact: false,
        })
    }

    /// The exact Gaussian MMSE curve `1/(1+rho)`; carries a grid for
    /// inspection but evaluates by closed form.
    pub fn gaussian_mmse(rho_max: f64, n: usize) -> Self {
        let step = rho_max / (n - 1) as f64;
        let abscissae: Vec<f64> = (0..n).map(|i| step * i as f64).collect();
        let ordinates: Vec<f64> = abscissae.iter().map(|&r| 1.0 / (1.0 + r)).collect();
        TransferCurve {
            abscissae,
            ordinates,
            extrapolation: Extrapolation::Asymptotic,
            gaussian_exact: true,
        }
    }

    pub fn is_gaussian_exact(&self) -> bool {
        self.gaussian_exact
    }

    /// Piecewise-linear evaluation with the configured extrapolation.
    pub fn eval(&self, x: f64) -> f64 {
        if self.gaussian_exact {
            return 1.0 / (1.0 + x.max(0.0));
        }
        let xs = &self.abscissae;
        let ys = &self.ordinates;
        let n = xs.len();
        if x <= xs[0] {
            return ys[0];
        }
        if x >= xs[n - 1] {
            return match self.extrapolation {
                Extrapolation::Clamp => ys[n - 1],
                Extrapolation::Asymptotic => self.tail_extrapolate(x),
            };
        }
        let k = match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return ys[i],
            Err(i) => i,
        };
        let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
        ys[k - 1] + t * (ys[k] - ys[k - 1])
    }

    /// Log-linear tail: continues `ln y` with the slope of the last segment
    /// that has positive, distinct ordinates.
    fn tail_extrapolate(&self, x: f64) -> f64 {
        let n = self.abscissae.len();
        let y_end = self.ordinates[n - 1];
        if y_end <= 0.0 {
            return 0.0;
        }
        // Find the last segment usable for a log-slope.
        for k in (1..n).rev() {
            let (y0, y1) = (self.ordinates[k - 1], self.ordinates[k]);
            if y0 > 0.0 && y1 > 0.0 && y0 != y1 {
                let slope =
                    (y1.ln() - y0.ln()) / (self.abscissae[k] - self.abscissae[k - 1]);
                if slope >= 0.0 {
                    break; // Non-decaying curve: fall through to clamp.
                }
                return (y_end.ln() + slope * (x - self.abscissae[n - 1])).exp();
            }
        }
        y_end
    }

    /// Inverse evaluation for non-increasing curves (such as `mmse(rho)`):
    /// returns `x` with `eval(x) = y`.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::Domain("inverse requires y > 0".into()));
        }
        if self.gaussian_exact {
            return Ok(if y >= 1.0 { 0.0 } else { 1.0 / y - 1.0 });
        }
        let xs = &self.abscissae;
        let ys = &self.ordinates;
        let n = xs.len();
        if y >= ys[0] {
            return Ok(xs[0]);
        }
        if y <= ys[n - 1] {
            return match self.extrapolation {
                Extrapolation::Clamp => Ok(xs[n - 1]),
                Extrapolation::Asymptotic => {
                    // Invert the log-linear tail.
                    let y_end = ys[n - 1];
                    if y_end <= 0.0 || y >= y_end {
                        return Ok(xs[n - 1]);
                    }
                    for k in (1..n).rev() {
                        let (y0, y1) = (ys[k - 1], ys[k]);
                        if y0 > 0.0 && y1 > 0.0 && y0 != y1 {
                            let slope = (y1.ln() - y0.ln()) / (xs[k] - xs[k - 1]);
                            if slope >= 0.0 {
                                break;
                            }
                            return Ok(xs[n - 1] + (y.ln() - y_end.ln()) / slope);
                        }
                    }
                    Ok(xs[n - 1])
                }
            };
        }
        // Binary search over the non-increasing ordinates.
        let (mut lo, mut hi) = (0usize, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if ys[mid] > y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if ys[lo] == ys[hi] {
            return Ok(xs[lo]);
        }
        let t = (y - ys[lo]) / (ys[hi] - ys[lo]);
        Ok(xs[lo] + t * (xs[hi] - xs[lo]))
    }

    /// Exact integral of the piecewise-linear interpolant over `[a, b]`
    /// (clamped to the grid; the asymptotic tail integrates its closed form).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if self.gaussian_exact {
            return ((1.0 + b) / (1.0 + a)).ln();
        }
        if b <= a {
            return 0.0;
        }
        let xs = &self.abscissae;
        let n = xs.len();
        let mut total = 0.0;
        // Leading clamp region.
        if a < xs[0] {
            total += (xs[0].min(b) - a) * self.ordinates[0];
        }
        for k in 1..n {
            let (x0, x1) = (xs[k - 1], xs[k]);
            let lo = a.max(x0);
            let hi = b.min(x1);
            if hi > lo {
                total += 0.5 * (self.eval(lo) + self.eval(hi)) * (hi - lo);
            }
        }
        if b > xs[n - 1] {
            match self.extrapolation {
                Extrapolation::Clamp => {
                    total += (b - xs[n - 1].max(a)) * self.ordinates[n - 1];
                }
                Extrapolation::Asymptotic => {
                    // Numerically integrate the exponential tail.
                    let lo = xs[n - 1].max(a);
                    total += crate::util::adaptive_simpson(&|x| self.eval(x), lo, b, 1e-12);
                }
            }
        }
        total
    }
}

/// Inverse MMSE: the SNR `rho` with `mmse(rho) = v`, via the lookup table.
pub fn mmse_inverse(v: f64, curve: &TransferCurve) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::Domain("mmse_inverse requires v > 0".into()));
    }
    if v >= 1.0 {
        return Ok(0.0);
    }
    curve.inverse(v)
}
