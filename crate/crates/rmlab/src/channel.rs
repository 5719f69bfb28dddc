//! Time-varying multipath MIMO channel synthesis.
//!
//! Channels are built as sparse banded time-domain block matrices: each
//! receive/transmit antenna pair holds an `n_bar x taps` band whose entry
//! `(u, d)` multiplies the symbol transmitted `d` samples earlier. Per-path
//! Doppler follows the Jakes model and the delay spread is shaped by a
//! raised-cosine pulse. The module also exposes dense SVD factors and the
//! composed fast effective operator used by the detectors.

use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::operator::{LinearOperator, Stage, SvdForm};
use crate::transform::RandomTransform;
use crate::util::trial_rng;
use crate::{Error, Result, C64};

/// Propagation constant used for Doppler conversion.
const SPEED_OF_LIGHT_M_S: f64 = 3.0e8;

/// Largest total dimension for which a dense SVD is attempted.
pub const DENSE_SVD_CAP: usize = 8192;

fn default_paths() -> usize {
    5
}

fn default_rolloff() -> f64 {
    0.4
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Transmit antennas (J).
    #[serde(alias = "J")]
    pub j: usize,
    /// Receive antennas (K).
    #[serde(alias = "K")]
    pub k: usize,
    /// Symbols per transmit antenna.
    pub n_bar: usize,
    pub carrier_hz: f64,
    /// Sample interval T_s; alternatively derived from `delta_f_hz`.
    #[serde(default)]
    pub sample_interval_s: Option<f64>,
    /// Subcarrier spacing; T_s = 1 / (delta_f * n_bar) when given.
    #[serde(default)]
    pub delta_f_hz: Option<f64>,
    pub velocity_kmh: f64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// Antenna correlation level in [0, 1).
    #[serde(default)]
    pub corr: f64,
    #[serde(default = "default_rolloff")]
    pub rolloff: f64,
    /// Pulse support in samples.
    pub taps: usize,
    pub seed: u64,
    /// Cyclic (wrap-around) convolution instead of zero-padded boundaries.
    #[serde(default)]
    pub cyclic: bool,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.j == 0 || self.k == 0 || self.n_bar == 0 {
            return Err(Error::Config("channel dimensions must be positive".into()));
        }
        if self.paths == 0 {
            return Err(Error::Config("paths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.corr) {
            return Err(Error::Config("corr must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(Error::Config("rolloff must lie in [0, 1]".into()));
        }
        if self.taps == 0 {
            return Err(Error::Config("taps must be >= 1".into()));
        }
        if self.taps > self.n_bar {
            return Err(Error::Config("taps must not exceed n_bar".into()));
        }
        self.sample_interval()?;
        Ok(())
    }

    pub fn sample_interval(&self) -> Result<f64> {
        match (self.sample_interval_s, self.delta_f_hz) {
            (Some(ts), _) if ts > 0.0 => Ok(ts),
            (None, Some(df)) if df > 0.0 => Ok(1.0 / (df * self.n_bar as f64)),
            _ => Err(Error::Config(
                "channel needs sample_interval_s > 0 or delta_f_hz > 0".into(),
            )),
        }
    }

    pub fn max_doppler_hz(&self) -> f64 {
        (self.velocity_kmh / 3.6) * self.carrier_hz / SPEED_OF_LIGHT_M_S
    }

    /// Input dimension N = J * n_bar.
    pub fn input_dim(&self) -> usize {
        self.j * self.n_bar
    }

    /// Output dimension M = K * n_bar.
    pub fn output_dim(&self) -> usize {
        self.k * self.n_bar
    }
}

/// One propagation path: the delay and Doppler are shared across antenna
/// pairs while the small-scale gains form a K x J matrix.
#[derive(Clone, Debug)]
pub struct Path {
    pub delay_s: f64,
    pub doppler_hz: f64,
    pub gains: Array2<C64>,
}

pub type PathTable = Vec<Path>;

/// Draw the path table: i.i.d. CN(0, 1/paths) gains, delays uniform over
/// [0, (taps-1) T_s], and Jakes Dopplers ν_max cos θ with θ ~ Unif[0, 2π).
pub fn sample_paths(p: &ChannelParams) -> Result<PathTable> {
    p.validate()?;
    let ts = p.sample_interval()?;
    let nu_max = p.max_doppler_hz();
    let mut rng = trial_rng(p.seed, 0xC4A, 0);
    let dist = rand_distr::StandardNormal;
    let gain_scale = (0.5 / p.paths as f64).sqrt();
    let delay_span = (p.taps - 1) as f64 * ts;
    let mut table = Vec::with_capacity(p.paths);
    for _ in 0..p.paths {
        let delay_s = rng.gen::<f64>() * delay_span;
        let theta = rng.gen::<f64>() * std::f64::consts::TAU;
        let doppler_hz = nu_max * theta.cos();
        let gains = Array2::from_shape_fn((p.k, p.j), |_| {
            C64::new(
                rng.sample::<f64, _>(dist) * gain_scale,
                rng.sample::<f64, _>(dist) * gain_scale,
            )
        });
        table.push(Path { delay_s, doppler_hz, gains });
    }
    Ok(table)
}

/// Lower Cholesky factor of the exponential correlation matrix with entries
/// rho^{|p-q|}.
fn corr_cholesky(n: usize, rho: f64) -> Array2<f64> {
    let r = Array2::from_shape_fn((n, n), |(p, q)| {
        rho.powi((p as i64 - q as i64).unsigned_abs() as i32)
    });
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = r[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                // rho < 1 keeps the matrix positive definite.
                l[(i, j)] = s.max(0.0).sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    l
}

/// Replace each per-path gain matrix G by C_rx · G · C_txᴴ where C are the
/// Cholesky factors of the exponential antenna-correlation matrices.
pub fn spatial_correlate(table: &PathTable, corr: f64, j: usize, k: usize) -> Result<PathTable> {
    if !(0.0..1.0).contains(&corr) {
        return Err(Error::Config("corr must lie in [0, 1)".into()));
    }
    if corr == 0.0 {
        return Ok(table.clone());
    }
    let c_rx = corr_cholesky(k, corr);
    let c_tx = corr_cholesky(j, corr);
    let mut out = Vec::with_capacity(table.len());
    for path in table {
        let mut gains = Array2::from_elem((k, j), C64::new(0.0, 0.0));
        for r in 0..k {
            for c in 0..j {
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..k {
                    for b in 0..j {
                        // Real Cholesky factors: Cᴴ entries are plain transposes.
                        acc += path.gains[(a, b)] * (c_rx[(r, a)] * c_tx[(c, b)]);
                    }
                }
                gains[(r, c)] = acc;
            }
        }
        out.push(Path {
            delay_s: path.delay_s,
            doppler_hz: path.doppler_hz,
            gains,
        });
    }
    Ok(out)
}

/// Raised-cosine pulse with rolloff beta, evaluated at t (seconds) for the
/// symbol interval ts.
pub fn raised_cosine(t: f64, beta: f64, ts: f64) -> f64 {
    let x = t / ts;
    if beta == 0.0 {
        return crate::util::sinc(x);
    }
    let denom = 1.0 - (2.0 * beta * x).powi(2);
    if denom.abs() < 1e-10 {
        // Limit at x = ±1/(2 beta).
        return std::f64::consts::FRAC_PI_4 * crate::util::sinc(0.5 / beta);
    }
    crate::util::sinc(x) * (std::f64::consts::PI * beta * x).cos() / denom
}

/// Dense SVD factors of the channel (or any matrix) with the convention
/// A = U · diag(σ) · Vᴴ.
pub struct SvdFactors {
    pub u: Arc<Array2<C64>>,
    pub sigma: Vec<f64>,
    pub v: Arc<Array2<C64>>,
}

/// Sorted singular values zero-padded to the input dimension N.
#[derive(Clone, Debug)]
pub struct SpectralProfile {
    pub singular_values: Vec<f64>,
    pub source_tag: String,
}

impl SpectralProfile {
    pub fn new(mut sv: Vec<f64>, n: usize, source_tag: impl Into<String>) -> Result<Self> {
        if sv.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Domain("singular values must be finite and >= 0".into()));
        }
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        sv.resize(n, 0.0);
        Ok(Self { singular_values: sv, source_tag: source_tag.into() })
    }
}

pub struct ChannelRealization {
    pub params: ChannelParams,
    pub path_table: PathTable,
    /// Bands indexed k * J + j, each n_bar x taps; entry (u, d) multiplies
    /// the symbol sent d samples before u.
    bands: Vec<Array2<C64>>,
    m: usize,
    n: usize,
    nnz: usize,
    svd: OnceLock<Arc<SvdFactors>>,
}

/// Assemble the banded realization from an (already correlated) path table
/// and normalize so that tr{HᴴH}/N = 1 exactly.
pub fn build_matrix(p: &ChannelParams, table: &PathTable) -> Result<ChannelRealization> {
    p.validate()?;
    let ts = p.sample_interval()?;
    let table = table.clone();
    let n_bar = p.n_bar;
    let mut bands = vec![Array2::from_elem((n_bar, p.taps), C64::new(0.0, 0.0)); p.k * p.j];
    let tau = std::f64::consts::TAU;
    for u in 0..n_bar {
        for d in 0..p.taps {
            if u < d && !p.cyclic {
                continue;
            }
            for path in &table {
                let pulse = raised_cosine(d as f64 * ts - path.delay_s, p.rolloff, ts);
                if pulse == 0.0 {
                    continue;
                }
                // Doppler phase rotates with the transmit instant (u - d).
                let phase =
                    C64::from_polar(1.0, tau * path.doppler_hz * (u as f64 - d as f64) * ts);
                let w = phase * pulse;
                for k in 0..p.k {
                    for j in 0..p.j {
                        bands[k * p.j + j][(u, d)] += path.gains[(k, j)] * w;
                    }
                }
            }
        }
    }
    let n = p.input_dim();
    let m = p.output_dim();
    let frob_sq: f64 = bands
        .iter()
        .map(|b| b.iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum();
    if frob_sq <= 0.0 {
        return Err(Error::Solver("channel realization is identically zero".into()));
    }
    let scale = (n as f64 / frob_sq).sqrt();
    let mut nnz = 0usize;
    for b in &mut bands {
        for z in b.iter_mut() {
            *z *= scale;
            if z.norm_sqr() > 0.0 {
                nnz += 1;
            }
        }
    }
    Ok(ChannelRealization {
        params: p.clone(),
        path_table: table,
        bands,
        m,
        n,
        nnz,
        svd: OnceLock::new(),
    })
}

/// Sample, correlate, and build in one step.
pub fn synthesize(p: &ChannelParams) -> Result<ChannelRealization> {
    let table = sample_paths(p)?;
    let table = spatial_correlate(&table, p.corr, p.j, p.k)?;
    build_matrix(p, &table)
}

impl ChannelRealization {
    pub fn input_dim(&self) -> usize {
        self.n
    }

    pub fn output_dim(&self) -> usize {
        self.m
    }

    /// Stored nonzero entries.
    pub fn nnz(&self) -> usize {
        self.nnz
    }

    /// Declared per-row nonzero budget (taps * J).
    pub fn nnz_per_row(&self) -> usize {
        self.params.taps * self.params.j
    }

    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.n {
            return Err(Error::Size(format!(
                "channel apply expects length {}, got {}",
                self.n,
                x.len()
            )));
        }
        let p = &self.params;
        let n_bar = p.n_bar;
        let mut y = vec![C64::new(0.0, 0.0); self.m];
        for k in 0..p.k {
            for j in 0..p.j {
                let band = &self.bands[k * p.j + j];
                let xs = &x[j * n_bar..(j + 1) * n_bar];
                let ys = &mut y[k * n_bar..(k + 1) * n_bar];
                for u in 0..n_bar {
                    let mut acc = C64::new(0.0, 0.0);
                    for d in 0..p.taps.min(if p.cyclic { p.taps } else { u + 1 }) {
                        let src = if p.cyclic {
                            (u + n_bar - d) % n_bar
                        } else {
                            u - d
                        };
                        acc += band[(u, d)] * xs[src];
                    }
                    ys[u] += acc;
                }
            }
        }
        Ok(y)
    }

    pub fn adjoint_apply(&self, y: &[C64]) -> Result<Vec<C64>> {
        if y.len() != self.m {
            return Err(Error::Size(format!(
                "channel adjoint expects length {}, got {}",
                self.m,
                y.len()
            )));
        }
        let p = &self.params;
        let n_bar = p.n_bar;
        let mut x = vec![C64::new(0.0, 0.0); self.n];
        for k in 0..p.k {
            for j in 0..p.j {
                let band = &self.bands[k * p.j + j];
                let ys = &y[k * n_bar..(k + 1) * n_bar];
                let xs = &mut x[j * n_bar..(j + 1) * n_bar];
                for u in 0..n_bar {
                    for d in 0..p.taps.min(if p.cyclic { p.taps } else { u + 1 }) {
                        let src = if p.cyclic {
                            (u + n_bar - d) % n_bar
                        } else {
                            u - d
                        };
                        xs[src] += band[(u, d)].conj() * ys[u];
                    }
                }
            }
        }
        Ok(x)
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let p = &self.params;
        let n_bar = p.n_bar;
        let mut h = Array2::from_elem((self.m, self.n), C64::new(0.0, 0.0));
        for k in 0..p.k {
            for j in 0..p.j {
                let band = &self.bands[k * p.j + j];
                for u in 0..n_bar {
                    for d in 0..p.taps {
                        if u < d && !p.cyclic {
                            continue;
                        }
                        let src = if p.cyclic {
                            (u + n_bar - d) % n_bar
                        } else {
                            u - d
                        };
                        h[(k * n_bar + u, j * n_bar + src)] += band[(u, d)];
                    }
                }
            }
        }
        h
    }

    /// Dense SVD factors, computed once and cached.
    pub fn svd_factors(&self) -> Result<Arc<SvdFactors>> {
        if let Some(f) = self.svd.get() {
            return Ok(f.clone());
        }
        if self.m.max(self.n) > DENSE_SVD_CAP {
            return Err(Error::Size(format!(
                "dense SVD capped at dimension {DENSE_SVD_CAP}, channel is {}x{}",
                self.m, self.n
            )));
        }
        let f = Arc::new(svd_dense(&self.to_dense())?);
        Ok(self.svd.get_or_init(|| f).clone())
    }

    pub fn singular_values(&self) -> Result<SpectralProfile> {
        let f = self.svd_factors()?;
        SpectralProfile::new(f.sigma.clone(), self.n, "channel")
    }
}

pub(crate) fn to_faer(a: &Array2<C64>) -> faer::Mat<faer::c64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
        faer::c64::new(a[(i, j)].re, a[(i, j)].im)
    })
}

pub(crate) fn from_faer(m: faer::MatRef<'_, faer::c64>) -> Array2<C64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| {
        C64::new(m[(i, j)].re, m[(i, j)].im)
    })
}

/// Full dense SVD with the convention A = U · diag(σ) · Vᴴ.
pub fn svd_dense(a: &Array2<C64>) -> Result<SvdFactors> {
    let svd = to_faer(a)
        .svd()
        .map_err(|e| Error::Solver(format!("SVD failed to converge: {e:?}")))?;
    let k = a.nrows().min(a.ncols());
    let sv = svd.S().column_vector();
    let sigma: Vec<f64> = (0..k).map(|i| sv[i].re).collect();
    Ok(SvdFactors {
        u: Arc::new(from_faer(svd.U())),
        sigma,
        v: Arc::new(from_faer(svd.V())),
    })
}

/// Spectral profile of an arbitrary dense matrix, padded to its column count.
pub fn singular_values_dense(a: &Array2<C64>) -> Result<SpectralProfile> {
    if a.nrows().max(a.ncols()) > DENSE_SVD_CAP {
        return Err(Error::Size(format!(
            "dense SVD capped at dimension {DENSE_SVD_CAP}"
        )));
    }
    let f = svd_dense(a)?;
    SpectralProfile::new(f.sigma, a.ncols(), "dense")
}

/// Compose the effective operator. With a power allocation p the chain is
/// A = H · V_H · diag(√p) · Ξ; without it, A = H · Ξ. The returned operator
/// carries the singular form A = U · diag(σ_eff) · W whenever the dense SVD
/// is available.
pub fn effective_operator(
    h: &Arc<ChannelRealization>,
    p_alloc: Option<&[f64]>,
    t: &Arc<RandomTransform>,
) -> Result<LinearOperator> {
    let n = h.input_dim();
    if t.output_dim() != n {
        return Err(Error::Size(format!(
            "transform output {} does not match channel input {}",
            t.output_dim(),
            n
        )));
    }
    let mut stages = vec![Stage::Transform(t.clone())];
    let mut sqrt_p: Option<Vec<f64>> = None;
    if let Some(p) = p_alloc {
        if p.len() != n {
            return Err(Error::Size(format!(
                "power vector length {} does not match N = {n}",
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("power entries must be finite and >= 0".into()));
        }
        let factors = h.svd_factors()?;
        let roots: Vec<f64> = p.iter().map(|v| v.sqrt()).collect();
        stages.push(Stage::DiagReal(Arc::new(roots.clone())));
        stages.push(Stage::Dense(factors.v.clone()));
        sqrt_p = Some(roots);
    }
    stages.push(Stage::Sparse(h.clone()));
    let mut op = LinearOperator::new(stages)?;

    // Attach the singular form when the SVD fits the dense cap.
    if h.output_dim().max(n) <= DENSE_SVD_CAP {
        let factors = h.svd_factors()?;
        let mut sigma = factors.sigma.clone();
        sigma.resize(n, 0.0);
        let (sigma_eff, w) = match &sqrt_p {
            Some(roots) => {
                // A = U_H · diag(σ √p) · Ξ.
                let s: Vec<f64> = sigma.iter().zip(roots).map(|(s, r)| s * r).collect();
                (s, LinearOperator::new(vec![Stage::Transform(t.clone())])?)
            }
            None => {
                // A = U_H · diag(σ) · (V_Hᴴ Ξ).
                let vh = Arc::new(crate::util::adjoint(&factors.v));
                (
                    sigma,
                    LinearOperator::new(vec![
                        Stage::Transform(t.clone()),
                        Stage::Dense(vh),
                    ])?,
                )
            }
        };
        op.svd_form = Some(SvdForm {
            left_u: Some(factors.u.clone()),
            sigma: sigma_eff,
            w: Arc::new(w),
        });
    }
    Ok(op)
}
