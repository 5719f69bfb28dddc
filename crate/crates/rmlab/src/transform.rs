//! Random multiplexing operators and baseline multiplexing matrices.
//!
//! A [`RandomTransform`] is a unitary (or row/column-selected) operator
//! `Xi` applied to the symbol vector before transmission, `x = Xi s`. The
//! workhorse construction is permutation x fast-transform x random-phase,
//! `Xi = P U D` with `U` a normalized DFT/WHT/DCT; Haar matrices, the
//! interleaved block-sparse transform (IBST), and OFDM/OTFS/AFDM baselines
//! are also provided, together with compressed (row-selected) and spread
//! (column-selected) wrappers.
//!
//! The module also exposes empirical universality diagnostics: the max-norm
//! deviation of `(J^H J)^k` from a scaled identity and the off-diagonal-sum
//! statistic, both dense test-only paths.

use crate::util::{gram, matmul, max_norm, trial_rng};
use crate::{C64, Error, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Fast unitary base transform of the permutation construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FastBase {
    /// Normalized discrete Fourier transform.
    Dft,
    /// Normalized Walsh-Hadamard transform (dimension must be a power of 2).
    Wht,
    /// Orthonormal type-II discrete cosine transform.
    Dct,
}

/// Constructor parameters of a transform kind.
#[derive(Clone, Debug)]
pub enum KindSpec {
    /// Permutation x fast transform x optional random phase diagonal.
    PermFast { base: FastBase, phase: bool },
    /// Dense Haar-distributed unitary (desk scale only).
    Haar,
    /// Interleaved block-sparse transform: global permutation over a
    /// block-diagonal of `blocks` equal fast transforms.
    Ibst { blocks: usize, base: FastBase },
    /// Identity baseline.
    Identity,
    /// OFDM baseline `F^H` (normalized IDFT).
    Ofdm,
    /// OTFS baseline `F_L^H (x) I_K`; requires `n = K*L`.
    Otfs { k: usize, l: usize },
    /// AFDM baseline `L_{c1}^H F^H L_{c2}^H`, `L_c = diag(exp(-j 2 pi c n^2))`.
    Afdm { c1: f64, c2: f64 },
    /// Row selection of a square transform (output dimension `rows`).
    Compressed { inner: Box<KindSpec>, rows: usize },
    /// Column selection of a square transform (input dimension `cols`).
    Spread { inner: Box<KindSpec>, cols: usize },
}

/// Sampled, immutable multiplexing operator.
pub struct RandomTransform {
    /// Dimension of the underlying square unitary.
    n: usize,
    in_dim: usize,
    out_dim: usize,
    body: Body,
}

enum Body {
    Identity,
    Fast {
        base: FastBase,
        /// Row permutation: `out[i] = u[perm[i]]`; `None` means identity.
        perm: Option<Vec<usize>>,
        /// Random phase diagonal applied first; `None` means `D = I`.
        phases: Option<Vec<C64>>,
        fwd: Option<Arc<dyn Fft<f64>>>,
        inv: Option<Arc<dyn Fft<f64>>>,
    },
    Haar {
        m: Array2<C64>,
    },
    Ibst {
        blocks: usize,
        base: FastBase,
        perm: Vec<usize>,
        fwd: Option<Arc<dyn Fft<f64>>>,
        inv: Option<Arc<dyn Fft<f64>>>,
    },
    Otfs {
        k: usize,
        l: usize,
        fwd: Arc<dyn Fft<f64>>,
        inv: Arc<dyn Fft<f64>>,
    },
    Afdm {
        c1: f64,
        c2: f64,
        fwd: Arc<dyn Fft<f64>>,
        inv: Arc<dyn Fft<f64>>,
    },
    Compressed {
        inner: Box<RandomTransform>,
        rows: Vec<usize>,
    },
    Spread {
        inner: Box<RandomTransform>,
        cols: Vec<usize>,
    },
}

/// Samples a transform deterministically from `(kind, n, seed)`.
///
/// Permutations are drawn by seeded Fisher-Yates, phases uniformly on the
/// unit circle, Haar matrices by Gram-Schmidt orthonormalization of a seeded
/// IID complex Gaussian matrix (positive real triangular diagonal, hence
/// exactly Haar). Independent sub-streams are derived from `seed` with the
/// crate's counter-based hash so kinds with several random ingredients stay
/// reproducible.
pub fn sample_transform(kind: &KindSpec, n: usize, seed: u64) -> Result<RandomTransform> {
    if n == 0 {
        return Err(Error::Config("transform dimension must be positive".into()));
    }
    let mut planner = FftPlanner::new();
    let body = match kind {
        KindSpec::Identity => Body::Identity,
        KindSpec::PermFast { base, phase } => {
            check_base(*base, n)?;
            let mut perm_rng = trial_rng(seed, 1, 0);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut perm_rng);
            let phases = if *phase {
                let mut phase_rng = trial_rng(seed, 2, 0);
                Some(
                    (0..n)
                        .map(|_| {
                            C64::from_polar(
                                1.0,
                                phase_rng.gen::<f64>() * 2.0 * std::f64::consts::PI,
                            )
                        })
                        .collect(),
                )
            } else {
                None
            };
            let (fwd, inv) = plans(*base, n, &mut planner);
            Body::Fast {
                base: *base,
                perm: Some(perm),
                phases,
                fwd,
                inv,
            }
        }
        KindSpec::Haar => {
            let mut rng = trial_rng(seed, 3, 0);
            Body::Haar { m: haar(n, &mut rng) }
        }
        KindSpec::Ibst { blocks, base } => {
            if *blocks == 0 || n % *blocks != 0 {
                return Err(Error::Config(format!(
                    "IBST block count {blocks} must divide n = {n}"
                )));
            }
            let bs = n / *blocks;
            check_base(*base, bs)?;
            let mut perm_rng = trial_rng(seed, 4, 0);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut perm_rng);
            let (fwd, inv) = plans(*base, bs, &mut planner);
            Body::Ibst {
                blocks: *blocks,
                base: *base,
                perm,
                fwd,
                inv,
            }
        }
        KindSpec::Ofdm => {
            let fwd = planner.plan_fft_forward(n);
            let inv = planner.plan_fft_inverse(n);
            Body::Fast {
                base: FastBase::Dft,
                perm: None,
                phases: None,
                // OFDM is the adjoint DFT; modelled as DFT with swapped plans.
                fwd: Some(inv),
                inv: Some(fwd),
            }
        }
        KindSpec::Otfs { k, l } => {
            if k * l != n {
                return Err(Error::Config(format!("OTFS needs K*L = n, got {k}*{l} != {n}")));
            }
            Body::Otfs {
                k: *k,
                l: *l,
                fwd: planner.plan_fft_forward(*l),
                inv: planner.plan_fft_inverse(*l),
            }
        }
        KindSpec::Afdm { c1, c2 } => Body::Afdm {
            c1: *c1,
            c2: *c2,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        },
        KindSpec::Compressed { inner, rows } => {
            if *rows > n {
                return Err(Error::Config("compressed rows exceed dimension".into()));
            }
            let inner_t = sample_transform(inner, n, seed)?;
            if inner_t.in_dim != n || inner_t.out_dim != n {
                return Err(Error::Config("compressed wrapper needs a square inner kind".into()));
            }
            let mut rng = trial_rng(seed, 5, 0);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut rows_sel = idx[..*rows].to_vec();
            rows_sel.sort_unstable();
            Body::Compressed {
                inner: Box::new(inner_t),
                rows: rows_sel,
            }
        }
        KindSpec::Spread { inner, cols } => {
            if *cols > n {
                return Err(Error::Config("spread cols exceed dimension".into()));
            }
            let inner_t = sample_transform(inner, n, seed)?;
            if inner_t.in_dim != n || inner_t.out_dim != n {
                return Err(Error::Config("spread wrapper needs a square inner kind".into()));
            }
            let mut rng = trial_rng(seed, 6, 0);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut cols_sel = idx[..*cols].to_vec();
            cols_sel.sort_unstable();
            Body::Spread {
                inner: Box::new(inner_t),
                cols: cols_sel,
            }
        }
    };
    let (in_dim, out_dim) = match &body {
        Body::Compressed { rows, .. } => (n, rows.len()),
        Body::Spread { cols, .. } => (cols.len(), n),
        _ => (n, n),
    };
    Ok(RandomTransform {
        n,
        in_dim,
        out_dim,
        body,
    })
}

fn check_base(base: FastBase, n: usize) -> Result<()> {
    if base == FastBase::Wht && !n.is_power_of_two() {
        return Err(Error::Config(format!("WHT needs a power-of-two size, got {n}")));
    }
    Ok(())
}

#[allow(clippy::type_complexity)]
fn plans(
    base: FastBase,
    n: usize,
    planner: &mut FftPlanner<f64>,
) -> (Option<Arc<dyn Fft<f64>>>, Option<Arc<dyn Fft<f64>>>) {
    match base {
        FastBase::Wht => (None, None),
        FastBase::Dft | FastBase::Dct => (
            Some(planner.plan_fft_forward(n)),
            Some(planner.plan_fft_inverse(n)),
        ),
    }
}

/// Haar unitary via modified Gram-Schmidt of an IID CN(0,1) matrix. The
/// triangular factor's diagonal comes out real positive, so the Q factor is
/// exactly Haar distributed. One re-orthogonalization pass keeps
/// orthogonality at the 1e-12 level.
fn haar<R: Rng>(n: usize, rng: &mut R) -> Array2<C64> {
    let dist = rand_distr::StandardNormal;
    let mut m = Array2::from_shape_fn((n, n), |_| {
        C64::new(
            rng.sample::<f64, _>(dist) * std::f64::consts::FRAC_1_SQRT_2,
            rng.sample::<f64, _>(dist) * std::f64::consts::FRAC_1_SQRT_2,
        )
    });
    for j in 0..n {
        for _pass in 0..2 {
            for i in 0..j {
                let mut dot = C64::new(0.0, 0.0);
                for r in 0..n {
                    dot += m[(r, i)].conj() * m[(r, j)];
                }
                for r in 0..n {
                    let mi = m[(r, i)];
                    m[(r, j)] -= mi * dot;
                }
            }
        }
        let norm = (0..n).map(|r| m[(r, j)].norm_sqr()).sum::<f64>().sqrt();
        for r in 0..n {
            m[(r, j)] /= norm;
        }
    }
    m
}

impl RandomTransform {
    pub fn input_dim(&self) -> usize {
        self.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.out_dim
    }

    /// Estimated complex-multiply cost of one apply, used by the operator
    /// flop counters.
    pub fn flops_per_apply(&self) -> u64 {
        let n = self.n as u64;
        match &self.body {
            Body::Identity => 0,
            Body::Haar { .. } => n * n,
            Body::Compressed { inner, .. } | Body::Spread { inner, .. } => {
                inner.flops_per_apply()
            }
            _ => n * (64 - n.leading_zeros() as u64) + n,
        }
    }

    /// Forward application `x = Xi s`.
    pub fn apply(&self, s: &[C64]) -> Result<Vec<C64>> {
        if s.len() != self.in_dim {
            return Err(Error::Config(format!(
                "apply expects length {}, got {}",
                self.in_dim,
                s.len()
            )));
        }
        Ok(self.apply_unchecked(s))
    }

    /// Adjoint application `s = Xi^H x`.
    pub fn adjoint_apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.out_dim {
            return Err(Error::Config(format!(
                "adjoint_apply expects length {}, got {}",
                self.out_dim,
                x.len()
            )));
        }
        Ok(self.adjoint_unchecked(x))
    }

    pub(crate) fn apply_unchecked(&self, s: &[C64]) -> Vec<C64> {
        match &self.body {
            Body::Identity => s.to_vec(),
            Body::Fast {
                base,
                perm,
                phases,
                fwd,
                ..
            } => {
                let mut v = s.to_vec();
                if let Some(ph) = phases {
                    for (z, p) in v.iter_mut().zip(ph) {
                        *z *= p;
                    }
                }
                base_forward(*base, &mut v, fwd.as_deref());
                match perm {
                    Some(p) => p.iter().map(|&i| v[i]).collect(),
                    None => v,
                }
            }
            Body::Haar { m } => crate::util::matvec(m, s),
            Body::Ibst {
                blocks,
                base,
                perm,
                fwd,
                ..
            } => {
                let bs = self.n / blocks;
                let mut v = s.to_vec();
                for b in 0..*blocks {
                    base_forward(*base, &mut v[b * bs..(b + 1) * bs], fwd.as_deref());
                }
                perm.iter().map(|&i| v[i]).collect()
            }
            Body::Otfs { k, l, inv, .. } => {
                // (F_L^H (x) I_K): inverse DFT along the l-index for each k.
                let mut out = vec![C64::new(0.0, 0.0); self.n];
                let mut col = vec![C64::new(0.0, 0.0); *l];
                let scale = (*l as f64).sqrt().recip();
                for kk in 0..*k {
                    for ll in 0..*l {
                        col[ll] = s[ll * k + kk];
                    }
                    inv.process(&mut col);
                    for ll in 0..*l {
                        out[ll * k + kk] = col[ll] * scale;
                    }
                }
                out
            }
            Body::Afdm { c1, c2, inv, .. } => {
                let mut v: Vec<C64> = s
                    .iter()
                    .enumerate()
                    .map(|(i, z)| z * chirp_conj(*c2, i))
                    .collect();
                inv.process(&mut v);
                let scale = (self.n as f64).sqrt().recip();
                for (i, z) in v.iter_mut().enumerate() {
                    *z *= chirp_conj(*c1, i) * scale;
                }
                v
            }
            Body::Compressed { inner, rows } => {
                let full = inner.apply_unchecked(s);
                rows.iter().map(|&r| full[r]).collect()
            }
            Body::Spread { inner, cols } => {
                let mut full = vec![C64::new(0.0, 0.0); self.n];
                for (v, &c) in s.iter().zip(cols) {
                    full[c] = *v;
                }
                inner.apply_unchecked(&full)
            }
        }
    }

    pub(crate) fn adjoint_unchecked(&self, x: &[C64]) -> Vec<C64> {
        match &self.body {
            Body::Identity => x.to_vec(),
            Body::Fast {
                base,
                perm,
                phases,
                inv,
                ..
            } => {
                let mut v = match perm {
                    Some(p) => {
                        let mut u = vec![C64::new(0.0, 0.0); self.n];
                        for (i, &pi) in p.iter().enumerate() {
                            u[pi] = x[i];
                        }
                        u
                    }
                    None => x.to_vec(),
                };
                base_adjoint(*base, &mut v, inv.as_deref());
                if let Some(ph) = phases {
                    for (z, p) in v.iter_mut().zip(ph) {
                        *z *= p.conj();
                    }
                }
                v
            }
            Body::Haar { m } => crate::util::matvec_adj(m, x),
            Body::Ibst {
                blocks,
                base,
                perm,
                inv,
                ..
            } => {
                let bs = self.n / blocks;
                let mut v = vec![C64::new(0.0, 0.0); self.n];
                for (i, &pi) in perm.iter().enumerate() {
                    v[pi] = x[i];
                }
                for b in 0..*blocks {
                    base_adjoint(*base, &mut v[b * bs..(b + 1) * bs], inv.as_deref());
                }
                v
            }
            Body::Otfs { k, l, fwd, .. } => {
                let mut out = vec![C64::new(0.0, 0.0); self.n];
                let mut col = vec![C64::new(0.0, 0.0); *l];
                let scale = (*l as f64).sqrt().recip();
                for kk in 0..*k {
                    for ll in 0..*l {
                        col[ll] = x[ll * k + kk];
                    }
                    fwd.process(&mut col);
                    for ll in 0..*l {
                        out[ll * k + kk] = col[ll] * scale;
                    }
                }
                out
            }
            Body::Afdm { c1, c2, fwd, .. } => {
                let mut v: Vec<C64> = x
                    .iter()
                    .enumerate()
                    .map(|(i, z)| z * chirp_conj(*c1, i).conj())
                    .collect();
                fwd.process(&mut v);
                let scale = (self.n as f64).sqrt().recip();
                for (i, z) in v.iter_mut().enumerate() {
                    *z *= chirp_conj(*c2, i).conj() * scale;
                }
                v
            }
            Body::Compressed { inner, rows } => {
                let mut full = vec![C64::new(0.0, 0.0); self.n];
                for (v, &r) in x.iter().zip(rows) {
                    full[r] = *v;
                }
                inner.adjoint_unchecked(&full)
            }
            Body::Spread { inner, cols } => {
                let full = inner.adjoint_unchecked(x);
                cols.iter().map(|&c| full[c]).collect()
            }
        }
    }

    /// Dense materialization (apply to the standard basis); test and
    /// diagnostics scale only.
    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::from_elem((self.out_dim, self.in_dim), C64::new(0.0, 0.0));
        let mut e = vec![C64::new(0.0, 0.0); self.in_dim];
        for j in 0..self.in_dim {
            e[j] = C64::new(1.0, 0.0);
            let col = self.apply_unchecked(&e);
            for (i, v) in col.iter().enumerate() {
                m[(i, j)] = *v;
            }
            e[j] = C64::new(0.0, 0.0);
        }
        m
    }
}

/// `exp(+j 2 pi c i^2)`: conjugate of the AFDM chirp diagonal entry.
fn chirp_conj(c: f64, i: usize) -> C64 {
    let arg = 2.0 * std::f64::consts::PI * c * (i as f64) * (i as f64);
    C64::from_polar(1.0, arg)
}

fn base_forward(base: FastBase, v: &mut [C64], fwd: Option<&dyn Fft<f64>>) {
    match base {
        FastBase::Dft => {
            fwd.unwrap().process(v);
            let scale = (v.len() as f64).sqrt().recip();
            for z in v.iter_mut() {
                *z *= scale;
            }
        }
        FastBase::Wht => wht(v),
        FastBase::Dct => dct2(v, fwd.unwrap()),
    }
}

fn base_adjoint(base: FastBase, v: &mut [C64], inv: Option<&dyn Fft<f64>>) {
    match base {
        FastBase::Dft => {
            inv.unwrap().process(v);
            let scale = (v.len() as f64).sqrt().recip();
            for z in v.iter_mut() {
                *z *= scale;
            }
        }
        FastBase::Wht => wht(v),
        FastBase::Dct => dct3(v, inv.unwrap()),
    }
}

/// In-place normalized Walsh-Hadamard transform (self-adjoint).
fn wht(v: &mut [C64]) {
    let n = v.len();
    let mut h = 1;
    while h < n {
        for block in (0..n).step_by(2 * h) {
            for i in block..block + h {
                let (a, b) = (v[i], v[i + h]);
                v[i] = a + b;
                v[i + h] = a - b;
            }
        }
        h *= 2;
    }
    let scale = (n as f64).sqrt().recip();
    for z in v.iter_mut() {
        *z *= scale;
    }
}

/// Orthonormal DCT-II of a complex vector (real transform applied to both
/// components), via the even-odd reordering FFT algorithm.
fn dct2(v: &mut [C64], fwd: &dyn Fft<f64>) {
    let n = v.len();
    if n == 1 {
        return;
    }
    // Reorder: u[j] = v[2j], u[n-1-j] = v[2j+1].
    let mut u = vec![C64::new(0.0, 0.0); n];
    for j in 0..n.div_ceil(2) {
        u[j] = v[2 * j];
    }
    for j in 0..n / 2 {
        u[n - 1 - j] = v[2 * j + 1];
    }
    // One complex FFT transforms both real components at once: split after.
    fwd.process(&mut u);
    let s0 = (1.0 / n as f64).sqrt();
    let sk = (2.0 / n as f64).sqrt();
    // T_k = exp(-j pi k / 2n) U_k; the DCT of the real part of v is
    // Re T_k only when v is real, so handle re/im separately using the
    // linearity of the FFT over real/imaginary parts:
    // U = F(re u) + j F(im u); both sub-FFTs are recovered by symmetry.
    let mut out = vec![C64::new(0.0, 0.0); n];
    for k in 0..n {
        let kn = if k == 0 { 0 } else { n - k };
        let uk = u[k];
        let ukn = if k == 0 { u[0] } else { u[kn] };
        // FFT of the real part: (U_k + conj(U_{n-k}))/2; imaginary part
        // analogous.
        let fr = (uk + ukn.conj()) * 0.5;
        let fi = (uk - ukn.conj()) * C64::new(0.0, -0.5);
        let tw = C64::from_polar(
            1.0,
            -std::f64::consts::PI * k as f64 / (2.0 * n as f64),
        );
        let cr = (tw * fr).re;
        let ci = (tw * fi).re;
        let s = if k == 0 { s0 } else { sk };
        out[k] = C64::new(cr * s, ci * s);
    }
    v.copy_from_slice(&out);
}

/// Orthonormal DCT-III (the adjoint/inverse of [`dct2`]).
fn dct3(v: &mut [C64], inv: &dyn Fft<f64>) {
    let n = v.len();
    if n == 1 {
        return;
    }
    let s0 = (n as f64).sqrt();
    let sk = (n as f64 / 2.0).sqrt();
    // Undo the normalization: C_k = X_k / s_k (per real component).
    let c: Vec<C64> = v
        .iter()
        .enumerate()
        .map(|(k, z)| if k == 0 { z * s0 } else { z * sk })
        .collect();
    // V_k = exp(j pi k/2n) (C_k - j C_{n-k}), with C_n = 0; valid per real
    // component, and both components share the complex arithmetic.
    let mut u = vec![C64::new(0.0, 0.0); n];
    for k in 0..n {
        let cnk = if k == 0 { C64::new(0.0, 0.0) } else { c[n - k] };
        // Build separately for real and imaginary components of the input:
        // real component a_k = Re C_k, Re C_{n-k}; V^r_k = e^{j..}(a_k - j a_{n-k}).
        let tw = C64::from_polar(1.0, std::f64::consts::PI * k as f64 / (2.0 * n as f64));
        let vr = tw * C64::new(c[k].re, -cnk.re);
        let vi = tw * C64::new(c[k].im, -cnk.im);
        // Recombine: the complex FFT input whose real-part FFT is vr and
        // imaginary-part FFT is vi.
        u[k] = vr + vi * C64::new(0.0, 1.0);
    }
    inv.process(&mut u);
    let scale = 1.0 / n as f64;
    // Undo the even-odd reordering.
    for j in 0..n.div_ceil(2) {
        v[2 * j] = u[j] * scale;
    }
    for j in 0..n / 2 {
        v[2 * j + 1] = u[n - 1 - j] * scale;
    }
}

/// Dense-path size cap for the diagnostics below.
const DIAG_CAP: usize = 4096;

/// Max-norm deviations `||(J^H J)^k - (tr/N) I||_max` for `k = 1..k_max`.
///
/// Small values (decaying like `N^{-1/2}`) indicate membership in the
/// universality class for which state evolution is exact.
pub fn universality_diagnostic(j: &Array2<C64>, k_max: usize) -> Result<Vec<f64>> {
    let n = j.ncols();
    if n > DIAG_CAP || j.nrows() > DIAG_CAP {
        return Err(Error::Size(format!("diagnostic capped at {DIAG_CAP}, got {n}")));
    }
    if k_max == 0 || k_max > 6 {
        return Err(Error::Config("k_max must be in 1..=6".into()));
    }
    let b = gram(j);
    let mut p = b.clone();
    let mut out = Vec::with_capacity(k_max);
    for _k in 1..=k_max {
        let tr_over_n = (0..n).map(|i| p[(i, i)].re).sum::<f64>() / n as f64;
        let mut dev = p.clone();
        for i in 0..n {
            dev[(i, i)] -= C64::new(tr_over_n, 0.0);
        }
        out.push(max_norm(&dev));
        if out.len() < k_max {
            p = matmul(&p, &b);
        }
    }
    Ok(out)
}

/// Off-diagonal-sum statistic `|sum_{i != j} [(A^H A)^k]_{i,j}|`.
pub fn off_diagonal_sum(a: &Array2<C64>, k: usize) -> Result<f64> {
    let n = a.ncols();
    if n > DIAG_CAP || a.nrows() > DIAG_CAP {
        return Err(Error::Size(format!("diagnostic capped at {DIAG_CAP}, got {n}")));
    }
    if k == 0 || k > 6 {
        return Err(Error::Config("k must be in 1..=6".into()));
    }
    let b = gram(a);
    let mut p = b.clone();
    for _ in 1..k {
        p = matmul(&p, &b);
    }
    let total: C64 = p.iter().sum();
    let trace: C64 = (0..n).map(|i| p[(i, i)]).sum();
    Ok((total - trace).norm())
}

/// Parses the CLI kind string, e.g. `perm-dft`, `perm-wht+phase`, `haar`,
/// `ibst:J=8`, `otfs:K=32,L=32`, `afdm:c1=0.1,c2=0.01`, `ofdm`, `identity`.
pub fn parse_kind(s: &str) -> Result<KindSpec> {
    let (head, args) = match s.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (s, None),
    };
    let (head, phase) = match head.strip_suffix("+phase") {
        Some(h) => (h, true),
        None => (head, false),
    };
    let kv = |args: &str| -> Result<Vec<(String, f64)>> {
        args.split(',')
            .map(|pair| {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("bad kind argument '{pair}'")))?;
                let val: f64 = v
                    .parse()
                    .map_err(|_| Error::Config(format!("bad numeric value '{v}'")))?;
                Ok((k.trim().to_ascii_lowercase(), val))
            })
            .collect()
    };
    match head.to_ascii_lowercase().as_str() {
        "identity" => Ok(KindSpec::Identity),
        "ofdm" => Ok(KindSpec::Ofdm),
        "haar" => Ok(KindSpec::Haar),
        "perm-dft" => Ok(KindSpec::PermFast { base: FastBase::Dft, phase }),
        "perm-wht" => Ok(KindSpec::PermFast { base: FastBase::Wht, phase }),
        "perm-dct" => Ok(KindSpec::PermFast { base: FastBase::Dct, phase }),
        "ibst" => {
            let args = kv(args.ok_or_else(|| Error::Config("ibst needs :J=...".into()))?)?;
            let j = args
                .iter()
                .find(|(k, _)| k == "j")
                .ok_or_else(|| Error::Config("ibst needs J".into()))?
                .1;
            Ok(KindSpec::Ibst {
                blocks: j as usize,
                base: FastBase::Dft,
            })
        }
        "otfs" => {
            let args = kv(args.ok_or_else(|| Error::Config("otfs needs :K=..,L=..".into()))?)?;
            let get = |name: &str| {
                args.iter()
                    .find(|(k, _)| k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::Config(format!("otfs needs {name}")))
            };
            Ok(KindSpec::Otfs {
                k: get("k")? as usize,
                l: get("l")? as usize,
            })
        }
        "afdm" => {
            let args = kv(args.ok_or_else(|| Error::Config("afdm needs :c1=..,c2=..".into()))?)?;
            let get = |name: &str| {
                args.iter()
                    .find(|(k, _)| k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::Config(format!("afdm needs {name}")))
            };
            Ok(KindSpec::Afdm {
                c1: get("c1")?,
                c2: get("c2")?,
            })
        }
        other => Err(Error::Config(format!("unknown transform kind '{other}'"))),
    }
}
