//! Shared numeric helpers: Gaussian tails, Gauss-Hermite quadrature,
//! quadrature/bisection utilities, dense complex matrix helpers and seeded
//! RNG stream derivation.

use crate::C64;
use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Standard Gaussian tail Q(x) = P(Z > x), computed through `erfc` with
/// relative error below 1e-12 over the range of interest.
pub fn q_func(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Nodes and weights of the n-point Gauss-Hermite rule for the weight
/// function exp(-x^2) on the real line (physicists' convention).
///
/// Newton iteration on the Hermite recurrence; nodes accurate to ~1e-14.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        // Initial guesses per Numerical Recipes' gauher.
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            // Evaluate the orthonormal Hermite polynomial at z.
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    // Return in increasing order.
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Bisection for a root of `f` on `[lo, hi]`; requires a sign change.
/// Refines until the bracket width drops below `xtol`.
pub fn bisect(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, xtol: f64) -> f64 {
    let mut flo = f(lo);
    let fhi = f(hi);
    debug_assert!(flo == 0.0 || fhi == 0.0 || (flo < 0.0) != (fhi < 0.0));
    if flo == 0.0 {
        return lo;
    }
    if fhi == 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < xtol {
            return mid;
        }
        let fmid = f(mid);
        if fmid == 0.0 {
            return mid;
        }
        if (fmid < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Dense complex matrix-vector product `m * v`.
pub fn matvec(m: &Array2<C64>, v: &[C64]) -> Vec<C64> {
    assert_eq!(m.ncols(), v.len());
    m.rows()
        .into_iter()
        .map(|row| {
            let mut acc = C64::new(0.0, 0.0);
            for (a, b) in row.iter().zip(v.iter()) {
                acc += a * b;
            }
            acc
        })
        .collect()
}

/// Dense conjugate-transpose matrix-vector product `m^H * v`.
pub fn matvec_adj(m: &Array2<C64>, v: &[C64]) -> Vec<C64> {
    assert_eq!(m.nrows(), v.len());
    let mut out = vec![C64::new(0.0, 0.0); m.ncols()];
    for (row, vi) in m.rows().into_iter().zip(v.iter()) {
        for (o, a) in out.iter_mut().zip(row.iter()) {
            *o += a.conj() * vi;
        }
    }
    out
}

/// Dense complex matrix product `a * b` (naive; diagnostics-scale only).
pub fn matmul(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    assert_eq!(a.ncols(), b.nrows());
    let (n, k, m) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = Array2::from_elem((n, m), C64::new(0.0, 0.0));
    for i in 0..n {
        for l in 0..k {
            let ail = a[(i, l)];
            if ail.norm_sqr() == 0.0 {
                continue;
            }
            for j in 0..m {
                out[(i, j)] += ail * b[(l, j)];
            }
        }
    }
    out
}

/// Conjugate transpose of a dense matrix.
pub fn adjoint(a: &Array2<C64>) -> Array2<C64> {
    let (n, m) = (a.nrows(), a.ncols());
    Array2::from_shape_fn((m, n), |(i, j)| a[(j, i)].conj())
}

/// Gram matrix `a^H a`.
pub fn gram(a: &Array2<C64>) -> Array2<C64> {
    matmul(&adjoint(a), a)
}

/// Max-norm (largest absolute entry) of a complex matrix.
pub fn max_norm(a: &Array2<C64>) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Squared Euclidean norm of a complex slice.
pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Counter-based derivation of an independent RNG stream.
///
/// The stream key is SHA-256 over the little-endian bytes of
/// `(master_seed, snr_index, trial_index)`; the first 32 digest bytes seed a
/// ChaCha8 generator. Streams are therefore independent of scheduling order.
pub fn trial_rng(master_seed: u64, snr_index: u64, trial_index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(snr_index.to_le_bytes());
    hasher.update(trial_index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Normalized sinc(x) = sin(pi x)/(pi x).
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-9 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}
