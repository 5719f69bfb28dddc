//! Power allocation over the effective spectrum.
//!
//! Two optimizers and two waterfilling baselines, all on the simplex
//! `{p >= 0, sum p_i = P_sum}`:
//!
//! * `optimize_map_ber`: bisection on a goal variance; at each probe the
//!   inner problem `max_p min_v {rho_SE(v, p) - phi_SE^{-1}(v)}` over a
//!   log-sampled variance grid is concave and solved by projected
//!   supergradient ascent with a diminishing step plus a small-step
//!   refinement pass. A safety margin `epsilon` guards against the
//!   finite-size gap between state evolution and the actual detector.
//! * `optimize_capacity`: maximizes the area-form capacity
//!   `int min{eta_SE(v, p), mmse^{-1}(v)} dv` with analytic supergradients
//!   obtained by implicit differentiation of the linear-stage inverse.
//! * `waterfilling_gaussian` / `waterfilling_mercury`: classical baselines.

use std::sync::Arc;

use ndarray::Array2;

use crate::analysis;
use crate::channel::{SpectralProfile, SvdFactors};
use crate::constellation::TransferCurve;
use crate::{Error, Result, C64};

#[derive(Clone, Debug)]
pub struct AllocOptions {
    /// Outer bisection resolution on the goal variance.
    pub delta_v: f64,
    /// Number of log-uniform variance samples per inner problem.
    pub v_points: usize,
    /// Safety margin; `None` selects 0.45 scaled proportionally to N/2048.
    pub epsilon: Option<f64>,
    /// Supergradient ascent iteration budget per inner solve.
    pub max_ascent_iters: usize,
    /// Quadrature nodes for the capacity objective during ascent.
    pub capacity_nodes: usize,
    /// Lower integration cutoff for the capacity area.
    pub v_low: f64,
}

impl Default for AllocOptions {
    fn default() -> Self {
        Self {
            delta_v: 1e-6,
            v_points: 100,
            epsilon: None,
            max_ascent_iters: 5000,
            capacity_nodes: 400,
            v_low: 1e-4,
        }
    }
}

impl AllocOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_v > 0.0 && self.delta_v < 1.0) {
            return Err(Error::Config("delta_v must lie in (0, 1)".into()));
        }
        if self.v_points < 2 {
            return Err(Error::Config("need at least 2 variance samples".into()));
        }
        if self.max_ascent_iters == 0 {
            return Err(Error::Config("ascent iteration budget must be positive".into()));
        }
        if !(self.v_low > 0.0 && self.v_low < 1.0) {
            return Err(Error::Config("v_low must lie in (0, 1)".into()));
        }
        if self.capacity_nodes < 8 {
            return Err(Error::Config("need at least 8 capacity nodes".into()));
        }
        Ok(())
    }

    fn margin(&self, n: usize) -> f64 {
        self.epsilon.unwrap_or(0.45 * n as f64 / 2048.0)
    }
}

#[derive(Clone, Debug)]
pub struct Allocation {
    pub p: Vec<f64>,
    pub objective_tag: String,
    /// Fixed-point SNR rho* (map-ber), capacity in bits (capacity,
    /// wf-gaussian), or NaN where no single figure applies (wf-mercury:
    /// evaluate with the analysis module under the metric of interest).
    pub achieved: f64,
    /// Total inner-solver iterations spent.
    pub solver_iters: usize,
}

impl Allocation {
    pub fn check_feasible(&self, p_sum: f64) -> Result<()> {
        if self.p.iter().any(|x| *x < -1e-12 || !x.is_finite()) {
            return Err(Error::Solver("allocation left the simplex".into()));
        }
        let s: f64 = self.p.iter().sum();
        if (s - p_sum).abs() > 1e-9 * p_sum.max(1.0) {
            return Err(Error::Solver(format!(
                "allocation budget violated: sum {s} vs {p_sum}"
            )));
        }
        Ok(())
    }
}

/// Euclidean projection onto `{p >= 0, sum p_i = total}` (sort-based exact
/// algorithm).
pub fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - total) / (k + 1) as f64;
        if uk - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Cancellation-free SE SNR of the linear stage:
/// rho(v, p) = 1/gamma_hat(v, p) - 1/v written as a ratio of positive sums.
pub fn rho_se(
    v: f64,
    p: Option<&[f64]>,
    profile: &SpectralProfile,
    sigma2: f64,
) -> Result<f64> {
    let eigs = analysis::eigenvalues(profile, p)?;
    if !(v > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::Domain("v and sigma2 must be positive".into()));
    }
    let u = 1.0 / v;
    let n = eigs.len() as f64;
    let den: f64 = eigs.iter().map(|l| 1.0 / (u + l / sigma2)).sum::<f64>() / n;
    let num: f64 = eigs.iter().map(|l| (l / sigma2) / (u + l / sigma2)).sum::<f64>() / n;
    Ok((num / den).max(0.0))
}

/// Inverse of the NLD variance transfer: the SNR rho at which the
/// divergence-free demodulator's extrinsic output variance equals v, i.e.
/// the root of 1/mmse(rho) - rho = 1/v.
pub fn phi_se_inverse(v: f64, curve: &TransferCurve) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::Domain("v must be positive".into()));
    }
    if v >= 1.0 {
        return Ok(0.0);
    }
    let h = |rho: f64| 1.0 / curve.eval(rho).clamp(1e-300, 1.0) - rho;
    let target = 1.0 / v;
    let mut hi = 1.0;
    let mut guard = 0;
    while h(hi) < target {
        hi *= 2.0;
        guard += 1;
        if guard > 80 {
            return Err(Error::Domain(format!(
                "demodulator transfer cannot reach variance {v} (curve range exceeded)"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-10 * (1.0 + hi) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Projected supergradient ascent on the simplex. The oracle returns the
/// objective value and a supergradient at the query point. Runs a main pass
/// with step c/sqrt(k) and a refinement pass with a 20x smaller step from
/// the incumbent; returns the best iterate seen.
fn ascend(
    p0: Vec<f64>,
    p_sum: f64,
    iters: usize,
    oracle: &dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
) -> Result<(Vec<f64>, f64, usize)> {
    let n = p0.len();
    let base_step = p_sum / (n as f64).sqrt();
    let mut best_p = p0.clone();
    let (mut best_f, _) = oracle(&p0)?;
    let mut spent = 1usize;
    for (step_scale, budget) in [(1.0, iters), (0.05, iters / 4 + 1)] {
        let mut p = best_p.clone();
        let mut since_improve = 0usize;
        for k in 1..=budget {
            let (f, g) = oracle(&p)?;
            spent += 1;
            if f > best_f + 1e-15 * (1.0 + best_f.abs()) {
                best_f = f;
                best_p = p.clone();
                since_improve = 0;
            } else {
                since_improve += 1;
            }
            let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gnorm < 1e-300 {
                break;
            }
            if since_improve > 800 {
                break;
            }
            let step = step_scale * base_step / (k as f64).sqrt();
            let cand: Vec<f64> = p
                .iter()
                .zip(&g)
                .map(|(pi, gi)| pi + step * gi / gnorm)
                .collect();
            p = project_simplex(&cand, p_sum);
        }
    }
    Ok((best_p, best_f, spent))
}

fn active_start(profile: &SpectralProfile, p_sum: f64) -> Vec<f64> {
    // Uniform over channels with non-zero gain; dead channels start (and
    // stay) at zero since their supergradient component vanishes.
    let sv = &profile.singular_values;
    let active = sv.iter().filter(|s| **s > 0.0).count().max(1);
    sv.iter()
        .map(|s| if *s > 0.0 { p_sum / active as f64 } else { 0.0 })
        .collect()
}

/// Inner problem of the MAP-BER bisection: maximize
/// min_{v in grid} {rho_SE(v, p) - phi_SE^{-1}(v)}.
fn solve_inner_map_ber(
    v_grid: &[f64],
    phi_inv: &[f64],
    profile: &SpectralProfile,
    sigma2: f64,
    p_sum: f64,
    iters: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    let sv = &profile.singular_values;
    let n = sv.len();
    let varrho: Vec<f64> = sv.iter().map(|s| s * s / sigma2).collect();
    let oracle = move |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut worst = f64::INFINITY;
        let mut worst_v = v_grid[0];
        for (&v, &pi) in v_grid.iter().zip(phi_inv) {
            let u = 1.0 / v;
            let mut den = 0.0;
            let mut num = 0.0;
            for (r, pw) in varrho.iter().zip(p) {
                let l = r * pw;
                den += 1.0 / (u + l);
                num += l / (u + l);
            }
            let val = (num / den).max(0.0) - pi;
            if val < worst {
                worst = val;
                worst_v = v;
            }
        }
        // Supergradient of rho at the active grid point:
        // d rho / d p_i = varrho_i / (N gamma_hat^2 (1/v + varrho_i p_i)^2).
        let u = 1.0 / worst_v;
        let gamma_hat: f64 =
            varrho.iter().zip(p).map(|(r, pi)| 1.0 / (u + r * pi)).sum::<f64>() / n as f64;
        let g: Vec<f64> = varrho
            .iter()
            .zip(p)
            .map(|(r, pi)| {
                let d = u + r * pi;
                r / (n as f64 * gamma_hat * gamma_hat * d * d)
            })
            .collect();
        Ok((worst, g))
    };
    ascend(active_start(profile, p_sum), p_sum, iters, &oracle)
}

fn log_grid(lo: f64, count: usize) -> Vec<f64> {
    // Log-uniform samples in [lo, 1), excluding 1 itself.
    (0..count)
        .map(|j| (lo.ln() * (1.0 - j as f64 / count as f64)).exp())
        .collect()
}

/// MAP-BER power allocation: outer bisection on the goal variance, inner
/// concave max-min solved by projected supergradient ascent, with a safety
/// margin on both the grid minimum and the probe point.
pub fn optimize_map_ber(
    profile: &SpectralProfile,
    sigma2: f64,
    curve: &TransferCurve,
    p_sum: f64,
    opts: &AllocOptions,
) -> Result<Allocation> {
    opts.validate()?;
    if !(p_sum > 0.0) {
        return Err(Error::Config("P_sum must be positive".into()));
    }
    let n = profile.singular_values.len();
    if profile.singular_values.iter().all(|s| *s == 0.0) {
        return Err(Error::Domain("all channel gains are zero".into()));
    }
    let eps = opts.margin(n);
    let mut v_low_end = 0.0f64;
    let mut v_up = 1.0f64;
    let mut best: Option<(Vec<f64>, usize)> = None;
    let mut spent_total = 0usize;
    while v_up - v_low_end > opts.delta_v {
        let v = 0.5 * (v_low_end + v_up);
        let grid = log_grid(v, opts.v_points);
        let phi_inv: Vec<f64> = grid
            .iter()
            .map(|&vv| phi_se_inverse(vv, curve))
            .collect::<Result<_>>()?;
        let (p, c, spent) =
            solve_inner_map_ber(&grid, &phi_inv, profile, sigma2, p_sum, opts.max_ascent_iters)?;
        spent_total += spent;
        if c > eps {
            let d = rho_se(v, Some(&p), profile, sigma2)? - phi_se_inverse(v, curve)?;
            best = Some((p.clone(), spent_total));
            if d <= eps {
                break;
            }
            v_up = v;
        } else {
            v_low_end = v;
        }
    }
    let (mut p, iters) = best.ok_or_else(|| {
        Error::Solver("MAP-BER bisection found no feasible goal variance".into())
    })?;
    let (mut state, _) = analysis::se_fixed_point(Some(&p), profile, sigma2, curve)?;
    // Polish with projected ascent on the reachable fixed-point SNR itself.
    // At a stable fixed point the total derivative of the fixed-point SNR
    // with respect to p is the partial supergradient of rho_SE at the
    // converged variance scaled by a positive factor, so the partial
    // direction is an ascent direction. Moves are only accepted when the
    // re-solved fixed point improves, which keeps the iterate in the same
    // basin as the bisection solution.
    let varrho: Vec<f64> = profile.singular_values.iter().map(|s| s * s / sigma2).collect();
    let mut step = p_sum / n as f64;
    for _ in 0..200 {
        let u = 1.0 / state.v_phi.max(1e-300);
        let gamma_hat: f64 =
            varrho.iter().zip(&p).map(|(r, pi)| 1.0 / (u + r * pi)).sum::<f64>() / n as f64;
        let g: Vec<f64> = varrho
            .iter()
            .zip(&p)
            .map(|(r, pi)| {
                let d = u + r * pi;
                r / (n as f64 * gamma_hat * gamma_hat * d * d)
            })
            .collect();
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(gnorm > 0.0) {
            break;
        }
        let cand: Vec<f64> = p
            .iter()
            .zip(&g)
            .map(|(pi, gi)| pi + step * gi / gnorm)
            .collect();
        let cand = project_simplex(&cand, p_sum);
        // A slow-converging fixed point just means the candidate is rejected.
        let cand_state = analysis::se_fixed_point(Some(&cand), profile, sigma2, curve)
            .ok()
            .map(|(s, _)| s);
        if let Some(cand_state) = cand_state.filter(|s| s.rho_gamma > state.rho_gamma) {
            p = cand;
            state = cand_state;
        } else {
            step *= 0.5;
            if step < 1e-12 * p_sum {
                break;
            }
        }
    }
    let alloc = Allocation {
        p,
        objective_tag: "map-ber".into(),
        achieved: state.rho_gamma,
        solver_iters: iters,
    };
    alloc.check_feasible(p_sum)?;
    Ok(alloc)
}

/// Area-form capacity in nats together with its supergradient, sharing the
/// quadrature layout of `analysis::c_mimo_area_with`.
fn capacity_value_grad(
    p: &[f64],
    profile: &SpectralProfile,
    sigma2: f64,
    curve: &TransferCurve,
    v_low: f64,
    nodes: usize,
) -> Result<(f64, Vec<f64>)> {
    let n = p.len();
    let varrho: Vec<f64> = profile
        .singular_values
        .iter()
        .map(|s| s * s / sigma2)
        .collect();
    let eigs: Vec<f64> = varrho.iter().zip(p).map(|(r, pi)| r * pi).collect();
    let mut grad = vec![0.0; n];
    if eigs.iter().all(|l| *l == 0.0) {
        return Ok((0.0, grad));
    }
    // Evaluate g(v) = min{eta, mmse^{-1}} and, on the eta branch, the
    // analytic derivative d eta / d p_i = varrho_i a_i^2 / sum_j a_j^2 with
    // a_j = 1/(1/vtilde + varrho_j p_j), by implicit differentiation of
    // gamma_hat(vtilde, p) = v.
    let eval = |v: f64, grad_w: f64, grad: &mut [f64]| -> Result<f64> {
        let eta = analysis::r_transform(v, &eigs)?;
        let inv = crate::constellation::mmse_inverse(v, curve)?;
        if eta <= inv {
            let u_tilde = 1.0 / v - eta; // = 1/vtilde
            let a: Vec<f64> = eigs.iter().map(|l| 1.0 / (u_tilde + l)).collect();
            let denom: f64 = a.iter().map(|x| x * x).sum();
            if denom.is_finite() && denom > 0.0 {
                for i in 0..n {
                    grad[i] += grad_w * varrho[i] * a[i] * a[i] / denom;
                }
            }
            Ok(eta)
        } else {
            Ok(inv)
        }
    };
    let ratio = (1.0 / v_low).powf(1.0 / (nodes - 1) as f64);
    // Node weights: trapezoid over the log grid plus the rectangular tail
    // weight v_low on the first node.
    let mut vs = Vec::with_capacity(nodes);
    for i in 0..nodes {
        vs.push(if i + 1 == nodes { 1.0 } else { v_low * ratio.powi(i as i32) });
    }
    let mut weights = vec![0.0; nodes];
    for i in 1..nodes {
        let h = vs[i] - vs[i - 1];
        weights[i - 1] += 0.5 * h;
        weights[i] += 0.5 * h;
    }
    weights[0] += v_low;
    let mut nats = 0.0;
    for i in 0..nodes {
        nats += weights[i] * eval(vs[i], weights[i], &mut grad)?;
    }
    Ok((nats, grad))
}

/// Capacity-maximizing power allocation by projected supergradient ascent
/// on the concave area objective.
pub fn optimize_capacity(
    profile: &SpectralProfile,
    sigma2: f64,
    curve: &TransferCurve,
    p_sum: f64,
    opts: &AllocOptions,
) -> Result<Allocation> {
    opts.validate()?;
    if !(p_sum > 0.0) {
        return Err(Error::Config("P_sum must be positive".into()));
    }
    if profile.singular_values.iter().all(|s| *s == 0.0) {
        return Err(Error::Domain("all channel gains are zero".into()));
    }
    let oracle = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        capacity_value_grad(p, profile, sigma2, curve, opts.v_low, opts.capacity_nodes)
    };
    // The smooth concave objective needs far fewer steps than the
    // non-smooth MAP-BER inner problem.
    let iters = (opts.max_ascent_iters / 8).max(200);
    // Multi-start: besides the uniform active-set start, seed the ascent from
    // the waterfilling heuristics, which are often near-optimal and guarantee
    // the result dominates them even when the ascent budget is tight.
    let mut starts = vec![active_start(profile, p_sum)];
    if let Ok(wf) = waterfilling_gaussian(profile, sigma2, p_sum) {
        starts.push(wf.p);
    }
    if !curve.is_gaussian_exact() {
        if let Ok(wf) = waterfilling_mercury(profile, sigma2, p_sum, curve) {
            starts.push(wf.p);
        }
    }
    let mut p = Vec::new();
    let mut achieved = f64::NEG_INFINITY;
    let mut spent = 0;
    for start in starts {
        let (cand, _, used) = ascend(start, p_sum, iters, &oracle)?;
        spent += used;
        let value = analysis::c_mimo_area(Some(&cand), profile, sigma2, curve)?;
        if value > achieved {
            achieved = value;
            p = cand;
        }
    }
    let alloc = Allocation {
        p,
        objective_tag: "capacity".into(),
        achieved,
        solver_iters: spent,
    };
    alloc.check_feasible(p_sum)?;
    Ok(alloc)
}

/// Gaussian waterfilling: p_i = max(0, mu - 1/varrho_i) with the level mu
/// fixed by the power budget.
pub fn waterfilling_gaussian(
    profile: &SpectralProfile,
    sigma2: f64,
    p_sum: f64,
) -> Result<Allocation> {
    if !(p_sum > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::Config("P_sum and sigma2 must be positive".into()));
    }
    let varrho: Vec<f64> = profile
        .singular_values
        .iter()
        .map(|s| s * s / sigma2)
        .collect();
    if varrho.iter().all(|r| *r == 0.0) {
        return Err(Error::Domain("all channel gains are zero".into()));
    }
    let fill = |mu: f64| -> f64 {
        varrho
            .iter()
            .map(|&r| if r > 0.0 { (mu - 1.0 / r).max(0.0) } else { 0.0 })
            .sum()
    };
    let mut lo = 0.0;
    let mut hi = p_sum + varrho.iter().filter(|r| **r > 0.0).map(|r| 1.0 / r).fold(0.0, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fill(mid) < p_sum {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    let mut p: Vec<f64> = varrho
        .iter()
        .map(|&r| if r > 0.0 { (mu - 1.0 / r).max(0.0) } else { 0.0 })
        .collect();
    rescale_to_budget(&mut p, p_sum);
    let achieved = p
        .iter()
        .zip(&varrho)
        .map(|(pi, r)| (1.0 + pi * r).ln())
        .sum::<f64>()
        / (p.len() as f64 * std::f64::consts::LN_2);
    let alloc = Allocation {
        p,
        objective_tag: "wf-gaussian".into(),
        achieved,
        solver_iters: 200,
    };
    alloc.check_feasible(p_sum)?;
    Ok(alloc)
}

/// Mercury/waterfilling for discrete constellations:
/// p_i = (1/varrho_i) mmse^{-1}(min{1, eta/varrho_i}) with eta fixed by the
/// power budget; on active channels varrho_i mmse(varrho_i p_i) = eta.
pub fn waterfilling_mercury(
    profile: &SpectralProfile,
    sigma2: f64,
    p_sum: f64,
    curve: &TransferCurve,
) -> Result<Allocation> {
    if !(p_sum > 0.0) || !(sigma2 > 0.0) {
        return Err(Error::Config("P_sum and sigma2 must be positive".into()));
    }
    let varrho: Vec<f64> = profile
        .singular_values
        .iter()
        .map(|s| s * s / sigma2)
        .collect();
    let r_max = varrho.iter().cloned().fold(0.0, f64::max);
    if r_max == 0.0 {
        return Err(Error::Domain("all channel gains are zero".into()));
    }
    let p_of = |eta: f64| -> Result<Vec<f64>> {
        varrho
            .iter()
            .map(|&r| {
                if r <= 0.0 || eta >= r {
                    Ok(0.0)
                } else {
                    Ok(curve.inverse((eta / r).min(1.0))? / r)
                }
            })
            .collect()
    };
    // The budget is strictly decreasing in eta; bisect geometrically since
    // the bracket spans many decades.
    let mut lo = r_max * 1e-15;
    let mut hi = r_max;
    if p_of(lo)?.iter().sum::<f64>() < p_sum {
        return Err(Error::Domain(
            "mercury waterfilling: mmse curve range exceeded for this budget".into(),
        ));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if p_of(mid)?.iter().sum::<f64>() > p_sum {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut p = p_of((lo * hi).sqrt())?;
    rescale_to_budget(&mut p, p_sum);
    let alloc = Allocation {
        p,
        objective_tag: "wf-mercury".into(),
        achieved: f64::NAN,
        solver_iters: 200,
    };
    alloc.check_feasible(p_sum)?;
    Ok(alloc)
}

fn rescale_to_budget(p: &mut [f64], p_sum: f64) {
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        let f = p_sum / s;
        for x in p.iter_mut() {
            *x *= f;
        }
    }
}

/// Uniform allocation over all channels (baseline).
pub fn uniform_allocation(n: usize, p_sum: f64) -> Allocation {
    Allocation {
        p: vec![p_sum / n as f64; n],
        objective_tag: "uniform".into(),
        achieved: f64::NAN,
        solver_iters: 0,
    }
}

/// Operator factors of the optimal power matrix P = V_H diag(sqrt p): the
/// right singular basis of the channel and the per-channel amplitudes.
/// These plug directly into the channel module's effective operator; the
/// amplitude diagonal always sits before the random transform is applied.
pub fn assemble_p(
    p: &[f64],
    svd: &SvdFactors,
) -> Result<(Arc<Array2<C64>>, Vec<f64>)> {
    if p.len() != svd.v.ncols() {
        return Err(Error::Size(format!(
            "allocation length {} does not match channel basis {}",
            p.len(),
            svd.v.ncols()
        )));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Domain("power entries must be finite and >= 0".into()));
    }
    Ok((svd.v.clone(), p.iter().map(|x| x.sqrt()).collect()))
}
