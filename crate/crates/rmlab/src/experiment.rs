//! Experiment orchestration: seeded Monte Carlo over an SNR grid with
//! per-trial counter-based RNG streams, aggregation with Wilson confidence
//! intervals, state-evolution and replica predictions alongside, and
//! deterministic CSV/JSON emission.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::allocation::{
    optimize_capacity, optimize_map_ber, uniform_allocation, waterfilling_gaussian,
    waterfilling_mercury, AllocOptions,
};
use crate::analysis;
use crate::channel::{effective_operator, synthesize, ChannelRealization, SpectralProfile};
use crate::config::{AllocationObjective, DetectorKind, ExperimentConfig};
use crate::constellation::Constellation;
use crate::detector::{ber_count, cd_mamp_run, cd_oamp_run, lmmse_detect, SystemInstance};
use crate::transform::{parse_kind, sample_transform};
use crate::util::trial_rng;
use crate::{Error, Result, C64};

/// Aggregated outcome of one SNR grid point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultRecord {
    pub snr_db: f64,
    pub sigma2: f64,
    pub detector: String,
    pub allocation: String,
    pub trials: usize,
    pub bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub ber_ci_low: f64,
    pub ber_ci_high: f64,
    /// BER predicted by the detector state-evolution fixed point.
    pub se_ber: f64,
    /// Replica MAP-BER limit.
    pub replica_ber: f64,
    /// Constrained capacity in bits per symbol (area form).
    pub capacity_bits: f64,
    pub mean_iterations: f64,
    /// Total counted operator complex-MACs across trials.
    pub flops: u64,
    pub wall_time_s: f64,
}

/// 95% Wilson score interval for `errors` successes out of `total`.
pub fn wilson_interval(errors: u64, total: u64) -> (f64, f64) {
    if total == 0 {
        return (0.0, 1.0);
    }
    if errors == 0 && total > 0 {
        let (_, hi) = wilson_nonzero(0, total);
        return (0.0, hi);
    }
    if errors == total {
        let (lo, _) = wilson_nonzero(errors, total);
        return (lo, 1.0);
    }
    wilson_nonzero(errors, total)
}

fn wilson_nonzero(errors: u64, total: u64) -> (f64, f64) {
    let z = 1.959963984540054f64;
    let n = total as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    (
        ((center - half) / denom).max(0.0),
        ((center + half) / denom).min(1.0),
    )
}

fn coordinates(err: Error, snr_db: f64, trial: Option<usize>) -> Error {
    let at = match trial {
        Some(t) => format!("snr {snr_db} dB, trial {t}"),
        None => format!("snr {snr_db} dB"),
    };
    match err {
        Error::Config(m) => Error::Config(format!("[{at}] {m}")),
        Error::Domain(m) => Error::Domain(format!("[{at}] {m}")),
        Error::Size(m) => Error::Size(format!("[{at}] {m}")),
        Error::Solver(m) => Error::Solver(format!("[{at}] {m}")),
        Error::Divergence { message, trace } => Error::Divergence {
            message: format!("[{at}] {message}"),
            trace,
        },
        other => other,
    }
}

fn solve_allocation(
    objective: AllocationObjective,
    profile: &SpectralProfile,
    sigma2: f64,
    p_sum: f64,
    constellation: &Constellation,
) -> Result<Vec<f64>> {
    let n = profile.singular_values.len();
    let curve = constellation.mmse_table();
    let opts = AllocOptions::default();
    let alloc = match objective {
        AllocationObjective::Uniform => uniform_allocation(n, p_sum),
        AllocationObjective::MapBer => optimize_map_ber(profile, sigma2, &curve, p_sum, &opts)?,
        AllocationObjective::Capacity => optimize_capacity(profile, sigma2, &curve, p_sum, &opts)?,
        AllocationObjective::WfGaussian => waterfilling_gaussian(profile, sigma2, p_sum)?,
        AllocationObjective::WfMercury => waterfilling_mercury(profile, sigma2, p_sum, &curve)?,
    };
    Ok(alloc.p)
}

/// Runs the full experiment described by the config. Deterministic: the
/// outputs are a pure function of the config. Per-trial randomness comes
/// from counter-based streams keyed by (master_seed, snr index, trial
/// index), so trial results are independent of execution order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let constellation = Arc::new(Constellation::by_name(&cfg.constellation)?);
    if constellation.is_gaussian() {
        return Err(Error::Config(
            "Monte Carlo BER needs a discrete constellation; use the limits pathway for Gaussian signaling".into(),
        ));
    }
    let kind = parse_kind(&cfg.transform.kind)?;
    let n = cfg.channel.input_dim();
    let p_sum = cfg.p_sum();
    let mut records = Vec::with_capacity(cfg.snr_db.len());
    for (snr_idx, &snr_db) in cfg.snr_db.iter().enumerate() {
        let start = Instant::now();
        let sigma2 = cfg.sigma2_at(snr_db);
        // Fresh channel draw per SNR point, seeded from the channel seed
        // and the grid index.
        let mut params = cfg.channel.clone();
        params.seed = params.seed.wrapping_add(snr_idx as u64);
        let h: Arc<ChannelRealization> = Arc::new(
            synthesize(&params).map_err(|e| coordinates(e, snr_db, None))?,
        );
        let factors = h.svd_factors().map_err(|e| coordinates(e, snr_db, None))?;
        let profile = SpectralProfile::new(factors.sigma.clone(), n, "experiment")
            .map_err(|e| coordinates(e, snr_db, None))?;
        let p_alloc = match &cfg.allocation {
            Some(block) => Some(
                solve_allocation(block.objective, &profile, sigma2, p_sum, &constellation)
                    .map_err(|e| coordinates(e, snr_db, None))?,
            ),
            None => None,
        };
        let allocation_tag = cfg
            .allocation
            .as_ref()
            .map(|b| b.objective.tag().to_string())
            .unwrap_or_else(|| "none".into());
        let transform = Arc::new(
            sample_transform(&kind, n, cfg.transform.seed)
                .map_err(|e| coordinates(e, snr_db, None))?,
        );
        let op = Arc::new(
            effective_operator(&h, p_alloc.as_deref(), &transform)
                .map_err(|e| coordinates(e, snr_db, None))?,
        );

        // Predictions from the spectral profile (with the allocation folded
        // into the eigenvalues).
        let curve = constellation.mmse_table();
        let (se_state, _) =
            analysis::se_fixed_point(p_alloc.as_deref(), &profile, sigma2, &curve)
                .map_err(|e| coordinates(e, snr_db, None))?;
        let se_ber = constellation
            .map_demod_ber(se_state.rho_gamma)
            .map_err(|e| coordinates(e, snr_db, None))?;
        let replica =
            analysis::replica_solve(&profile, p_alloc.as_deref(), sigma2, &constellation)
                .map_err(|e| coordinates(e, snr_db, None))?;
        let capacity_bits =
            analysis::c_mimo_area(p_alloc.as_deref(), &profile, sigma2, &curve)
                .map_err(|e| coordinates(e, snr_db, None))?;

        let mut bit_errors = 0u64;
        let mut bits = 0u64;
        let mut flops = 0u64;
        let mut iter_sum = 0usize;
        let mut trials_run = 0usize;
        for trial in 0..cfg.trials {
            let mut rng = trial_rng(cfg.master_seed, snr_idx as u64, trial as u64);
            let s: Vec<C64> = (0..n)
                .map(|_| constellation.points[constellation.sample_index(&mut rng)])
                .collect();
            let mut y = op.apply(&s).map_err(|e| coordinates(e, snr_db, Some(trial)))?;
            let nscale = (0.5 * sigma2).sqrt();
            for v in &mut y {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *v += C64::new(re * nscale, im * nscale);
            }
            // The detectors route most work through the singular form's
            // inner operator, which carries its own counter.
            op.reset_flops();
            if let Some(form) = &op.svd_form {
                form.w.reset_flops();
            }
            let sys = SystemInstance {
                operator: op.clone(),
                y,
                sigma2,
                constellation: constellation.clone(),
                truth: Some(s.clone()),
            };
            let (s_hat, iters) = match cfg.detector.algorithm {
                DetectorKind::CdOamp => {
                    let trace = cd_oamp_run(&sys, &cfg.detector.config)
                        .map_err(|e| coordinates(e, snr_db, Some(trial)))?;
                    (trace.s_hat, trace.iterations.len())
                }
                DetectorKind::CdMamp => {
                    let trace = cd_mamp_run(&sys, &cfg.detector.config)
                        .map_err(|e| coordinates(e, snr_db, Some(trial)))?;
                    (trace.s_hat, trace.iterations.len())
                }
                DetectorKind::Lmmse => {
                    let (s_hat, _) =
                        lmmse_detect(&sys).map_err(|e| coordinates(e, snr_db, Some(trial)))?;
                    (s_hat, 1)
                }
            };
            let used = op.flops_used()
                + op.svd_form.as_ref().map(|f| f.w.flops_used()).unwrap_or(0);
            let (err, tot) = ber_count(&s_hat, &s, &constellation)
                .map_err(|e| coordinates(e, snr_db, Some(trial)))?;
            bit_errors += err;
            bits += tot;
            flops += used;
            iter_sum += iters;
            trials_run += 1;
            if let Some(stop) = cfg.early_stop_bit_errors {
                if bit_errors >= stop {
                    break;
                }
            }
        }
        let ber = if bits > 0 { bit_errors as f64 / bits as f64 } else { 0.0 };
        let (ci_low, ci_high) = wilson_interval(bit_errors, bits);
        records.push(ResultRecord {
            snr_db,
            sigma2,
            detector: cfg.detector.algorithm.tag().to_string(),
            allocation: allocation_tag,
            trials: trials_run,
            bits,
            bit_errors,
            ber,
            ber_ci_low: ci_low,
            ber_ci_high: ci_high,
            se_ber,
            replica_ber: replica.ber_star,
            capacity_bits,
            mean_iterations: iter_sum as f64 / trials_run.max(1) as f64,
            flops,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(records)
}

/// Stable CSV column order (documented in the README).
pub const CSV_HEADER: &str = "snr_db,sigma2,detector,allocation,trials,bits,bit_errors,ber,ber_ci_low,ber_ci_high,se_ber,replica_ber,capacity_bits,mean_iterations,flops,wall_time_s";

/// Serializes records to CSV. Floats use Rust's shortest round-trip
/// formatting, so parsing the file back recovers the exact values.
pub fn emit_csv(records: &[ResultRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Config("no records to emit".into()));
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.snr_db,
            r.sigma2,
            r.detector,
            r.allocation,
            r.trials,
            r.bits,
            r.bit_errors,
            r.ber,
            r.ber_ci_low,
            r.ber_ci_high,
            r.se_ber,
            r.replica_ber,
            r.capacity_bits,
            r.mean_iterations,
            r.flops,
            r.wall_time_s
        ));
    }
    Ok(out)
}

#[derive(Serialize)]
struct JsonReport<'a> {
    config: &'a ExperimentConfig,
    config_hash: String,
    records: &'a [ResultRecord],
}

/// Serializes the full report: resolved config echo, its hash, and records.
pub fn emit_json(records: &[ResultRecord], cfg: &ExperimentConfig) -> Result<String> {
    if records.is_empty() {
        return Err(Error::Config("no records to emit".into()));
    }
    let report = JsonReport {
        config: cfg,
        config_hash: cfg.hash()?,
        records,
    };
    serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))
}

/// Writes `<base>.csv` and `<base>.json`; returns the two paths.
pub fn write_outputs(
    records: &[ResultRecord],
    cfg: &ExperimentConfig,
    base: &Path,
) -> Result<(PathBuf, PathBuf)> {
    let csv_path = base.with_extension("csv");
    let json_path = base.with_extension("json");
    let write = |path: &Path, text: String| -> Result<()> {
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    };
    write(&csv_path, emit_csv(records)?)?;
    write(&json_path, emit_json(records, cfg)?)?;
    Ok((csv_path, json_path))
}
