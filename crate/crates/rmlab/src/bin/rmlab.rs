//! Command-line front end: experiment orchestration (`simulate`), analytic
//! limits (`limits`), power allocation (`allocate`), coded-rate analysis
//! (`rate`), single-instance detection traces (`detect`) and transform
//! diagnostics (`diagnose`).
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver/domain error,
//! 4 detector divergence.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand_distr::StandardNormal;

use rmlab::allocation::{
    optimize_capacity, optimize_map_ber, uniform_allocation, waterfilling_gaussian,
    waterfilling_mercury, AllocOptions, Allocation,
};
use rmlab::analysis;
use rmlab::channel::{effective_operator, synthesize, SpectralProfile};
use rmlab::coding::{
    achievable_rate, cascaded_rate, error_free_check, eta_se_inverse, optimal_decoder_curve,
    rho_ceiling, DecoderCurve,
};
use rmlab::config::{AllocationObjective, DetectorKind, ExperimentConfig};
use rmlab::constellation::Constellation;
use rmlab::detector::{ber_count, cd_mamp_run, cd_oamp_run, lmmse_detect, SystemInstance};
use rmlab::experiment::{run_experiment, write_outputs};
use rmlab::transform::{parse_kind, sample_transform, universality_diagnostic};
use rmlab::util::trial_rng;
use rmlab::{Error, Result, C64};

#[derive(Parser)]
#[command(name = "rmlab", about = "Random-multiplexing linear-system laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the experiment JSON config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output base path (writes <out>.csv / <out>.json where applicable).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker count; accepted for interface stability, execution is
    /// single-threaded and trial streams are order-independent.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo BER experiment from a config.
    Simulate(ConfigArgs),
    /// Emit replica and state-evolution limits over the config's SNR grid.
    Limits(ConfigArgs),
    /// Solve a power allocation on the config's channel.
    Allocate {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        objective: String,
        #[arg(long)]
        snr_db: f64,
        #[arg(long)]
        psum: Option<f64>,
    },
    /// Coded-rate analysis: transfer curves and scalar rates.
    Rate {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        snr_db: f64,
        /// Decoder curve: optimal | mmse | file:<path> | backoff:<factor>.
        #[arg(long, default_value = "optimal")]
        decoder: String,
    },
    /// Run one detection instance and emit the per-iteration trace.
    Detect {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        snr_db: f64,
        #[arg(long, default_value = "cd-oamp")]
        detector: String,
        /// Maximum detector iterations.
        #[arg(long)]
        iters: Option<usize>,
        /// Damping window (memory detector).
        #[arg(long)]
        damping: Option<usize>,
    },
    /// Universality diagnostics for a transform kind across sizes.
    Diagnose {
        #[arg(long, default_value = "perm-dft")]
        transform: String,
        /// Comma-separated sizes.
        #[arg(long, default_value = "64,128,256,512")]
        sizes: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Matrix ensemble multiplied by the transform: `gaussian` draws an
        /// IID matrix A and diagnoses A*Xi; `counterexample` uses a product
        /// whose right singular basis cancels the transform, which must be
        /// flagged as outside the universality class.
        #[arg(long, default_value = "gaussian")]
        ensemble: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                Error::Divergence { .. } => ExitCode::from(4),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn load_config(common: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn out_base(common: &ConfigArgs, cfg: &ExperimentConfig, fallback: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn write_text(path: &PathBuf, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn channel_profile(cfg: &ExperimentConfig) -> Result<SpectralProfile> {
    let h = synthesize(&cfg.channel)?;
    let factors = h.svd_factors()?;
    SpectralProfile::new(factors.sigma.clone(), cfg.channel.input_dim(), "cli")
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(common) => {
            let cfg = load_config(&common)?;
            let records = run_experiment(&cfg)?;
            let base = out_base(&common, &cfg, "results");
            let (csv, json) = write_outputs(&records, &cfg, &base)?;
            println!("wrote {} and {}", csv.display(), json.display());
            Ok(())
        }
        Command::Limits(common) => {
            let cfg = load_config(&common)?;
            let constellation = Constellation::by_name(&cfg.constellation)?;
            let curve = constellation.mmse_table();
            let profile = channel_profile(&cfg)?;
            let mut out = String::from(
                "snr_db,sigma2,se_v_phi,se_rho,se_ber,replica_v,replica_rho,replica_ber,capacity_fp_bits,capacity_area_bits\n",
            );
            for &snr_db in &cfg.snr_db {
                let sigma2 = cfg.sigma2_at(snr_db);
                let (state, _) = analysis::se_fixed_point(None, &profile, sigma2, &curve)?;
                let se_ber = if constellation.is_gaussian() {
                    f64::NAN
                } else {
                    constellation.map_demod_ber(state.rho_gamma)?
                };
                let rep = analysis::replica_solve(&profile, None, sigma2, &constellation)?;
                let area = analysis::c_mimo_area(None, &profile, sigma2, &curve)?;
                out.push_str(&format!(
                    "{snr_db},{sigma2},{},{},{se_ber},{},{},{},{},{area}\n",
                    state.v_phi,
                    state.rho_gamma,
                    rep.v_star,
                    rep.rho_star,
                    rep.ber_star,
                    rep.capacity,
                ));
            }
            let base = out_base(&common, &cfg, "limits");
            let path = base.with_extension("csv");
            write_text(&path, &out)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Allocate { common, objective, snr_db, psum } => {
            let cfg = load_config(&common)?;
            let objective: AllocationObjective = objective.parse()?;
            let constellation = Constellation::by_name(&cfg.constellation)?;
            let curve = constellation.mmse_table();
            let profile = channel_profile(&cfg)?;
            let n = profile.singular_values.len();
            let sigma2 = cfg.sigma2_at(snr_db);
            let p_sum = psum.unwrap_or(n as f64);
            let opts = AllocOptions::default();
            let alloc: Allocation = match objective {
                AllocationObjective::Uniform => uniform_allocation(n, p_sum),
                AllocationObjective::MapBer => {
                    optimize_map_ber(&profile, sigma2, &curve, p_sum, &opts)?
                }
                AllocationObjective::Capacity => {
                    optimize_capacity(&profile, sigma2, &curve, p_sum, &opts)?
                }
                AllocationObjective::WfGaussian => {
                    waterfilling_gaussian(&profile, sigma2, p_sum)?
                }
                AllocationObjective::WfMercury => {
                    waterfilling_mercury(&profile, sigma2, p_sum, &curve)?
                }
            };
            let mut out = String::from("index,sigma,p\n");
            for (i, (s, p)) in profile.singular_values.iter().zip(&alloc.p).enumerate() {
                out.push_str(&format!("{i},{s},{p}\n"));
            }
            let base = out_base(&common, &cfg, "allocation");
            let path = base.with_extension("csv");
            write_text(&path, &out)?;
            println!(
                "objective {} achieved {} (solver iterations {})",
                alloc.objective_tag, alloc.achieved, alloc.solver_iters
            );
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Rate { common, snr_db, decoder } => {
            let cfg = load_config(&common)?;
            let constellation = Constellation::by_name(&cfg.constellation)?;
            let curve = constellation.mmse_table();
            let profile = channel_profile(&cfg)?;
            let sigma2 = cfg.sigma2_at(snr_db);
            let rho_max = rho_ceiling(None, &profile, sigma2)?;
            let opt = optimal_decoder_curve(None, &profile, sigma2, &curve)?;
            let dec = if decoder == "optimal" {
                opt.clone()
            } else if decoder == "mmse" {
                DecoderCurve::uncoded(&curve, rho_max)?
            } else if let Some(path) = decoder.strip_prefix("file:") {
                let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.to_string(),
                    source,
                })?;
                DecoderCurve::from_csv(&text, path)?
            } else if let Some(f) = decoder.strip_prefix("backoff:") {
                let f: f64 = f
                    .parse()
                    .map_err(|e| Error::Config(format!("back-off factor: {e}")))?;
                opt.backoff(f)?
            } else {
                return Err(Error::Config(format!(
                    "unknown decoder '{decoder}' (optimal | mmse | file:<path> | backoff:<f>)"
                )));
            };
            let report = error_free_check(&dec, None, &profile, sigma2)?;
            let r = achievable_rate(&dec, rho_max)?;
            let cas = cascaded_rate(None, &profile, sigma2, &curve)?;
            let area = analysis::c_mimo_area(None, &profile, sigma2, &curve)?;
            let mut out = String::from("rho,phi,eta_inv,mmse\n");
            for k in 0..=400 {
                let rho = rho_max * k as f64 / 400.0;
                out.push_str(&format!(
                    "{rho},{},{},{}\n",
                    dec.curve.eval(rho),
                    eta_se_inverse(rho, None, &profile, sigma2)?,
                    curve.eval(rho)
                ));
            }
            let base = out_base(&common, &cfg, "rate");
            let path = base.with_extension("csv");
            write_text(&path, &out)?;
            println!(
                "decoder {}: error_free={} margin={} rate={} bits",
                dec.code_rate_tag, report.error_free, report.margin, r
            );
            println!(
                "cascaded rate {} bits (rho* = {}, loss {} bits); area capacity {} bits",
                cas.rate_bits, cas.rho_star, cas.rate_loss_bits, area
            );
            println!("note: decoder curves assume a uniformly Lipschitz APP decoder");
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Detect { common, snr_db, detector, iters, damping } => {
            let cfg = load_config(&common)?;
            let kind: DetectorKind = detector.parse()?;
            let constellation = Arc::new(Constellation::by_name(&cfg.constellation)?);
            let sigma2 = cfg.sigma2_at(snr_db);
            let h = Arc::new(synthesize(&cfg.channel)?);
            let n = cfg.channel.input_dim();
            let t = Arc::new(sample_transform(
                &parse_kind(&cfg.transform.kind)?,
                n,
                cfg.transform.seed,
            )?);
            let op = Arc::new(effective_operator(&h, None, &t)?);
            let mut det_cfg = cfg.detector.config.clone();
            if let Some(it) = iters {
                det_cfg.max_iters = it;
            }
            if let Some(d) = damping {
                det_cfg.damping_window = d;
            }
            det_cfg.validate()?;
            let mut rng = trial_rng(cfg.master_seed, 0, 0);
            let s: Vec<C64> = (0..n)
                .map(|_| constellation.points[constellation.sample_index(&mut rng)])
                .collect();
            let mut y = op.apply(&s)?;
            let nscale = (0.5 * sigma2).sqrt();
            for v in &mut y {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *v += C64::new(re * nscale, im * nscale);
            }
            let sys = SystemInstance {
                operator: op.clone(),
                y,
                sigma2,
                constellation: constellation.clone(),
                truth: Some(s.clone()),
            };
            let mut out = String::from("iter,v_gamma,v_phi,ber\n");
            let (s_hat, iterations) = match kind {
                DetectorKind::CdOamp => {
                    let trace = cd_oamp_run(&sys, &det_cfg)?;
                    (trace.s_hat, trace.iterations)
                }
                DetectorKind::CdMamp => {
                    let trace = cd_mamp_run(&sys, &det_cfg)?;
                    (trace.s_hat, trace.iterations)
                }
                DetectorKind::Lmmse => {
                    let (s_hat, v) = lmmse_detect(&sys)?;
                    let (err, bits) = ber_count(&s_hat, &s, &constellation)?;
                    out.push_str(&format!("0,{v},{v},{}\n", err as f64 / bits as f64));
                    let base = out_base(&common, &cfg, "trace");
                    let path = base.with_extension("csv");
                    write_text(&path, &out)?;
                    println!("lmmse v = {v}; wrote {}", path.display());
                    return Ok(());
                }
            };
            for rec in &iterations {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    rec.iter,
                    rec.v_gamma,
                    rec.v_phi,
                    rec.ber_if_truth.unwrap_or(f64::NAN)
                ));
            }
            let (err, bits) = ber_count(&s_hat, &s, &constellation)?;
            let base = out_base(&common, &cfg, "trace");
            let path = base.with_extension("csv");
            write_text(&path, &out)?;
            println!(
                "{} finished after {} iterations, final ber {}",
                kind.tag(),
                iterations.len(),
                err as f64 / bits as f64
            );
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Diagnose { transform, sizes, seed, ensemble, out } => {
            let kind = parse_kind(&transform)?;
            let sizes: Vec<usize> = sizes
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|e| Error::Config(format!("sizes: {e}")))
                })
                .collect::<Result<_>>()?;
            if sizes.is_empty() {
                return Err(Error::Config("sizes must be non-empty".into()));
            }
            let mut text = String::from("n,deviation_k1,deviation_k2\n");
            let mut pts = Vec::new();
            for &n in &sizes {
                let t = sample_transform(&kind, n, seed)?;
                let xi = t.to_dense();
                let j = match ensemble.as_str() {
                    "gaussian" => {
                        let mut rng = trial_rng(seed, 0xD1A6, n as u64);
                        let scale = (0.5 / n as f64).sqrt();
                        let a = ndarray::Array2::from_shape_fn((n, n), |_| {
                            let re: f64 = rng.sample(StandardNormal);
                            let im: f64 = rng.sample(StandardNormal);
                            C64::new(re * scale, im * scale)
                        });
                        rmlab::util::matmul(&a, &xi)
                    }
                    "counterexample" => {
                        // A = D * Xi^H makes A * Xi diagonal: the transform
                        // is cancelled and the product stays localized.
                        let mut d = ndarray::Array2::from_elem((n, n), C64::new(0.0, 0.0));
                        for i in 0..n {
                            d[(i, i)] = C64::new(0.25 + 1.5 * i as f64 / n as f64, 0.0);
                        }
                        d
                    }
                    other => {
                        return Err(Error::Config(format!(
                            "unknown ensemble '{other}' (gaussian | counterexample)"
                        )))
                    }
                };
                let dev = universality_diagnostic(&j, 2)?;
                text.push_str(&format!("{n},{},{}\n", dev[0], dev[1]));
                pts.push((n as f64, dev[0]));
            }
            // Least-squares slope on log-log axes.
            if pts.len() >= 2 && pts.iter().all(|(_, d)| *d > 0.0) {
                let logs: Vec<(f64, f64)> =
                    pts.iter().map(|(n, d)| (n.ln(), d.ln())).collect();
                let mx = logs.iter().map(|(x, _)| x).sum::<f64>() / logs.len() as f64;
                let my = logs.iter().map(|(_, y)| y).sum::<f64>() / logs.len() as f64;
                let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
                let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
                let slope = sxy / sxx;
                println!("fitted log-log slope {slope}");
                if slope >= 0.0 {
                    println!("warning: deviation is non-decreasing with N (outside the universality class)");
                }
            }
            if let Some(path) = out {
                let path = path.with_extension("csv");
                write_text(&path, &text)?;
                println!("wrote {}", path.display());
            } else {
                print!("{text}");
            }
            Ok(())
        }
    }
}
