//! Numerical laboratory for random-multiplexing linear communication systems.
//!
//! The library simulates linear systems of the form `y = H P x + n` where the
//! transmit vector is spread by a random unitary transform `x = Xi s`, and
//! provides:
//!
//! * [`constellation`]: scalar signal priors, posterior means, MMSE transfer
//!   curves and MAP-demodulation BER bounds;
//! * [`transform`]: fast random multiplexing operators (permuted DFT/WHT/DCT,
//!   Haar, IBST, OTFS/AFDM/OFDM baselines) plus universality diagnostics;
//! * [`channel`]: correlated doubly-selective multipath MIMO channels stored
//!   as sparse banded matrices, their spectra and effective operators;
//! * [`detector`]: CD-OAMP/VAMP and CD-MAMP iterative detectors with
//!   instrumented operator flop counters and an LMMSE baseline;
//! * [`analysis`]: state evolution, Stieltjes/R-transforms, replica fixed
//!   points and constrained-capacity functionals;
//! * [`allocation`]: MAP-BER and capacity power allocation plus waterfilling
//!   baselines;
//! * [`coding`]: decoder transfer-curve analysis (error-free tunnel,
//!   achievable and cascaded rates);
//! * [`config`] / [`experiment`]: experiment orchestration behind the CLI.
//!
//! All randomness is reproducible: every sampling routine takes an explicit
//! seed and derives per-trial streams with a documented counter-based hash.

pub mod allocation;
pub mod analysis;
pub mod channel;
pub mod coding;
pub mod config;
pub mod constellation;
pub mod detector;
pub mod experiment;
pub mod operator;
pub mod transform;
pub mod util;

use thiserror::Error;

/// Convenient alias used across the crate.
pub type C64 = num_complex::Complex64;

/// Crate-wide error type. The CLI maps the variants onto exit codes
/// (config -> 2, solver -> 3, divergence -> 4).
#[derive(Error, Debug)]
pub enum Error {
    /// Invalid configuration or constructor arguments.
    #[error("configuration error: {0}")]
    Config(String),
    /// A value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Problem size exceeds a dense-computation cap.
    #[error("size error: {0}")]
    Size(String),
    /// An iterative solver failed to converge or found no root.
    #[error("solver error: {0}")]
    Solver(String),
    /// A detector diverged; the partial trace is attached for diagnosis.
    #[error("divergence: {message}")]
    Divergence {
        message: String,
        trace: Box<detector::DetectorTrace>,
    },
    /// I/O failure with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
