//! Experiment configuration: a single JSON document that fully determines a
//! run. Every field has either an explicit value or a documented default,
//! and the resolved form (defaults filled in) is echoed into all outputs
//! together with a content hash, so results are reproducible from the
//! emitted metadata alone.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::ChannelParams;
use crate::detector::DetectorConfig;
use crate::transform;
use crate::{Error, Result};

/// Which detector runs the Monte Carlo trials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    CdOamp,
    CdMamp,
    Lmmse,
}

impl DetectorKind {
    pub fn tag(&self) -> &'static str {
        match self {
            DetectorKind::CdOamp => "cd-oamp",
            DetectorKind::CdMamp => "cd-mamp",
            DetectorKind::Lmmse => "lmmse",
        }
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cd-oamp" => Ok(DetectorKind::CdOamp),
            "cd-mamp" => Ok(DetectorKind::CdMamp),
            "lmmse" => Ok(DetectorKind::Lmmse),
            other => Err(Error::Config(format!(
                "unknown detector '{other}' (expected cd-oamp, cd-mamp or lmmse)"
            ))),
        }
    }
}

/// Power-allocation objective for the per-SNR allocation step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationObjective {
    Uniform,
    MapBer,
    Capacity,
    WfGaussian,
    WfMercury,
}

impl AllocationObjective {
    pub fn tag(&self) -> &'static str {
        match self {
            AllocationObjective::Uniform => "uniform",
            AllocationObjective::MapBer => "map-ber",
            AllocationObjective::Capacity => "capacity",
            AllocationObjective::WfGaussian => "wf-gaussian",
            AllocationObjective::WfMercury => "wf-mercury",
        }
    }
}

impl std::str::FromStr for AllocationObjective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(AllocationObjective::Uniform),
            "map-ber" => Ok(AllocationObjective::MapBer),
            "capacity" => Ok(AllocationObjective::Capacity),
            "wf-gaussian" => Ok(AllocationObjective::WfGaussian),
            "wf-mercury" => Ok(AllocationObjective::WfMercury),
            other => Err(Error::Config(format!(
                "unknown allocation objective '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformBlock {
    /// Transform kind string, e.g. "perm-dft", "haar", "ibst:16",
    /// "otfs:8x8", "identity".
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TransformBlock {
    fn default() -> Self {
        TransformBlock { kind: "perm-dft".into(), seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorBlock {
    #[serde(default = "default_detector_kind")]
    pub algorithm: DetectorKind,
    #[serde(default)]
    pub config: DetectorConfig,
}

fn default_detector_kind() -> DetectorKind {
    DetectorKind::CdOamp
}

impl Default for DetectorBlock {
    fn default() -> Self {
        DetectorBlock {
            algorithm: default_detector_kind(),
            config: DetectorConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationBlock {
    pub objective: AllocationObjective,
    /// Total power budget; defaults to N (unit average power).
    #[serde(default)]
    pub p_sum: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub channel: ChannelParams,
    #[serde(default)]
    pub transform: TransformBlock,
    #[serde(default = "default_constellation")]
    pub constellation: String,
    /// SNR grid in dB, defined as 10 log10(1/sigma^2) at unit average
    /// transmit and channel power.
    pub snr_db: Vec<f64>,
    #[serde(default)]
    pub detector: DetectorBlock,
    /// Optional per-SNR power allocation; absent means no allocation stage
    /// (the plain channel-transform chain).
    #[serde(default)]
    pub allocation: Option<AllocationBlock>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Base path for emitted files (`<output>.csv`, `<output>.json`).
    #[serde(default)]
    pub output: Option<String>,
    /// Stop a SNR point early once this many bit errors are accumulated;
    /// disabled by default.
    #[serde(default)]
    pub early_stop_bit_errors: Option<u64>,
}

fn default_constellation() -> String {
    "qpsk".into()
}

fn default_trials() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        if self.snr_db.is_empty() {
            return Err(Error::Config("snr_db grid must be non-empty".into()));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("snr_db entries must be finite".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        transform::parse_kind(&self.transform.kind)?;
        crate::constellation::Constellation::by_name(&self.constellation)?;
        self.detector.config.validate()?;
        if let Some(alloc) = &self.allocation {
            if let Some(p) = alloc.p_sum {
                if !(p > 0.0) || !p.is_finite() {
                    return Err(Error::Config("allocation.p_sum must be positive".into()));
                }
            }
        }
        if let Some(e) = self.early_stop_bit_errors {
            if e == 0 {
                return Err(Error::Config("early_stop_bit_errors must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Resolved power budget: explicit `p_sum` or N.
    pub fn p_sum(&self) -> f64 {
        self.allocation
            .as_ref()
            .and_then(|a| a.p_sum)
            .unwrap_or(self.channel.input_dim() as f64)
    }

    /// Canonical JSON of the resolved config (defaults filled in).
    pub fn canonical_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization: {e}")))
    }

    /// Content hash of the canonical JSON, hex-encoded.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.canonical_json()?.as_bytes());
        let digest = h.finalize();
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Noise variance at a given grid SNR.
    pub fn sigma2_at(&self, snr_db: f64) -> f64 {
        10f64.powf(-snr_db / 10.0)
    }
}
