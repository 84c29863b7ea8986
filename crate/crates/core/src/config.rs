//! Pipeline configuration file.
//!
//! One JSON document with a `version` field. Every section is optional and falls
//! back to defaults; unknown fields are rejected so typos surface early.

use crate::deep_kernel::TrainConfig;
use crate::distance::{KernelSpec, NormOrder, SinkhornConfig};
use crate::selection::{Estimator, DEFAULT_N_MAX};
use crate::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Mmd,
    Sinkhorn,
    Hausdorff,
    MeanPairwise,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Mmd,
        EstimatorKind::Sinkhorn,
        EstimatorKind::Hausdorff,
        EstimatorKind::MeanPairwise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Mmd => "mmd",
            EstimatorKind::Sinkhorn => "sinkhorn",
            EstimatorKind::Hausdorff => "hausdorff",
            EstimatorKind::MeanPairwise => "mean-pairwise",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "unknown estimator `{s}` (expected mmd, sinkhorn, hausdorff or mean-pairwise)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    /// Seed for split carving; `--seed` also overrides the train and synth seeds.
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub kernel: KernelSpec,
    pub sinkhorn: SinkhornConfig,
    /// Norm used by the Hausdorff and mean-pairwise estimators.
    pub norm_order: NormOrder,
    pub n_max: usize,
    /// Keep at most this many leading tokens per segment when scoring.
    pub max_tokens: Option<usize>,
    pub histogram_bins: usize,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            estimator: EstimatorKind::Mmd,
            kernel: KernelSpec::default(),
            sinkhorn: SinkhornConfig::default(),
            norm_order: NormOrder::Finite(2.0),
            n_max: DEFAULT_N_MAX,
            max_tokens: None,
            histogram_bins: 20,
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        if self.version != CONFIG_VERSION {
            return Err(invalid(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.kernel
            .validate()
            .map_err(|e| invalid(format!("kernel: {e}")))?;
        self.sinkhorn
            .validate()
            .map_err(|e| invalid(format!("sinkhorn: {e}")))?;
        self.norm_order
            .validate()
            .map_err(|e| invalid(format!("norm_order: {e}")))?;
        self.train
            .validate()
            .map_err(|e| invalid(format!("train: {e}")))?;
        if self.n_max == 0 {
            return Err(invalid("n_max must be at least 1".into()));
        }
        if self.max_tokens.is_some_and(|c| c < 2) {
            return Err(invalid("max_tokens must be at least 2".into()));
        }
        if self.histogram_bins == 0 {
            return Err(invalid("histogram_bins must be positive".into()));
        }
        Ok(())
    }

    /// Apply a `--seed` override to every seeded component.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
    }

    /// Token cap shared by scoring and training.
    pub fn token_cap(&self) -> Option<usize> {
        self.max_tokens.or(self.train.max_tokens)
    }

    /// Training settings with the shared token cap applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_tokens: self.token_cap(),
            ..self.train.clone()
        }
    }

    pub fn estimator(&self) -> Estimator {
        match self.estimator {
            EstimatorKind::Mmd => Estimator::Mmd(self.kernel),
            EstimatorKind::Sinkhorn => Estimator::Sinkhorn(self.sinkhorn),
            EstimatorKind::Hausdorff => Estimator::Hausdorff {
                norm_order: self.norm_order,
            },
            EstimatorKind::MeanPairwise => Estimator::MeanPairwise {
                norm_order: self.norm_order,
            },
        }
    }
}
