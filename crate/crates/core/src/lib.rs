//! Divergence-based hallucination scoring over per-head hidden states.
//!
//! A sample is a prompt/response pair whose token embeddings were captured per
//! attention head. Each head gives two point clouds (prompt tokens, response tokens);
//! the hallucination score is the negated mean divergence between them over a
//! selected set of heads, optionally measured in the latent space of a trained
//! recurrent encoder.

pub mod bundle;
pub mod config;
pub mod deep_kernel;
pub mod distance;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod selection;
pub mod synth;

use thiserror::Error;

/// Any error a pipeline command can surface.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),

    #[error(transparent)]
    Manifest(#[from] manifest::ManifestError),

    #[error(transparent)]
    Bundle(#[from] bundle::BundleError),

    #[error(transparent)]
    Distance(#[from] distance::DistanceError),

    #[error(transparent)]
    Metric(#[from] metrics::MetricError),

    #[error(transparent)]
    Selection(#[from] selection::SelectionError),

    #[error(transparent)]
    Model(#[from] deep_kernel::DeepKernelError),

    #[error(transparent)]
    Synth(#[from] synth::SynthError),

    #[error("model checkpoint {0} not found")]
    MissingModel(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("{0}")]
    Input(String),
}

impl Error {
    /// Stable, machine-readable category used in CLI error output.
    pub fn category(&self) -> String {
        use manifest::ManifestError as M;
        match self {
            Error::Config(_) => "config".into(),
            Error::Manifest(M::Bundle { source, .. }) | Error::Bundle(source) => {
                format!("bundle.{}", source.kind())
            }
            Error::Manifest(M::Io { .. }) => "io".into(),
            Error::Manifest(_) => "manifest".into(),
            Error::Distance(_) => "distance".into(),
            Error::Metric(_) => "metric".into(),
            Error::Selection(selection::SelectionError::Model(_)) | Error::Model(_) => match self {
                Error::Model(deep_kernel::DeepKernelError::Checkpoint(_)) => "checkpoint".into(),
                _ => "model".into(),
            },
            Error::Selection(_) => "selection".into(),
            Error::Synth(synth::SynthError::Config(_)) => "config".into(),
            Error::Synth(_) => "synth".into(),
            Error::MissingModel(_) => "missing_model".into(),
            Error::Io { .. } => "io".into(),
            Error::Format { .. } => "format".into(),
            Error::Input(_) => "input".into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
