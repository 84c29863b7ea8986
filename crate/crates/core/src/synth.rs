//! Synthetic datasets with planted discriminative streams.
//!
//! Every stream has its own base Gaussian. Prompt tokens are drawn from it in all
//! streams. In an informative stream a grounded response (y = 0) is drawn from the
//! base shifted by `shift` along a fixed unit direction, while a hallucinated
//! response (y = 1) copies randomly chosen prompt tokens and adds `noise_scale`
//! Gaussian noise. Other streams draw responses from the unshifted base whatever
//! the label.

use crate::bundle::{write_bundle, BundleError, SampleBundle, BUNDLE_EXTENSION};
use crate::manifest::{
    sidecar_path_for, DatasetManifest, ManifestError, ManifestMetadata, ManifestRecord, Split,
    TokenSidecar,
};
use crate::selection::StreamKey;
use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BUNDLE_DIR: &str = "bundles";
const VOCAB: usize = 400;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Bundle(#[from] BundleError),

    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_streams: usize,
    pub n_informative: usize,
    pub dim: usize,
    /// Inclusive token-count range of the prompt segment.
    pub prompt_len: [usize; 2],
    /// Inclusive token-count range of the response segment.
    pub response_len: [usize; 2],
    pub shift: f64,
    pub noise_scale: f64,
    pub heads_per_layer: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 500,
            n_streams: 8,
            n_informative: 2,
            dim: 16,
            prompt_len: [4, 12],
            response_len: [3, 8],
            shift: 2.0,
            noise_scale: 1.0,
            heads_per_layer: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.into()));
        if self.n_samples < 10 {
            return bad("n_samples must be at least 10");
        }
        if self.n_streams == 0 {
            return bad("n_streams must be positive");
        }
        if self.n_informative > self.n_streams {
            return bad("n_informative exceeds n_streams");
        }
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.heads_per_layer == 0 {
            return bad("heads_per_layer must be positive");
        }
        for (name, [lo, hi]) in [
            ("prompt_len", self.prompt_len),
            ("response_len", self.response_len),
        ] {
            if lo < 2 || lo > hi {
                return Err(SynthError::Config(format!(
                    "{name} range [{lo}, {hi}] is infeasible (need 2 <= min <= max)"
                )));
            }
        }
        if !(self.shift.is_finite() && self.shift > 0.0) {
            return bad("shift must be positive");
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad("noise_scale must be non-negative");
        }
        Ok(())
    }

    pub fn stream_key(&self, index: usize) -> StreamKey {
        let index = index as u32;
        StreamKey::head(index / self.heads_per_layer, index % self.heads_per_layer)
    }
}

/// One generated sample before it is written.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub bundle: SampleBundle,
    pub tokens: TokenSidecar,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub samples: Vec<SynthSample>,
    pub streams: Vec<StreamKey>,
    /// Streams that carry the class signal, in key order.
    pub planted: Vec<StreamKey>,
}

struct StreamParams {
    mean: Vec<f64>,
    direction: Vec<f64>,
    informative: bool,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Balanced labels and a 60/20/20 split stratified by label.
fn labels_and_splits(n: usize, rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<Split>) {
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    labels.shuffle(rng);
    let mut splits = vec![Split::Train; n];
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let n_train = (idx.len() as f64 * 0.6).round() as usize;
        let n_val = (idx.len() as f64 * 0.2).round() as usize;
        for (pos, &i) in idx.iter().enumerate() {
            splits[i] = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    (labels, splits)
}

fn word(rng: &mut ChaCha8Rng) -> String {
    format!("w{}", rng.random_range(0..VOCAB))
}

/// Token text whose overlap with the prompt does not depend on the label.
fn token_text(rng: &mut ChaCha8Rng, prompt_len: usize, response_len: usize) -> TokenSidecar {
    let prompt: Vec<String> = (0..prompt_len).map(|_| word(rng)).collect();
    let mut cursor = 0;
    let response: Vec<String> = (0..response_len)
        .map(|_| {
            if cursor < prompt.len() && rng.random_bool(0.7) {
                cursor += rng.random_range(1..=2);
                prompt[(cursor - 1).min(prompt.len() - 1)].clone()
            } else {
                word(rng)
            }
        })
        .collect();
    TokenSidecar {
        prompt: prompt.join(" "),
        response: response.join(" "),
    }
}

/// Generate the dataset in memory.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthDataset, SynthError> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut order: Vec<usize> = (0..cfg.n_streams).collect();
    order.shuffle(&mut rng);
    let mut informative = vec![false; cfg.n_streams];
    for &i in &order[..cfg.n_informative] {
        informative[i] = true;
    }
    let params: Vec<StreamParams> = informative
        .iter()
        .map(|&informative| {
            let mean = gaussian(&mut rng, d);
            let mut direction = gaussian(&mut rng, d);
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
            direction.iter_mut().for_each(|v| *v /= norm);
            StreamParams {
                mean,
                direction,
                informative,
            }
        })
        .collect();

    let (labels, splits) = labels_and_splits(cfg.n_samples, &mut rng);
    let width = cfg.n_samples.saturating_sub(1).to_string().len().max(4);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for (i, (&label, &split)) in labels.iter().zip(&splits).enumerate() {
        let p_len = rng.random_range(cfg.prompt_len[0]..=cfg.prompt_len[1]);
        let r_len = rng.random_range(cfg.response_len[0]..=cfg.response_len[1]);
        let mut streams = IndexMap::with_capacity(cfg.n_streams);
        for (s, sp) in params.iter().enumerate() {
            let mut rows = Vec::with_capacity((p_len + r_len) * d);
            for _ in 0..p_len {
                let z = gaussian(&mut rng, d);
                rows.extend(sp.mean.iter().zip(&z).map(|(m, z)| m + z));
            }
            for _ in 0..r_len {
                let z = gaussian(&mut rng, d);
                if sp.informative && label == 1 {
                    let src = rng.random_range(0..p_len) * d;
                    let copy: Vec<f64> = (0..d)
                        .map(|k| rows[src + k] + cfg.noise_scale * z[k])
                        .collect();
                    rows.extend(copy);
                } else if sp.informative {
                    rows.extend((0..d).map(|k| sp.mean[k] + cfg.shift * sp.direction[k] + z[k]));
                } else {
                    rows.extend(sp.mean.iter().zip(&z).map(|(m, z)| m + z));
                }
            }
            streams.insert(
                cfg.stream_key(s),
                rows.into_iter().map(|v| v as f32).collect(),
            );
        }
        let tokens = token_text(&mut rng, p_len, r_len);
        samples.push(SynthSample {
            bundle: SampleBundle {
                sample_id: format!("s{i:0width$}"),
                label,
                prompt_len: p_len,
                response_len: r_len,
                dim: d,
                streams,
            },
            tokens,
            split,
        });
    }
    let streams: Vec<StreamKey> = (0..cfg.n_streams).map(|s| cfg.stream_key(s)).collect();
    let planted = streams
        .iter()
        .zip(&informative)
        .filter(|(_, &inf)| inf)
        .map(|(k, _)| *k)
        .collect();
    Ok(SynthDataset {
        samples,
        streams,
        planted,
    })
}

/// Generate the dataset and write bundles, sidecars and `manifest.json` under `out_dir`.
pub fn gen_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest, SynthError> {
    let data = synth_dataset(cfg)?;
    let bundle_dir = out_dir.join(BUNDLE_DIR);
    std::fs::create_dir_all(&bundle_dir).map_err(|source| SynthError::Io {
        path: bundle_dir.display().to_string(),
        source,
    })?;
    let mut records = Vec::with_capacity(data.samples.len());
    for s in &data.samples {
        let rel = format!("{BUNDLE_DIR}/{}.{BUNDLE_EXTENSION}", s.bundle.sample_id);
        let path = out_dir.join(&rel);
        write_bundle(&s.bundle, &path)?;
        let sidecar = sidecar_path_for(&path);
        std::fs::write(&sidecar, s.tokens.render()).map_err(|source| SynthError::Io {
            path: sidecar.display().to_string(),
            source,
        })?;
        records.push(ManifestRecord {
            sample_id: s.bundle.sample_id.clone(),
            path: rel,
            label: s.bundle.label,
            split: s.split,
        });
    }
    let mut attributes = BTreeMap::new();
    attributes.insert("generator".to_string(), serde_json::json!("synthetic"));
    attributes.insert(
        "synth_config".to_string(),
        serde_json::to_value(cfg).expect("config serializes"),
    );
    attributes.insert(
        "planted_streams".to_string(),
        serde_json::to_value(&data.planted).expect("keys serialize"),
    );
    let manifest = DatasetManifest::new(
        ManifestMetadata {
            model_name: "synthetic".into(),
            dim: cfg.dim,
            streams: data.streams,
            attributes,
        },
        records,
    );
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_samples: 40,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn shapes_and_balance() {
        let data = synth_dataset(&small()).unwrap();
        assert_eq!(data.samples.len(), 40);
        assert_eq!(data.planted.len(), 2);
        let pos = data.samples.iter().filter(|s| s.bundle.label == 1).count();
        assert_eq!(pos, 20);
        for s in &data.samples {
            s.bundle.validate().unwrap();
            assert_eq!(s.bundle.streams.len(), 8);
        }
        let count = |sp| data.samples.iter().filter(|s| s.split == sp).count();
        assert_eq!(
            (count(Split::Train), count(Split::Val), count(Split::Test)),
            (24, 8, 8)
        );
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(
            synth_dataset(&small()).unwrap(),
            synth_dataset(&small()).unwrap()
        );
        let other = SynthConfig { seed: 1, ..small() };
        assert_ne!(
            synth_dataset(&small()).unwrap(),
            synth_dataset(&other).unwrap()
        );
    }

    #[test]
    fn config_errors() {
        for cfg in [
            SynthConfig {
                n_informative: 9,
                ..small()
            },
            SynthConfig {
                prompt_len: [5, 4],
                ..small()
            },
            SynthConfig {
                response_len: [1, 4],
                ..small()
            },
            SynthConfig {
                shift: 0.0,
                ..small()
            },
        ] {
            assert!(matches!(synth_dataset(&cfg), Err(SynthError::Config(_))));
        }
    }

    #[test]
    fn stream_keys_follow_layout() {
        let cfg = SynthConfig::default();
        assert_eq!(cfg.stream_key(0), StreamKey::head(0, 0));
        assert_eq!(cfg.stream_key(5), StreamKey::head(1, 1));
    }
}
