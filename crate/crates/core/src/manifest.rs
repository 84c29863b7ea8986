//! Dataset manifests: which bundle files make up a dataset, their labels and splits.
//!
//! A manifest is a JSON document stored next to the bundles it references; record
//! paths are relative to the manifest's directory. Token-text sidecars live beside
//! each bundle as `<stem>.tokens.txt` (line 1 prompt tokens, line 2 response tokens).

use crate::bundle::{read_bundle, BundleError, SampleBundle};
use crate::selection::StreamKey;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use thiserror::Error;

pub const MANIFEST_VERSION: u32 = 1;
pub const SIDECAR_SUFFIX: &str = "tokens.txt";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed manifest: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid manifest: {0}")]
    Validation(String),

    #[error("sample {sample_id}: {source}")]
    Bundle {
        sample_id: String,
        #[source]
        source: BundleError,
    },

    #[error("sample {sample_id}: manifest label {manifest} but bundle label {bundle}")]
    LabelMismatch {
        sample_id: String,
        manifest: u8,
        bundle: u8,
    },

    #[error("split `{0}` is empty")]
    EmptySplit(Split),
}

pub type Result<T> = std::result::Result<T, ManifestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sample_id: String,
    /// Bundle path relative to the manifest directory.
    pub path: String,
    pub label: u8,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMetadata {
    pub model_name: String,
    pub dim: usize,
    pub streams: Vec<StreamKey>,
    /// Free-form provenance (extraction settings, planted streams, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub metadata: ManifestMetadata,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(metadata: ManifestMetadata, records: Vec<ManifestRecord>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            metadata,
            records,
        }
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(ManifestError::Validation(format!(
                "unsupported manifest version {}",
                self.version
            )));
        }
        if self.metadata.dim == 0 {
            return Err(ManifestError::Validation("dim must be positive".into()));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(ManifestError::Validation(format!(
                    "duplicate sample_id {}",
                    r.sample_id
                )));
            }
            if r.label > 1 {
                return Err(ManifestError::Validation(format!(
                    "sample {}: label {} is not 0 or 1",
                    r.sample_id, r.label
                )));
            }
            if r.sample_id.is_empty() || r.path.is_empty() {
                return Err(ManifestError::Validation(
                    "records need a sample_id and a path".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.split).or_insert(0) += 1;
        }
        counts
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// The two sample lists used for head selection and kernel training.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSplit {
    pub train: Vec<ManifestRecord>,
    pub val: Vec<ManifestRecord>,
    /// True when `val` was carved out of the train split.
    pub carved: bool,
}

/// Fraction of the train split kept for training when no val split exists.
pub const CARVE_TRAIN_FRACTION: f64 = 0.75;

/// Train/validation records for fitting. Uses the manifest's val split when it has
/// one; otherwise a seeded 75/25 split of the train records, stratified by label.
pub fn fit_split(manifest: &DatasetManifest, seed: u64) -> Result<FitSplit> {
    let train: Vec<_> = manifest.split_records(Split::Train).cloned().collect();
    if train.is_empty() {
        return Err(ManifestError::EmptySplit(Split::Train));
    }
    let val: Vec<_> = manifest.split_records(Split::Val).cloned().collect();
    if !val.is_empty() {
        return Ok(FitSplit {
            train,
            val,
            carved: false,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_5011);
    let (mut keep, mut held) = (Vec::new(), Vec::new());
    for label in [0u8, 1] {
        let mut class: Vec<_> = train.iter().filter(|r| r.label == label).cloned().collect();
        class.shuffle(&mut rng);
        let n_keep = ((class.len() as f64) * CARVE_TRAIN_FRACTION).round() as usize;
        let n_keep = n_keep.clamp(class.len().min(1), class.len());
        let rest = class.split_off(n_keep);
        keep.extend(class);
        held.extend(rest);
    }
    if held.is_empty() {
        return Err(ManifestError::EmptySplit(Split::Val));
    }
    // restore manifest order inside each part
    let order: BTreeMap<&str, usize> = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.sample_id.as_str(), i))
        .collect();
    keep.sort_by_key(|r| order[r.sample_id.as_str()]);
    held.sort_by_key(|r| order[r.sample_id.as_str()]);
    Ok(FitSplit {
        train: keep,
        val: held,
        carved: true,
    })
}

/// A loaded manifest bound to its directory. Every bundle read goes through here
/// and is recorded, so tests can audit which samples a command touched.
#[derive(Debug)]
pub struct Dataset {
    manifest: DatasetManifest,
    root: PathBuf,
    accessed: Mutex<BTreeSet<String>>,
}

impl Dataset {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path).map_err(|source| ManifestError::Io {
            path: manifest_path.display().to_string(),
            source,
        })?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|source| ManifestError::Json {
                path: manifest_path.display().to_string(),
                source,
            })?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Self::from_parts(manifest, root)
    }

    pub fn from_parts(manifest: DatasetManifest, root: PathBuf) -> Result<Self> {
        manifest.validate()?;
        for r in &manifest.records {
            let p = root.join(&r.path);
            if !p.is_file() {
                return Err(ManifestError::Validation(format!(
                    "sample {}: bundle {} does not exist",
                    r.sample_id,
                    p.display()
                )));
            }
        }
        Ok(Self {
            manifest,
            root,
            accessed: Mutex::new(BTreeSet::new()),
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn bundle_path(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn sidecar_path(&self, record: &ManifestRecord) -> PathBuf {
        sidecar_path_for(&self.bundle_path(record))
    }

    /// Read one bundle; its sample id is taken from the manifest record.
    pub fn read(&self, record: &ManifestRecord) -> Result<SampleBundle> {
        self.accessed
            .lock()
            .expect("audit lock")
            .insert(record.sample_id.clone());
        let wrap = |source| ManifestError::Bundle {
            sample_id: record.sample_id.clone(),
            source,
        };
        let mut bundle = read_bundle(&self.bundle_path(record)).map_err(wrap)?;
        bundle.sample_id = record.sample_id.clone();
        if bundle.label != record.label {
            return Err(ManifestError::LabelMismatch {
                sample_id: record.sample_id.clone(),
                manifest: record.label,
                bundle: bundle.label,
            });
        }
        if bundle.dim != self.manifest.metadata.dim {
            return Err(wrap(BundleError::Validation(format!(
                "dim {} differs from manifest dim {}",
                bundle.dim, self.manifest.metadata.dim
            ))));
        }
        Ok(bundle)
    }

    pub fn read_all(&self, records: &[ManifestRecord]) -> Result<Vec<SampleBundle>> {
        records.iter().map(|r| self.read(r)).collect()
    }

    pub fn read_split(&self, split: Split) -> Result<Vec<SampleBundle>> {
        let records: Vec<_> = self.manifest.split_records(split).cloned().collect();
        if records.is_empty() {
            return Err(ManifestError::EmptySplit(split));
        }
        self.read_all(&records)
    }

    /// Sample ids read so far, sorted.
    pub fn accessed(&self) -> Vec<String> {
        self.accessed
            .lock()
            .expect("audit lock")
            .iter()
            .cloned()
            .collect()
    }

    /// Splits touched so far.
    pub fn accessed_splits(&self) -> BTreeSet<Split> {
        let ids = self.accessed.lock().expect("audit lock");
        self.manifest
            .records
            .iter()
            .filter(|r| ids.contains(&r.sample_id))
            .map(|r| r.split)
            .collect()
    }
}

pub fn sidecar_path_for(bundle_path: &Path) -> PathBuf {
    bundle_path.with_extension(SIDECAR_SUFFIX)
}

/// Prompt and response token lines of a sidecar file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSidecar {
    pub prompt: String,
    pub response: String,
}

impl TokenSidecar {
    pub fn parse(text: &str) -> Option<Self> {
        let mut lines = text.lines();
        let prompt = lines.next()?.to_string();
        let response = lines.next().unwrap_or("").to_string();
        Some(Self { prompt, response })
    }

    pub fn render(&self) -> String {
        format!("{}\n{}\n", self.prompt, self.response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, label: u8, split: Split) -> ManifestRecord {
        ManifestRecord {
            sample_id: id.into(),
            path: format!("{id}.hseb"),
            label,
            split,
        }
    }

    fn manifest(records: Vec<ManifestRecord>) -> DatasetManifest {
        DatasetManifest::new(
            ManifestMetadata {
                model_name: "toy".into(),
                dim: 2,
                streams: vec![StreamKey::head(0, 0)],
                attributes: BTreeMap::new(),
            },
            records,
        )
    }

    #[test]
    fn json_round_trip() {
        let m = manifest(vec![
            record("a", 0, Split::Train),
            record("b", 1, Split::Test),
        ]);
        let back: DatasetManifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(m.to_json().contains("\"split\": \"test\""));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let m = manifest(vec![
            record("a", 0, Split::Train),
            record("a", 1, Split::Test),
        ]);
        assert!(m.validate().unwrap_err().to_string().contains("duplicate"));
        let m = manifest(vec![record("a", 2, Split::Train)]);
        assert!(m.validate().is_err());
    }

    #[test]
    fn val_split_used_when_present() {
        let m = manifest(vec![
            record("a", 0, Split::Train),
            record("b", 1, Split::Val),
            record("c", 1, Split::Train),
        ]);
        let fit = fit_split(&m, 0).unwrap();
        assert!(!fit.carved);
        assert_eq!(fit.val.len(), 1);
        assert_eq!(fit.train.len(), 2);
    }

    #[test]
    fn carved_split_is_stratified_and_disjoint() {
        let records: Vec<_> = (0..40)
            .map(|i| record(&format!("s{i:02}"), (i % 5 == 0) as u8, Split::Train))
            .collect();
        let m = manifest(records);
        let fit = fit_split(&m, 9).unwrap();
        assert!(fit.carved);
        assert_eq!(fit.train.len(), 30);
        assert_eq!(fit.val.len(), 10);
        let pos = |rs: &[ManifestRecord]| rs.iter().filter(|r| r.label == 1).count();
        assert_eq!(pos(&fit.train), 6);
        assert_eq!(pos(&fit.val), 2);
        let ids: HashSet<_> = fit.train.iter().map(|r| &r.sample_id).collect();
        assert!(fit.val.iter().all(|r| !ids.contains(&r.sample_id)));
        assert_eq!(fit, fit_split(&m, 9).unwrap());
    }

    #[test]
    fn sidecar_naming_and_parse() {
        assert_eq!(
            sidecar_path_for(Path::new("d/s001.hseb")),
            PathBuf::from("d/s001.tokens.txt")
        );
        let s = TokenSidecar::parse("the cat sat\non the mat\n").unwrap();
        assert_eq!(s.response, "on the mat");
        assert_eq!(TokenSidecar::parse(&s.render()).unwrap(), s);
        assert!(TokenSidecar::parse("").is_none());
    }
}
