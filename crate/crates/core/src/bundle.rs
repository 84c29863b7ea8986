//! Per-sample embedding bundles and the HSEB1 binary format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HSEB1"                                      5 bytes
//! version, n_streams, d, prompt_len, response_len   u32 × 5
//! label                                        u8
//! per stream:
//!     layer                                    u32
//!     head (0xFFFFFFFF = whole layer)          u32
//!     matrix, (prompt_len + response_len) × d  f32, row-major
//! crc32 of every preceding byte                u32
//! ```
//!
//! The sample id is not stored in the file; it is the file stem.

use crate::distance::PointSet;
use crate::selection::{HeadSlot, StreamKey};
use indexmap::IndexMap;
use std::path::Path;
use thiserror::Error;

pub const BUNDLE_MAGIC: &[u8; 5] = b"HSEB1";
pub const BUNDLE_VERSION: u32 = 1;
pub const WHOLE_LAYER_SENTINEL: u32 = 0xFFFF_FFFF;
pub const BUNDLE_EXTENSION: &str = "hseb";

const HEADER_LEN: usize = 5 + 5 * 4 + 1;
const CRC_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bad magic bytes: not an HSEB1 bundle")]
    BadMagic,

    #[error("truncated bundle: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("shape inconsistency: {0}")]
    Shape(String),

    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(u32),

    #[error("invalid bundle: {0}")]
    Validation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl BundleError {
    /// Machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            BundleError::BadMagic => "bad_magic",
            BundleError::Truncated { .. } => "truncated",
            BundleError::CrcMismatch { .. } => "crc_mismatch",
            BundleError::Shape(_) => "shape",
            BundleError::UnsupportedVersion(_) => "unsupported_version",
            BundleError::Validation(_) => "validation",
            BundleError::Io { .. } => "io",
        }
    }
}

/// One prompt/response pair: per-stream token embeddings plus label.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBundle {
    pub sample_id: String,
    /// 1 = hallucinated, 0 = grounded.
    pub label: u8,
    pub prompt_len: usize,
    pub response_len: usize,
    pub dim: usize,
    /// Row-major `(prompt_len + response_len) × dim` matrices, in file order.
    pub streams: IndexMap<StreamKey, Vec<f32>>,
}

impl SampleBundle {
    pub fn n_tokens(&self) -> usize {
        self.prompt_len + self.response_len
    }

    pub fn validate(&self) -> Result<(), BundleError> {
        let invalid = |m: String| Err(BundleError::Validation(m));
        if self.streams.is_empty() {
            return invalid("at least one stream required".into());
        }
        if self.label > 1 {
            return invalid(format!("label must be 0 or 1, got {}", self.label));
        }
        if self.dim == 0 {
            return invalid("embedding dimension must be positive".into());
        }
        if self.prompt_len == 0 || self.response_len == 0 {
            return invalid(format!(
                "prompt and response must be non-empty (got {} and {})",
                self.prompt_len, self.response_len
            ));
        }
        let expected = self.n_tokens() * self.dim;
        for (key, m) in &self.streams {
            if m.len() != expected {
                return Err(BundleError::Shape(format!(
                    "stream {key} has {} values, expected {expected}",
                    m.len()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return invalid(format!("stream {key} contains non-finite values"));
            }
        }
        Ok(())
    }

    pub fn stream(&self, key: &StreamKey) -> Option<&[f32]> {
        self.streams.get(key).map(Vec::as_slice)
    }

    /// Prompt and response rows of one stream promoted to `f64`.
    pub fn segments(&self, key: &StreamKey) -> Option<(Vec<f64>, Vec<f64>)> {
        let m = self.stream(key)?;
        let split = self.prompt_len * self.dim;
        let widen = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<_>>();
        Some((widen(&m[..split]), widen(&m[split..])))
    }

    pub fn segment_sets(&self, key: &StreamKey) -> Option<(PointSet, PointSet)> {
        let (p, r) = self.segments(key)?;
        Some((
            PointSet::from_flat(p, self.dim).ok()?,
            PointSet::from_flat(r, self.dim).ok()?,
        ))
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn to_u32(v: usize, what: &str) -> Result<u32, BundleError> {
    u32::try_from(v).map_err(|_| BundleError::Shape(format!("{what} {v} exceeds u32")))
}

/// Serialize a validated bundle.
pub fn encode_bundle(bundle: &SampleBundle) -> Result<Vec<u8>, BundleError> {
    bundle.validate()?;
    let mut out = Vec::with_capacity(
        HEADER_LEN + bundle.streams.len() * (8 + bundle.n_tokens() * bundle.dim * 4) + CRC_LEN,
    );
    out.extend_from_slice(BUNDLE_MAGIC);
    put_u32(&mut out, BUNDLE_VERSION);
    put_u32(&mut out, to_u32(bundle.streams.len(), "stream count")?);
    put_u32(&mut out, to_u32(bundle.dim, "dimension")?);
    put_u32(&mut out, to_u32(bundle.prompt_len, "prompt length")?);
    put_u32(&mut out, to_u32(bundle.response_len, "response length")?);
    out.push(bundle.label);
    for (key, matrix) in &bundle.streams {
        put_u32(&mut out, key.layer);
        put_u32(
            &mut out,
            match key.head {
                HeadSlot::Head(h) => {
                    if h == WHOLE_LAYER_SENTINEL {
                        return Err(BundleError::Validation(
                            "head index collides with the whole-layer sentinel".into(),
                        ));
                    }
                    h
                }
                HeadSlot::WholeLayer => WHOLE_LAYER_SENTINEL,
            },
        );
        for v in matrix {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn f32(&mut self) -> f32 {
        let v = f32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }
}

/// Parse and validate an HSEB1 byte buffer.
///
/// Check order: magic, header presence, declared length, CRC, structure.
pub fn decode_bundle(bytes: &[u8], sample_id: &str) -> Result<SampleBundle, BundleError> {
    let magic_len = BUNDLE_MAGIC.len().min(bytes.len());
    if bytes[..magic_len] != BUNDLE_MAGIC[..magic_len] {
        return Err(BundleError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(BundleError::Truncated {
            expected: HEADER_LEN + CRC_LEN,
            found: bytes.len(),
        });
    }

    let mut r = Reader { buf: bytes, pos: 5 };
    let version = r.u32();
    let n_streams = r.u32() as usize;
    let dim = r.u32() as usize;
    let prompt_len = r.u32() as usize;
    let response_len = r.u32() as usize;
    let label = bytes[r.pos];
    r.pos += 1;

    let declared = (prompt_len as u64 + response_len as u64)
        .checked_mul(dim as u64)
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(8))
        .and_then(|v| v.checked_mul(n_streams as u64))
        .and_then(|v| v.checked_add((HEADER_LEN + CRC_LEN) as u64));
    let Some(declared) = declared else {
        return Err(BundleError::Shape("declared size overflows".into()));
    };
    let found = bytes.len() as u64;
    let body_end = bytes.len() - CRC_LEN;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if found < declared {
        return Err(BundleError::Truncated {
            expected: declared as usize,
            found: bytes.len(),
        });
    }
    if stored != computed {
        return Err(BundleError::CrcMismatch { stored, computed });
    }
    if found > declared {
        return Err(BundleError::Shape(format!(
            "header declares {declared} bytes but file has {found}"
        )));
    }
    if version != BUNDLE_VERSION {
        return Err(BundleError::UnsupportedVersion(version));
    }
    if n_streams == 0 {
        return Err(BundleError::Validation(
            "at least one stream required".into(),
        ));
    }

    let per_stream = (prompt_len + response_len) * dim;
    let mut streams = IndexMap::with_capacity(n_streams);
    for _ in 0..n_streams {
        let layer = r.u32();
        let head = match r.u32() {
            WHOLE_LAYER_SENTINEL => HeadSlot::WholeLayer,
            h => HeadSlot::Head(h),
        };
        let key = StreamKey { layer, head };
        let matrix: Vec<f32> = (0..per_stream).map(|_| r.f32()).collect();
        if streams.insert(key, matrix).is_some() {
            return Err(BundleError::Validation(format!("duplicate stream {key}")));
        }
    }

    let bundle = SampleBundle {
        sample_id: sample_id.to_string(),
        label,
        prompt_len,
        response_len,
        dim,
        streams,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn write_bundle(bundle: &SampleBundle, path: &Path) -> Result<(), BundleError> {
    let bytes = encode_bundle(bundle)?;
    std::fs::write(path, bytes).map_err(|source| BundleError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Read a bundle; the sample id is taken from the file stem.
pub fn read_bundle(path: &Path) -> Result<SampleBundle, BundleError> {
    let bytes = std::fs::read(path).map_err(|source| BundleError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_bundle(&bytes, &id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SampleBundle {
        let mut streams = IndexMap::new();
        streams.insert(
            StreamKey::head(3, 1),
            vec![0.5f32, -1.0, 2.0, 0.0, 1.5, 3.25],
        );
        streams.insert(StreamKey::whole_layer(0), vec![1.0f32; 6]);
        SampleBundle {
            sample_id: "s0".into(),
            label: 1,
            prompt_len: 2,
            response_len: 1,
            dim: 2,
            streams,
        }
    }

    #[test]
    fn round_trip_preserves_order_and_bits() {
        let b = sample();
        let bytes = encode_bundle(&b).unwrap();
        assert_eq!(&bytes[..5], b"HSEB1");
        let back = decode_bundle(&bytes, "s0").unwrap();
        assert_eq!(back, b);
        let keys: Vec<_> = back.streams.keys().copied().collect();
        assert_eq!(keys, vec![StreamKey::head(3, 1), StreamKey::whole_layer(0)]);
    }

    #[test]
    fn flipped_crc_byte_is_crc_error() {
        let mut bytes = encode_bundle(&sample()).unwrap();
        let n = bytes.len();
        bytes[n - 2] ^= 0x40;
        assert!(matches!(
            decode_bundle(&bytes, "x"),
            Err(BundleError::CrcMismatch { .. })
        ));
    }

    #[test]
    fn zero_stream_file_is_validation_error() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(BUNDLE_MAGIC);
        for v in [BUNDLE_VERSION, 0, 2, 1, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.push(0);
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        let err = decode_bundle(&bytes, "z").unwrap_err();
        assert_eq!(err.kind(), "validation");
        assert!(err.to_string().contains("at least one stream required"));

        let mut empty = sample();
        empty.streams.clear();
        assert!(encode_bundle(&empty).is_err());
    }

    #[test]
    fn bad_magic_and_truncation() {
        let bytes = encode_bundle(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_bundle(&bad, "x").unwrap_err().kind(), "bad_magic");
        assert_eq!(decode_bundle(b"HSE", "x").unwrap_err().kind(), "truncated");
        assert_eq!(decode_bundle(b"", "x").unwrap_err().kind(), "truncated");
        let cut = &bytes[..bytes.len() - 7];
        assert_eq!(decode_bundle(cut, "x").unwrap_err().kind(), "truncated");
    }

    #[test]
    fn unsupported_version_with_valid_crc() {
        let mut bytes = encode_bundle(&sample()).unwrap();
        bytes[5] = 9;
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(
            decode_bundle(&bytes, "x").unwrap_err().kind(),
            "unsupported_version"
        );
    }

    #[test]
    fn shape_and_label_validation() {
        let mut b = sample();
        b.streams[0].pop();
        assert_eq!(encode_bundle(&b).unwrap_err().kind(), "shape");
        let mut b = sample();
        b.label = 3;
        assert_eq!(encode_bundle(&b).unwrap_err().kind(), "validation");
        let mut b = sample();
        b.streams[1][0] = f32::NAN;
        assert_eq!(encode_bundle(&b).unwrap_err().kind(), "validation");
    }

    #[test]
    fn segments_split_at_prompt_boundary() {
        let b = sample();
        let (p, r) = b.segments(&StreamKey::head(3, 1)).unwrap();
        assert_eq!(p, vec![0.5, -1.0, 2.0, 0.0]);
        assert_eq!(r, vec![1.5, 3.25]);
    }
}
