//! DKM1 model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "DKM1"                       4 bytes
//! version                      u32 (= 1)
//! input dim d, latent dim p    u32, u32
//! norm order                   f64 (+inf for the max norm)
//! kernel exponent q            f64
//! parameter count              u64
//! parameters                   f64 × count
//! crc32 of all preceding bytes u32
//! ```
//!
//! Parameter order: encoder W_ih (3p × d), W_hh (3p × p), b_ih (3p), b_hh (3p),
//! then decoder W_ih (3d × p), W_hh (3d × d), b_ih (3d), b_hh (3d). Gate blocks
//! within each tensor are ordered reset, update, candidate.

use super::{DeepKernelError, DeepKernelModel, Result};
use crate::distance::{KernelSpec, NormOrder};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DKM1";
const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 4 + 4 + 8 + 8 + 8;

pub fn encode_checkpoint(model: &DeepKernelModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + model.params().len() * 8 + 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.input_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(model.latent_dim() as u32).to_le_bytes());
    let norm = match model.base().norm_order {
        NormOrder::Finite(p) => p,
        NormOrder::Infinity => f64::INFINITY,
    };
    out.extend_from_slice(&norm.to_le_bytes());
    out.extend_from_slice(&model.base().exponent.to_le_bytes());
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DeepKernelModel> {
    let bad = |m: String| DeepKernelError::Checkpoint(m);
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic bytes: not a DKM1 checkpoint".into()));
    }
    if bytes.len() < HEADER + 4 {
        return Err(bad(format!("truncated: {} bytes", bytes.len())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    let input_dim = u32_at(8) as usize;
    let latent_dim = u32_at(12) as usize;
    let norm = f64_at(16);
    let exponent = f64_at(24);
    let count = u64::from_le_bytes(bytes[32..40].try_into().unwrap());

    let expected = (count as u128) * 8 + (HEADER + 4) as u128;
    if (bytes.len() as u128) < expected {
        return Err(bad(format!(
            "truncated: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    if bytes.len() as u128 != expected {
        return Err(bad(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let body = bytes.len() - 4;
    let stored = u32_at(body);
    let computed = crc32fast::hash(&bytes[..body]);
    if stored != computed {
        return Err(bad(format!(
            "crc mismatch: stored {stored:#010x}, computed {computed:#010x}"
        )));
    }
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let norm_order = if norm == f64::INFINITY {
        NormOrder::Infinity
    } else {
        NormOrder::Finite(norm)
    };
    let base = KernelSpec::new(norm_order, exponent)?;
    let params = (0..count as usize)
        .map(|i| f64_at(HEADER + 8 * i))
        .collect();
    DeepKernelModel::from_params(input_dim, latent_dim, base, params)
}

pub fn write_checkpoint(model: &DeepKernelModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)).map_err(|source| DeepKernelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<DeepKernelModel> {
    let bytes = std::fs::read(path).map_err(|source| DeepKernelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
