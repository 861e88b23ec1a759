//! Checkpoint file format, all integers little-endian:
//!
//! ```text
//! magic           8 bytes  "LSPCKPT\0"
//! version         u32      1
//! vocab_size      u32
//! embed_dim       u32
//! context_window  u32
//! hidden_dim      u32
//! params          f64 x n
//! n               u64
//! checksum        u64      FNV-1a over every preceding byte
//! ```

use std::path::Path;
use std::sync::Arc;

use super::{Policy, PolicyArchitecture};
use crate::autodiff::fnv1a;
use crate::autodiff::ParameterVector;
use crate::{LspError, Result};

const MAGIC: &[u8; 8] = b"LSPCKPT\0";
const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 4 * 4;

pub fn encode_checkpoint(policy: &Policy) -> Vec<u8> {
    let a = policy.architecture();
    let values = policy.params().values();
    let mut out = Vec::with_capacity(HEADER + 8 * values.len() + 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [a.vocab_size, a.embed_dim, a.context_window, a.hidden_dim] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    let sum = fnv1a(out.iter().copied());
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

pub fn decode_checkpoint(bytes: &[u8], origin: impl AsRef<Path>) -> Result<Policy> {
    let origin = origin.as_ref();
    let bad = |detail: &str| LspError::format(origin, detail);
    if bytes.len() < HEADER + 16 {
        return Err(bad("file too short for a checkpoint"));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32_at(bytes, 8);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let stored_sum = u64_at(bytes, bytes.len() - 8);
    if fnv1a(bytes[..bytes.len() - 8].iter().copied()) != stored_sum {
        return Err(bad("checksum mismatch"));
    }
    let arch = PolicyArchitecture {
        vocab_size: u32_at(bytes, 12) as usize,
        embed_dim: u32_at(bytes, 16) as usize,
        context_window: u32_at(bytes, 20) as usize,
        hidden_dim: u32_at(bytes, 24) as usize,
    };
    let n = u64_at(bytes, bytes.len() - 16) as usize;
    let body = bytes.len() - HEADER - 16;
    if !body.is_multiple_of(8) || body / 8 != n {
        return Err(bad("parameter count does not match file length"));
    }
    if arch.vocab_size < 4 || arch.embed_dim == 0 || arch.hidden_dim == 0 || arch.context_window == 0 {
        return Err(bad("invalid architecture fields"));
    }
    let layout = Arc::new(arch.layout());
    if layout.len() != n {
        return Err(bad("parameter count does not match the architecture"));
    }
    let values = bytes[HEADER..HEADER + 8 * n]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Policy::from_params(arch, ParameterVector::new(layout, values)?)
}

pub fn save_checkpoint(policy: &Policy, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(policy)).map_err(|e| LspError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Policy> {
    let bytes = std::fs::read(path).map_err(|e| LspError::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
