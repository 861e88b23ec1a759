//! Resume files: everything needed to continue a run bit-identically.
//!
//! Layout (little-endian): magic `LSPSTATE`, version `u32`, epoch `u64`,
//! policy checkpoint and reference checkpoint (each as `u64` length + bytes),
//! optimizer tag `u8` (0 = sgd, 1 = adam), and for adam the step `u64`
//! followed by `m` and `v` (each `u64` length + `f64` values). A trailing
//! FNV-1a checksum covers everything before it.

use std::path::Path;

use crate::autodiff::{fnv1a, AdamState, OptimizerState};
use crate::policy::{decode_checkpoint, encode_checkpoint, Policy, ReferenceSnapshot};
use crate::{LspError, Result};

const MAGIC: &[u8; 8] = b"LSPSTATE";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ResumeState {
    pub epoch: u64,
    pub policy: Policy,
    pub reference: ReferenceSnapshot,
    pub optimizer: OptimizerState,
}

fn put_floats(out: &mut Vec<u8>, xs: &[f64]) {
    out.extend_from_slice(&(xs.len() as u64).to_le_bytes());
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_state(state: &ResumeState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&state.epoch.to_le_bytes());
    for blob in [encode_checkpoint(&state.policy), state.reference.to_bytes()] {
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        out.extend_from_slice(&blob);
    }
    match &state.optimizer {
        OptimizerState::Sgd => out.push(0),
        OptimizerState::Adam(a) => {
            out.push(1);
            out.extend_from_slice(&a.step.to_le_bytes());
            put_floats(&mut out, &a.m);
            put_floats(&mut out, &a.v);
        }
    }
    let sum = fnv1a(out.iter().copied());
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn floats(&mut self) -> Option<Vec<f64>> {
        let n = usize::try_from(self.u64()?).ok()?;
        let raw = self.take(n.checked_mul(8)?)?;
        Some(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }
}

pub fn decode_state(bytes: &[u8], origin: &Path) -> Result<ResumeState> {
    let bad = |d: &str| LspError::format(origin, d);
    if bytes.len() < MAGIC.len() + 12 + 8 || &bytes[..8] != MAGIC {
        return Err(bad("not a resume file"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body.iter().copied()).to_le_bytes() != tail {
        return Err(bad("resume file checksum mismatch"));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = u32::from_le_bytes(r.take(4).unwrap().try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported resume version {version}")));
    }
    let truncated = || bad("resume file truncated");
    let epoch = r.u64().ok_or_else(truncated)?;
    let mut blob = || -> Result<&[u8]> {
        let n = r.u64().and_then(|n| usize::try_from(n).ok()).ok_or_else(truncated)?;
        r.take(n).ok_or_else(truncated)
    };
    let policy = decode_checkpoint(blob()?, origin)?;
    let reference = ReferenceSnapshot::from_policy(decode_checkpoint(blob()?, origin)?);
    let optimizer = match r.take(1).ok_or_else(truncated)?[0] {
        0 => OptimizerState::Sgd,
        1 => {
            let step = r.u64().ok_or_else(truncated)?;
            let m = r.floats().ok_or_else(truncated)?;
            let v = r.floats().ok_or_else(truncated)?;
            OptimizerState::Adam(AdamState { m, v, step })
        }
        t => return Err(bad(&format!("unknown optimizer tag {t}"))),
    };
    if r.pos != body.len() {
        return Err(bad("trailing bytes in resume file"));
    }
    Ok(ResumeState {
        epoch,
        policy,
        reference,
        optimizer,
    })
}

pub fn save_state(state: &ResumeState, path: &Path) -> Result<()> {
    std::fs::write(path, encode_state(state)).map_err(|e| LspError::io(path, e))
}

pub fn load_state(path: &Path) -> Result<ResumeState> {
    let bytes = std::fs::read(path).map_err(|e| LspError::io(path, e))?;
    decode_state(&bytes, path)
}
