//! Versioned flat binary checkpoints.
//!
//! Layout: the 8-byte magic `SHMCKPT1`; little-endian `u32` values D, H, L,
//! variant tag, policy-head outputs, value-head outputs; then every parameter
//! as a little-endian `f64`, in [`Agent::tensors`] order.

use super::{Agent, PolicyValueHeads};
use crate::calibration::{init_params, CalibrationVariant, Dims};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::Real;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"SHMCKPT1";
const HEADER_LEN: usize = 8 + 6 * 4;

pub fn encode(agent: &Agent) -> Vec<u8> {
    let dims = agent.params.dims;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * agent.num_params());
    out.extend_from_slice(MAGIC);
    for v in [
        dims.d,
        dims.h,
        dims.l,
        agent.params.variant.tag() as usize,
        agent.heads.policy.output_dim(),
        agent.heads.value.output_dim(),
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (_, t) in agent.tensors() {
        for v in t {
            out.extend_from_slice(&(*v as f64).to_le_bytes());
        }
    }
    out
}

/// Decode a checkpoint, optionally requiring dims and variant to match.
pub fn decode(bytes: &[u8], expect: Option<(Dims, CalibrationVariant)>) -> Result<Agent> {
    let bad = |m: String| Error::Checkpoint(m);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file holds {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("bad magic or unsupported version".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (d, h, l, tag, actions, values) = (word(0), word(1), word(2), word(3), word(4), word(5));
    let dims = Dims::new(d, h, l).map_err(|e| bad(e.to_string()))?;
    let variant = CalibrationVariant::from_tag(tag as u32).map_err(|e| bad(e.to_string()))?;
    if let Some((want, want_variant)) = expect {
        if want != dims {
            return Err(bad(format!(
                "dimension mismatch: checkpoint has D={d}, H={h}, L={l}; config wants D={}, H={}, L={}",
                want.d, want.h, want.l
            )));
        }
        if want_variant != variant {
            return Err(bad(format!("variant mismatch: checkpoint {variant}, config {want_variant}")));
        }
    }
    if values != 1 || actions == 0 {
        return Err(bad(format!("unsupported head sizes ({actions}, {values})")));
    }
    let params = init_params(dims, variant, &mut rng_from_seed(0)).map_err(|e| bad(e.to_string()))?;
    let mut agent = Agent { params, heads: PolicyValueHeads::zeros(h, actions) };
    let expected = HEADER_LEN + 8 * agent.num_params();
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut off = HEADER_LEN;
    for (_, t) in agent.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes")) as Real;
            off += 8;
        }
    }
    Ok(agent)
}

pub fn save(agent: &Agent, path: &Path) -> Result<()> {
    std::fs::write(path, encode(agent))?;
    Ok(())
}

pub fn load(path: &Path, expect: Option<(Dims, CalibrationVariant)>) -> Result<Agent> {
    decode(&std::fs::read(path)?, expect)
}
