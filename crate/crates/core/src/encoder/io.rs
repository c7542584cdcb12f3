//! Binary persistence for encoder parameters.
//!
//! Layout (all integers little-endian):
//! `"HGEC"` magic, u32 version, u64 vocab_size, u32 dim, u64 seed,
//! vocab_size*dim f32 rows, then a u64 checksum of every preceding byte.
//! Rows are quantized to f32 on save and widened back to f64 on load, so
//! save→load→save is byte-identical.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::EncoderParams;

pub const MAGIC: &[u8; 4] = b"HGEC";
pub const VERSION: u32 = 1;

/// First eight bytes of the SHA-256 digest, as a little-endian u64.
pub fn digest64(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Header plus f32 rows; everything the trailing checksum covers.
pub(super) fn serialize_payload(params: &EncoderParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 + 8 + 4 + 8 + params.table.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.vocab_size as u64).to_le_bytes());
    out.extend_from_slice(&(params.dim as u32).to_le_bytes());
    out.extend_from_slice(&params.seed.to_le_bytes());
    for &x in &params.table {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn save(params: &EncoderParams, path: &Path) -> Result<()> {
    let mut payload = serialize_payload(params);
    let checksum = digest64(&payload);
    payload.extend_from_slice(&checksum.to_le_bytes());
    fs::write(path, payload)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<EncoderParams> {
    let bytes = fs::read(path)?;
    let fail = |msg: &str| Error::format(format!("{}: {msg}", path.display()));
    if bytes.len() < 4 + 4 + 8 + 4 + 8 + 8 {
        return Err(fail("file too short for an encoder artifact"));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail("bad magic, not an encoder artifact"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(&format!("unsupported encoder version {version}")));
    }
    let vocab_size = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let expect_len = 28 + vocab_size * dim * 4 + 8;
    if bytes.len() != expect_len {
        return Err(fail(&format!(
            "length {} does not match header ({vocab_size} x {dim} rows)",
            bytes.len()
        )));
    }
    let body_end = bytes.len() - 8;
    let stored = u64::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let actual = digest64(&bytes[..body_end]);
    if stored != actual {
        return Err(fail("checksum mismatch, artifact is corrupt"));
    }
    let table = bytes[28..body_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    EncoderParams::from_table(vocab_size, dim, seed, table)
}
