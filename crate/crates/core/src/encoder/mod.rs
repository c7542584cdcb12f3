//! The embedding encoder: token-embedding lookup → mean pooling → L2
//! normalization, with exact analytic gradients.
//!
//! Similarity is the inner product of normalized encodings, so it is cosine
//! similarity in [-1, 1]. All in-memory math is f64 (the gradient checks in
//! the test suite rely on that); the on-disk format quantizes rows to f32,
//! and every training stage hands off through the file, which keeps the
//! pipeline bit-reproducible.

pub mod io;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::textproc::{TokenSequence, UNK_ID};

/// Norms below this are clamped before dividing (and flagged upstream).
pub const MIN_NORM: f64 = 1e-8;

/// The full parameter table: one `dim`-vector per vocabulary id, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub vocab_size: usize,
    pub dim: usize,
    /// Seed the table was initialized from (recorded in the artifact header).
    pub seed: u64,
    table: Vec<f64>,
}

impl EncoderParams {
    /// Fresh parameters, i.i.d. uniform(-scale, scale), deterministic per seed.
    pub fn init(vocab_size: usize, dim: usize, seed: u64, scale: f64) -> Result<EncoderParams> {
        if vocab_size < 2 || dim == 0 {
            return Err(Error::validation(format!(
                "encoder needs vocab_size >= 2 and dim >= 1 (got {vocab_size}, {dim})"
            )));
        }
        if !(scale > 0.0) {
            return Err(Error::validation(format!("init scale must be positive (got {scale})")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..vocab_size * dim).map(|_| rng.gen_range(-scale..scale)).collect();
        Ok(EncoderParams { vocab_size, dim, seed, table })
    }

    pub fn from_table(vocab_size: usize, dim: usize, seed: u64, table: Vec<f64>) -> Result<EncoderParams> {
        if table.len() != vocab_size * dim {
            return Err(Error::validation(format!(
                "table length {} does not match {vocab_size}x{dim}",
                table.len()
            )));
        }
        Ok(EncoderParams { vocab_size, dim, seed, table })
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let i = id as usize * self.dim;
        &self.table[i..i + self.dim]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            return Err(Error::format(format!(
                "token id {bad} out of range for vocab of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Stable identity of this parameter set (used to tie an index to the
    /// encoder that produced it). Equal to the artifact file's checksum.
    pub fn fingerprint(&self) -> u64 {
        io::digest64(&io::serialize_payload(self))
    }
}

/// An encoding, tagged with whether it has been L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub components: Vec<f64>,
    pub normalized: bool,
}

/// Mean-pool the rows for `ids` (an empty sequence reads as one UNK token).
fn pool(params: &EncoderParams, ids: &[u32]) -> Vec<f64> {
    let unk = [UNK_ID];
    let ids = if ids.is_empty() { &unk[..] } else { ids };
    let mut acc = vec![0.0f64; params.dim];
    for &id in ids {
        let row = params.row(id);
        for (a, r) in acc.iter_mut().zip(row) {
            *a += r;
        }
    }
    let n = ids.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    acc
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Encode one token sequence. `normalize` divides by the (clamped) L2 norm;
/// the unnormalized pooled form feeds the masked-reconstruction decoder.
pub fn encode(params: &EncoderParams, ids: &[u32], normalize: bool) -> Result<EmbeddingVector> {
    params.check_ids(ids)?;
    let mut v = pool(params, ids);
    if normalize {
        let n = l2_norm(&v).max(MIN_NORM);
        for x in &mut v {
            *x /= n;
        }
    }
    Ok(EmbeddingVector { components: v, normalized: normalize })
}

/// Encode many sequences (data-parallel, order-preserving).
pub fn encode_batch(
    params: &EncoderParams,
    seqs: &[TokenSequence],
    normalize: bool,
) -> Result<Vec<EmbeddingVector>> {
    par::map_ordered(seqs, |s| encode(params, &s.ids, normalize))
        .into_iter()
        .collect()
}

/// Sequential reference for [`encode_batch`] (bench baseline).
pub fn encode_batch_seq(
    params: &EncoderParams,
    seqs: &[TokenSequence],
    normalize: bool,
) -> Result<Vec<EmbeddingVector>> {
    par::map_ordered_seq(seqs, |s| encode(params, &s.ids, normalize))
        .into_iter()
        .collect()
}

/// Inner product. Both operands must have the same dimension.
pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.components.len() != b.components.len() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            a.components.len(),
            b.components.len()
        )));
    }
    Ok(a.components.iter().zip(&b.components).map(|(x, y)| x * y).sum())
}

/// Sparse per-row gradients. BTreeMap keeps accumulation order deterministic
/// when folding into the parameter table.
#[derive(Debug, Clone)]
pub struct RowGrads {
    pub dim: usize,
    rows: BTreeMap<u32, Vec<f64>>,
}

impl RowGrads {
    pub fn new(dim: usize) -> RowGrads {
        RowGrads { dim, rows: BTreeMap::new() }
    }

    pub fn add_row(&mut self, id: u32, grad: &[f64], scale: f64) {
        debug_assert_eq!(grad.len(), self.dim);
        let row = self.rows.entry(id).or_insert_with(|| vec![0.0; self.dim]);
        for (r, g) in row.iter_mut().zip(grad) {
            *r += scale * g;
        }
    }

    /// Fold another gradient in (used for ordered parallel reduction).
    pub fn merge(&mut self, other: &RowGrads) {
        for (&id, g) in &other.rows {
            self.add_row(id, g, 1.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.rows.values_mut() {
            for x in g {
                *x *= s;
            }
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.rows.values().flat_map(|g| g.iter()).map(|x| x * x).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.rows.iter().map(|(&id, g)| (id, g.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Dense copy in parameter-table layout (finite-difference tests).
    pub fn to_dense(&self, vocab_size: usize) -> Vec<f64> {
        let mut dense = vec![0.0; vocab_size * self.dim];
        for (id, g) in self.iter() {
            dense[id as usize * self.dim..][..self.dim].copy_from_slice(g);
        }
        dense
    }
}

/// Backpropagate an upstream gradient on the *normalized* encoding of `ids`
/// down to the embedding rows, accumulating into `grads` scaled by `scale`.
///
/// With p the pooled vector, n = max(‖p‖, MIN_NORM) and v = p/n:
/// g_p = (g' − v (v·g')) / n, then each contributing row gets g_p / len.
/// Returns true when the norm had to be clamped (degenerate zero pooling).
pub fn backprop_normalized(
    params: &EncoderParams,
    ids: &[u32],
    upstream: &[f64],
    scale: f64,
    grads: &mut RowGrads,
) -> Result<bool> {
    params.check_ids(ids)?;
    if upstream.len() != params.dim {
        return Err(Error::validation("upstream gradient dimension mismatch".to_owned()));
    }
    let unk = [UNK_ID];
    let ids = if ids.is_empty() { &unk[..] } else { ids };
    let p = pool(params, ids);
    let raw_norm = l2_norm(&p);
    let clamped = raw_norm < MIN_NORM;
    let n = raw_norm.max(MIN_NORM);
    let v: Vec<f64> = p.iter().map(|x| x / n).collect();
    let vdotg: f64 = v.iter().zip(upstream).map(|(a, b)| a * b).sum();
    let g_p: Vec<f64> = upstream.iter().zip(&v).map(|(g, vi)| (g - vi * vdotg) / n).collect();
    let per_row = scale / ids.len() as f64;
    for &id in ids {
        grads.add_row(id, &g_p, per_row);
    }
    Ok(clamped)
}

/// Backpropagate an upstream gradient on the *unnormalized* pooled vector
/// (the masked-reconstruction path skips normalization).
pub fn backprop_pooled(
    params: &EncoderParams,
    ids: &[u32],
    upstream: &[f64],
    scale: f64,
    grads: &mut RowGrads,
) -> Result<()> {
    params.check_ids(ids)?;
    if upstream.len() != params.dim {
        return Err(Error::validation("upstream gradient dimension mismatch".to_owned()));
    }
    let unk = [UNK_ID];
    let ids = if ids.is_empty() { &unk[..] } else { ids };
    let per_row = scale / ids.len() as f64;
    for &id in ids {
        grads.add_row(id, upstream, per_row);
    }
    Ok(())
}
