//! Exact-scan vector index over evidence encodings.
//!
//! Rows are stored quantized to f32 (the same precision as the on-disk
//! artifact, so a freshly built index and a reloaded one score identically);
//! scoring widens back to f64. Ranking is score descending with ascending
//! evidence id breaking ties.
//!
//! Artifact layout (little-endian): `"HGIX"` magic, u32 version, u64 row
//! count, u32 dim, u64 encoder fingerprint, rows f32, ids i64, types u8,
//! and a trailing u64 checksum of every preceding byte.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::path::Path;

use crate::corpus::KnowledgeType;
use crate::encoder::{self, io::digest64, EmbeddingVector, EncoderParams};
use crate::error::{Error, Result};
use crate::par;
use crate::textproc::TokenSequence;

pub const MAGIC: &[u8; 4] = b"HGIX";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    encoder_fingerprint: u64,
    rows: Vec<f32>,
    ids: Vec<i64>,
    types: Vec<KnowledgeType>,
}

/// One ranked search result. Ranks are dense and start at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub evidence_id: i64,
    pub etype: KnowledgeType,
    pub score: f64,
    pub rank: usize,
}

/// Worst-first ordering for the running top-k heap: lower score is worse,
/// equal scores make the higher id worse.
#[derive(Debug)]
struct HeapSlot {
    score: f64,
    id: i64,
    slot: usize,
}

impl PartialEq for HeapSlot {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapSlot {}
impl PartialOrd for HeapSlot {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapSlot {
    fn cmp(&self, other: &Self) -> Ordering {
        other.score.total_cmp(&self.score).then(self.id.cmp(&other.id))
    }
}

impl VectorIndex {
    /// Encode every entry (id, type, token ids) and build the index. Ids
    /// must arrive strictly ascending, mirroring the corpus file order.
    pub fn build(
        enc: &EncoderParams,
        entries: &[(i64, KnowledgeType, TokenSequence)],
    ) -> Result<VectorIndex> {
        if entries.is_empty() {
            return Err(Error::validation("cannot build an index over zero evidence".to_owned()));
        }
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::validation(format!(
                    "evidence ids must be strictly ascending ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        let seqs: Vec<TokenSequence> = entries.iter().map(|(_, _, s)| s.clone()).collect();
        let vecs = encoder::encode_batch(enc, &seqs, true)?;
        let dim = enc.dim;
        let mut rows = Vec::with_capacity(entries.len() * dim);
        for v in &vecs {
            rows.extend(v.components.iter().map(|&x| x as f32));
        }
        Ok(VectorIndex {
            dim,
            encoder_fingerprint: enc.fingerprint(),
            rows,
            ids: entries.iter().map(|e| e.0).collect(),
            types: entries.iter().map(|e| e.1).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[i64] {
        &self.ids
    }

    pub fn encoder_fingerprint(&self) -> u64 {
        self.encoder_fingerprint
    }

    /// Fail unless `enc` is the exact parameter set this index was built
    /// from (bitwise, via the artifact checksum).
    pub fn verify_encoder(&self, enc: &EncoderParams) -> Result<()> {
        if enc.fingerprint() != self.encoder_fingerprint {
            return Err(Error::validation(
                "index was built by a different encoder (fingerprint mismatch)".to_owned(),
            ));
        }
        Ok(())
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<()> {
        if query.components.len() != self.dim {
            return Err(Error::validation(format!(
                "query dimension {} does not match index dimension {}",
                query.components.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn score_slot(&self, query: &[f64], slot: usize) -> f64 {
        let row = &self.rows[slot * self.dim..(slot + 1) * self.dim];
        row.iter().zip(query).map(|(&r, &q)| r as f64 * q).sum()
    }

    /// Scores for every row, in id order.
    pub fn score_all(&self, query: &EmbeddingVector) -> Result<Vec<f64>> {
        self.check_query(query)?;
        Ok(par::map_range(self.len(), |slot| self.score_slot(&query.components, slot)))
    }

    /// Sequential reference for [`score_all`] (bench baseline).
    pub fn score_all_seq(&self, query: &EmbeddingVector) -> Result<Vec<f64>> {
        self.check_query(query)?;
        Ok(par::map_range_seq(self.len(), |slot| self.score_slot(&query.components, slot)))
    }

    /// The `k` best rows by (score desc, id asc), via a bounded heap over
    /// the full scan.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>> {
        let scores = self.score_all(query)?;
        Ok(self.rank_top(&scores, k))
    }

    /// Sequential reference for [`top_k`] (bench baseline).
    pub fn top_k_seq(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>> {
        let scores = self.score_all_seq(query)?;
        Ok(self.rank_top(&scores, k))
    }

    fn rank_top(&self, scores: &[f64], k: usize) -> Vec<SearchHit> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<HeapSlot> = BinaryHeap::with_capacity(k + 1);
        for (slot, &score) in scores.iter().enumerate() {
            heap.push(HeapSlot { score, id: self.ids[slot], slot });
            if heap.len() > k {
                heap.pop();
            }
        }
        // Ord ranks worse entries greater, so ascending order is best-first.
        let mut best: Vec<HeapSlot> = heap.into_vec();
        best.sort_by(|a, b| a.cmp(b));
        best.into_iter()
            .enumerate()
            .map(|(i, e)| SearchHit {
                evidence_id: e.id,
                etype: self.types[e.slot],
                score: e.score,
                rank: i + 1,
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(28 + self.rows.len() * 4 + self.ids.len() * 9 + 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&self.encoder_fingerprint.to_le_bytes());
        for &x in &self.rows {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for &id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for &t in &self.types {
            out.push(t.code());
        }
        let checksum = digest64(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<VectorIndex> {
        let bytes = fs::read(path)?;
        let fail = |msg: &str| Error::format(format!("{}: {msg}", path.display()));
        if bytes.len() < 28 + 8 {
            return Err(fail("file too short for an index artifact"));
        }
        if &bytes[..4] != MAGIC {
            return Err(fail("bad magic, not an index artifact"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(fail(&format!("unsupported index version {version}")));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let fingerprint = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
        let expect = 28 + count * dim * 4 + count * 8 + count + 8;
        if bytes.len() != expect {
            return Err(fail(&format!("length {} does not match header", bytes.len())));
        }
        let body_end = bytes.len() - 8;
        let stored = u64::from_le_bytes(bytes[body_end..].try_into().unwrap());
        if stored != digest64(&bytes[..body_end]) {
            return Err(fail("checksum mismatch, artifact is corrupt"));
        }
        let mut at = 28;
        let rows: Vec<f32> = bytes[at..at + count * dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        at += count * dim * 4;
        let ids: Vec<i64> = bytes[at..at + count * 8]
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        at += count * 8;
        let types = bytes[at..at + count]
            .iter()
            .map(|&b| KnowledgeType::from_code(b).map_err(|_| fail(&format!("unknown type code {b}"))))
            .collect::<Result<Vec<_>>>()?;
        for w in ids.windows(2) {
            if w[0] >= w[1] {
                return Err(fail("evidence ids are not strictly ascending"));
            }
        }
        Ok(VectorIndex { dim, encoder_fingerprint: fingerprint, rows, ids, types })
    }
}
