//! Typed hard-negative pools and group assembly.
//!
//! Per question, the highest-scoring non-relevant evidence of each knowledge
//! type forms a pool. Groups draw from those pools round-robin in the fixed
//! type order, either balanced across all four types or with one preferred
//! type excluded entirely (its quota is zero; the others absorb its share).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::KnowledgeType;

/// Per-type pool ceiling.
pub const POOL_SIZE: usize = 50;
/// Default negative-group capacity.
pub const GROUP_CAPACITY: usize = 15;
/// Chance of swapping in an instruction-unfollowing member (preferred mode).
pub const UNFOLLOW_PROB: f64 = 0.005;

/// One scored retrieval candidate for pool mining.
#[derive(Debug, Clone, Copy)]
pub struct ScoredCandidate {
    pub evidence_id: i64,
    pub etype: KnowledgeType,
    pub score: f64,
    pub relevant: bool,
}

/// Non-relevant candidate ids per type, best first (score desc, id asc),
/// capped at [`POOL_SIZE`].
#[derive(Debug, Clone)]
pub struct TypedPools {
    by_type: [Vec<i64>; 4],
}

impl TypedPools {
    pub fn mine(candidates: &[ScoredCandidate]) -> TypedPools {
        let mut scored: [Vec<(f64, i64)>; 4] = Default::default();
        for c in candidates {
            if !c.relevant {
                scored[c.etype.index()].push((c.score, c.evidence_id));
            }
        }
        let by_type = scored.map(|mut v| {
            v.sort_by(|a, b| {
                b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1))
            });
            v.truncate(POOL_SIZE);
            v.into_iter().map(|(_, id)| id).collect()
        });
        TypedPools { by_type }
    }

    /// Direct construction from already-ordered id lists (tests, fixtures).
    pub fn from_lists(by_type: [Vec<i64>; 4]) -> TypedPools {
        TypedPools { by_type }
    }

    pub fn pool(&self, t: KnowledgeType) -> &[i64] {
        &self.by_type[t.index()]
    }
}

/// How a group allocates its slots across types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupMode {
    /// Round-robin over all four types.
    Balanced,
    /// The preferred type gets zero slots; the rest split its share.
    Preferred(KnowledgeType),
}

#[derive(Debug, Clone)]
pub struct NegativeGroup {
    pub members: Vec<(KnowledgeType, i64)>,
    /// The pools ran dry before `capacity` was reached.
    pub short: bool,
    /// The last slot was replaced by an instruction-unfollowing member.
    pub unfollowed: bool,
}

impl NegativeGroup {
    pub fn count_of(&self, t: KnowledgeType) -> usize {
        self.members.iter().filter(|(mt, _)| *mt == t).count()
    }
}

/// Assemble one negative group. Slots are filled one at a time, cycling the
/// types in fixed order, skipping the preferred type and any exhausted pool;
/// in preferred mode a [`UNFOLLOW_PROB`] coin decides whether the last slot
/// is replaced by `unfollow_candidate` (relevant evidence of a non-preferred
/// type), when one exists. The coin is tossed before checking availability
/// so the random stream does not depend on the corpus.
pub fn build_negative_group(
    pools: &TypedPools,
    mode: GroupMode,
    capacity: usize,
    unfollow_candidate: Option<(KnowledgeType, i64)>,
    rng: &mut ChaCha8Rng,
) -> NegativeGroup {
    let excluded = match mode {
        GroupMode::Balanced => None,
        GroupMode::Preferred(t) => Some(t),
    };
    let mut cursors = [0usize; 4];
    let mut members = Vec::with_capacity(capacity);
    'fill: loop {
        let mut took_any = false;
        for &t in &KnowledgeType::ALL {
            if Some(t) == excluded {
                continue;
            }
            let pool = &pools.by_type[t.index()];
            let cur = &mut cursors[t.index()];
            if *cur < pool.len() {
                members.push((t, pool[*cur]));
                *cur += 1;
                took_any = true;
                if members.len() == capacity {
                    break 'fill;
                }
            }
        }
        if !took_any {
            break;
        }
    }
    let short = members.len() < capacity;

    let mut unfollowed = false;
    if let GroupMode::Preferred(lambda) = mode {
        let triggered = rng.gen_bool(UNFOLLOW_PROB);
        if triggered {
            if let Some((t, id)) = unfollow_candidate {
                if t != lambda {
                    match members.last_mut() {
                        Some(last) => *last = (t, id),
                        None => members.push((t, id)),
                    }
                    unfollowed = true;
                }
            }
        }
    }
    NegativeGroup { members, short, unfollowed }
}
