//! Score ordering with explicit tie-breaking.
//!
//! Every component that ranks examples (audits, recall curves, realized
//! selections, precision@k) goes through [`rank_indices`], so a group's
//! ordering is always the restriction of the cohort-wide ordering.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::data_model::ScoredExample;

/// Seed used when a seeded tie-break is requested without an explicit seed.
pub const DEFAULT_SEED: u64 = 42;

/// How examples with equal scores are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "tie_break", rename_all = "snake_case")]
pub enum TieBreak {
    /// Ascending entity id. Fully deterministic and permutation invariant.
    #[default]
    EntityId,
    /// Pseudo-random order keyed on `(seed, entity_id)`.
    Seeded { seed: u64 },
}

impl TieBreak {
    pub fn name(&self) -> &'static str {
        match self {
            TieBreak::EntityId => "entity_id",
            TieBreak::Seeded { .. } => "seeded",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            TieBreak::EntityId => None,
            TieBreak::Seeded { seed } => Some(*seed),
        }
    }

    fn key(&self, entity_id: &str) -> u64 {
        match self {
            TieBreak::EntityId => 0,
            TieBreak::Seeded { seed } => mix64(seed ^ fnv1a(entity_id.as_bytes())),
        }
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}

// splitmix64 finalizer
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Keyed {
    score: f64,
    key: u64,
    idx: usize,
}

fn compare<'a>(a: &Keyed, b: &Keyed, ids: &dyn Fn(usize) -> &'a str) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.key.cmp(&b.key))
        .then_with(|| ids(a.idx).cmp(ids(b.idx)))
        .then(a.idx.cmp(&b.idx))
}

/// Indices of `examples` ordered by descending score under `tie`.
pub fn rank_indices<E: AsRef<ScoredExample>>(examples: &[E], tie: TieBreak) -> Vec<usize> {
    let mut keyed = keyed(examples, tie);
    let ids = |i: usize| examples[i].as_ref().entity_id.as_str();
    keyed.sort_unstable_by(|a, b| compare(a, b, &ids));
    keyed.into_iter().map(|k| k.idx).collect()
}

/// The `k` highest-ranked indices, in rank order. Runs in O(n + k log k).
pub fn top_k_indices<E: AsRef<ScoredExample>>(examples: &[E], k: usize, tie: TieBreak) -> Vec<usize> {
    let k = k.min(examples.len());
    if k == 0 {
        return Vec::new();
    }
    let mut keyed = keyed(examples, tie);
    let ids = |i: usize| examples[i].as_ref().entity_id.as_str();
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, |a, b| compare(a, b, &ids));
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(|a, b| compare(a, b, &ids));
    keyed.into_iter().map(|k| k.idx).collect()
}

fn keyed<E: AsRef<ScoredExample>>(examples: &[E], tie: TieBreak) -> Vec<Keyed> {
    examples
        .iter()
        .enumerate()
        .map(|(idx, e)| {
            let e = e.as_ref();
            Keyed { score: e.score, key: tie.key(&e.entity_id), idx }
        })
        .collect()
}

impl AsRef<ScoredExample> for ScoredExample {
    fn as_ref(&self) -> &ScoredExample {
        self
    }
}
