//! Ground-truth top-K permutations and their context sets.
//!
//! A permutation contributes one context per position: the documents not yet
//! placed, together with the document placed there (the champion). Several
//! sampled permutations of the same query usually share most contexts, so
//! each distinct member set is stored once, along with every distinct
//! champion chosen from it.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::QueryGroup;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ContextSet {
    /// Sorted document indices (within the query).
    pub members: Vec<u32>,
    /// Sorted, distinct documents placed first out of `members`. Each one adds
    /// a `log p(champion | members)` term sharing the same normalizer.
    pub champions: Vec<u32>,
}

impl ContextSet {
    pub fn term_count(&self) -> usize {
        self.champions.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationSet {
    pub contexts: Vec<ContextSet>,
    pub k: usize,
    /// Non-singleton contexts generated before deduplication.
    pub raw_term_count: usize,
    pub objective_count: usize,
    index: HashMap<Vec<u32>, usize>,
}

impl PermutationSet {
    pub fn new(k: usize) -> Self {
        PermutationSet {
            contexts: Vec::new(),
            k,
            raw_term_count: 0,
            objective_count: 0,
            index: HashMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    /// Adds the contexts of one ranked list of document indices.
    ///
    /// Only the first `k` positions are used, and singleton contexts are
    /// skipped since their conditional probability is always one.
    pub fn add_permutation(&mut self, order: &[usize]) {
        self.objective_count += 1;
        let n = order.len();
        let mut remaining: Vec<u32> = order.iter().map(|&d| d as u32).collect();
        remaining.sort_unstable();
        for &champion in order.iter().take(self.k.min(n)) {
            if remaining.len() < 2 {
                break;
            }
            let champion = champion as u32;
            self.raw_term_count += 1;
            match self.index.get(&remaining) {
                Some(&c) => {
                    let champions = &mut self.contexts[c].champions;
                    if let Err(at) = champions.binary_search(&champion) {
                        champions.insert(at, champion);
                    }
                }
                None => {
                    self.index.insert(remaining.clone(), self.contexts.len());
                    self.contexts.push(ContextSet {
                        members: remaining.clone(),
                        champions: vec![champion],
                    });
                }
            }
            let pos = remaining
                .binary_search(&champion)
                .expect("permutation repeats a document");
            remaining.remove(pos);
        }
    }

    /// Number of `log p(champion | C)` terms after deduplication.
    pub fn term_count(&self) -> usize {
        self.contexts.iter().map(ContextSet::term_count).sum()
    }

    /// Distinct-context fraction and the equivalent number of objectives.
    pub fn compression_ratio(&self) -> (f64, f64) {
        if self.raw_term_count == 0 {
            return (1.0, 0.0);
        }
        let ratio = self.contexts.len() as f64 / self.raw_term_count as f64;
        (ratio, self.objective_count as f64 * ratio)
    }
}

/// Free-function form of [`PermutationSet::compression_ratio`].
pub fn compression_ratio(pset: &PermutationSet) -> (f64, f64) {
    pset.compression_ratio()
}

/// Shuffle, then stable sort by descending relevance: uniform tie-breaking.
pub fn sample_ground_truth<R: Rng + ?Sized>(relevances: &[u32], rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..relevances.len()).collect();
    order.shuffle(rng);
    order.sort_by(|&a, &b| relevances[b].cmp(&relevances[a]));
    order
}

pub fn build_from_relevances<R: Rng + ?Sized>(
    relevances: &[u32],
    k: usize,
    num_objectives: usize,
    rng: &mut R,
) -> PermutationSet {
    let mut pset = PermutationSet::new(k);
    for _ in 0..num_objectives {
        let order = sample_ground_truth(relevances, rng);
        pset.add_permutation(&order);
    }
    pset
}

pub fn build_permutations<R: Rng + ?Sized>(
    group: &QueryGroup,
    k: usize,
    num_objectives: usize,
    rng: &mut R,
) -> PermutationSet {
    build_from_relevances(&group.relevances(), k, num_objectives, rng)
}

/// Random stream for one query, derived from the global seed and the query id
/// so that results do not depend on processing order.
pub fn query_rng(seed: u64, query_id: u64) -> ChaCha8Rng {
    let mut z = seed ^ query_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}
