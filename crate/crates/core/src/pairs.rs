//! Training pairs mined from per-class match graphs.
//!
//! Positives are pairs of images that share at least one neighbor in the
//! match graph without being neighbors themselves. A greedy pass then keeps a
//! subset in which every image occurs at most once. Negatives are sampled
//! across classes.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// An unordered pair of distinct ids, stored with `a < b`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pair {
    a: String,
    b: String,
}

impl Pair {
    /// Canonical pair, or `None` for a self-pair.
    pub fn new(x: impl Into<String>, y: impl Into<String>) -> Option<Self> {
        let (x, y) = (x.into(), y.into());
        match x.cmp(&y) {
            std::cmp::Ordering::Less => Some(Self { a: x, b: y }),
            std::cmp::Ordering::Greater => Some(Self { a: y, b: x }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn a(&self) -> &str {
        &self.a
    }

    pub fn b(&self) -> &str {
        &self.b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairLabel {
    Positive,
    Negative,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairSet {
    pub positives: Vec<Pair>,
    pub negatives: Vec<Pair>,
}

impl PairSet {
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    /// Checks that every id resolves via `known` and that no pair is both
    /// positive and negative.
    pub fn validate(&self, known: impl Fn(&str) -> bool) -> Result<()> {
        for p in self.positives.iter().chain(&self.negatives) {
            for id in [p.a(), p.b()] {
                if !known(id) {
                    return Err(Error::UnresolvableId(id.to_string()));
                }
            }
        }
        let pos: HashSet<&Pair> = self.positives.iter().collect();
        if let Some(p) = self.negatives.iter().find(|p| pos.contains(p)) {
            return Err(Error::Validation(format!(
                "pair ({}, {}) is labelled both positive and negative",
                p.a(),
                p.b()
            )));
        }
        Ok(())
    }
}

/// Undirected match graph with optional class labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchGraph {
    adjacency: BTreeMap<String, BTreeSet<String>>,
    class_of: BTreeMap<String, String>,
}

impl MatchGraph {
    /// Adds an undirected edge; duplicates collapse. Self-loops are ignored
    /// here and rejected by the file reader.
    pub fn add_edge(&mut self, a: &str, b: &str) {
        if a == b {
            return;
        }
        self.adjacency
            .entry(a.to_string())
            .or_default()
            .insert(b.to_string());
        self.adjacency
            .entry(b.to_string())
            .or_default()
            .insert(a.to_string());
    }

    /// Attaches class labels. Every node must be labelled and every edge
    /// must stay within one class.
    pub fn with_classes(mut self, class_of: BTreeMap<String, String>) -> Result<Self> {
        for (a, nbrs) in &self.adjacency {
            let ca = class_of
                .get(a)
                .ok_or_else(|| Error::UnresolvableId(a.clone()))?;
            for b in nbrs {
                let cb = class_of
                    .get(b)
                    .ok_or_else(|| Error::UnresolvableId(b.clone()))?;
                if ca != cb {
                    return Err(Error::Validation(format!(
                        "edge {a}-{b} crosses classes {ca} and {cb}"
                    )));
                }
            }
        }
        self.class_of = class_of;
        Ok(self)
    }

    pub fn class_of(&self) -> &BTreeMap<String, String> {
        &self.class_of
    }

    pub fn neighbors(&self, id: &str) -> Option<&BTreeSet<String>> {
        self.adjacency.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.adjacency.keys().map(String::as_str)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    /// Each edge once, as `(a, b)` with `a < b`, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.adjacency.iter().flat_map(|(a, nbrs)| {
            nbrs.iter()
                .filter(move |b| a.as_str() < b.as_str())
                .map(move |b| (a.as_str(), b.as_str()))
        })
    }

    pub fn has_edge(&self, a: &str, b: &str) -> bool {
        self.adjacency.get(a).is_some_and(|n| n.contains(b))
    }
}

/// All pairs `(a, b)`, `a < b`, that are not adjacent but share a neighbor,
/// sorted lexicographically.
///
/// Edges never cross classes, so mining the whole graph at once yields the
/// union of the per-class results.
pub fn mine_candidate_pairs(graph: &MatchGraph) -> Vec<Pair> {
    let nodes: Vec<(&String, &BTreeSet<String>)> = graph.adjacency.iter().collect();
    nodes
        .par_iter()
        .map(|(a, nbrs)| {
            let mut two_hop = BTreeSet::new();
            for b in nbrs.iter() {
                for c in &graph.adjacency[b] {
                    if c.as_str() > a.as_str() && !nbrs.contains(c) {
                        two_hop.insert(c.as_str());
                    }
                }
            }
            two_hop
                .into_iter()
                .map(|c| Pair {
                    a: (*a).clone(),
                    b: c.to_string(),
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Scans `pairs` in order and keeps a pair only if neither id has been used
/// yet, stopping once `budget` pairs are kept.
pub fn greedy_unique_subset(pairs: &[Pair], budget: usize) -> Vec<Pair> {
    let mut used: HashSet<&str> = HashSet::new();
    let mut out = Vec::new();
    for p in pairs {
        if out.len() >= budget {
            break;
        }
        if used.contains(p.a()) || used.contains(p.b()) {
            continue;
        }
        used.insert(p.a());
        used.insert(p.b());
        out.push(p.clone());
    }
    out
}

/// Number of unordered pairs whose ids carry different class labels.
pub fn cross_class_pair_count(class_of: &BTreeMap<String, String>) -> u128 {
    let n = class_of.len() as u128;
    let mut sizes: BTreeMap<&str, u128> = BTreeMap::new();
    for c in class_of.values() {
        *sizes.entry(c.as_str()).or_default() += 1;
    }
    let same: u128 = sizes.values().map(|s| s * s.saturating_sub(1) / 2).sum();
    n * n.saturating_sub(1) / 2 - same
}

const ENUMERATE_LIMIT: u128 = 2_000_000;

/// `count` distinct cross-class pairs drawn uniformly with a generator
/// seeded by `seed`, returned in canonical sorted order.
pub fn sample_negatives(
    class_of: &BTreeMap<String, String>,
    count: usize,
    seed: u64,
) -> Result<Vec<Pair>> {
    let available = cross_class_pair_count(class_of);
    if (count as u128) > available {
        return Err(Error::InsufficientDiversity {
            requested: count,
            available: available.min(usize::MAX as u128) as usize,
        });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let items: Vec<(&String, &String)> = class_of.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Pair> = if available <= ENUMERATE_LIMIT || (count as u128) * 2 > available {
        let mut all = Vec::with_capacity(available as usize);
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                if items[i].1 != items[j].1 {
                    all.push((i, j));
                }
            }
        }
        index::sample(&mut rng, all.len(), count)
            .into_iter()
            .map(|k| {
                let (i, j) = all[k];
                Pair {
                    a: items[i].0.clone(),
                    b: items[j].0.clone(),
                }
            })
            .collect()
    } else {
        let mut seen = HashSet::with_capacity(count);
        let mut picked = Vec::with_capacity(count);
        let n = items.len();
        while picked.len() < count {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j || items[i].1 == items[j].1 {
                continue;
            }
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                picked.push(Pair {
                    a: items[key.0].0.clone(),
                    b: items[key.1].0.clone(),
                });
            }
        }
        picked
    };
    out.sort();
    Ok(out)
}
