//! Ground-truth annotations for the retrieval benchmarks.

use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TruthFormat {
    /// `query\tgood|ok|junk\titem` lines (Oxford style).
    Ranked,
    /// `item\tgroup[\tq]` lines (Holidays / UKB style).
    Groups,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroundTruth {
    Ranked(RankedTruth),
    Groups(GroupTruth),
}

/// Relevance tiers for one query.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Relevance {
    pub good: BTreeSet<String>,
    pub ok: BTreeSet<String>,
    pub junk: BTreeSet<String>,
}

impl Relevance {
    /// First id that appears in more than one tier, if any.
    pub fn first_overlap(&self) -> Option<&str> {
        self.good
            .iter()
            .find(|id| self.junk.contains(*id) || self.ok.contains(*id))
            .or_else(|| self.ok.iter().find(|id| self.junk.contains(*id)))
            .map(String::as_str)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankedTruth {
    queries: BTreeMap<String, Relevance>,
}

impl RankedTruth {
    pub fn new(queries: BTreeMap<String, Relevance>) -> Self {
        Self { queries }
    }

    pub fn queries(&self) -> &BTreeMap<String, Relevance> {
        &self.queries
    }

    pub fn get(&self, query: &str) -> Option<&Relevance> {
        self.queries.get(query)
    }
}

/// Item to group labels, with optionally designated query items.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupTruth {
    group_of: BTreeMap<String, String>,
    queries: BTreeSet<String>,
}

impl GroupTruth {
    pub fn new(group_of: BTreeMap<String, String>) -> Self {
        Self {
            group_of,
            queries: BTreeSet::new(),
        }
    }

    pub fn with_queries(group_of: BTreeMap<String, String>, queries: BTreeSet<String>) -> Self {
        Self { group_of, queries }
    }

    pub fn group_of(&self) -> &BTreeMap<String, String> {
        &self.group_of
    }

    pub fn group(&self, item: &str) -> Option<&str> {
        self.group_of.get(item).map(String::as_str)
    }

    pub fn explicit_queries(&self) -> &BTreeSet<String> {
        &self.queries
    }

    /// Members of every group, each list sorted by id.
    pub fn groups(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (item, group) in &self.group_of {
            out.entry(group.as_str()).or_default().push(item.as_str());
        }
        out
    }

    pub fn len(&self) -> usize {
        self.group_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group_of.is_empty()
    }
}
