//! Exact brute-force nearest-neighbor search.
//!
//! Results are ordered by ascending L2 distance with ties broken by id, so
//! rankings are fully deterministic. Batches are processed in blocks of
//! queries that share each pass over the database; every (query, row)
//! distance is computed by the same routine in both paths, so a batch gives
//! exactly the lists that single queries would.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};
use crate::io::ranked_line;
use crate::math;

const QUERY_BLOCK: usize = 16;

#[derive(Clone, Debug)]
pub struct Index {
    set: DescriptorSet,
    normalized: bool,
    // position of each row in ascending id order
    id_rank: Vec<u32>,
    lookup: HashMap<String, usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub row: usize,
    pub distance: f64,
}

/// Hits in ascending `(distance, id)` order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankedList {
    pub hits: Vec<Hit>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids<'a>(&'a self, index: &'a Index) -> impl Iterator<Item = &'a str> + 'a {
        self.hits.iter().map(move |h| index.id(h.row))
    }

    /// Writes `query\trank\titem\tdistance` lines, ranks starting at 1.
    pub fn write_tsv<W: Write>(&self, index: &Index, query: &str, out: &mut W) -> Result<()> {
        for (r, h) in self.hits.iter().enumerate() {
            out.write_all(ranked_line(query, r + 1, index.id(h.row), h.distance).as_bytes())?;
        }
        Ok(())
    }
}

/// Builds an index over every row of `set`, normalizing rows first when
/// `normalize` is set.
pub fn build_index(set: &DescriptorSet, normalize: bool) -> Result<Index> {
    let set = if normalize {
        math::normalize_set(set)?
    } else {
        set.clone()
    };
    let n = set.len();
    if n > u32::MAX as usize {
        return Err(Error::Validation("index supports at most 2^32 rows".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| set.ids()[a].cmp(&set.ids()[b]));
    let mut id_rank = vec![0u32; n];
    for (pos, &row) in order.iter().enumerate() {
        id_rank[row] = pos as u32;
    }
    let lookup = set
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    Ok(Index {
        set,
        normalized: normalize,
        id_rank,
        lookup,
    })
}

impl Index {
    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn id(&self, row: usize) -> &str {
        &self.set.ids()[row]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn descriptors(&self) -> &DescriptorSet {
        &self.set
    }

    fn prepare_query(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: q.len(),
            });
        }
        if self.normalized {
            math::l2_normalize(q)
        } else {
            Ok(q.to_vec())
        }
    }

    fn exclusion_mask<S: AsRef<str>>(&self, exclude: &[S]) -> Vec<usize> {
        let mut rows: Vec<usize> = exclude
            .iter()
            .filter_map(|id| self.row_of(id.as_ref()))
            .collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }

    fn compare(&self, a: &(f64, usize), b: &(f64, usize)) -> Ordering {
        a.0.total_cmp(&b.0)
            .then_with(|| self.id_rank[a.1].cmp(&self.id_rank[b.1]))
    }

    /// Top `k` of precomputed squared distances, skipping `excluded` rows
    /// (sorted).
    fn select(&self, sq: &[f64], k: usize, excluded: &[usize]) -> RankedList {
        let mut cand: Vec<(f64, usize)> = Vec::with_capacity(sq.len());
        let mut skip = excluded.iter().peekable();
        for (row, &s) in sq.iter().enumerate() {
            if skip.peek() == Some(&&row) {
                skip.next();
                continue;
            }
            cand.push((s.sqrt(), row));
        }
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, |a, b| self.compare(a, b));
            cand.truncate(k);
        }
        cand.sort_unstable_by(|a, b| self.compare(a, b));
        RankedList {
            hits: cand
                .into_iter()
                .map(|(distance, row)| Hit { row, distance })
                .collect(),
        }
    }

    /// The `k` nearest rows to `q` that are not listed in `exclude`.
    /// Ids in `exclude` that are not in the index are ignored.
    pub fn query<S: AsRef<str>>(&self, q: &[f64], k: usize, exclude: &[S]) -> Result<RankedList> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        let q = self.prepare_query(q)?;
        let sq: Vec<f64> = self
            .set
            .rows()
            .map(|row| math::squared_distance(&q, row))
            .collect();
        Ok(self.select(&sq, k, &self.exclusion_mask(exclude)))
    }

    /// Runs [`Index::query`] for every row of `queries`. `exclude` is either
    /// empty (no exclusions) or holds one list per query.
    pub fn batch_query<S: AsRef<str> + Sync>(
        &self,
        queries: &DescriptorSet,
        k: usize,
        exclude: &[Vec<S>],
    ) -> Result<Vec<RankedList>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if queries.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: queries.dim(),
            });
        }
        if !exclude.is_empty() && exclude.len() != queries.len() {
            return Err(Error::InvalidArgument(format!(
                "{} exclusion lists for {} queries",
                exclude.len(),
                queries.len()
            )));
        }
        let prepared: Vec<Vec<f64>> = queries
            .rows()
            .map(|q| self.prepare_query(q))
            .collect::<Result<_>>()?;
        Ok(self.run_blocks(&prepared, k, exclude))
    }

    /// Queries with stored database rows, used verbatim (no renormalization),
    /// so a row's distance to itself is exactly zero.
    pub fn batch_query_rows<S: AsRef<str> + Sync>(
        &self,
        rows: &[usize],
        k: usize,
        exclude: &[Vec<S>],
    ) -> Result<Vec<RankedList>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if !exclude.is_empty() && exclude.len() != rows.len() {
            return Err(Error::InvalidArgument(format!(
                "{} exclusion lists for {} queries",
                exclude.len(),
                rows.len()
            )));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.len()) {
            return Err(Error::InvalidArgument(format!("row {bad} out of range")));
        }
        let prepared: Vec<Vec<f64>> = rows.iter().map(|&r| self.set.row(r).to_vec()).collect();
        Ok(self.run_blocks(&prepared, k, exclude))
    }

    fn run_blocks<S: AsRef<str> + Sync>(
        &self,
        prepared: &[Vec<f64>],
        k: usize,
        exclude: &[Vec<S>],
    ) -> Vec<RankedList> {
        let n = self.len();
        let blocks: Vec<Vec<RankedList>> = prepared
            .par_chunks(QUERY_BLOCK)
            .enumerate()
            .map(|(b, block)| {
                let mut sq = vec![0.0; block.len() * n];
                for (row, x) in self.set.rows().enumerate() {
                    for (qi, q) in block.iter().enumerate() {
                        sq[qi * n + row] = math::squared_distance(q, x);
                    }
                }
                block
                    .iter()
                    .enumerate()
                    .map(|(qi, _)| {
                        let global = b * QUERY_BLOCK + qi;
                        let excluded = match exclude.get(global) {
                            Some(list) => self.exclusion_mask(list),
                            None => Vec::new(),
                        };
                        self.select(&sq[qi * n..(qi + 1) * n], k, &excluded)
                    })
                    .collect()
            })
            .collect();
        blocks.into_iter().flatten().collect()
    }
}
