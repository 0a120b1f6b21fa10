//! Benchmark protocols.
//!
//! * Oxford-style: each query has good / ok / junk annotations. Junk items are
//!   removed from the ranking before scoring; `ok` items count as positives
//!   unless [`OkPolicy::Junk`] is selected. Score is mAP.
//! * Holidays-style: one query per group, the query itself is left out of its
//!   own ranking and the other group members are the positives. Score is mAP.
//! * UKB-style: every image queries the full database, itself included, and
//!   scores the number of same-group images among its top 4 (0 to 4).

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use log::warn;

use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};
use crate::fmt::format_g;
use crate::index::Index;
use crate::truth::{GroupTruth, RankedTruth};

/// Depth of the UKB ranking.
pub const UKB_TOP: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ApVariant {
    /// Mean of precision at each positive's rank.
    #[default]
    Rectangular,
    /// Trapezoidal interpolation between successive (recall, precision)
    /// points, as in the Oxford `compute_ap` tool.
    Trapezoidal,
}

impl ApVariant {
    pub fn name(self) -> &'static str {
        match self {
            ApVariant::Rectangular => "rectangular",
            ApVariant::Trapezoidal => "trapezoidal",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OkPolicy {
    #[default]
    Positive,
    Junk,
}

impl OkPolicy {
    pub fn name(self) -> &'static str {
        match self {
            OkPolicy::Positive => "positive",
            OkPolicy::Junk => "junk",
        }
    }
}

/// Average precision of `ranked` against `positives`, ignoring any id in
/// `junk`. Positives that never appear in `ranked` contribute zero.
pub fn average_precision<'a, I>(
    ranked: I,
    positives: &HashSet<&str>,
    junk: &HashSet<&str>,
    variant: ApVariant,
) -> Result<f64>
where
    I: IntoIterator<Item = &'a str>,
{
    if positives.is_empty() {
        return Err(Error::NoPositives {
            query: String::new(),
        });
    }
    if let Some(id) = positives.iter().find(|id| junk.contains(*id)) {
        return Err(Error::Overlap {
            query: String::new(),
            id: id.to_string(),
        });
    }
    let total = positives.len() as f64;
    let mut hits = 0usize;
    let mut rank = 0usize;
    let mut ap = 0.0;
    let mut old_recall = 0.0;
    let mut old_precision = 1.0;
    for id in ranked.into_iter().filter(|id| !junk.contains(id)) {
        rank += 1;
        let is_pos = positives.contains(id);
        if is_pos {
            hits += 1;
        }
        match variant {
            ApVariant::Rectangular => {
                if is_pos {
                    ap += hits as f64 / rank as f64;
                }
            }
            ApVariant::Trapezoidal => {
                let recall = hits as f64 / total;
                let precision = hits as f64 / rank as f64;
                ap += (recall - old_recall) * ((old_precision + precision) / 2.0);
                old_recall = recall;
                old_precision = precision;
            }
        }
    }
    Ok(match variant {
        ApVariant::Rectangular => ap / total,
        ApVariant::Trapezoidal => ap,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub protocol: String,
    /// `"mAP"` or `"top4"`.
    pub metric: String,
    pub per_query: Vec<(String, f64)>,
    pub aggregate: f64,
    pub skipped_junk: usize,
    pub config: Vec<(String, String)>,
}

impl EvalReport {
    fn new(
        protocol: &str,
        metric: &str,
        per_query: Vec<(String, f64)>,
        skipped_junk: usize,
        config: Vec<(String, String)>,
    ) -> Result<Self> {
        if per_query.is_empty() {
            return Err(Error::Validation(format!("{protocol}: no queries to evaluate")));
        }
        let aggregate = per_query.iter().map(|(_, v)| v).sum::<f64>() / per_query.len() as f64;
        Ok(Self {
            protocol: protocol.to_string(),
            metric: metric.to_string(),
            per_query,
            aggregate,
            skipped_junk,
            config,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.per_query.len()
    }

    /// The summary row:
    /// `aggregate\tprotocol\tmetric\tvalue\tqueries\tskipped_junk[\tlabel]`.
    pub fn aggregate_tsv(&self, label: Option<&str>) -> String {
        let mut line = format!(
            "aggregate\t{}\t{}\t{}\t{}\t{}",
            self.protocol,
            self.metric,
            format_g(self.aggregate, 9),
            self.num_queries(),
            self.skipped_junk
        );
        if let Some(label) = label {
            line.push('\t');
            line.push_str(label);
        }
        line.push('\n');
        line
    }

    /// Config lines (`#config\tkey\tvalue`), one `query\tid\tvalue` line per
    /// query, then the aggregate row.
    pub fn to_tsv(&self, label: Option<&str>) -> String {
        let mut out = format!("#protocol\t{}\n", self.protocol);
        for (k, v) in &self.config {
            let _ = writeln!(out, "#config\t{k}\t{v}");
        }
        for (q, v) in &self.per_query {
            let _ = writeln!(out, "query\t{q}\t{}", format_g(*v, 9));
        }
        out.push_str(&self.aggregate_tsv(label));
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("protocol: {}\n", self.protocol);
        for (k, v) in &self.config {
            let _ = writeln!(out, "  {k}: {v}");
        }
        let _ = writeln!(out, "queries: {}", self.num_queries());
        if self.skipped_junk > 0 {
            let _ = writeln!(out, "junk items skipped: {}", self.skipped_junk);
        }
        let _ = writeln!(out, "{}: {:.4}", self.metric, self.aggregate);
        out
    }
}

fn require_in_index(index: &Index, id: &str) -> Result<usize> {
    index
        .row_of(id)
        .ok_or_else(|| Error::UnresolvableId(id.to_string()))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OxfordOptions {
    pub ok_policy: OkPolicy,
    pub ap_variant: ApVariant,
}

/// mAP over `queries`, each ranked against the whole index.
pub fn evaluate_oxford(
    index: &Index,
    queries: &DescriptorSet,
    gt: &RankedTruth,
    opts: OxfordOptions,
) -> Result<EvalReport> {
    let mut positives: Vec<HashSet<&str>> = Vec::with_capacity(queries.len());
    let mut junk: Vec<HashSet<&str>> = Vec::with_capacity(queries.len());
    for q in queries.ids() {
        let rel = gt.get(q).ok_or_else(|| Error::MissingGt { query: q.clone() })?;
        let mut pos: HashSet<&str> = rel.good.iter().map(String::as_str).collect();
        let mut jk: HashSet<&str> = rel.junk.iter().map(String::as_str).collect();
        match opts.ok_policy {
            OkPolicy::Positive => pos.extend(rel.ok.iter().map(String::as_str)),
            OkPolicy::Junk => jk.extend(rel.ok.iter().map(String::as_str)),
        }
        if pos.is_empty() {
            return Err(Error::NoPositives { query: q.clone() });
        }
        for id in pos.iter().chain(jk.iter()) {
            require_in_index(index, id)?;
        }
        positives.push(pos);
        junk.push(jk);
    }
    let exclude: Vec<Vec<&str>> = junk.iter().map(|j| j.iter().copied().collect()).collect();
    let ranked = index.batch_query(queries, index.len(), &exclude)?;
    let mut per_query = Vec::with_capacity(queries.len());
    let mut skipped = 0;
    for (i, q) in queries.ids().iter().enumerate() {
        skipped += junk[i].len();
        let ap = average_precision(ranked[i].ids(index), &positives[i], &junk[i], opts.ap_variant)
            .map_err(|e| attach_query(e, q))?;
        per_query.push((q.clone(), ap));
    }
    EvalReport::new(
        "oxford",
        "mAP",
        per_query,
        skipped,
        vec![
            ("ok_policy".into(), opts.ok_policy.name().into()),
            ("ap_variant".into(), opts.ap_variant.name().into()),
            ("database".into(), index.len().to_string()),
        ],
    )
}

fn attach_query(e: Error, query: &str) -> Error {
    match e {
        Error::NoPositives { .. } => Error::NoPositives {
            query: query.to_string(),
        },
        Error::Overlap { id, .. } => Error::Overlap {
            query: query.to_string(),
            id,
        },
        other => other,
    }
}

fn groups_in_index<'a>(
    index: &Index,
    gt: &'a GroupTruth,
) -> Result<BTreeMap<&'a str, Vec<&'a str>>> {
    let groups = gt.groups();
    for members in groups.values() {
        for id in members {
            require_in_index(index, id)?;
        }
    }
    Ok(groups)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct HolidaysOptions {
    pub ap_variant: ApVariant,
}

/// Query designation: the items marked as queries in the ground truth, or,
/// when none are marked, the first member (by id) of every group.
pub fn holidays_queries(gt: &GroupTruth) -> Vec<&str> {
    if !gt.explicit_queries().is_empty() {
        return gt.explicit_queries().iter().map(String::as_str).collect();
    }
    gt.groups().values().map(|m| m[0]).collect()
}

/// mAP with one query per group, each query left out of its own ranking.
pub fn evaluate_holidays(
    index: &Index,
    gt: &GroupTruth,
    opts: HolidaysOptions,
) -> Result<EvalReport> {
    let groups = groups_in_index(index, gt)?;
    if let Some((g, _)) = groups.iter().find(|(_, m)| m.len() < 2) {
        return Err(Error::SingletonGroup {
            group: g.to_string(),
        });
    }
    let queries = holidays_queries(gt);
    let rows: Vec<usize> = queries
        .iter()
        .map(|q| require_in_index(index, q))
        .collect::<Result<_>>()?;
    let exclude: Vec<Vec<&str>> = queries.iter().map(|q| vec![*q]).collect();
    let k = (index.len() - 1).max(1);
    let ranked = index.batch_query_rows(&rows, k, &exclude)?;
    let none = HashSet::new();
    let mut per_query = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        let group = gt.group(q).expect("query comes from ground truth");
        let positives: HashSet<&str> = groups[group]
            .iter()
            .copied()
            .filter(|id| id != q)
            .collect();
        let ap = average_precision(ranked[i].ids(index), &positives, &none, opts.ap_variant)
            .map_err(|e| attach_query(e, q))?;
        per_query.push((q.to_string(), ap));
    }
    EvalReport::new(
        "holidays",
        "mAP",
        per_query,
        0,
        vec![
            ("ap_variant".into(), opts.ap_variant.name().into()),
            ("database".into(), index.len().to_string()),
        ],
    )
}

/// Mean number of same-group images among each image's top 4, the image
/// itself included.
pub fn evaluate_ukb(index: &Index, gt: &GroupTruth) -> Result<EvalReport> {
    let groups = groups_in_index(index, gt)?;
    let odd = groups.values().filter(|m| m.len() != UKB_TOP).count();
    if odd > 0 {
        warn!("{odd} groups do not have exactly {UKB_TOP} members; scores may exceed the usual range");
    }
    let items: Vec<&str> = gt.group_of().keys().map(String::as_str).collect();
    let rows: Vec<usize> = items
        .iter()
        .map(|q| require_in_index(index, q))
        .collect::<Result<_>>()?;
    let ranked = index.batch_query_rows::<&str>(&rows, UKB_TOP, &[])?;
    let mut per_query = Vec::with_capacity(items.len());
    for (i, q) in items.iter().enumerate() {
        let group = gt.group(q).expect("item comes from ground truth");
        let score = ranked[i]
            .ids(index)
            .filter(|id| gt.group(id) == Some(group))
            .count();
        per_query.push((q.to_string(), score as f64));
    }
    EvalReport::new(
        "ukb",
        "top4",
        per_query,
        0,
        vec![("database".into(), index.len().to_string())],
    )
}
