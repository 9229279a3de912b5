//! Hamming ranking and retrieval metrics.
//!
//! A query ranks the database by Hamming distance with ties broken by
//! ascending database id. Rankings are built with a counting sort over the
//! `k + 1` possible distances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codes::{hamming_unchecked, PackedCodes};
use crate::dataset::LabelSet;
use crate::error::{EshError, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    pub query: usize,
    /// `(database id, distance)` ordered by distance, then id.
    pub entries: Vec<(usize, u32)>,
}

impl Ranking {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, len: usize) {
        self.entries.truncate(len);
    }
}

/// Ranks `codes` against `query`, optionally leaving out database id `skip`.
pub fn rank_database(query: &[u64], codes: &PackedCodes, skip: Option<usize>) -> Result<Ranking> {
    if query.len() != codes.words_per_code() {
        return Err(EshError::DimensionMismatch { expected: codes.words_per_code(), actual: query.len() });
    }
    let k = codes.bits();
    let dist: Vec<u32> = (0..codes.len()).map(|i| hamming_unchecked(query, codes.code(i))).collect();
    let mut start = vec![0usize; k + 2];
    for (i, &h) in dist.iter().enumerate() {
        if Some(i) != skip {
            start[h as usize + 1] += 1;
        }
    }
    for h in 1..start.len() {
        start[h] += start[h - 1];
    }
    let total = start[k + 1];
    let mut entries = vec![(0usize, 0u32); total];
    for (i, &h) in dist.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let slot = &mut start[h as usize];
        entries[*slot] = (i, h);
        *slot += 1;
    }
    Ok(Ranking { query: usize::MAX, entries })
}

/// Which database items count as correct answers for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relevance {
    flags: Vec<bool>,
    count: usize,
}

impl Relevance {
    pub fn new(flags: Vec<bool>) -> Self {
        let count = flags.iter().filter(|&&f| f).count();
        Self { flags, count }
    }

    pub fn from_ids(db_size: usize, ids: &[usize]) -> Self {
        let mut flags = vec![false; db_size];
        ids.iter().for_each(|&i| flags[i] = true);
        Self::new(flags)
    }

    pub fn is_relevant(&self, id: usize) -> bool {
        self.flags[id]
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Neighbor predicate from labels: items are neighbors when they share at
/// least one label (equal labels in the single-label case).
#[derive(Debug, Clone)]
pub struct GroundTruth {
    queries: LabelSet,
    database: LabelSet,
}

impl GroundTruth {
    pub fn new(queries: LabelSet, database: LabelSet) -> Self {
        Self { queries, database }
    }

    pub fn query_labels(&self) -> &LabelSet {
        &self.queries
    }

    pub fn database_labels(&self) -> &LabelSet {
        &self.database
    }

    pub fn is_neighbor(&self, query: usize, item: usize) -> bool {
        self.queries.shares_label(query, &self.database, item)
    }

    /// Relevance flags for one query; `exclude_self` drops database id
    /// `query` (for setups where the queries are the database).
    pub fn relevance(&self, query: usize, exclude_self: bool) -> Relevance {
        let flags = (0..self.database.len())
            .map(|i| !(exclude_self && i == query) && self.is_neighbor(query, i))
            .collect();
        Relevance::new(flags)
    }
}

/// Mean of precision@p over the ranks p of relevant items. With a cutoff,
/// only the first `cutoff` positions are scanned and the mean is over the
/// relevant items found there. Empty sums give 0.
pub fn average_precision(ranking: &Ranking, rel: &Relevance, cutoff: Option<usize>) -> f64 {
    let limit = cutoff.unwrap_or(usize::MAX).min(ranking.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &(id, _)) in ranking.entries[..limit].iter().enumerate() {
        if rel.is_relevant(id) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    let denom = if cutoff.is_some() { hits } else { rel.count() };
    if denom == 0 {
        0.0
    } else {
        sum / denom as f64
    }
}

/// Share of relevant items in the top `n` (capped at the ranking length).
pub fn precision_at_n(ranking: &Ranking, rel: &Relevance, n: usize) -> f64 {
    let n = n.min(ranking.len());
    if n == 0 {
        return 0.0;
    }
    let hits = ranking.entries[..n].iter().filter(|&&(id, _)| rel.is_relevant(id)).count();
    hits as f64 / n as f64
}

/// Precision over items within Hamming distance `radius`; 0 if none.
pub fn precision_at_radius(ranking: &Ranking, rel: &Relevance, radius: u32) -> f64 {
    let within = ranking.entries.partition_point(|&(_, h)| h <= radius);
    if within == 0 {
        return 0.0;
    }
    let hits = ranking.entries[..within].iter().filter(|&&(id, _)| rel.is_relevant(id)).count();
    hits as f64 / within as f64
}

/// `(recall, precision)` at every rank where a relevant item appears.
pub fn pr_curve(ranking: &Ranking, rel: &Relevance) -> Vec<(f64, f64)> {
    let total = rel.count();
    if total == 0 {
        return Vec::new();
    }
    let mut hits = 0usize;
    let mut out = Vec::with_capacity(total);
    for (pos, &(id, _)) in ranking.entries.iter().enumerate() {
        if rel.is_relevant(id) {
            hits += 1;
            out.push((hits as f64 / total as f64, hits as f64 / (pos + 1) as f64));
        }
    }
    out
}

pub fn mean_average_precision(rankings: &[Ranking], gt: &GroundTruth, exclude_self: bool, cutoff: Option<usize>) -> Result<f64> {
    if rankings.is_empty() {
        return Err(EshError::InvalidArgument("mAP needs at least one query".into()));
    }
    let aps: Vec<f64> = rankings
        .iter()
        .map(|r| average_precision(r, &gt.relevance(r.query, exclude_self), cutoff))
        .collect();
    Ok(mean(&aps))
}

/// Unweighted mean over classes of the per-class mean AP. A query belongs
/// to every class it carries. Also returns database classes that have no
/// query and were therefore left out.
pub fn macro_mean_average_precision(
    aps: &[f64],
    query_labels: &LabelSet,
    database_labels: Option<&LabelSet>,
) -> Result<(f64, Vec<u32>)> {
    if aps.is_empty() || aps.len() != query_labels.len() {
        return Err(EshError::DimensionMismatch { expected: query_labels.len(), actual: aps.len() });
    }
    let mut per_class: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (q, &ap) in aps.iter().enumerate() {
        for &c in query_labels.get(q) {
            let e = per_class.entry(c).or_default();
            e.0 += ap;
            e.1 += 1;
        }
    }
    let class_means: Vec<f64> = per_class.values().map(|&(s, n)| s / n as f64).collect();
    let excluded = database_labels
        .map(|db| db.classes().into_iter().filter(|c| !per_class.contains_key(c)).collect())
        .unwrap_or_default();
    Ok((mean(&class_means), excluded))
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EvalConfig {
    pub precision_at: Vec<usize>,
    pub radius: u32,
    /// Rank cutoff for AP; `None` uses the whole ranking.
    pub cutoff: Option<usize>,
    pub exclude_self: bool,
    /// Drop queries without any relevant item instead of scoring them 0.
    pub skip_empty_queries: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { precision_at: vec![1000], radius: 2, cutoff: None, exclude_self: false, skip_empty_queries: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PrPoint {
    pub radius: u32,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub queries: usize,
    pub evaluated: usize,
    pub map: f64,
    pub macro_map: f64,
    pub precision_at_n: BTreeMap<usize, f64>,
    pub radius: u32,
    pub precision_at_radius: f64,
    /// Mean precision and recall over queries when retrieving everything
    /// within each Hamming radius `0..=k`.
    pub pr_curve: Vec<PrPoint>,
    pub excluded_classes: Vec<u32>,
}

impl EvalReport {
    pub fn write_pr_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "recall,precision")?;
        for p in &self.pr_curve {
            writeln!(w, "{},{}", p.recall, p.precision)?;
        }
        Ok(())
    }
}

struct QueryScore {
    ap: f64,
    p_at_n: Vec<f64>,
    p_at_r: f64,
    positives: usize,
    /// cumulative `(retrieved, relevant)` within each radius `0..=k`
    by_radius: Vec<(usize, usize)>,
}

fn score_query(q: usize, query_codes: &PackedCodes, db: &PackedCodes, gt: &GroundTruth, cfg: &EvalConfig) -> Result<QueryScore> {
    let skip = cfg.exclude_self.then_some(q);
    let mut ranking = rank_database(query_codes.code(q), db, skip)?;
    ranking.query = q;
    let rel = gt.relevance(q, cfg.exclude_self);
    let k = db.bits();
    let mut by_radius = vec![(0usize, 0usize); k + 1];
    for &(id, h) in &ranking.entries {
        by_radius[h as usize].0 += 1;
        if rel.is_relevant(id) {
            by_radius[h as usize].1 += 1;
        }
    }
    for h in 1..=k {
        by_radius[h].0 += by_radius[h - 1].0;
        by_radius[h].1 += by_radius[h - 1].1;
    }
    Ok(QueryScore {
        ap: average_precision(&ranking, &rel, cfg.cutoff),
        p_at_n: cfg.precision_at.iter().map(|&n| precision_at_n(&ranking, &rel, n)).collect(),
        p_at_r: precision_at_radius(&ranking, &rel, cfg.radius),
        positives: rel.count(),
        by_radius,
    })
}

/// Scores every query against the database. Per-query work runs in
/// parallel; aggregation is a fixed-order sequential reduction.
pub fn evaluate(query_codes: &PackedCodes, db: &PackedCodes, gt: &GroundTruth, cfg: &EvalConfig) -> Result<EvalReport> {
    if query_codes.bits() != db.bits() {
        return Err(EshError::Mismatch(format!(
            "query codes have {} bits, database codes {}",
            query_codes.bits(),
            db.bits()
        )));
    }
    if gt.query_labels().len() != query_codes.len() || gt.database_labels().len() != db.len() {
        return Err(EshError::Mismatch("label counts do not match code counts".into()));
    }
    if query_codes.is_empty() {
        return Err(EshError::InvalidArgument("no queries to evaluate".into()));
    }
    if cfg.precision_at.contains(&0) {
        return Err(EshError::InvalidArgument("precision@N needs N >= 1".into()));
    }
    let scores = par::map_indices(query_codes.len(), |q| score_query(q, query_codes, db, gt, cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let kept: Vec<usize> = (0..scores.len())
        .filter(|&q| !(cfg.skip_empty_queries && scores[q].positives == 0))
        .collect();
    if kept.is_empty() {
        return Err(EshError::InvalidArgument("no query has a relevant database item".into()));
    }
    let aps: Vec<f64> = kept.iter().map(|&q| scores[q].ap).collect();
    let kept_labels = gt.query_labels().select(&kept);
    let (macro_map, excluded_classes) = macro_mean_average_precision(&aps, &kept_labels, Some(gt.database_labels()))?;

    let mut precision_at_n = BTreeMap::new();
    for (slot, &n) in cfg.precision_at.iter().enumerate() {
        let vals: Vec<f64> = kept.iter().map(|&q| scores[q].p_at_n[slot]).collect();
        precision_at_n.insert(n, mean(&vals));
    }
    let p_at_r: Vec<f64> = kept.iter().map(|&q| scores[q].p_at_r).collect();

    let with_pos: Vec<usize> = kept.iter().copied().filter(|&q| scores[q].positives > 0).collect();
    let pr_curve = (0..=db.bits())
        .map(|h| {
            let mut recall = 0.0;
            let mut precision = 0.0;
            for &q in &with_pos {
                let (retrieved, relevant) = scores[q].by_radius[h];
                recall += relevant as f64 / scores[q].positives as f64;
                if retrieved > 0 {
                    precision += relevant as f64 / retrieved as f64;
                }
            }
            let n = with_pos.len().max(1) as f64;
            PrPoint { radius: h as u32, recall: recall / n, precision: precision / n }
        })
        .collect();

    Ok(EvalReport {
        queries: query_codes.len(),
        evaluated: kept.len(),
        map: mean(&aps),
        macro_map,
        precision_at_n,
        radius: cfg.radius,
        precision_at_radius: mean(&p_at_r),
        pr_curve,
        excluded_classes,
    })
}
