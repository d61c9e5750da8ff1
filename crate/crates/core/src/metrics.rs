//! Retrieval quality measures: R@k, median rank, AP/mAP, and inferred AP
//! over sampled relevance judgments, plus the run-file format they consume.
//!
//! All metrics read only the ordering of a ranked list, never the raw
//! scores, so any positive monotone transformation of scores leaves them
//! unchanged.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Smoothing constant used by [`inferred_ap`].
pub const INFAP_EPSILON: f64 = 1e-5;

/// A query's ranked retrieval result: video ids with non-increasing scores.
#[derive(Debug, Clone)]
pub struct RankedList {
    pub query_id: String,
    items: Vec<(String, f64)>,
}

impl RankedList {
    /// Sort raw `(video id, score)` pairs descending by score, ties broken
    /// by ascending video id, and wrap them as a ranked list.
    pub fn from_scores(query_id: impl Into<String>, mut items: Vec<(String, f64)>) -> Self {
        items.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("scores must be comparable")
                .then_with(|| a.0.cmp(&b.0))
        });
        RankedList {
            query_id: query_id.into(),
            items,
        }
    }

    /// Wrap items that are already ordered, validating the ranked-list
    /// invariants (non-increasing scores, unique ids).
    pub fn from_sorted(query_id: impl Into<String>, items: Vec<(String, f64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for window in items.windows(2) {
            if window[1].1 > window[0].1 {
                return Err(Error::Format(
                    "ranked list: scores increase down the list".into(),
                ));
            }
        }
        for (id, _) in &items {
            if !seen.insert(id.as_str()) {
                return Err(Error::Format(format!(
                    "ranked list: duplicate video id {id:?}"
                )));
            }
        }
        Ok(RankedList {
            query_id: query_id.into(),
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `(video id, score)` pairs, best first.
    pub fn items(&self) -> &[(String, f64)] {
        &self.items
    }

    pub fn truncated(&self, top_n: usize) -> RankedList {
        RankedList {
            query_id: self.query_id.clone(),
            items: self.items.iter().take(top_n).cloned().collect(),
        }
    }

    /// 1-based rank of the first relevant item, if any is retrieved.
    pub fn first_relevant_rank(&self, relevant: &HashSet<String>) -> Option<usize> {
        self.items
            .iter()
            .position(|(id, _)| relevant.contains(id))
            .map(|p| p + 1)
    }
}

/// One judged video inside a sampled judgment pool.
#[derive(Debug, Clone)]
pub struct JudgedRecord {
    pub video_id: String,
    pub relevant: bool,
    pub stratum: u32,
    /// Sampling rate p of the stratum this record was drawn with, in (0,1].
    pub rate: f64,
}

/// Query id → sampled relevance judgments, for inferred-AP evaluation.
#[derive(Debug, Clone, Default)]
pub struct JudgmentPool {
    by_query: HashMap<String, Vec<JudgedRecord>>,
}

impl JudgmentPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, record: JudgedRecord) -> Result<()> {
        if !(record.rate > 0.0 && record.rate <= 1.0) {
            return Err(Error::Format(format!(
                "judgment pool: sampling rate {} for query {query_id:?} video {:?} outside (0,1]",
                record.rate, record.video_id
            )));
        }
        let records = self.by_query.entry(query_id.to_owned()).or_default();
        if records.iter().any(|r| r.video_id == record.video_id) {
            return Err(Error::Format(format!(
                "judgment pool: video {:?} judged twice for query {query_id:?}",
                record.video_id
            )));
        }
        records.push(record);
        Ok(())
    }

    pub fn for_query(&self, query_id: &str) -> Option<&[JudgedRecord]> {
        self.by_query.get(query_id).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }

    /// Relevant video ids per query (the sampled positives).
    pub fn relevant_sets(&self) -> HashMap<String, HashSet<String>> {
        self.by_query
            .iter()
            .map(|(q, records)| {
                let set = records
                    .iter()
                    .filter(|r| r.relevant)
                    .map(|r| r.video_id.clone())
                    .collect();
                (q.clone(), set)
            })
            .collect()
    }
}

/// 1 iff any of the top-k items is relevant. The caller excludes queries
/// with empty relevant sets (signalled here as an error) from averages.
pub fn recall_at_k(ranked: &RankedList, relevant: &HashSet<String>, k: usize) -> Result<bool> {
    if relevant.is_empty() {
        return Err(Error::Empty(format!(
            "relevant set for query {:?}",
            ranked.query_id
        )));
    }
    debug_assert!(k >= 1);
    Ok(ranked
        .items
        .iter()
        .take(k)
        .any(|(id, _)| relevant.contains(id)))
}

/// Median of first-relevant ranks: sort ascending; odd count takes the
/// middle, even count the lower middle, so the result stays integral.
pub fn median_rank(first_rel_ranks: &[usize]) -> Result<usize> {
    if first_rel_ranks.is_empty() {
        return Err(Error::Empty("median over zero ranks".into()));
    }
    let mut sorted = first_rel_ranks.to_vec();
    sorted.sort_unstable();
    Ok(sorted[(sorted.len() - 1) / 2])
}

/// Average precision: mean over relevant items of precision at their rank;
/// relevant items never retrieved contribute zero.
pub fn average_precision(ranked: &RankedList, relevant: &HashSet<String>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::Empty(format!(
            "relevant set for query {:?}",
            ranked.query_id
        )));
    }
    let mut rel_seen = 0u64;
    let mut sum = 0.0;
    for (i, (id, _)) in ranked.items.iter().enumerate() {
        if relevant.contains(id) {
            rel_seen += 1;
            sum += rel_seen as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Arithmetic mean of per-query average precisions.
pub fn mean_ap(per_query: &[f64]) -> Result<f64> {
    if per_query.is_empty() {
        return Err(Error::Empty("mean over zero AP values".into()));
    }
    Ok(per_query.iter().sum::<f64>() / per_query.len() as f64)
}

/// Inferred average precision over a uniformly sampled judgment pool.
///
/// With sampling rate p and R̂ = (#sampled relevant)/p, each sampled
/// relevant video retrieved at rank k contributes
///
/// ```text
/// E[P@k] = 1/k + ((k−1)/k) · (judged_above/p)/(k−1)
///                          · (rel_above + ε)/(rel_above + nonrel_above + 2ε)
/// ```
///
/// where the counts run over sampled judged videos above rank k, and the
/// k=1 term is exactly 1. The estimate is (1/R̂)·(1/p)·Σ E[P@k]. At p=1 and
/// complete judgments this reduces to plain average precision up to the
/// ε-smoothing.
pub fn inferred_ap(ranked: &RankedList, pool: &JudgmentPool, epsilon: f64) -> Result<f64> {
    let records = pool.for_query(&ranked.query_id).ok_or_else(|| Error::MissingId {
        what: "judgment pool".into(),
        id: ranked.query_id.clone(),
    })?;
    if records.is_empty() {
        return Err(Error::Empty(format!(
            "judgment pool for query {:?}",
            ranked.query_id
        )));
    }
    let p = records[0].rate;
    if p <= 0.0 {
        return Err(Error::Format(format!(
            "judgment pool: non-positive sampling rate for query {:?}",
            ranked.query_id
        )));
    }
    if records.iter().any(|r| r.rate != p) {
        return Err(Error::Format(format!(
            "judgment pool: mixed sampling rates for query {:?} (single uniform stratum required)",
            ranked.query_id
        )));
    }
    let judged: HashMap<&str, bool> = records
        .iter()
        .map(|r| (r.video_id.as_str(), r.relevant))
        .collect();
    let sampled_relevant = records.iter().filter(|r| r.relevant).count();
    if sampled_relevant == 0 {
        return Err(Error::Empty(format!(
            "no sampled relevant videos for query {:?}",
            ranked.query_id
        )));
    }
    let r_hat = sampled_relevant as f64 / p;

    let mut sum = 0.0;
    let mut judged_above = 0usize;
    let mut rel_above = 0usize;
    for (i, (id, _)) in ranked.items.iter().enumerate() {
        let k = i + 1;
        if let Some(&rel) = judged.get(id.as_str()) {
            if rel {
                let expected_p_at_k = if k == 1 {
                    1.0
                } else {
                    let nonrel_above = judged_above - rel_above;
                    1.0 / k as f64
                        + ((k - 1) as f64 / k as f64)
                            * ((judged_above as f64 / p) / (k - 1) as f64)
                            * ((rel_above as f64 + epsilon)
                                / (rel_above as f64 + nonrel_above as f64 + 2.0 * epsilon))
                };
                sum += expected_p_at_k;
            }
            judged_above += 1;
            if rel {
                rel_above += 1;
            }
        }
    }
    Ok((1.0 / r_hat) * (1.0 / p) * sum)
}

/// Per-query evaluation detail.
#[derive(Debug, Clone)]
pub struct QueryEval {
    pub query_id: String,
    pub ap: f64,
    pub inf_ap: Option<f64>,
    pub first_rel_rank: usize,
    pub recall: [bool; 3],
}

/// Aggregate retrieval quality over a query set.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    /// R@1, R@5, R@10 as percentages over the included queries.
    pub recall_pct: [f64; 3],
    pub median_rank: usize,
    pub mean_ap: f64,
    pub mean_inf_ap: Option<f64>,
    pub queries: usize,
    /// Queries dropped because their relevant set was empty.
    pub excluded: usize,
}

/// Score ranked lists against per-query relevant sets (and optionally a
/// sampled judgment pool for inferred AP). Queries with empty relevant sets
/// are excluded from all averages and counted, with a logged warning.
pub fn evaluate(
    lists: &[RankedList],
    relevant: &HashMap<String, HashSet<String>>,
    pool: Option<&JudgmentPool>,
) -> Result<(Vec<QueryEval>, EvalSummary)> {
    if lists.is_empty() {
        return Err(Error::Empty("no queries to evaluate".into()));
    }
    let mut per_query = Vec::with_capacity(lists.len());
    let mut excluded = 0usize;
    for ranked in lists {
        let rel = relevant.get(&ranked.query_id).ok_or_else(|| Error::MissingId {
            what: "relevance ground truth".into(),
            id: ranked.query_id.clone(),
        })?;
        if rel.is_empty() {
            log::warn!(
                "query {:?} has no relevant videos; excluded from averages",
                ranked.query_id
            );
            excluded += 1;
            continue;
        }
        let ap = average_precision(ranked, rel)?;
        let inf_ap = match pool {
            Some(pool) => match inferred_ap(ranked, pool, INFAP_EPSILON) {
                Ok(v) => Some(v),
                Err(Error::Empty(_)) => {
                    log::warn!(
                        "query {:?} has no sampled relevant videos; excluded from averages",
                        ranked.query_id
                    );
                    excluded += 1;
                    continue;
                }
                Err(e) => return Err(e),
            },
            None => None,
        };
        let first_rel_rank = ranked
            .first_relevant_rank(rel)
            .unwrap_or(ranked.len() + 1);
        per_query.push(QueryEval {
            query_id: ranked.query_id.clone(),
            ap,
            inf_ap,
            first_rel_rank,
            recall: [
                recall_at_k(ranked, rel, 1)?,
                recall_at_k(ranked, rel, 5)?,
                recall_at_k(ranked, rel, 10)?,
            ],
        });
    }
    if per_query.is_empty() {
        return Err(Error::Empty(
            "every query was excluded (no relevant videos anywhere)".into(),
        ));
    }
    let n = per_query.len() as f64;
    let recall_pct = [0, 1, 2].map(|i| {
        per_query.iter().filter(|q| q.recall[i]).count() as f64 / n * 100.0
    });
    let ranks: Vec<usize> = per_query.iter().map(|q| q.first_rel_rank).collect();
    let aps: Vec<f64> = per_query.iter().map(|q| q.ap).collect();
    let mean_inf_ap = if per_query.iter().all(|q| q.inf_ap.is_some()) && pool.is_some() {
        Some(per_query.iter().map(|q| q.inf_ap.unwrap()).sum::<f64>() / n)
    } else {
        None
    };
    let summary = EvalSummary {
        recall_pct,
        median_rank: median_rank(&ranks)?,
        mean_ap: mean_ap(&aps)?,
        mean_inf_ap,
        queries: per_query.len(),
        excluded,
    };
    Ok((per_query, summary))
}

/// Render the evaluation as a key-value block per query plus one aggregate
/// line.
pub fn render_report(per_query: &[QueryEval], summary: &EvalSummary) -> String {
    let mut out = String::new();
    for q in per_query {
        writeln!(out, "query\t{}", q.query_id).unwrap();
        writeln!(out, "ap\t{:.6}", q.ap).unwrap();
        if let Some(v) = q.inf_ap {
            writeln!(out, "infap\t{v:.6}").unwrap();
        }
        writeln!(out, "first_rel_rank\t{}", q.first_rel_rank).unwrap();
        writeln!(out, "r1\t{}", u8::from(q.recall[0])).unwrap();
        writeln!(out, "r5\t{}", u8::from(q.recall[1])).unwrap();
        writeln!(out, "r10\t{}", u8::from(q.recall[2])).unwrap();
        out.push('\n');
    }
    let infap_text = summary
        .mean_inf_ap
        .map_or("n/a".to_owned(), |v| format!("{v:.6}"));
    writeln!(
        out,
        "aggregate\tqueries={} excluded={} R@1={:.1} R@5={:.1} R@10={:.1} Medr={} mAP={:.6} infAP={}",
        summary.queries,
        summary.excluded,
        summary.recall_pct[0],
        summary.recall_pct[1],
        summary.recall_pct[2],
        summary.median_rank,
        summary.mean_ap,
        infap_text,
    )
    .unwrap();
    out
}

/// Write a run file: `query_id<TAB>rank<TAB>video_id<TAB>score`, ranks
/// 1-based, best first.
pub fn write_run_file(path: &Path, lists: &[RankedList]) -> Result<()> {
    let mut out = String::new();
    for list in lists {
        for (i, (video_id, score)) in list.items.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}\t{:.6}", list.query_id, i + 1, video_id, score).unwrap();
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a run file back into ranked lists (grouped by query, in file order).
pub fn read_run_file(path: &Path) -> Result<Vec<RankedList>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<(usize, String, f64)>> = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!(
                "{}: line {}: expected query<TAB>rank<TAB>video<TAB>score",
                path.display(),
                lineno + 1
            )));
        }
        let rank: usize = fields[1].parse().map_err(|_| {
            Error::Format(format!("{}: line {}: bad rank", path.display(), lineno + 1))
        })?;
        let score: f64 = fields[3].parse().map_err(|_| {
            Error::Format(format!("{}: line {}: bad score", path.display(), lineno + 1))
        })?;
        if !grouped.contains_key(fields[0]) {
            order.push(fields[0].to_owned());
        }
        grouped
            .entry(fields[0].to_owned())
            .or_default()
            .push((rank, fields[2].to_owned(), score));
    }
    let mut lists = Vec::with_capacity(order.len());
    for query_id in order {
        let mut rows = grouped.remove(&query_id).unwrap();
        rows.sort_by_key(|(rank, _, _)| *rank);
        for (i, (rank, _, _)) in rows.iter().enumerate() {
            if *rank != i + 1 {
                return Err(Error::Format(format!(
                    "run file {}: query {:?} ranks are not 1..n",
                    path.display(),
                    query_id
                )));
            }
        }
        let items = rows.into_iter().map(|(_, id, score)| (id, score)).collect();
        lists.push(RankedList::from_sorted(query_id, items)?);
    }
    Ok(lists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ranked(ids: &[&str]) -> RankedList {
        let n = ids.len();
        let items = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), (n - i) as f64))
            .collect();
        RankedList::from_sorted("q", items).unwrap()
    }

    fn relset(ids: &[&str]) -> HashSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    /// Plain-loop AP: for every relevant retrieved item, rescan the prefix
    /// to count relevant hits. Kept deliberately naive as the oracle.
    fn ap_bruteforce(ranked: &RankedList, relevant: &HashSet<String>) -> f64 {
        let items = ranked.items();
        let mut sum = 0.0;
        for (i, (id, _)) in items.iter().enumerate() {
            if relevant.contains(id) {
                let k = i + 1;
                let hits = items[..k]
                    .iter()
                    .filter(|(id, _)| relevant.contains(id))
                    .count();
                sum += hits as f64 / k as f64;
            }
        }
        sum / relevant.len() as f64
    }

    fn full_pool(ranked: &RankedList, relevant: &HashSet<String>, rate: f64) -> JudgmentPool {
        let mut pool = JudgmentPool::new();
        for (id, _) in ranked.items() {
            pool.insert(
                &ranked.query_id,
                JudgedRecord {
                    video_id: id.clone(),
                    relevant: relevant.contains(id),
                    stratum: 0,
                    rate,
                },
            )
            .unwrap();
        }
        pool
    }

    #[test]
    fn recall_hits_inside_and_misses_outside_k() {
        let list = ranked(&["a", "b", "c", "d", "e"]);
        let rel = relset(&["c"]);
        assert!(recall_at_k(&list, &rel, 5).unwrap());
        assert!(!recall_at_k(&list, &rel, 2).unwrap());
        assert!(recall_at_k(&ranked(&["c", "a"]), &rel, 1).unwrap());
    }

    #[test]
    fn recall_errors_on_empty_relevant_set() {
        let err = recall_at_k(&ranked(&["a"]), &relset(&[]), 1).unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
    }

    #[test]
    fn median_rank_follows_sorted_middle_rule() {
        assert_eq!(median_rank(&[1, 3, 7]).unwrap(), 3);
        assert_eq!(median_rank(&[2, 4]).unwrap(), 2);
        assert_eq!(median_rank(&[5]).unwrap(), 5);
        assert_eq!(median_rank(&[7, 1, 3, 9]).unwrap(), 3);
    }

    #[test]
    fn average_precision_examples() {
        let rel_first = relset(&["a"]);
        assert_eq!(average_precision(&ranked(&["a"]), &rel_first).unwrap(), 1.0);

        let two_rel = relset(&["a", "c"]);
        let ap = average_precision(&ranked(&["a", "b", "c"]), &two_rel).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);

        let late = relset(&["c"]);
        let ap = average_precision(&ranked(&["a", "b", "c"]), &late).unwrap();
        assert!((ap - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn average_precision_counts_unretrieved_relevant_as_zero() {
        let rel = relset(&["a", "zz"]);
        let ap = average_precision(&ranked(&["a", "b"]), &rel).unwrap();
        assert!((ap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mean_ap_examples() {
        assert_eq!(mean_ap(&[1.0]).unwrap(), 1.0);
        assert_eq!(mean_ap(&[1.0, 0.0]).unwrap(), 0.5);
        assert!(mean_ap(&[]).is_err());
    }

    #[test]
    fn inferred_ap_reduces_to_ap_at_full_sampling() {
        let list = ranked(&["a", "b", "c"]);
        let rel = relset(&["a", "c"]);
        let pool = full_pool(&list, &rel, 1.0);
        let inf = inferred_ap(&list, &pool, INFAP_EPSILON).unwrap();
        let ap = average_precision(&list, &rel).unwrap();
        assert!((inf - ap).abs() < 1e-3, "inf {inf} vs ap {ap}");
    }

    #[test]
    fn inferred_ap_single_relevant_at_rank_one() {
        let list = ranked(&["a", "b"]);
        let rel = relset(&["a"]);
        let pool = full_pool(&list, &rel, 1.0);
        let inf = inferred_ap(&list, &pool, INFAP_EPSILON).unwrap();
        assert!((inf - 1.0).abs() < 1e-3);
    }

    #[test]
    fn inferred_ap_monte_carlo_mean_tracks_true_ap() {
        use rand::{Rng, SeedableRng};
        let ids: Vec<String> = (0..200).map(|i| format!("v{i:03}")).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rel: HashSet<String> = {
            let mut set = HashSet::new();
            while set.len() < 20 {
                set.insert(ids[rng.gen_range(0..ids.len())].clone());
            }
            set
        };
        let items: Vec<(String, f64)> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), (200 - i) as f64))
            .collect();
        let list = RankedList::from_sorted("q", items).unwrap();
        let true_ap = average_precision(&list, &rel).unwrap();

        let p = 0.5;
        let trials = 1000;
        let mut mean = 0.0;
        for _ in 0..trials {
            let mut pool = JudgmentPool::new();
            let mut any_rel = false;
            for id in &ids {
                if rng.gen_bool(p) {
                    let is_rel = rel.contains(id);
                    any_rel |= is_rel;
                    pool.insert(
                        "q",
                        JudgedRecord {
                            video_id: id.clone(),
                            relevant: is_rel,
                            stratum: 0,
                            rate: p,
                        },
                    )
                    .unwrap();
                }
            }
            if !any_rel {
                continue; // vanishingly rare with 20 relevant items
            }
            mean += inferred_ap(&list, &pool, INFAP_EPSILON).unwrap() / trials as f64;
        }
        assert!(
            (mean - true_ap).abs() < 0.05,
            "MC mean {mean} vs true AP {true_ap}"
        );
    }

    #[test]
    fn inferred_ap_rejects_mixed_rates_and_missing_queries() {
        let list = ranked(&["a", "b"]);
        let mut pool = JudgmentPool::new();
        pool.insert(
            "q",
            JudgedRecord { video_id: "a".into(), relevant: true, stratum: 0, rate: 0.5 },
        )
        .unwrap();
        pool.insert(
            "q",
            JudgedRecord { video_id: "b".into(), relevant: false, stratum: 0, rate: 0.25 },
        )
        .unwrap();
        assert!(matches!(
            inferred_ap(&list, &pool, INFAP_EPSILON),
            Err(Error::Format(_))
        ));
        let mut other = ranked(&["x"]);
        other.query_id = "unjudged".into();
        assert!(matches!(
            inferred_ap(&other, &pool, INFAP_EPSILON),
            Err(Error::MissingId { .. })
        ));
    }

    #[test]
    fn judgment_pool_rejects_bad_rates_and_duplicates() {
        let mut pool = JudgmentPool::new();
        let rec = |rate| JudgedRecord {
            video_id: "v".into(),
            relevant: true,
            stratum: 0,
            rate,
        };
        assert!(pool.insert("q", rec(0.0)).is_err());
        assert!(pool.insert("q", rec(1.0)).is_ok());
        assert!(pool.insert("q", rec(1.0)).is_err());
    }

    #[test]
    fn evaluate_excludes_empty_relevant_queries_with_count() {
        let lists = vec![ranked(&["a", "b"]), {
            let mut l = ranked(&["a", "b"]);
            l.query_id = "q2".into();
            l
        }];
        let mut relevant = HashMap::new();
        relevant.insert("q".to_owned(), relset(&["a"]));
        relevant.insert("q2".to_owned(), relset(&[]));
        let (per_query, summary) = evaluate(&lists, &relevant, None).unwrap();
        assert_eq!(per_query.len(), 1);
        assert_eq!(summary.excluded, 1);
        assert_eq!(summary.recall_pct[0], 100.0);
        assert_eq!(summary.mean_ap, 1.0);
    }

    #[test]
    fn run_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.tsv");
        let lists = vec![
            RankedList::from_scores("q1", vec![("v2".into(), 0.25), ("v1".into(), 0.75)]),
            RankedList::from_scores("q2", vec![("v1".into(), 0.5), ("v2".into(), 0.5)]),
        ];
        write_run_file(&path, &lists).unwrap();
        let reloaded = read_run_file(&path).unwrap();
        assert_eq!(reloaded.len(), 2);
        assert_eq!(reloaded[0].items()[0].0, "v1");
        assert_eq!(reloaded[0].items()[0].1, 0.75);
        // equal scores rank by ascending id
        assert_eq!(reloaded[1].items()[0].0, "v1");
    }

    proptest! {
        #[test]
        fn recall_is_non_decreasing_in_k(rel_pos in 0usize..20) {
            let ids: Vec<String> = (0..20).map(|i| format!("v{i}")).collect();
            let items = ids.iter().enumerate()
                .map(|(i, id)| (id.clone(), (20 - i) as f64)).collect();
            let list = RankedList::from_sorted("q", items).unwrap();
            let rel: HashSet<String> = [ids[rel_pos].clone()].into();
            let mut prev = false;
            for k in 1..=20 {
                let r = recall_at_k(&list, &rel, k).unwrap();
                prop_assert!(r >= prev);
                prev = r;
            }
        }

        #[test]
        fn metrics_invariant_under_monotone_score_transform(
            scores in proptest::collection::vec(0.0f64..1.0, 5..20),
            rel_mask in proptest::collection::vec(any::<bool>(), 5..20),
        ) {
            let n = scores.len().min(rel_mask.len());
            let items: Vec<(String, f64)> = scores[..n].iter().enumerate()
                .map(|(i, s)| (format!("v{i:02}"), *s)).collect();
            let rel: HashSet<String> = (0..n).filter(|i| rel_mask[*i])
                .map(|i| format!("v{i:02}")).collect();
            prop_assume!(!rel.is_empty());
            let base = RankedList::from_scores("q", items.clone());
            let transformed = RankedList::from_scores(
                "q",
                items.into_iter().map(|(id, s)| (id, 3.0 * s + 7.0)).collect(),
            );
            let ap_a = average_precision(&base, &rel).unwrap();
            let ap_b = average_precision(&transformed, &rel).unwrap();
            prop_assert_eq!(ap_a, ap_b);
            prop_assert_eq!(
                base.first_relevant_rank(&rel),
                transformed.first_relevant_rank(&rel)
            );
        }

        #[test]
        fn average_precision_matches_bruteforce(
            rel_mask in proptest::collection::vec(any::<bool>(), 1..30),
        ) {
            let items: Vec<(String, f64)> = (0..rel_mask.len())
                .map(|i| (format!("v{i:02}"), (rel_mask.len() - i) as f64)).collect();
            let rel: HashSet<String> = rel_mask.iter().enumerate()
                .filter(|(_, r)| **r).map(|(i, _)| format!("v{i:02}")).collect();
            prop_assume!(!rel.is_empty());
            let list = RankedList::from_sorted("q", items).unwrap();
            let fast = average_precision(&list, &rel).unwrap();
            let slow = ap_bruteforce(&list, &rel);
            prop_assert_eq!(fast, slow);
        }
    }
}
