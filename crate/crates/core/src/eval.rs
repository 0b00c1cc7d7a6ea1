//! Full-ranking top-K evaluation: Recall@K, NDCG@K, and sparsity buckets.
//!
//! Protocol: for each user, score every item, push the user's training
//! items to the bottom (score negative infinity), sort descending with ties
//! broken by lower item index, and compare the top K against that split's
//! held-out items. Users with no held-out items are excluded from the mean
//! rather than counted as zero.
//!
//! Per-user rankings run in parallel, but the mean is accumulated in
//! ascending user order so the reported numbers are bit-reproducible and
//! independent of thread count.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::InteractionTable;
use crate::dense::{dot, DenseMatrix};
use crate::error::{Error, Result};

/// One sparsity bucket: users whose training degree falls in (lo-1, hi].
#[derive(Clone, Debug, Serialize)]
pub struct BucketRow {
    pub label: String,
    pub min_degree: usize,
    /// None for the open-ended last bucket.
    pub max_degree: Option<usize>,
    pub n_users: usize,
    /// None when the bucket is empty.
    pub recall_at_20: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct MetricsReport {
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub n_eval_users: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_bucket: Vec<BucketRow>,
    /// Wall-clock spent evaluating. Deliberately not serialized: metric
    /// files must be bit-identical across reruns of the same config.
    #[serde(skip)]
    pub eval_seconds: f64,
}

/// Items sorted by descending score for one user, training items forced to
/// the bottom, ties resolved by lower item index.
pub fn rank_items(
    e: &DenseMatrix,
    n_users: usize,
    u: usize,
    mask: &HashSet<usize>,
) -> Vec<usize> {
    let n_items = e.rows() - n_users;
    let user_row = e.row(u);
    let mut scored: Vec<(usize, f64)> = (0..n_items)
        .map(|i| {
            let s = if mask.contains(&i) {
                f64::NEG_INFINITY
            } else {
                dot(user_row, e.row(n_users + i))
            };
            (i, s)
        })
        .collect();
    scored.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(i, _)| i).collect()
}

/// |top-K hits| / |relevant|. Callers guarantee `relevant` is nonempty.
pub fn recall_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    assert!(!relevant.is_empty(), "recall over an empty relevant set");
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

/// DCG over the top K (gain 1/log2(position+1), 1-based positions) divided
/// by the ideal DCG for this relevant-set size.
pub fn ndcg_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    assert!(!relevant.is_empty(), "ndcg over an empty relevant set");
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(j, _)| 1.0 / ((j + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(relevant.len()))
        .map(|j| 1.0 / ((j + 2) as f64).log2())
        .sum();
    dcg / idcg
}

fn relevant_sets(table: &InteractionTable) -> Vec<HashSet<usize>> {
    table
        .items_by_user()
        .into_iter()
        .map(|v| v.into_iter().collect())
        .collect()
}

/// Per-user (recall, ndcg) pairs aligned with `ks`; None for users with an
/// empty relevant set.
fn per_user_metrics(
    e: &DenseMatrix,
    n_users: usize,
    masks: &[HashSet<usize>],
    relevant: &[HashSet<usize>],
    ks: &[usize],
) -> Vec<Option<Vec<(f64, f64)>>> {
    (0..n_users)
        .into_par_iter()
        .map(|u| {
            if relevant[u].is_empty() {
                return None;
            }
            let ranked = rank_items(e, n_users, u, &masks[u]);
            Some(
                ks.iter()
                    .map(|&k| {
                        (
                            recall_at_k(&ranked, &relevant[u], k),
                            ndcg_at_k(&ranked, &relevant[u], k),
                        )
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Mean Recall@K and NDCG@K over every user with held-out items in
/// `eval_split`, ranking against `e` with `train` interactions masked.
pub fn evaluate(
    e: &DenseMatrix,
    train: &InteractionTable,
    eval_split: &InteractionTable,
    ks: &[usize],
) -> Result<MetricsReport> {
    let start = Instant::now();
    let n_users = train.n_users();
    if e.rows() != n_users + train.n_items() {
        return Err(Error::DimMismatch(format!(
            "embedding has {} rows for {} users + {} items",
            e.rows(),
            n_users,
            train.n_items()
        )));
    }
    let masks = relevant_sets(train);
    let relevant = relevant_sets(eval_split);
    let per_user = per_user_metrics(e, n_users, &masks, &relevant, ks);

    let mut sums = vec![(0.0, 0.0); ks.len()];
    let mut n_eval = 0usize;
    for row in &per_user {
        let Some(metrics) = row else { continue };
        n_eval += 1;
        for (acc, m) in sums.iter_mut().zip(metrics) {
            acc.0 += m.0;
            acc.1 += m.1;
        }
    }
    if n_eval == 0 {
        return Err(Error::NoEvaluableUsers);
    }
    let mut report = MetricsReport {
        n_eval_users: n_eval,
        eval_seconds: start.elapsed().as_secs_f64(),
        ..MetricsReport::default()
    };
    for (&k, (r, n)) in ks.iter().zip(sums) {
        report.recall.insert(k, r / n_eval as f64);
        report.ndcg.insert(k, n / n_eval as f64);
    }
    Ok(report)
}

/// Group evaluable users by training degree and report Recall@20 per group.
///
/// `edges` are ascending upper bounds; a user lands in the first bucket
/// whose edge is >= their degree, or in the open-ended final bucket past
/// the last edge.
pub fn sparsity_buckets(
    e: &DenseMatrix,
    train: &InteractionTable,
    eval_split: &InteractionTable,
    edges: &[usize],
) -> Result<Vec<BucketRow>> {
    if edges.is_empty() {
        return Err(Error::Config("bucket edges must be nonempty".into()));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("bucket edges must be strictly ascending".into()));
    }
    let n_users = train.n_users();
    let masks = relevant_sets(train);
    let relevant = relevant_sets(eval_split);
    let per_user = per_user_metrics(e, n_users, &masks, &relevant, &[20]);

    let n_buckets = edges.len() + 1;
    let mut counts = vec![0usize; n_buckets];
    let mut sums = vec![0.0f64; n_buckets];
    for u in 0..n_users {
        let Some(metrics) = &per_user[u] else { continue };
        let degree = masks[u].len();
        let b = edges
            .iter()
            .position(|&edge| degree <= edge)
            .unwrap_or(edges.len());
        counts[b] += 1;
        sums[b] += metrics[0].0;
    }
    let mut rows = Vec::with_capacity(n_buckets);
    for b in 0..n_buckets {
        let (min_degree, max_degree, label) = if b == 0 {
            (0, Some(edges[0]), format!("0-{}", edges[0]))
        } else if b < edges.len() {
            (
                edges[b - 1] + 1,
                Some(edges[b]),
                format!("{}-{}", edges[b - 1] + 1, edges[b]),
            )
        } else {
            (edges[b - 1] + 1, None, format!(">{}", edges[b - 1]))
        };
        rows.push(BucketRow {
            label,
            min_degree,
            max_degree,
            n_users: counts[b],
            recall_at_20: if counts[b] == 0 {
                None
            } else {
                Some(sums[b] / counts[b] as f64)
            },
        });
    }
    Ok(rows)
}

/// Default sparsity-bucket edges: 0-5, 6-10, 11-15, 16-20, >20.
pub const DEFAULT_BUCKET_EDGES: [usize; 4] = [5, 10, 15, 20];
