//! Planted-cluster synthetic datasets for desk-scale experiments.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FeatureMatrix, InteractionTable, Modality};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Generate interactions with planted cluster structure.
///
/// Items join clusters round-robin; each modality draws cluster centroids
/// from a seeded standard normal and each item's features are its centroid
/// plus `noise` times gaussian jitter. Each user prefers one cluster
/// (round-robin) and samples `interactions_per_user` distinct items, 90% from
/// the preferred cluster and 10% uniformly. Deterministic per seed.
pub fn generate_synthetic(
    n_users: usize,
    n_items: usize,
    n_clusters: usize,
    feat_dims: &[usize],
    interactions_per_user: usize,
    noise: f64,
    seed: u64,
) -> Result<(InteractionTable, Vec<FeatureMatrix>)> {
    if n_clusters == 0 || n_clusters > n_items {
        return Err(Error::Config(format!(
            "n_clusters must be in [1, n_items], got {n_clusters} for {n_items} items"
        )));
    }
    if interactions_per_user > n_items {
        return Err(Error::Config(format!(
            "interactions_per_user={interactions_per_user} exceeds n_items={n_items}"
        )));
    }
    if noise.is_nan() || noise < 0.0 {
        return Err(Error::Config("noise must be >= 0".into()));
    }
    if feat_dims.len() > 2 {
        return Err(Error::Config(
            "at most two content modalities (textual, visual) are supported".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let item_cluster: Vec<usize> = (0..n_items).map(|i| i % n_clusters).collect();
    let mut cluster_items = vec![Vec::new(); n_clusters];
    for (i, &c) in item_cluster.iter().enumerate() {
        cluster_items[c].push(i);
    }

    let modality_order = [Modality::Textual, Modality::Visual];
    let mut features = Vec::with_capacity(feat_dims.len());
    for (slot, &dim) in feat_dims.iter().enumerate() {
        let centroids = DenseMatrix::standard_normal(n_clusters, dim, &mut rng);
        let mut matrix = DenseMatrix::zeros(n_items, dim);
        for (i, &cluster) in item_cluster.iter().enumerate() {
            let jitter = DenseMatrix::standard_normal(1, dim, &mut rng);
            let centroid = centroids.row(cluster);
            for (c, &cv) in centroid.iter().enumerate() {
                matrix.set(i, c, cv + noise * jitter.get(0, c));
            }
        }
        features.push(FeatureMatrix::new(modality_order[slot], matrix));
    }

    let mut raw_pairs = Vec::with_capacity(n_users * interactions_per_user);
    for u in 0..n_users {
        let preferred = u % n_clusters;
        let mut chosen: HashSet<usize> = HashSet::new();
        let mut ordered = Vec::with_capacity(interactions_per_user);
        while ordered.len() < interactions_per_user {
            let item = if rng.gen_range(0.0..1.0) < 0.9 {
                let pool = &cluster_items[preferred];
                pool[rng.gen_range(0..pool.len())]
            } else {
                rng.gen_range(0..n_items)
            };
            if chosen.insert(item) {
                ordered.push(item);
            }
        }
        for i in ordered {
            raw_pairs.push((format!("u{u}"), format!("i{i}")));
        }
    }

    let table = InteractionTable::from_raw_pairs(raw_pairs);

    // The table indexes items by first appearance, not by generator number;
    // reorder feature rows so that row i matches item index i. Items never
    // sampled by any user drop out of both the table and the features.
    let features = features
        .into_iter()
        .map(|f| {
            let mut reordered = DenseMatrix::zeros(table.n_items(), f.dim());
            for idx in 0..table.n_items() {
                let raw = table.item_id(idx);
                let original: usize = raw[1..].parse().expect("synthetic item id");
                reordered.row_mut(idx).copy_from_slice(f.matrix.row(original));
            }
            FeatureMatrix::new(f.modality, reordered)
        })
        .collect();

    Ok((table, features))
}
