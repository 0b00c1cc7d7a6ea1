//! Checkpoint persistence: parameter tensors as CMF1 files, the model
//! configuration and best-epoch bookkeeping as JSON, and the kNN graphs
//! in effect at the best epoch as TSVs.
//!
//! Reloading restores everything needed to reproduce the checkpointed
//! embeddings exactly: parameters come back at 32-bit precision (the disk
//! format), and the stored graphs are reused instead of being rebuilt, so
//! evaluation after a reload matches evaluation at save time bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, InteractionTable, Modality};
use crate::error::{Error, Result};
use crate::graph::KnnGraph;
use crate::model::{adjacency_operator, forward, ForwardTrace, HomoOperators, ModelConfig, ModelParams};

const META_FILE: &str = "checkpoint.json";
const UU_FILE: &str = "knn_uu.tsv";
const II_FILE: &str = "knn_ii.tsv";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    epoch: usize,
    val_recall_at_20: f64,
    n_users: usize,
    n_items: usize,
    modalities: Vec<Modality>,
    feature_dims: Vec<usize>,
    has_uu_graph: bool,
    has_ii_graph: bool,
}

pub struct Checkpoint {
    pub params: ModelParams,
    pub model_config: ModelConfig,
    /// Epoch the checkpointed parameters come from (0 = untrained).
    pub epoch: usize,
    pub val_recall_at_20: f64,
    pub uu_graph: Option<KnnGraph>,
    pub ii_graph: Option<KnnGraph>,
}

impl Checkpoint {
    pub fn homo_operators(&self) -> HomoOperators {
        HomoOperators::from_graphs(
            &self.model_config,
            self.uu_graph.clone(),
            self.ii_graph.clone(),
        )
    }
}

/// Write a checkpoint directory. Any existing files are overwritten.
pub fn save_checkpoint(
    dir: &Path,
    params: &ModelParams,
    cfg: &ModelConfig,
    epoch: usize,
    val_recall_at_20: f64,
    uu_graph: Option<&KnnGraph>,
    ii_graph: Option<&KnnGraph>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    params.save(dir)?;
    if let Some(g) = uu_graph {
        g.save_tsv(&dir.join(UU_FILE))?;
    }
    if let Some(g) = ii_graph {
        g.save_tsv(&dir.join(II_FILE))?;
    }
    let feature_dims: Vec<usize> = params
        .mlps
        .iter()
        .flatten()
        .map(|mlp| mlp.w_in.rows())
        .collect();
    let meta = CheckpointMeta {
        model: cfg.clone(),
        epoch,
        val_recall_at_20,
        n_users: params.n_users(),
        n_items: params.n_items(),
        modalities: params.modalities.clone(),
        feature_dims,
        has_uu_graph: uu_graph.is_some(),
        has_ii_graph: ii_graph.is_some(),
    };
    std::fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let meta: CheckpointMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join(META_FILE))?)?;
    let feature_dims: Vec<(Modality, usize)> = meta
        .modalities
        .iter()
        .filter(|&&m| m != Modality::Behavior)
        .copied()
        .zip(meta.feature_dims.iter().copied())
        .collect();
    if feature_dims.len() != meta.feature_dims.len() {
        return Err(Error::Format(
            "checkpoint metadata lists fewer feature modalities than dimensions".into(),
        ));
    }
    let mut params = ModelParams::init(
        meta.n_users,
        meta.n_items,
        &feature_dims,
        meta.model.d,
        0,
    )?;
    params.load_into(dir)?;
    let uu_graph = if meta.has_uu_graph {
        Some(KnnGraph::load_tsv(&dir.join(UU_FILE))?)
    } else {
        None
    };
    let ii_graph = if meta.has_ii_graph {
        Some(KnnGraph::load_tsv(&dir.join(II_FILE))?)
    } else {
        None
    };
    Ok(Checkpoint {
        params,
        model_config: meta.model,
        epoch: meta.epoch,
        val_recall_at_20: meta.val_recall_at_20,
        uu_graph,
        ii_graph,
    })
}

/// Run the forward pass for a reloaded checkpoint against a training
/// table, reusing the stored kNN graphs.
pub fn forward_from_checkpoint(
    ckpt: &Checkpoint,
    train: &InteractionTable,
    features: &[FeatureMatrix],
) -> Result<ForwardTrace> {
    if train.n_users() != ckpt.params.n_users() || train.n_items() != ckpt.params.n_items() {
        return Err(Error::Alignment(format!(
            "checkpoint was trained on {}x{} but the dataset has {}x{} users x items",
            ckpt.params.n_users(),
            ckpt.params.n_items(),
            train.n_users(),
            train.n_items()
        )));
    }
    let cfg = &ckpt.model_config;
    if (cfg.use_uu && ckpt.uu_graph.is_none()) || (cfg.use_ii && ckpt.ii_graph.is_none()) {
        return Err(Error::Format(
            "checkpoint enables a homogeneous graph it does not contain".into(),
        ));
    }
    let adj = adjacency_operator(train.n_users(), train.n_items(), train.pairs())?;
    forward(&ckpt.params, cfg, features, &adj, &ckpt.homo_operators())
}
