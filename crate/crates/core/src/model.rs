//! Model definition: configuration, parameters, and the forward pass.
//!
//! One forward pass, per modality m (behavior plus any provided feature
//! modalities):
//!
//! 1. Feature modalities run through a two-layer MLP (d_m -> 4d -> d with
//!    leaky ReLU); the behavior modality uses the trainable item id table
//!    directly.
//! 2. Item embeddings are refined against the id table elementwise:
//!    sqrt(|0.5 (x^2 + id^2) + eps|). Behavior refines against itself.
//! 3. User and item blocks are stacked and propagated over the normalized
//!    bipartite adjacency; each hop is gated per node by the cosine between
//!    the propagated row and its layer-0 row, and all hops (including hop 0)
//!    are summed into E-bar_m.
//! 4. Late fusion combines the per-modality sums with softmax attention
//!    weights, either as a weighted sum (default) or by concatenation.
//! 5. Optional homogeneous propagation over top-k user-user and item-item
//!    cosine graphs refines the fused blocks; both branches are residual at
//!    the assembly step.
//!
//! Ranking scores are inner products between user and item rows of the
//! final stacked embedding.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, Modality};
use crate::dense::{dot, DenseMatrix};
use crate::error::{Error, Result};
use crate::graph::{build_adjacency, normalize_sym, topk_knn, KnnGraph};
use crate::tape::{NodeId, SparseOperator, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    WeightedSum,
    Concat,
}

/// Which embedding feeds the homogeneous kNN graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnSource {
    /// The fused embedding (post late-fusion). Default.
    Fused,
    /// The arithmetic mean of the per-modality sums (pre late-fusion).
    Premix,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    /// Bipartite propagation hops.
    pub n_layers: usize,
    /// Hops over the user-user graph.
    pub n_user_layers: usize,
    /// Hops over the item-item graph.
    pub n_item_layers: usize,
    /// Neighbors kept per user in the user-user graph.
    pub k_uu: usize,
    /// Neighbors kept per item in the item-item graph.
    pub k_ii: usize,
    pub eps: f64,
    pub leaky_slope: f64,
    pub refine_behavior: bool,
    pub refine_textual: bool,
    pub refine_visual: bool,
    pub use_uu: bool,
    pub use_ii: bool,
    pub fusion_mode: FusionMode,
    /// Rebuild the kNN graphs every this many epochs; 0 builds them once
    /// from the untrained model and freezes them.
    pub knn_refresh_interval: usize,
    /// Divide each item-item row by the sum of absolute weights.
    pub ii_row_normalize: bool,
    pub knn_source: KnnSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            n_layers: 1,
            n_user_layers: 1,
            n_item_layers: 1,
            k_uu: 10,
            k_ii: 10,
            eps: 1e-8,
            leaky_slope: 0.01,
            refine_behavior: true,
            refine_textual: true,
            refine_visual: true,
            use_uu: true,
            use_ii: true,
            fusion_mode: FusionMode::WeightedSum,
            knn_refresh_interval: 0,
            ii_row_normalize: false,
            knn_source: KnnSource::Fused,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("embedding width must be >= 1".into()));
        }
        if !(1..=4).contains(&self.n_layers) {
            return Err(Error::Config(format!(
                "bipartite hops must be in 1..=4, got {}",
                self.n_layers
            )));
        }
        if self.k_uu == 0 || self.k_ii == 0 {
            return Err(Error::Config("kNN sizes must be >= 1".into()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }

    pub fn refine_enabled(&self, m: Modality) -> bool {
        match m {
            Modality::Behavior => self.refine_behavior,
            Modality::Textual => self.refine_textual,
            Modality::Visual => self.refine_visual,
        }
    }
}

/// The two-layer feature transform of one non-behavior modality.
#[derive(Clone, Debug)]
pub struct MlpParams {
    pub w_in: DenseMatrix,
    pub b_in: DenseMatrix,
    pub w_out: DenseMatrix,
    pub b_out: DenseMatrix,
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    /// Modalities in fixed order: behavior first, then the feature
    /// modalities in the order their matrices were supplied.
    pub modalities: Vec<Modality>,
    /// One n_users x d table per modality.
    pub user_emb: Vec<DenseMatrix>,
    /// Trainable item id table, n_items x d.
    pub item_id_emb: DenseMatrix,
    /// One MLP per modality; None for behavior.
    pub mlps: Vec<Option<MlpParams>>,
    /// Pre-softmax attention logits, 1 x |modalities|.
    pub fusion_logits: DenseMatrix,
}

impl ModelParams {
    /// Xavier-initialized parameters. The draw order is fixed so a seed
    /// fully determines every tensor.
    pub fn init(
        n_users: usize,
        n_items: usize,
        feature_dims: &[(Modality, usize)],
        d: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_users == 0 || n_items == 0 {
            return Err(Error::EmptyInput("cannot size embeddings for an empty dataset".into()));
        }
        let mut modalities = vec![Modality::Behavior];
        for &(m, dim) in feature_dims {
            if m == Modality::Behavior {
                return Err(Error::Config("behavior has no raw feature matrix".into()));
            }
            if modalities.contains(&m) {
                return Err(Error::Config(format!("duplicate modality {m}")));
            }
            if dim == 0 {
                return Err(Error::Config(format!("{m} features have width 0")));
            }
            modalities.push(m);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let user_emb = modalities
            .iter()
            .map(|_| DenseMatrix::xavier_uniform(n_users, d, &mut rng))
            .collect();
        let item_id_emb = DenseMatrix::xavier_uniform(n_items, d, &mut rng);
        let mut mlps = vec![None];
        for &(_, dim) in feature_dims {
            let w_in = DenseMatrix::xavier_uniform(dim, 4 * d, &mut rng);
            let w_out = DenseMatrix::xavier_uniform(4 * d, d, &mut rng);
            mlps.push(Some(MlpParams {
                w_in,
                b_in: DenseMatrix::zeros(1, 4 * d),
                w_out,
                b_out: DenseMatrix::zeros(1, d),
            }));
        }
        Ok(Self {
            fusion_logits: DenseMatrix::zeros(1, modalities.len()),
            modalities,
            user_emb,
            item_id_emb,
            mlps,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_emb[0].rows()
    }

    pub fn n_items(&self) -> usize {
        self.item_id_emb.rows()
    }

    pub fn d(&self) -> usize {
        self.item_id_emb.cols()
    }

    /// All tensors in a fixed order shared by [`Self::tensors_mut`],
    /// [`Self::tensor_names`], and the forward pass leaf order.
    pub fn tensors(&self) -> Vec<&DenseMatrix> {
        let mut out: Vec<&DenseMatrix> = self.user_emb.iter().collect();
        out.push(&self.item_id_emb);
        for mlp in self.mlps.iter().flatten() {
            out.extend([&mlp.w_in, &mlp.b_in, &mlp.w_out, &mlp.b_out]);
        }
        out.push(&self.fusion_logits);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut out: Vec<&mut DenseMatrix> = self.user_emb.iter_mut().collect();
        out.push(&mut self.item_id_emb);
        for mlp in self.mlps.iter_mut().flatten() {
            out.extend([&mut mlp.w_in, &mut mlp.b_in, &mut mlp.w_out, &mut mlp.b_out]);
        }
        out.push(&mut self.fusion_logits);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .modalities
            .iter()
            .map(|m| format!("user_emb.{m}"))
            .collect();
        out.push("item_id_emb".into());
        for (m, mlp) in self.modalities.iter().zip(&self.mlps) {
            if mlp.is_some() {
                for part in ["w_in", "b_in", "w_out", "b_out"] {
                    out.push(format!("mlp.{m}.{part}"));
                }
            }
        }
        out.push("fusion_logits".into());
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Save every tensor as a CMF1 file under `dir` (values pass through
    /// f32). File names follow [`Self::tensor_names`] with dots replaced by
    /// underscores.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, t) in self.tensor_names().iter().zip(self.tensors()) {
            let file = dir.join(format!("param_{}.cmf", name.replace('.', "_")));
            crate::cmf::write_matrix(&file, t)?;
        }
        Ok(())
    }

    /// Load tensors saved by [`Self::save`] into an existing parameter
    /// structure (which supplies shapes and modality layout).
    pub fn load_into(&mut self, dir: &Path) -> Result<()> {
        let names = self.tensor_names();
        for (name, t) in names.iter().zip(self.tensors_mut()) {
            let file = dir.join(format!("param_{}.cmf", name.replace('.', "_")));
            let m = crate::cmf::read_matrix(&file)?;
            if m.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "{name}: stored shape {:?} does not match expected {:?}",
                    m.shape(),
                    t.shape()
                )));
            }
            *t = m;
        }
        Ok(())
    }
}

/// Normalized bipartite adjacency as a reusable sparse operator.
pub fn adjacency_operator(
    n_users: usize,
    n_items: usize,
    pairs: &[(usize, usize)],
) -> Result<SparseOperator> {
    Ok(SparseOperator::symmetric(normalize_sym(&build_adjacency(
        n_users, n_items, pairs,
    )?)))
}

/// Homogeneous graph operators derived from kNN graphs.
pub struct HomoOperators {
    pub uu: Option<SparseOperator>,
    pub ii: Option<SparseOperator>,
    pub uu_graph: Option<KnnGraph>,
    pub ii_graph: Option<KnnGraph>,
}

impl HomoOperators {
    pub fn none() -> Self {
        Self {
            uu: None,
            ii: None,
            uu_graph: None,
            ii_graph: None,
        }
    }

    pub fn from_graphs(
        cfg: &ModelConfig,
        uu_graph: Option<KnnGraph>,
        ii_graph: Option<KnnGraph>,
    ) -> Self {
        Self {
            uu: uu_graph
                .as_ref()
                .map(|g| SparseOperator::new(g.user_propagation())),
            ii: ii_graph
                .as_ref()
                .map(|g| SparseOperator::new(g.item_propagation(cfg.ii_row_normalize))),
            uu_graph,
            ii_graph,
        }
    }
}

/// Node ids of the parameter leaves, in [`ModelParams::tensors`] order plus
/// broken out by role for loss construction.
pub struct ParamNodes {
    pub user_emb: Vec<NodeId>,
    pub item_id_emb: NodeId,
    pub mlps: Vec<Option<[NodeId; 4]>>,
    pub fusion_logits: NodeId,
}

impl ParamNodes {
    /// Flat list aligned with [`ModelParams::tensors`].
    pub fn flat(&self) -> Vec<NodeId> {
        let mut out = self.user_emb.clone();
        out.push(self.item_id_emb);
        for m in self.mlps.iter().flatten() {
            out.extend(m.iter().copied());
        }
        out.push(self.fusion_logits);
        out
    }
}

pub struct ForwardTrace {
    pub tape: Tape,
    pub params: ParamNodes,
    /// Per-modality summed embeddings E-bar_m, stacked users then items.
    pub e_bar: Vec<NodeId>,
    /// Fused embedding before homogeneous enhancement.
    pub fused: NodeId,
    /// Final embedding used for ranking.
    pub e_final: NodeId,
    pub n_users: usize,
    pub n_items: usize,
}

impl ForwardTrace {
    pub fn e_final_value(&self) -> &DenseMatrix {
        self.tape.value(self.e_final)
    }

    pub fn fused_value(&self) -> &DenseMatrix {
        self.tape.value(self.fused)
    }

    pub fn e_bar_value(&self, mi: usize) -> &DenseMatrix {
        self.tape.value(self.e_bar[mi])
    }
}

/// Record one full forward pass on a fresh tape.
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    features: &[FeatureMatrix],
    adj: &SparseOperator,
    homo: &HomoOperators,
) -> Result<ForwardTrace> {
    cfg.validate()?;
    if features.len() + 1 != params.modalities.len() {
        return Err(Error::Config(format!(
            "{} feature matrices for {} modalities",
            features.len(),
            params.modalities.len()
        )));
    }
    let (n_users, n_items) = (params.n_users(), params.n_items());
    let mut tape = Tape::new();

    // parameter leaves, in tensors() order
    let user_nodes: Vec<NodeId> = params
        .user_emb
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect();
    let item_id_node = tape.leaf(params.item_id_emb.clone());
    let mut mlp_nodes: Vec<Option<[NodeId; 4]>> = vec![None];
    for mlp in params.mlps.iter().flatten() {
        mlp_nodes.push(Some([
            tape.leaf(mlp.w_in.clone()),
            tape.leaf(mlp.b_in.clone()),
            tape.leaf(mlp.w_out.clone()),
            tape.leaf(mlp.b_out.clone()),
        ]));
    }
    let fusion_node = tape.leaf(params.fusion_logits.clone());

    // per-modality item embeddings, refined against the id table
    let mut e_bar = Vec::with_capacity(params.modalities.len());
    for (mi, &m) in params.modalities.iter().enumerate() {
        let item_raw = if m == Modality::Behavior {
            item_id_node
        } else {
            let feat = &features[mi - 1];
            if feat.modality != m {
                return Err(Error::Config(format!(
                    "feature slot {} holds {} but the model expects {m}",
                    mi - 1,
                    feat.modality
                )));
            }
            if feat.rows() != n_items {
                return Err(Error::Alignment(format!(
                    "{m} features have {} rows for {} items",
                    feat.rows(),
                    n_items
                )));
            }
            let [w_in, b_in, w_out, b_out] = mlp_nodes[mi].unwrap();
            let x = tape.leaf(feat.matrix.clone());
            let h = tape.matmul(x, w_in)?;
            let h = tape.add_row_bias(h, b_in)?;
            let h = tape.leaky_relu(h, cfg.leaky_slope);
            let y = tape.matmul(h, w_out)?;
            tape.add_row_bias(y, b_out)?
        };
        let item_block = if cfg.refine_enabled(m) {
            tape.refine(item_raw, item_id_node, cfg.eps)?
        } else {
            item_raw
        };
        let e0 = tape.concat_rows(vec![user_nodes[mi], item_block])?;

        // bipartite propagation with per-node cosine gates, all hops summed
        let mut layers = vec![e0];
        let mut cur = e0;
        for _ in 0..cfg.n_layers {
            let p = tape.spmm(adj, cur)?;
            let gated = tape.cos_gate(p, e0, cfg.eps)?;
            layers.push(gated);
            cur = gated;
        }
        e_bar.push(tape.sum_list(layers)?);
    }

    // late fusion with softmax attention weights
    let alpha = tape.softmax_rows(fusion_node);
    let scaled: Vec<NodeId> = e_bar
        .iter()
        .enumerate()
        .map(|(mi, &e)| tape.scale_by_entry(e, alpha, mi))
        .collect::<Result<_>>()?;
    let fused = match cfg.fusion_mode {
        FusionMode::WeightedSum => tape.sum_list(scaled)?,
        FusionMode::Concat => tape.concat_cols(scaled)?,
    };

    // homogeneous enhancement; skipped branches leave the block bit-identical
    let e_final = if !cfg.use_uu && !cfg.use_ii {
        fused
    } else {
        let fused_u = tape.slice_rows(fused, 0, n_users)?;
        let fused_i = tape.slice_rows(fused, n_users, n_users + n_items)?;
        let e_fu = if cfg.use_uu {
            let uu = homo
                .uu
                .as_ref()
                .ok_or_else(|| Error::Config("user graph enabled but not built".into()))?;
            let mut a = fused_u;
            for _ in 0..cfg.n_user_layers {
                let prop = tape.spmm(uu, a)?;
                a = tape.add(a, prop)?;
            }
            tape.add(fused_u, a)?
        } else {
            fused_u
        };
        let e_fi = if cfg.use_ii {
            let ii = homo
                .ii
                .as_ref()
                .ok_or_else(|| Error::Config("item graph enabled but not built".into()))?;
            let mut a = fused_i;
            for _ in 0..cfg.n_item_layers {
                a = tape.spmm(ii, a)?;
            }
            tape.add(fused_i, a)?
        } else {
            fused_i
        };
        tape.concat_rows(vec![e_fu, e_fi])?
    };

    Ok(ForwardTrace {
        tape,
        params: ParamNodes {
            user_emb: user_nodes,
            item_id_emb: item_id_node,
            mlps: mlp_nodes,
            fusion_logits: fusion_node,
        },
        e_bar,
        fused,
        e_final,
        n_users,
        n_items,
    })
}

/// Build (or rebuild) the homogeneous kNN graphs from the current model
/// state. Runs a forward pass without homogeneous propagation, takes the
/// requested source embedding, and extracts top-k cosine neighbors for the
/// user block and the item block. The similarities become constants; no
/// gradient flows through graph construction.
pub fn rebuild_knn_graphs(
    params: &ModelParams,
    cfg: &ModelConfig,
    features: &[FeatureMatrix],
    adj: &SparseOperator,
) -> Result<(KnnGraph, KnnGraph)> {
    let mut plain = cfg.clone();
    plain.use_uu = false;
    plain.use_ii = false;
    let trace = forward(params, &plain, features, adj, &HomoOperators::none())?;
    let source = match cfg.knn_source {
        KnnSource::Fused => trace.fused_value().clone(),
        KnnSource::Premix => {
            let mut acc = trace.e_bar_value(0).clone();
            for mi in 1..trace.e_bar.len() {
                for (o, v) in acc
                    .as_mut_slice()
                    .iter_mut()
                    .zip(trace.e_bar_value(mi).as_slice())
                {
                    *o += v;
                }
            }
            let scale = 1.0 / trace.e_bar.len() as f64;
            acc.map(|v| v * scale)
        }
    };
    let users = source.slice_rows(0, params.n_users());
    let items = source.slice_rows(params.n_users(), source.rows());
    let uu = topk_knn(&users, cfg.k_uu)?;
    let ii = topk_knn(&items, cfg.k_ii)?;
    Ok((uu, ii))
}

/// Inner-product score between a user row and an item row of a stacked
/// embedding (users first, items offset by n_users).
pub fn score(e: &DenseMatrix, n_users: usize, u: usize, i: usize) -> Result<f64> {
    let n = e.rows();
    if u >= n_users || n_users + i >= n {
        return Err(Error::IndexOutOfRange(format!(
            "score({u},{i}) on {n} stacked rows with {n_users} users"
        )));
    }
    Ok(dot(e.row(u), e.row(n_users + i)))
}
