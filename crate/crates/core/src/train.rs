//! Training: triplet sampling, the adaptively weighted pairwise ranking
//! loss, Adam, and the epoch loop.
//!
//! The loss for a batch of (user, positive, negative) triplets has three
//! parts:
//!
//! * a per-modality ranking term where each modality's score gap is scaled
//!   by an adaptive weight w_m = 1 - softmax(gaps)_m, so modalities that
//!   currently rank worse get pushed harder;
//! * a ranking term on the fused embedding, weighted by
//!   `fused_loss_weight` (this is what trains the fusion logits and the
//!   homogeneous pathway; set the weight to 0 to drop it);
//! * an L2 penalty over the embedding rows the batch touched plus all
//!   dense parameters.
//!
//! Adaptive weights are treated as constants within a step by default;
//! `adaptive_weight_grad` differentiates through them instead.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplit, FeatureMatrix, InteractionTable};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::graph::KnnGraph;
use crate::model::{
    adjacency_operator, forward, rebuild_knn_graphs, ForwardTrace, HomoOperators, ModelConfig,
    ModelParams,
};
use crate::tape::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub u: usize,
    pub p: usize,
    pub n: usize,
}

/// Hyperparameter lists for grid search; the defaults span the standard
/// tuning ranges.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    pub lr: Vec<f64>,
    pub reg_lambda: Vec<f64>,
    pub n_layers: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lr: vec![1e-1, 1e-2, 1e-3, 1e-4],
            reg_lambda: vec![1e-1, 1e-2, 1e-3, 1e-4],
            n_layers: vec![1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub reg_lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adaptive_loss: bool,
    pub fused_loss_weight: f64,
    /// Differentiate through the adaptive weights instead of freezing them
    /// per step.
    pub adaptive_weight_grad: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            reg_lambda: 1e-4,
            batch_size: 2048,
            max_epochs: 1000,
            patience: 20,
            seed: 0,
            adaptive_loss: true,
            fused_loss_weight: 1.0,
            adaptive_weight_grad: false,
            grid: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.reg_lambda < 0.0 {
            return Err(Error::Config("reg_lambda must be >= 0".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.fused_loss_weight < 0.0 {
            return Err(Error::Config("fused_loss_weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// Uniform triplet sampler over the training pairs with rejection-sampled
/// negatives.
pub struct TripletSampler {
    pairs: Vec<(usize, usize)>,
    pair_set: HashSet<(usize, usize)>,
    degree: Vec<usize>,
    n_items: usize,
}

impl TripletSampler {
    pub fn new(train: &InteractionTable) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("no training pairs to sample from".into()));
        }
        let mut degree = vec![0usize; train.n_users()];
        for &(u, _) in train.pairs() {
            degree[u] += 1;
        }
        Ok(Self {
            pairs: train.pairs().to_vec(),
            pair_set: train.pair_set(),
            degree,
            n_items: train.n_items(),
        })
    }

    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<Triplet>> {
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let (u, p) = self.pairs[rng.gen_range(0..self.pairs.len())];
            if self.degree[u] >= self.n_items {
                return Err(Error::NoNegativeAvailable(u));
            }
            let n = loop {
                let cand = rng.gen_range(0..self.n_items);
                if !self.pair_set.contains(&(u, cand)) {
                    break cand;
                }
            };
            out.push(Triplet { u, p, n });
        }
        Ok(out)
    }
}

/// One-off sampling helper; prefer [`TripletSampler`] inside loops.
pub fn sample_triplets(
    train: &InteractionTable,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Triplet>> {
    TripletSampler::new(train)?.sample(batch_size, rng)
}

/// w_m = 1 - softmax(gaps)_m, computed with max subtraction. Needs at
/// least two modalities; with one the weight would be identically zero.
pub fn adaptive_weights(gaps: &[f64]) -> Result<Vec<f64>> {
    if gaps.len() < 2 {
        return Err(Error::Config(format!(
            "adaptive weights need >= 2 modalities, got {}",
            gaps.len()
        )));
    }
    if gaps.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "adaptive weight input gaps".into(),
            triplet: None,
        });
    }
    let m = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = gaps.iter().map(|g| (g - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| 1.0 - e / z).collect())
}

/// The assembled loss graph for one batch, with detached values for logging.
pub struct BatchLoss {
    pub root: NodeId,
    pub loss: f64,
    /// Ranking gaps on the fused embedding, one per triplet.
    pub fused_gaps: NodeId,
    /// Per-modality ranking gaps (empty when the adaptive term is off).
    pub modality_gaps: Vec<NodeId>,
}

fn check_gaps_finite(
    trace: &ForwardTrace,
    gaps: NodeId,
    triplets: &[(usize, usize, usize)],
    context: &str,
) -> Result<()> {
    let v = trace.tape.value(gaps);
    for (b, &t) in triplets.iter().enumerate() {
        if !v.get(b, 0).is_finite() {
            return Err(Error::NonFinite {
                context: context.into(),
                triplet: Some(t),
            });
        }
    }
    Ok(())
}

/// Record the batch loss on the trace's tape and return its root node.
pub fn build_loss(
    trace: &mut ForwardTrace,
    tcfg: &TrainConfig,
    triplets: &[Triplet],
) -> Result<BatchLoss> {
    if triplets.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let raw: Arc<Vec<(usize, usize, usize)>> =
        Arc::new(triplets.iter().map(|t| (t.u, t.p, t.n)).collect());
    let n_users = trace.n_users;
    let n_modalities = trace.e_bar.len();

    let fused_gaps = trace.tape.pair_gaps(trace.e_final, raw.clone(), n_users)?;
    check_gaps_finite(trace, fused_gaps, &raw, "fused ranking gap")?;
    let fused_term = trace.tape.neg_log_sigmoid_sum(fused_gaps)?;

    let mut data_terms: Vec<NodeId> = Vec::new();
    let mut modality_gaps = Vec::new();
    if tcfg.adaptive_loss {
        if n_modalities < 2 {
            return Err(Error::Config(
                "the adaptive ranking term needs >= 2 modalities; \
                 provide feature matrices or disable it"
                    .into(),
            ));
        }
        for &e_bar in &trace.e_bar {
            let gaps = trace.tape.pair_gaps(e_bar, raw.clone(), n_users)?;
            check_gaps_finite(trace, gaps, &raw, "modality ranking gap")?;
            modality_gaps.push(gaps);
        }
        let weighted_sum = if tcfg.adaptive_weight_grad {
            // differentiate through the weights: w = 1 - softmax over the
            // modality axis, per triplet
            let stacked = trace.tape.concat_cols(modality_gaps.clone())?;
            let sm = trace.tape.softmax_rows(stacked);
            let w = trace.tape.affine(sm, -1.0, 1.0);
            let prod = trace.tape.mul(w, stacked)?;
            trace.tape.row_sum(prod)
        } else {
            // freeze the weights at their current values
            let mut weights = vec![DenseMatrix::zeros(triplets.len(), 1); n_modalities];
            for b in 0..triplets.len() {
                let gap_vals: Vec<f64> = modality_gaps
                    .iter()
                    .map(|&g| trace.tape.value(g).get(b, 0))
                    .collect();
                for (mi, w) in adaptive_weights(&gap_vals)?.into_iter().enumerate() {
                    weights[mi].set(b, 0, w);
                }
            }
            let parts: Vec<NodeId> = modality_gaps
                .iter()
                .zip(weights)
                .map(|(&g, w)| {
                    let wn = trace.tape.leaf(w);
                    trace.tape.mul(wn, g)
                })
                .collect::<Result<_>>()?;
            trace.tape.sum_list(parts)?
        };
        data_terms.push(trace.tape.neg_log_sigmoid_sum(weighted_sum)?);
        data_terms.push(trace.tape.affine(fused_term, tcfg.fused_loss_weight, 0.0));
    } else {
        data_terms.push(fused_term);
    }

    // L2 over touched embedding rows and all dense parameters
    let mut users: Vec<usize> = triplets.iter().map(|t| t.u).collect();
    users.sort_unstable();
    users.dedup();
    let users = Arc::new(users);
    let mut items: Vec<usize> = triplets.iter().flat_map(|t| [t.p, t.n]).collect();
    items.sort_unstable();
    items.dedup();
    let items = Arc::new(items);

    let mut reg_parts = Vec::new();
    for &ue in &trace.params.user_emb {
        reg_parts.push(trace.tape.sq_norm_rows(ue, users.clone())?);
    }
    reg_parts.push(trace.tape.sq_norm_rows(trace.params.item_id_emb, items.clone())?);
    for mlp in trace.params.mlps.iter().flatten() {
        for &t in mlp {
            reg_parts.push(trace.tape.sq_norm_full(t));
        }
    }
    reg_parts.push(trace.tape.sq_norm_full(trace.params.fusion_logits));
    let reg_sum = trace.tape.sum_list(reg_parts)?;
    let reg = trace.tape.affine(reg_sum, tcfg.reg_lambda, 0.0);

    data_terms.push(reg);
    let root = trace.tape.sum_list(data_terms)?;
    let loss = trace.tape.value(root).get(0, 0);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "batch loss".into(),
            triplet: None,
        });
    }
    Ok(BatchLoss {
        root,
        loss,
        fused_gaps,
        modality_gaps,
    })
}

/// Backward pass: gradients for every parameter tensor, aligned with
/// [`ModelParams::tensors`]. Parameters the loss never touched get zeros.
pub fn compute_gradients(trace: &ForwardTrace, root: NodeId) -> Result<Vec<DenseMatrix>> {
    let mut grads = trace.tape.backward(root)?;
    Ok(trace
        .params
        .flat()
        .into_iter()
        .map(|id| {
            grads.take(id).unwrap_or_else(|| {
                let (r, c) = trace.tape.value(id).shape();
                DenseMatrix::zeros(r, c)
            })
        })
        .collect())
}

/// Dense bias-corrected Adam.
pub struct AdamState {
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<DenseMatrix> = params
            .tensors()
            .iter()
            .map(|t| DenseMatrix::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[DenseMatrix], lr: f64) -> Result<()> {
        let tensors = params.tensors_mut();
        if tensors.len() != grads.len() {
            return Err(Error::DimMismatch(format!(
                "{} gradients for {} tensors",
                grads.len(),
                tensors.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((theta, g), (m, v)) in tensors
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..theta.len() {
                let gi = g.as_slice()[i];
                let mi = &mut m.as_mut_slice()[i];
                let vi = &mut v.as_mut_slice()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                theta.as_mut_slice()[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss per triplet over the epoch.
    pub loss: f64,
    pub val_recall_at_20: f64,
    pub val_ndcg_at_20: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    Diverged,
}

pub struct FitResult {
    pub params: ModelParams,
    pub best_epoch: usize,
    pub best_val_recall_at_20: f64,
    /// Validation Recall@20 of the untrained model, the bar any epoch must
    /// clear to become the checkpoint.
    pub untrained_val_recall_at_20: f64,
    pub log: Vec<EpochLog>,
    pub stop_reason: StopReason,
    /// kNN graphs in effect at the best epoch (None when disabled).
    pub uu_graph: Option<KnnGraph>,
    pub ii_graph: Option<KnnGraph>,
}

/// Train until validation Recall@20 stops improving.
pub fn fit(
    split: &DatasetSplit,
    features: &[FeatureMatrix],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<FitResult> {
    mcfg.validate()?;
    tcfg.validate()?;
    let train = &split.train;
    let (n_users, n_items) = (train.n_users(), train.n_items());
    let feature_dims: Vec<_> = features.iter().map(|f| (f.modality, f.dim())).collect();
    let mut params = ModelParams::init(n_users, n_items, &feature_dims, mcfg.d, tcfg.seed)?;
    let adj = adjacency_operator(n_users, n_items, train.pairs())?;
    let sampler = TripletSampler::new(train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    rng.set_stream(1); // keep sampling decoupled from the init draws

    let needs_knn = mcfg.use_uu || mcfg.use_ii;
    let mut homo = HomoOperators::none();

    let batches_per_epoch = train.pairs().len().div_ceil(tcfg.batch_size);

    // the untrained model is the baseline checkpoint
    if needs_knn {
        let (uu, ii) = rebuild_knn_graphs(&params, mcfg, features, &adj)?;
        homo = HomoOperators::from_graphs(mcfg, Some(uu), Some(ii));
    }
    let eval_model = |params: &ModelParams, homo: &HomoOperators| -> Result<(f64, f64)> {
        let trace = forward(params, mcfg, features, &adj, homo)?;
        let report = evaluate(trace.e_final_value(), train, &split.val, &[20])?;
        Ok((report.recall[&20], report.ndcg[&20]))
    };
    let (untrained_recall, _) = eval_model(&params, &homo)?;

    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut best_recall = untrained_recall;
    let mut best_graphs = (homo.uu_graph.clone(), homo.ii_graph.clone());
    let mut adam = AdamState::new(&params);
    let mut log = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=tcfg.max_epochs {
        let started = Instant::now();
        if needs_knn && mcfg.knn_refresh_interval > 0 && epoch > 1
            && (epoch - 1) % mcfg.knn_refresh_interval == 0
        {
            let (uu, ii) = rebuild_knn_graphs(&params, mcfg, features, &adj)?;
            homo = HomoOperators::from_graphs(mcfg, Some(uu), Some(ii));
        }

        let mut epoch_loss = 0.0;
        let mut n_triplets = 0usize;
        let mut diverged = false;
        for _ in 0..batches_per_epoch {
            let triplets = sampler.sample(tcfg.batch_size, &mut rng)?;
            let mut trace = forward(&params, mcfg, features, &adj, &homo)?;
            let batch = match build_loss(&mut trace, tcfg, &triplets) {
                Ok(b) => b,
                Err(Error::NonFinite { context, triplet }) => {
                    log::warn!(
                        "non-finite loss at epoch {epoch} ({context}, triplet {triplet:?}); \
                         stopping with the last good checkpoint"
                    );
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let grads = compute_gradients(&trace, batch.root)?;
            adam.step(&mut params, &grads, tcfg.lr)?;
            epoch_loss += batch.loss;
            n_triplets += triplets.len();
        }
        if !diverged && !params.all_finite() {
            log::warn!("parameters lost finiteness at epoch {epoch}; stopping");
            diverged = true;
        }
        if diverged {
            stop_reason = StopReason::Diverged;
            break;
        }

        let (val_recall, val_ndcg) = eval_model(&params, &homo)?;
        log.push(EpochLog {
            epoch,
            loss: epoch_loss / n_triplets as f64,
            val_recall_at_20: val_recall,
            val_ndcg_at_20: val_ndcg,
            seconds: started.elapsed().as_secs_f64(),
        });
        if val_recall > best_recall {
            best_recall = val_recall;
            best_epoch = epoch;
            best_params = params.clone();
            best_graphs = (homo.uu_graph.clone(), homo.ii_graph.clone());
        }
        if epoch - best_epoch >= tcfg.patience {
            stop_reason = StopReason::Patience;
            break;
        }
    }

    Ok(FitResult {
        params: best_params,
        best_epoch,
        best_val_recall_at_20: best_recall,
        untrained_val_recall_at_20: untrained_recall,
        log,
        stop_reason,
        uu_graph: best_graphs.0,
        ii_graph: best_graphs.1,
    })
}
