//! Slow, obvious reference implementations of everything the engine
//! computes, for use in tests only.
//!
//! The main crate's kernels are sparse, taped, and parallel; the versions
//! here are nested loops over `Vec<Vec<f64>>` with no shared code path, so
//! agreement between the two is meaningful evidence of correctness. The
//! module also carries a central-difference gradient harness that checks
//! the analytic backward pass against numerical differentiation of the
//! reference loss.

use std::collections::HashSet;

use cohesion_core::data::{FeatureMatrix, Modality};
use cohesion_core::dense::DenseMatrix;
use cohesion_core::graph::KnnGraph;
use cohesion_core::model::{
    adjacency_operator, forward, rebuild_knn_graphs, FusionMode, HomoOperators, ModelConfig,
    ModelParams,
};
use cohesion_core::train::{build_loss, compute_gradients, TrainConfig, Triplet};
use cohesion_core::Result;

/// Row-major dense matrix as plain nested vectors.
pub type Mat = Vec<Vec<f64>>;

pub fn zeros(rows: usize, cols: usize) -> Mat {
    vec![vec![0.0; cols]; rows]
}

pub fn to_mat(d: &DenseMatrix) -> Mat {
    (0..d.rows()).map(|r| d.row(r).to_vec()).collect()
}

pub fn matmul_ref(a: &Mat, b: &Mat) -> Mat {
    let (n, m) = (a.len(), b.len());
    let p = b[0].len();
    let mut out = zeros(n, p);
    for r in 0..n {
        for c in 0..p {
            let mut acc = 0.0;
            for k in 0..m {
                acc += a[r][k] * b[k][c];
            }
            out[r][c] = acc;
        }
    }
    out
}

pub fn cosine_ref(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// -log(sigmoid(z)) in a form that never overflows.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    softplus(-z)
}

// ---------------------------------------------------------------------------
// graph references

/// Bipartite adjacency with symmetric degree normalization, built densely.
/// Every stored entry becomes 1/sqrt(deg_row * deg_col).
pub fn dense_normalized_adjacency(n_users: usize, n_items: usize, pairs: &[(usize, usize)]) -> Mat {
    let n = n_users + n_items;
    let mut a = zeros(n, n);
    for &(u, i) in pairs {
        a[u][n_users + i] += 1.0;
        a[n_users + i][u] += 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let mut out = zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            if a[r][c] != 0.0 {
                out[r][c] = 1.0 / (deg[r] * deg[c]).sqrt();
            }
        }
    }
    out
}

/// All-pairs cosine top-k, quadratic and direct. Neighbors come back
/// sorted by index, ties on similarity broken toward the lower index.
pub fn brute_force_knn(rows: &Mat, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = rows.len();
    let k = k.min(n.saturating_sub(1));
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        let mut sims: Vec<(usize, f64)> = (0..n)
            .filter(|&c| c != r)
            .map(|c| (c, cosine_ref(&rows[r], &rows[c])))
            .collect();
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        sims.truncate(k);
        sims.sort_by_key(|&(c, _)| c);
        out.push(sims);
    }
    out
}

/// Repeatedly delete every pair whose user or item currently has degree
/// < k until nothing changes; returns the survivors in input order.
pub fn naive_kcore(
    n_users: usize,
    n_items: usize,
    pairs: &[(usize, usize)],
    k: usize,
) -> Vec<(usize, usize)> {
    let mut alive: Vec<(usize, usize)> = pairs.to_vec();
    loop {
        let mut udeg = vec![0usize; n_users];
        let mut ideg = vec![0usize; n_items];
        for &(u, i) in &alive {
            udeg[u] += 1;
            ideg[i] += 1;
        }
        let next: Vec<(usize, usize)> = alive
            .iter()
            .copied()
            .filter(|&(u, i)| udeg[u] >= k && ideg[i] >= k)
            .collect();
        if next.len() == alive.len() {
            return alive;
        }
        alive = next;
    }
}

/// Dense user-side propagation matrix: per row, softmax (with max
/// subtraction) over the retained neighbor similarities.
pub fn user_prop_dense(knn: &KnnGraph) -> Mat {
    let mut out = zeros(knn.n, knn.n);
    for (r, nbrs) in knn.neighbors.iter().enumerate() {
        if nbrs.is_empty() {
            continue;
        }
        let max = nbrs.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = nbrs.iter().map(|&(_, s)| (s - max).exp()).sum();
        for &(c, s) in nbrs {
            out[r][c] = (s - max).exp() / z;
        }
    }
    out
}

/// Dense item-side propagation matrix: raw retained similarities, with an
/// optional L1 row normalization.
pub fn item_prop_dense(knn: &KnnGraph, row_normalize: bool) -> Mat {
    let mut out = zeros(knn.n, knn.n);
    for (r, nbrs) in knn.neighbors.iter().enumerate() {
        let denom = if row_normalize {
            let s: f64 = nbrs.iter().map(|&(_, s)| s.abs()).sum();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        } else {
            1.0
        };
        for &(c, s) in nbrs {
            out[r][c] = s / denom;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// metric references

pub fn reference_recall(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

pub fn reference_ndcg(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().take(k).enumerate() {
        if relevant.contains(item) {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal: f64 = (0..k.min(relevant.len()))
        .map(|pos| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    dcg / ideal
}

// ---------------------------------------------------------------------------
// model reference

pub struct ReferenceForward {
    /// Per-modality propagated sums, users stacked above items.
    pub e_bar: Vec<Mat>,
    /// Fused embedding before homogeneous enhancement.
    pub fused: Mat,
    /// Final embedding.
    pub e_final: Mat,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn mlp_ref(feat: &DenseMatrix, mlp: &cohesion_core::model::MlpParams, slope: f64) -> Mat {
    let n = feat.rows();
    let hidden_dim = mlp.w_in.cols();
    let out_dim = mlp.w_out.cols();
    let mut out = zeros(n, out_dim);
    for (i, out_row) in out.iter_mut().enumerate() {
        let mut hidden = vec![0.0; hidden_dim];
        for (h, hv) in hidden.iter_mut().enumerate() {
            let mut acc = mlp.b_in.get(0, h);
            for c in 0..feat.cols() {
                acc += feat.get(i, c) * mlp.w_in.get(c, h);
            }
            *hv = leaky(acc, slope);
        }
        for (j, ov) in out_row.iter_mut().enumerate() {
            let mut acc = mlp.b_out.get(0, j);
            for (h, hv) in hidden.iter().enumerate() {
                acc += hv * mlp.w_out.get(h, j);
            }
            *ov = acc;
        }
    }
    out
}

pub fn refine_ref(x: &Mat, y: &Mat, eps: f64) -> Mat {
    x.iter()
        .zip(y)
        .map(|(xr, yr)| {
            xr.iter()
                .zip(yr)
                .map(|(&a, &b)| (0.5 * (a * a + b * b) + eps).abs().sqrt())
                .collect()
        })
        .collect()
}

fn add_mat(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(ar, br)| ar.iter().zip(br).map(|(x, y)| x + y).collect())
        .collect()
}

fn softmax_row(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// The whole forward pass, transcribed directly from the architecture's
/// defining formulas with dense arithmetic.
pub fn reference_forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    features: &[FeatureMatrix],
    pairs: &[(usize, usize)],
    uu: Option<&KnnGraph>,
    ii: Option<&KnnGraph>,
) -> ReferenceForward {
    let (nu, ni) = (params.n_users(), params.n_items());
    let n = nu + ni;
    let a_tilde = dense_normalized_adjacency(nu, ni, pairs);

    let mut e_bars: Vec<Mat> = Vec::new();
    for (mi, &m) in params.modalities.iter().enumerate() {
        // item block: id table for behavior, transformed features otherwise
        let raw = if m == Modality::Behavior {
            to_mat(&params.item_id_emb)
        } else {
            let mlp = params.mlps[mi].as_ref().expect("feature modality has an MLP");
            mlp_ref(&features[mi - 1].matrix, mlp, cfg.leaky_slope)
        };
        let id_mat = to_mat(&params.item_id_emb);
        let item_block = if cfg.refine_enabled(m) {
            refine_ref(&raw, &id_mat, cfg.eps)
        } else {
            raw
        };
        let mut e0 = to_mat(&params.user_emb[mi]);
        e0.extend(item_block);

        let mut layers = vec![e0.clone()];
        let mut cur = e0.clone();
        for _ in 0..cfg.n_layers {
            let p = matmul_ref(&a_tilde, &cur);
            let mut gated = zeros(n, p[0].len());
            for r in 0..n {
                let c = cosine_ref(&p[r], &e0[r]);
                for (g, &pv) in gated[r].iter_mut().zip(&p[r]) {
                    *g = (c + cfg.eps) * pv;
                }
            }
            layers.push(gated.clone());
            cur = gated;
        }
        let mut e_bar = layers[0].clone();
        for layer in &layers[1..] {
            e_bar = add_mat(&e_bar, layer);
        }
        e_bars.push(e_bar);
    }

    let alpha = softmax_row(params.fusion_logits.row(0));
    let fused: Mat = match cfg.fusion_mode {
        FusionMode::WeightedSum => {
            let d = e_bars[0][0].len();
            let mut out = zeros(n, d);
            for (mi, e_bar) in e_bars.iter().enumerate() {
                for r in 0..n {
                    for c in 0..d {
                        out[r][c] += alpha[mi] * e_bar[r][c];
                    }
                }
            }
            out
        }
        FusionMode::Concat => (0..n)
            .map(|r| {
                let mut row = Vec::new();
                for (mi, e_bar) in e_bars.iter().enumerate() {
                    row.extend(e_bar[r].iter().map(|&v| alpha[mi] * v));
                }
                row
            })
            .collect(),
    };

    let e_final = if !cfg.use_uu && !cfg.use_ii {
        fused.clone()
    } else {
        let fused_u: Mat = fused[..nu].to_vec();
        let fused_i: Mat = fused[nu..].to_vec();
        let user_block = if cfg.use_uu {
            let p_u = user_prop_dense(uu.expect("user graph required"));
            let mut a = fused_u.clone();
            for _ in 0..cfg.n_user_layers {
                a = add_mat(&a, &matmul_ref(&p_u, &a));
            }
            add_mat(&fused_u, &a)
        } else {
            fused_u
        };
        let item_block = if cfg.use_ii {
            let p_i = item_prop_dense(ii.expect("item graph required"), cfg.ii_row_normalize);
            let mut a = fused_i.clone();
            for _ in 0..cfg.n_item_layers {
                a = matmul_ref(&p_i, &a);
            }
            add_mat(&fused_i, &a)
        } else {
            fused_i
        };
        let mut out = user_block;
        out.extend(item_block);
        out
    };

    ReferenceForward {
        e_bar: e_bars,
        fused,
        e_final,
    }
}

// ---------------------------------------------------------------------------
// loss reference

pub fn reference_gaps(e: &Mat, n_users: usize, triplets: &[Triplet]) -> Vec<f64> {
    triplets
        .iter()
        .map(|t| {
            e[t.u]
                .iter()
                .zip(&e[n_users + t.p])
                .zip(&e[n_users + t.n])
                .map(|((&eu, &ep), &en)| eu * (ep - en))
                .sum()
        })
        .collect()
}

/// Per-triplet adaptive weights, 1 - softmax over the modality axis.
pub fn reference_adaptive_weights(rf: &ReferenceForward, n_users: usize, triplets: &[Triplet]) -> Vec<Vec<f64>> {
    let per_modality: Vec<Vec<f64>> = rf
        .e_bar
        .iter()
        .map(|e| reference_gaps(e, n_users, triplets))
        .collect();
    (0..triplets.len())
        .map(|b| {
            let gaps: Vec<f64> = per_modality.iter().map(|g| g[b]).collect();
            let sm = softmax_row(&gaps);
            sm.into_iter().map(|s| 1.0 - s).collect()
        })
        .collect()
}

/// The training objective evaluated on reference arithmetic. When
/// `frozen_weights` is given the adaptive weights are treated as constants
/// (the default stop-gradient semantics); otherwise they are recomputed
/// from the embeddings at hand.
#[allow(clippy::too_many_arguments)]
pub fn reference_loss(
    rf: &ReferenceForward,
    params: &ModelParams,
    n_users: usize,
    triplets: &[Triplet],
    tcfg: &TrainConfig,
    frozen_weights: Option<&[Vec<f64>]>,
) -> f64 {
    let fused_gaps = reference_gaps(&rf.e_final, n_users, triplets);
    let mut loss = 0.0;
    if tcfg.adaptive_loss {
        let per_modality: Vec<Vec<f64>> = rf
            .e_bar
            .iter()
            .map(|e| reference_gaps(e, n_users, triplets))
            .collect();
        let weights: Vec<Vec<f64>> = match frozen_weights {
            Some(w) => w.to_vec(),
            None => reference_adaptive_weights(rf, n_users, triplets),
        };
        for (b, w) in weights.iter().enumerate() {
            let z: f64 = per_modality.iter().zip(w).map(|(g, wm)| wm * g[b]).sum();
            loss += neg_log_sigmoid(z);
        }
        loss += tcfg.fused_loss_weight
            * fused_gaps.iter().map(|&g| neg_log_sigmoid(g)).sum::<f64>();
    } else {
        loss += fused_gaps.iter().map(|&g| neg_log_sigmoid(g)).sum::<f64>();
    }

    let users: HashSet<usize> = triplets.iter().map(|t| t.u).collect();
    let items: HashSet<usize> = triplets.iter().flat_map(|t| [t.p, t.n]).collect();
    let mut omega = 0.0;
    for ue in &params.user_emb {
        for &u in &users {
            omega += ue.row(u).iter().map(|x| x * x).sum::<f64>();
        }
    }
    for &i in &items {
        omega += params.item_id_emb.row(i).iter().map(|x| x * x).sum::<f64>();
    }
    for mlp in params.mlps.iter().flatten() {
        for t in [&mlp.w_in, &mlp.b_in, &mlp.w_out, &mlp.b_out] {
            omega += t.as_slice().iter().map(|x| x * x).sum::<f64>();
        }
    }
    omega += params.fusion_logits.as_slice().iter().map(|x| x * x).sum::<f64>();

    loss + tcfg.reg_lambda * omega
}

// ---------------------------------------------------------------------------
// finite-difference harness

pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub n_cells: usize,
}

/// Compare the engine's analytic gradients against central finite
/// differences of the reference loss, over every parameter cell.
///
/// The kNN graphs (when enabled) and the adaptive weights (in the default
/// stop-gradient mode) are frozen at the center point, matching what the
/// backward pass actually differentiates.
#[allow(clippy::too_many_arguments)]
pub fn gradcheck(
    n_users: usize,
    n_items: usize,
    pairs: &[(usize, usize)],
    features: &[FeatureMatrix],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    triplets: &[Triplet],
    seed: u64,
    h: f64,
) -> Result<GradCheckReport> {
    let feature_dims: Vec<_> = features.iter().map(|f| (f.modality, f.dim())).collect();
    let params = ModelParams::init(n_users, n_items, &feature_dims, mcfg.d, seed)?;
    let adj = adjacency_operator(n_users, n_items, pairs)?;

    let (homo, uu, ii) = if mcfg.use_uu || mcfg.use_ii {
        let (uu, ii) = rebuild_knn_graphs(&params, mcfg, features, &adj)?;
        (
            HomoOperators::from_graphs(mcfg, Some(uu.clone()), Some(ii.clone())),
            Some(uu),
            Some(ii),
        )
    } else {
        (HomoOperators::none(), None, None)
    };

    // analytic gradients at the center point
    let mut trace = forward(&params, mcfg, features, &adj, &homo)?;
    let batch = build_loss(&mut trace, tcfg, triplets)?;
    let analytic = compute_gradients(&trace, batch.root)?;

    // weights the stop-gradient loss holds constant, from the reference side
    let frozen = if tcfg.adaptive_loss && !tcfg.adaptive_weight_grad {
        let rf = reference_forward(&params, mcfg, features, pairs, uu.as_ref(), ii.as_ref());
        Some(reference_adaptive_weights(&rf, n_users, triplets))
    } else {
        None
    };

    let eval_loss = |p: &ModelParams| -> f64 {
        let rf = reference_forward(p, mcfg, features, pairs, uu.as_ref(), ii.as_ref());
        reference_loss(&rf, p, n_users, triplets, tcfg, frozen.as_deref())
    };

    let mut max_rel = 0.0f64;
    let mut n_cells = 0usize;
    for (ti, grad) in analytic.iter().enumerate() {
        let len = params.tensors()[ti].len();
        for ci in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].as_mut_slice()[ci] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].as_mut_slice()[ci] -= h;
            let fd = (eval_loss(&plus) - eval_loss(&minus)) / (2.0 * h);
            let a = grad.as_slice()[ci];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
            if rel > max_rel {
                max_rel = rel;
            }
            n_cells += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        n_cells,
    })
}
