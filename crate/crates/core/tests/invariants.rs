//! Cross-module behavioral invariants: bounds the forward pass must respect,
//! gradient identities at special parameter settings, optimizer shrinkage,
//! and order-independence of evaluation. These complement the unit tests by
//! checking properties that span model, training, and evaluation together.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cohesion_core::data::{generate_synthetic, split_dataset, FeatureMatrix, Modality};
use cohesion_core::dense::DenseMatrix;
use cohesion_core::eval::evaluate;
use cohesion_core::model::{
    adjacency_operator, forward, HomoOperators, ModelConfig, ModelParams,
};
use cohesion_core::train::{
    build_loss, compute_gradients, fit, AdamState, TrainConfig, Triplet,
};
use cohesion_testkit as tk;

fn random_instance(
    n_users: usize,
    n_items: usize,
    dims: &[usize],
    seed: u64,
) -> (Vec<(usize, usize)>, Vec<FeatureMatrix>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for u in 0..n_users {
        // each user interacts with 2-4 distinct items
        let n = rng.gen_range(2..=4.min(n_items));
        let mut picked = Vec::new();
        while picked.len() < n {
            let i = rng.gen_range(0..n_items);
            if !picked.contains(&i) {
                picked.push(i);
            }
        }
        pairs.extend(picked.into_iter().map(|i| (u, i)));
    }
    let modalities = [Modality::Textual, Modality::Visual];
    let features = dims
        .iter()
        .zip(modalities)
        .map(|(&dim, m)| {
            let mut f = DenseMatrix::zeros(n_items, dim);
            for v in f.as_mut_slice() {
                *v = rng.gen_range(-1.0..1.0);
            }
            FeatureMatrix::new(m, f)
        })
        .collect();
    (pairs, features)
}

/// Every propagation hop scales a node's message by its cosine gate, so the
/// hop output row norm can exceed the pre-gate message norm by at most the
/// factor (1 + eps). Checked on dense reference intermediates, which the
/// engine is separately shown to match.
#[test]
fn propagation_gate_bounds_row_growth() {
    for seed in 0..8 {
        let (pairs, features) = random_instance(5, 7, &[3, 2], seed);
        let cfg = ModelConfig {
            d: 4,
            n_layers: 3,
            use_uu: false,
            use_ii: false,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(
            5,
            7,
            &[(Modality::Textual, 3), (Modality::Visual, 2)],
            cfg.d,
            seed,
        )
        .unwrap();
        let a = tk::dense_normalized_adjacency(5, 7, &pairs);

        for (mi, &m) in params.modalities.iter().enumerate() {
            // E0 exactly as the pipeline builds it
            let raw = if m == Modality::Behavior {
                tk::to_mat(&params.item_id_emb)
            } else {
                let mlp = params.mlps[mi].as_ref().unwrap();
                tk::mlp_ref(&features[mi - 1].matrix, mlp, cfg.leaky_slope)
            };
            let id_mat = tk::to_mat(&params.item_id_emb);
            let items = tk::refine_ref(&raw, &id_mat, cfg.eps);
            let mut e0 = tk::to_mat(&params.user_emb[mi]);
            e0.extend(items);

            let mut prev = e0.clone();
            for _ in 0..cfg.n_layers {
                let p = tk::matmul_ref(&a, &prev);
                let mut next = tk::zeros(12, cfg.d);
                for r in 0..12 {
                    let gate = tk::cosine_ref(&p[r], &e0[r]) + cfg.eps;
                    for c in 0..cfg.d {
                        next[r][c] = gate * p[r][c];
                    }
                    let norm_next: f64 = next[r].iter().map(|x| x * x).sum::<f64>().sqrt();
                    let norm_p: f64 = p[r].iter().map(|x| x * x).sum::<f64>().sqrt();
                    assert!(
                        norm_next <= (1.0 + cfg.eps) * norm_p + 1e-12,
                        "hop grew row {r} from {norm_p} to {norm_next}"
                    );
                }
                prev = next;
            }
        }
    }
}

#[test]
fn fused_output_is_invariant_to_logit_shifts() {
    let (pairs, features) = random_instance(6, 9, &[4, 3], 11);
    let cfg = ModelConfig {
        d: 4,
        n_layers: 2,
        use_uu: false,
        use_ii: false,
        ..ModelConfig::default()
    };
    let dims = [(Modality::Textual, 4), (Modality::Visual, 3)];
    let mut params = ModelParams::init(6, 9, &dims, cfg.d, 11).unwrap();
    params.fusion_logits.as_mut_slice().copy_from_slice(&[0.4, -1.3, 0.7]);
    let adj = adjacency_operator(6, 9, &pairs).unwrap();

    let base = forward(&params, &cfg, &features, &adj, &HomoOperators::none()).unwrap();
    for v in params.fusion_logits.as_mut_slice() {
        *v += 17.3;
    }
    let shifted = forward(&params, &cfg, &features, &adj, &HomoOperators::none()).unwrap();
    for (a, b) in base
        .e_final_value()
        .as_slice()
        .iter()
        .zip(shifted.e_final_value().as_slice())
    {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

/// With every parameter zeroed except identical per-modality user tables and
/// arbitrary fusion logits, all modality embeddings coincide bitwise, so the
/// fused output must equal any one of them: the attention weights sum to 1.
#[test]
fn attention_weights_sum_to_one() {
    let (pairs, features) = random_instance(5, 6, &[3, 3], 4);
    let cfg = ModelConfig {
        d: 3,
        n_layers: 1,
        use_uu: false,
        use_ii: false,
        ..ModelConfig::default()
    };
    let dims = [(Modality::Textual, 3), (Modality::Visual, 3)];
    let mut params = ModelParams::init(5, 6, &dims, cfg.d, 4).unwrap();
    for t in params.tensors_mut() {
        t.as_mut_slice().fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let user_rows: Vec<f64> = (0..5 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for table in &mut params.user_emb {
        table.as_mut_slice().copy_from_slice(&user_rows);
    }
    params.fusion_logits.as_mut_slice().copy_from_slice(&[0.3, -0.7, 0.2]);

    let adj = adjacency_operator(5, 6, &pairs).unwrap();
    let trace = forward(&params, &cfg, &features, &adj, &HomoOperators::none()).unwrap();
    let fused = trace.e_final_value();
    let one = trace.e_bar_value(0);
    for (a, b) in fused.as_slice().iter().zip(one.as_slice()) {
        assert!((a - b).abs() <= 1e-12, "fused {a} vs modality {b}");
    }
}

/// Same construction: when the modality embeddings are identical, moving
/// attention mass between them cannot change the loss, so the logits
/// gradient vanishes coordinatewise.
#[test]
fn fusion_logits_gradient_vanishes_when_modalities_agree() {
    let (pairs, features) = random_instance(5, 6, &[3, 3], 4);
    let cfg = ModelConfig {
        d: 3,
        n_layers: 1,
        use_uu: false,
        use_ii: false,
        ..ModelConfig::default()
    };
    let dims = [(Modality::Textual, 3), (Modality::Visual, 3)];
    let mut params = ModelParams::init(5, 6, &dims, cfg.d, 4).unwrap();
    for t in params.tensors_mut() {
        t.as_mut_slice().fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let user_rows: Vec<f64> = (0..5 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for table in &mut params.user_emb {
        table.as_mut_slice().copy_from_slice(&user_rows);
    }
    params.fusion_logits.as_mut_slice().copy_from_slice(&[0.3, -0.7, 0.2]);

    let adj = adjacency_operator(5, 6, &pairs).unwrap();
    let tcfg = TrainConfig {
        reg_lambda: 0.0,
        adaptive_loss: true,
        ..TrainConfig::default()
    };
    let triplets = vec![
        Triplet { u: 0, p: 0, n: 3 },
        Triplet { u: 2, p: 1, n: 5 },
        Triplet { u: 4, p: 2, n: 0 },
    ];
    let mut trace = forward(&params, &cfg, &features, &adj, &HomoOperators::none()).unwrap();
    let batch = build_loss(&mut trace, &tcfg, &triplets).unwrap();
    let grads = compute_gradients(&trace, batch.root).unwrap();
    let logits_index = params.tensors().len() - 1;
    let g = &grads[logits_index];
    let sum: f64 = g.as_slice().iter().sum();
    for v in g.as_slice() {
        assert!(v.abs() < 1e-9, "logit gradient {v} should vanish");
    }
    assert!(sum.abs() < 1e-9);
}

/// A batch whose every ranking gap is enormous carries no learning signal:
/// the sigmoid saturates and, with regularization off, every gradient is
/// numerically zero.
#[test]
fn saturated_batch_produces_no_gradient() {
    // Behavior-only model, plain loss.
    let cfg = ModelConfig {
        d: 2,
        n_layers: 1,
        refine_behavior: false,
        use_uu: false,
        use_ii: false,
        ..ModelConfig::default()
    };
    let mut params = ModelParams::init(1, 2, &[], cfg.d, 0).unwrap();
    params.user_emb[0].row_mut(0).copy_from_slice(&[100.0, 0.0]);
    params.item_id_emb.row_mut(0).copy_from_slice(&[5.0, 0.0]);
    params.item_id_emb.row_mut(1).copy_from_slice(&[-5.0, 0.0]);
    let adj = adjacency_operator(1, 2, &[(0, 0)]).unwrap();
    let tcfg = TrainConfig {
        reg_lambda: 0.0,
        adaptive_loss: false,
        ..TrainConfig::default()
    };
    let triplets = vec![Triplet { u: 0, p: 0, n: 1 }];
    let mut trace = forward(&params, &cfg, &[], &adj, &HomoOperators::none()).unwrap();
    let batch = build_loss(&mut trace, &tcfg, &triplets).unwrap();
    let grads = compute_gradients(&trace, batch.root).unwrap();
    for g in &grads {
        for v in g.as_slice() {
            assert!(v.abs() < 1e-6, "plain-loss gradient {v} above saturation bound");
        }
    }

    // Two modalities, adaptive loss: a zeroed MLP makes both item rows
    // identical in the textual channel, and huge matching user tables drive
    // every per-modality and fused gap far into saturation.
    let cfg = ModelConfig {
        d: 2,
        n_layers: 1,
        refine_behavior: false,
        use_uu: false,
        use_ii: false,
        ..ModelConfig::default()
    };
    let dims = [(Modality::Textual, 2)];
    let mut params = ModelParams::init(1, 2, &dims, cfg.d, 0).unwrap();
    params.user_emb[0].row_mut(0).copy_from_slice(&[100.0, 0.0]);
    params.user_emb[1].row_mut(0).copy_from_slice(&[100.0, 0.0]);
    params.item_id_emb.row_mut(0).copy_from_slice(&[5.0, 0.0]);
    params.item_id_emb.row_mut(1).copy_from_slice(&[-5.0, 0.0]);
    let mlp = params.mlps[1].as_mut().unwrap();
    mlp.w_in.as_mut_slice().fill(0.0);
    mlp.b_in.as_mut_slice().fill(0.0);
    mlp.w_out.as_mut_slice().fill(0.0);
    mlp.b_out.as_mut_slice().fill(0.0);
    let features = vec![FeatureMatrix::new(
        Modality::Textual,
        DenseMatrix::zeros(2, 2),
    )];
    let tcfg = TrainConfig {
        reg_lambda: 0.0,
        adaptive_loss: true,
        ..TrainConfig::default()
    };
    let triplets = vec![Triplet { u: 0, p: 0, n: 1 }];
    let mut trace = forward(&params, &cfg, &features, &adj, &HomoOperators::none()).unwrap();
    let e = trace.e_final_value();
    let gap: f64 = (0..2)
        .map(|c| e.row(0)[c] * (e.row(1)[c] - e.row(2)[c]))
        .sum();
    assert!(gap > 30.0, "construction should saturate the fused gap, got {gap}");
    let batch = build_loss(&mut trace, &tcfg, &triplets).unwrap();
    let grads = compute_gradients(&trace, batch.root).unwrap();
    for g in &grads {
        for v in g.as_slice() {
            assert!(v.abs() < 1e-6, "adaptive-loss gradient {v} above saturation bound");
        }
    }
}

/// With the data term absent, the regularizer's gradient is 2·lambda·theta
/// and Adam becomes pure shrinkage: the parameter moves toward zero every
/// step, at any lambda.
#[test]
fn pure_regularization_shrinks_parameters_toward_zero() {
    for lambda in [1e-2, 1e-1] {
        let mut params = ModelParams::init(1, 1, &[], 1, 0).unwrap();
        params.user_emb[0].as_mut_slice()[0] = 0.8;
        let mut adam = AdamState::new(&params);
        let lr = 0.01;
        let mut prev = 0.8f64;
        for step in 0..400 {
            let theta = params.user_emb[0].as_slice()[0];
            let mut grads: Vec<DenseMatrix> = params
                .tensors()
                .iter()
                .map(|t| DenseMatrix::zeros(t.rows(), t.cols()))
                .collect();
            grads[0].as_mut_slice()[0] = 2.0 * lambda * theta;
            adam.step(&mut params, &grads, lr).unwrap();
            let next = params.user_emb[0].as_slice()[0];
            if prev.abs() > 3.0 * lr {
                assert!(
                    next.abs() < prev.abs(),
                    "step {step}: |{next}| did not shrink from |{prev}| at lambda {lambda}"
                );
            }
            prev = next;
        }
        assert!(prev.abs() < 0.05, "lambda {lambda} left theta at {prev}");
    }
}

/// Mean epoch loss must drop by epoch 10 on planted-cluster data for every
/// seed, a scaled-down version of the learnability contract checked end to
/// end in the acceptance suite.
#[test]
fn loss_at_epoch_ten_is_below_epoch_one() {
    let (table, features) =
        generate_synthetic(100, 40, 3, &[8, 6], 6, 0.1, 7).unwrap();
    let split = split_dataset(&table, (0.6, 0.2, 0.2), 7).unwrap();
    let mcfg = ModelConfig {
        d: 16,
        n_layers: 1,
        k_uu: 5,
        k_ii: 5,
        ..ModelConfig::default()
    };
    for seed in 1..=3u64 {
        let tcfg = TrainConfig {
            lr: 0.05,
            batch_size: 256,
            max_epochs: 10,
            patience: 100,
            seed,
            ..TrainConfig::default()
        };
        let result = fit(&split, &features, &mcfg, &tcfg).unwrap();
        let first = result.log.first().unwrap().loss;
        let tenth = result.log.last().unwrap().loss;
        assert_eq!(result.log.len(), 10);
        assert!(
            tenth < first,
            "seed {seed}: epoch-10 loss {tenth} not below epoch-1 loss {first}"
        );
    }
}

/// Differentiating through the adaptive weights (instead of freezing them)
/// must still agree with finite differences of the matching reference loss.
#[test]
fn through_weight_gradients_pass_finite_differences() {
    let (pairs, features) = random_instance(3, 4, &[3, 2], 42);
    let mcfg = ModelConfig {
        d: 4,
        n_layers: 1,
        k_uu: 2,
        k_ii: 2,
        ..ModelConfig::default()
    };
    let tcfg = TrainConfig {
        adaptive_loss: true,
        adaptive_weight_grad: true,
        reg_lambda: 1e-3,
        ..TrainConfig::default()
    };
    let triplets = vec![
        Triplet { u: 0, p: 0, n: 2 },
        Triplet { u: 1, p: 1, n: 3 },
        Triplet { u: 2, p: 2, n: 0 },
    ];
    let report =
        tk::gradcheck(3, 4, &pairs, &features, &mcfg, &tcfg, &triplets, 5, 1e-5).unwrap();
    assert!(
        report.max_rel_err < 1e-4,
        "through-weight gradients off by {}",
        report.max_rel_err
    );
}

/// Turning refinement off must change the embeddings and still match the
/// dense reference under the same flags.
#[test]
fn refine_flags_are_live_and_reference_checked() {
    let (pairs, features) = random_instance(6, 8, &[4, 3], 21);
    let dims = [(Modality::Textual, 4), (Modality::Visual, 3)];
    let params = ModelParams::init(6, 8, &dims, 4, 21).unwrap();
    let adj = adjacency_operator(6, 8, &pairs).unwrap();
    let base_cfg = ModelConfig {
        d: 4,
        n_layers: 2,
        use_uu: false,
        use_ii: false,
        ..ModelConfig::default()
    };
    let off_cfg = ModelConfig {
        refine_behavior: false,
        refine_textual: false,
        refine_visual: false,
        ..base_cfg.clone()
    };

    let on = forward(&params, &base_cfg, &features, &adj, &HomoOperators::none()).unwrap();
    let off = forward(&params, &off_cfg, &features, &adj, &HomoOperators::none()).unwrap();
    let max_delta = on
        .e_final_value()
        .as_slice()
        .iter()
        .zip(off.e_final_value().as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_delta > 1e-6, "refinement flags had no effect");

    let rf = tk::reference_forward(&params, &off_cfg, &features, &pairs, None, None);
    for (r, row) in rf.e_final.iter().enumerate() {
        for (c, want) in row.iter().enumerate() {
            let got = off.e_final_value().row(r)[c];
            assert!((got - want).abs() <= 1e-10, "({r},{c}): {got} vs {want}");
        }
    }
}

/// The evaluation mean may not depend on which index a user happens to
/// occupy: relabeling users (and carrying their embedding rows along) must
/// reproduce the metrics to addition-order precision.
#[test]
fn evaluation_mean_is_independent_of_user_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n_users = 12;
    let n_items = 30;
    let mut train_pairs = Vec::new();
    let mut val_pairs = Vec::new();
    for u in 0..n_users {
        let mut pool: Vec<usize> = (0..n_items).collect();
        for _ in 0..4 {
            let i = pool.swap_remove(rng.gen_range(0..pool.len()));
            train_pairs.push((u, i));
        }
        for _ in 0..2 {
            let i = pool.swap_remove(rng.gen_range(0..pool.len()));
            val_pairs.push((u, i));
        }
    }
    // enumerate the full universe in index order so table indices match ours
    let mut raw: Vec<(String, String)> = (0..n_items).map(|i| ("u0".into(), format!("i{i}"))).collect();
    raw.extend((1..n_users).map(|u| (format!("u{u}"), "i0".into())));
    let table = cohesion_core::data::InteractionTable::from_raw_pairs(raw);
    let mut emb = DenseMatrix::zeros(n_users + n_items, 8);
    for v in emb.as_mut_slice() {
        *v = rng.gen_range(-1.0..1.0);
    }

    let base = evaluate(
        &emb,
        &table.with_pairs(train_pairs.clone()),
        &table.with_pairs(val_pairs.clone()),
        &[10, 20],
    )
    .unwrap();

    // relabel: user u takes index perm[u]
    let mut perm: Vec<usize> = (0..n_users).collect();
    for i in (1..n_users).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    let relabel = |pairs: &[(usize, usize)]| -> Vec<(usize, usize)> {
        pairs.iter().map(|&(u, i)| (perm[u], i)).collect()
    };
    let mut emb_perm = emb.clone();
    for (u, &pu) in perm.iter().enumerate().take(n_users) {
        emb_perm.row_mut(pu).copy_from_slice(emb.row(u));
    }
    let permuted = evaluate(
        &emb_perm,
        &table.with_pairs(relabel(&train_pairs)),
        &table.with_pairs(relabel(&val_pairs)),
        &[10, 20],
    )
    .unwrap();

    for k in [10usize, 20] {
        assert!((base.recall[&k] - permuted.recall[&k]).abs() <= 1e-12);
        assert!((base.ndcg[&k] - permuted.ndcg[&k]).abs() <= 1e-12);
    }
    assert_eq!(base.n_eval_users, permuted.n_eval_users);
}
