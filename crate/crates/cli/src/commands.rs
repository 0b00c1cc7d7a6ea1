//! The subcommand implementations. Each function takes its parsed clap
//! arguments and returns an error for runtime failures; usage problems are
//! clap's job. Machine-readable outputs land in the `--out` directory
//! under fixed names, human-readable progress goes to stderr via `log`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde_json::json;

use cohesion_core::checkpoint::{forward_from_checkpoint, load_checkpoint, save_checkpoint};
use cohesion_core::cmf::write_matrix;
use cohesion_core::data::{
    generate_synthetic, kcore_filter, load_features, load_interactions, load_prepared,
    split_dataset, write_prepared, FeatureMatrix, InteractionTable, Modality, PreparedDataset,
};
use cohesion_core::dense::DenseMatrix;
use cohesion_core::eval::{evaluate, sparsity_buckets, DEFAULT_BUCKET_EDGES};
use cohesion_core::model::ModelConfig;
use cohesion_core::train::{fit, StopReason, TrainConfig};

use crate::config::{flatten, resolve, FlatConfig};
use crate::manifest::{build_manifest, write_manifest};

pub fn parse_ratios(s: &str) -> std::result::Result<(f64, f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated fractions, e.g. 0.8,0.1,0.1".into());
    }
    let mut vals = [0.0f64; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p.trim().parse().map_err(|e| format!("bad fraction '{p}': {e}"))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().with_context(|| format!("bad integer '{p}'")))
        .collect()
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad number '{p}'")))
        .collect()
}

// ---------------------------------------------------------------------------
// prepare

#[derive(Args, Debug, Clone)]
pub struct PrepareArgs {
    /// Raw interactions TSV, one "user<TAB>item" per line.
    #[arg(long)]
    pub interactions: PathBuf,
    /// Item text features, CMF1, rows aligned with the raw item universe.
    #[arg(long)]
    pub features_textual: Option<PathBuf>,
    /// Item image features, CMF1, same alignment.
    #[arg(long)]
    pub features_visual: Option<PathBuf>,
    /// Iterative degree floor; 0 or 1 keeps everything.
    #[arg(long, default_value_t = 5)]
    pub kcore: usize,
    /// train,val,test fractions summing to 1.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_ratios)]
    pub ratios: (f64, f64, f64),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn realign_features(
    f: &FeatureMatrix,
    orig: &InteractionTable,
    filtered: &InteractionTable,
) -> Result<FeatureMatrix> {
    let mut m = DenseMatrix::zeros(filtered.n_items(), f.dim());
    for idx in 0..filtered.n_items() {
        let raw = filtered.item_id(idx);
        let orig_idx = orig
            .item_index(raw)
            .ok_or_else(|| anyhow!("item '{raw}' survived filtering but is not in the raw table"))?;
        m.row_mut(idx).copy_from_slice(f.matrix.row(orig_idx));
    }
    Ok(FeatureMatrix::new(f.modality, m))
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let table = load_interactions(&args.interactions)
        .with_context(|| format!("reading interactions from {}", args.interactions.display()))?;
    log::info!(
        "loaded {} interactions ({} users, {} items)",
        table.pairs().len(),
        table.n_users(),
        table.n_items()
    );
    let mut features = Vec::new();
    for (modality, path) in [
        (Modality::Textual, &args.features_textual),
        (Modality::Visual, &args.features_visual),
    ] {
        if let Some(p) = path {
            features.push(load_features(p, table.n_items(), modality)?);
        }
    }

    let filtered = if args.kcore >= 2 {
        let res = kcore_filter(&table, args.kcore);
        if res.emptied {
            log::warn!("{}-core filtering removed every interaction", args.kcore);
        }
        res.table
    } else {
        table.clone()
    };
    let features = features
        .iter()
        .map(|f| realign_features(f, &table, &filtered))
        .collect::<Result<Vec<_>>>()?;

    let split = split_dataset(&filtered, args.ratios, args.seed)?;
    let manifest = write_prepared(&args.out, &split, &features, args.kcore)?;
    log::info!(
        "prepared {} users, {} items, {} interactions ({} train / {} val / {} test) -> {}",
        manifest.n_users,
        manifest.n_items,
        manifest.n_interactions,
        manifest.train_pairs,
        manifest.val_pairs,
        manifest.test_pairs,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// synth

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub users: usize,
    #[arg(long, default_value_t = 200)]
    pub items: usize,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    /// Feature dimensionality per modality, e.g. "16,8" for text and image.
    #[arg(long, default_value = "16,8")]
    pub dims: String,
    #[arg(long, default_value_t = 10)]
    pub per_user: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_ratios)]
    pub ratios: (f64, f64, f64),
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let dims = parse_usize_list(&args.dims)?;
    let (table, features) = generate_synthetic(
        args.users,
        args.items,
        args.clusters,
        &dims,
        args.per_user,
        args.noise,
        args.seed,
    )?;
    let split = split_dataset(&table, args.ratios, args.seed)?;
    let manifest = write_prepared(&args.out, &split, &features, 0)?;
    log::info!(
        "synthesized {} users x {} items with {} planted clusters -> {}",
        manifest.n_users,
        manifest.n_items,
        args.clusters,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

/// Hyperparameter overrides shared by `train` and `grid`; every flag maps
/// onto one flat config key and wins over the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainOverrides {
    /// Flat dotted-key JSON config, or a manifest.json from a prior run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub reg_lambda: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Embedding width d.
    #[arg(long)]
    pub d: Option<usize>,
    /// Bipartite propagation depth L.
    #[arg(long)]
    pub n_layers: Option<usize>,
    /// Neighbor count for both homogeneous graphs.
    #[arg(long)]
    pub k: Option<usize>,
    /// weighted_sum or concat.
    #[arg(long)]
    pub fusion_mode: Option<String>,
    /// Rebuild the kNN graphs every N epochs (0 = build once).
    #[arg(long)]
    pub knn_refresh: Option<usize>,
    #[arg(long)]
    pub fused_loss_weight: Option<f64>,
    /// Skip refinement of the behavior (id) item embedding.
    #[arg(long)]
    pub no_refine_i: bool,
    /// Skip refinement of the textual item embedding.
    #[arg(long)]
    pub no_refine_t: bool,
    /// Skip refinement of the visual item embedding.
    #[arg(long)]
    pub no_refine_v: bool,
    /// Drop the user-user graph.
    #[arg(long)]
    pub no_uu: bool,
    /// Drop the item-item graph.
    #[arg(long)]
    pub no_ii: bool,
    /// Plain ranking loss on the fused score only.
    #[arg(long)]
    pub plain_bpr: bool,
    /// Comma list of the toggles above, e.g. "no-uu,no-ii".
    #[arg(long)]
    pub ablate: Option<String>,
}

impl TrainOverrides {
    pub fn to_flat(&self) -> Result<FlatConfig> {
        let mut out = FlatConfig::new();
        let mut set = |k: &str, v: serde_json::Value| {
            out.insert(k.to_string(), v);
        };
        if let Some(v) = self.seed {
            set("train.seed", json!(v));
        }
        if let Some(v) = self.lr {
            set("train.lr", json!(v));
        }
        if let Some(v) = self.reg_lambda {
            set("train.reg_lambda", json!(v));
        }
        if let Some(v) = self.batch_size {
            set("train.batch_size", json!(v));
        }
        if let Some(v) = self.max_epochs {
            set("train.max_epochs", json!(v));
        }
        if let Some(v) = self.patience {
            set("train.patience", json!(v));
        }
        if let Some(v) = self.fused_loss_weight {
            set("train.fused_loss_weight", json!(v));
        }
        if let Some(v) = self.d {
            set("model.d", json!(v));
        }
        if let Some(v) = self.n_layers {
            set("model.n_layers", json!(v));
        }
        if let Some(v) = self.k {
            set("model.k_uu", json!(v));
            set("model.k_ii", json!(v));
        }
        if let Some(v) = &self.fusion_mode {
            set("model.fusion_mode", json!(v));
        }
        if let Some(v) = self.knn_refresh {
            set("model.knn_refresh_interval", json!(v));
        }
        let mut toggles: Vec<&str> = Vec::new();
        if self.no_refine_i {
            toggles.push("no-refine-i");
        }
        if self.no_refine_t {
            toggles.push("no-refine-t");
        }
        if self.no_refine_v {
            toggles.push("no-refine-v");
        }
        if self.no_uu {
            toggles.push("no-uu");
        }
        if self.no_ii {
            toggles.push("no-ii");
        }
        if self.plain_bpr {
            toggles.push("plain-bpr");
        }
        let ablate_owned;
        if let Some(list) = &self.ablate {
            ablate_owned = list.clone();
            for t in ablate_owned.split(',') {
                let t = t.trim();
                if !t.is_empty() {
                    toggles.push(t);
                }
            }
        }
        for t in toggles {
            match t {
                "no-refine-i" => set("model.refine_behavior", json!(false)),
                "no-refine-t" => set("model.refine_textual", json!(false)),
                "no-refine-v" => set("model.refine_visual", json!(false)),
                "no-uu" => set("model.use_uu", json!(false)),
                "no-ii" => set("model.use_ii", json!(false)),
                "plain-bpr" => set("train.adaptive_loss", json!(false)),
                other => bail!("unknown ablation toggle '{other}'"),
            }
        }
        Ok(out)
    }
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Prepared dataset directory (from `prepare` or `synth`).
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for checkpoint, logs, metrics, and manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

pub struct TrainSummary {
    pub best_epoch: usize,
    pub val_recall_at_20: f64,
    pub val_ndcg_at_20: f64,
    pub diverged: bool,
}

/// Fit on the prepared data and write the run artifacts: checkpoint/,
/// train_log.csv, metrics_val.json. The validation report is computed from
/// the reloaded checkpoint, so a later `evaluate --split val` against the
/// same checkpoint reproduces metrics_val.json byte for byte.
pub fn run_training(
    data: &PreparedDataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    out: &Path,
) -> Result<TrainSummary> {
    std::fs::create_dir_all(out)?;
    let result = fit(&data.split, &data.features, mcfg, tcfg)?;

    let mut csv = String::from("epoch,loss,val_recall@20,val_ndcg@20,seconds\n");
    for row in &result.log {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.loss, row.val_recall_at_20, row.val_ndcg_at_20, row.seconds
        ));
    }
    std::fs::write(out.join("train_log.csv"), csv)?;

    let ckpt_dir = out.join("checkpoint");
    save_checkpoint(
        &ckpt_dir,
        &result.params,
        mcfg,
        result.best_epoch,
        result.best_val_recall_at_20,
        result.uu_graph.as_ref(),
        result.ii_graph.as_ref(),
    )?;

    let ckpt = load_checkpoint(&ckpt_dir)?;
    let trace = forward_from_checkpoint(&ckpt, &data.split.train, &data.features)?;
    let report = evaluate(trace.e_final_value(), &data.split.train, &data.split.val, &[10, 20])?;
    std::fs::write(
        out.join("metrics_val.json"),
        serde_json::to_string_pretty(&report)?,
    )?;

    log::info!(
        "stopped after epoch {} ({:?}); best epoch {} with val recall@20 {:.4}",
        result.log.last().map(|l| l.epoch).unwrap_or(0),
        result.stop_reason,
        result.best_epoch,
        report.recall[&20]
    );
    Ok(TrainSummary {
        best_epoch: result.best_epoch,
        val_recall_at_20: report.recall[&20],
        val_ndcg_at_20: report.ndcg[&20],
        diverged: result.stop_reason == StopReason::Diverged,
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let overrides = args.overrides.to_flat()?;
    let (mcfg, tcfg) = resolve(args.overrides.config.as_deref(), &overrides)?;
    let data = load_prepared(&args.data)
        .with_context(|| format!("loading prepared dataset from {}", args.data.display()))?;
    let summary = run_training(&data, &mcfg, &tcfg, &args.out)?;

    let status = if summary.diverged { "diverged" } else { "ok" };
    let manifest = build_manifest("train", status, flatten(&mcfg, &tcfg)?, &args.data)?;
    write_manifest(&args.out.join("manifest.json"), &manifest)?;
    if summary.diverged {
        bail!(
            "training diverged; the checkpoint holds the last improving state (epoch {})",
            summary.best_epoch
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Ranking cutoffs, comma-separated.
    #[arg(long, default_value = "10,20")]
    pub ks: String,
    /// Also write recall@20 per user-degree bucket.
    #[arg(long)]
    pub buckets: bool,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let data = load_prepared(&args.data)
        .with_context(|| format!("loading prepared dataset from {}", args.data.display()))?;
    let ckpt = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint from {}", args.checkpoint.display()))?;
    let eval_split = match args.split.as_str() {
        "val" => &data.split.val,
        "test" => &data.split.test,
        other => bail!("--split must be val or test, got '{other}'"),
    };
    let ks = parse_usize_list(&args.ks)?;
    let trace = forward_from_checkpoint(&ckpt, &data.split.train, &data.features)?;
    let report = evaluate(trace.e_final_value(), &data.split.train, eval_split, &ks)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(
        args.out.join(format!("metrics_{}.json", args.split)),
        serde_json::to_string_pretty(&report)?,
    )?;
    for k in &ks {
        log::info!(
            "{} recall@{k} {:.4} ndcg@{k} {:.4}",
            args.split,
            report.recall[k],
            report.ndcg[k]
        );
    }

    if args.buckets {
        let rows = sparsity_buckets(
            trace.e_final_value(),
            &data.split.train,
            eval_split,
            &DEFAULT_BUCKET_EDGES,
        )?;
        let mut csv = String::from("bucket,min_degree,max_degree,n_users,recall@20\n");
        for r in rows {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.label,
                r.min_degree,
                r.max_degree.map(|x| x.to_string()).unwrap_or_default(),
                r.n_users,
                r.recall_at_20.map(|x| x.to_string()).unwrap_or_default()
            ));
        }
        std::fs::write(args.out.join("buckets.csv"), csv)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// export

#[derive(Args, Debug, Clone)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_export(args: &ExportArgs) -> Result<()> {
    let data = load_prepared(&args.data)
        .with_context(|| format!("loading prepared dataset from {}", args.data.display()))?;
    let ckpt = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint from {}", args.checkpoint.display()))?;
    let trace = forward_from_checkpoint(&ckpt, &data.split.train, &data.features)?;
    std::fs::create_dir_all(&args.out)?;
    let e = trace.e_final_value();
    let nu = data.split.train.n_users();
    write_matrix(&args.out.join("emb_users.cmf"), &e.slice_rows(0, nu))?;
    write_matrix(&args.out.join("emb_items.cmf"), &e.slice_rows(nu, e.rows()))?;
    for (mi, m) in ckpt.params.modalities.iter().enumerate() {
        write_matrix(
            &args.out.join(format!("emb_modality_{}.cmf", m.name())),
            trace.e_bar_value(mi),
        )?;
    }
    log::info!(
        "exported {} user rows, {} item rows, {} modality tables",
        nu,
        e.rows() - nu,
        ckpt.params.modalities.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// grid

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    /// Parallel training workers.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Learning rates to sweep, comma-separated (default 1e-1..1e-4).
    #[arg(long)]
    pub grid_lr: Option<String>,
    /// Regularization strengths to sweep.
    #[arg(long)]
    pub grid_reg_lambda: Option<String>,
    /// Propagation depths to sweep.
    #[arg(long)]
    pub grid_n_layers: Option<String>,
}

struct GridRow {
    lr: f64,
    reg_lambda: f64,
    n_layers: usize,
    path: String,
    outcome: Result<TrainSummary>,
}

pub fn cmd_grid(args: &GridArgs) -> Result<()> {
    let mut overrides = args.overrides.to_flat()?;
    if let Some(s) = &args.grid_lr {
        overrides.insert("grid.lr".into(), json!(parse_f64_list(s)?));
    }
    if let Some(s) = &args.grid_reg_lambda {
        overrides.insert("grid.reg_lambda".into(), json!(parse_f64_list(s)?));
    }
    if let Some(s) = &args.grid_n_layers {
        overrides.insert("grid.n_layers".into(), json!(parse_usize_list(s)?));
    }
    let (mcfg, tcfg) = resolve(args.overrides.config.as_deref(), &overrides)?;
    let grid = tcfg.grid.clone().unwrap_or_default();
    if grid.lr.is_empty() || grid.reg_lambda.is_empty() || grid.n_layers.is_empty() {
        bail!("grid lists must be nonempty");
    }
    let data = load_prepared(&args.data)
        .with_context(|| format!("loading prepared dataset from {}", args.data.display()))?;
    std::fs::create_dir_all(&args.out)?;

    let mut cells = Vec::new();
    for &lr in &grid.lr {
        for &lam in &grid.reg_lambda {
            for &l in &grid.n_layers {
                cells.push((lr, lam, l));
            }
        }
    }
    log::info!("sweeping {} cells with {} worker(s)", cells.len(), args.jobs.max(1));

    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<GridRow>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..args.jobs.max(1) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= cells.len() {
                    break;
                }
                let (lr, lam, l) = cells[idx];
                let mut m = mcfg.clone();
                m.n_layers = l;
                let mut t = tcfg.clone();
                t.lr = lr;
                t.reg_lambda = lam;
                t.grid = None;
                let dir = args.out.join(format!("cell_{idx:03}"));
                let outcome = run_training(&data, &m, &t, &dir).and_then(|summary| {
                    let status = if summary.diverged { "diverged" } else { "ok" };
                    let manifest =
                        build_manifest("grid-cell", status, flatten(&m, &t)?, &args.data)?;
                    write_manifest(&dir.join("manifest.json"), &manifest)?;
                    Ok(summary)
                });
                if let Err(e) = &outcome {
                    log::warn!("cell {idx} (lr={lr}, reg={lam}, L={l}) failed: {e:#}");
                }
                rows.lock().unwrap()[idx] = Some(GridRow {
                    lr,
                    reg_lambda: lam,
                    n_layers: l,
                    path: dir.display().to_string(),
                    outcome,
                });
            });
        }
    });

    let mut rows: Vec<GridRow> = rows
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();
    rows.sort_by(|a, b| {
        let ka = a.outcome.as_ref().map(|s| s.val_recall_at_20).unwrap_or(f64::NEG_INFINITY);
        let kb = b.outcome.as_ref().map(|s| s.val_recall_at_20).unwrap_or(f64::NEG_INFINITY);
        kb.total_cmp(&ka)
            .then(a.lr.total_cmp(&b.lr))
            .then(a.reg_lambda.total_cmp(&b.reg_lambda))
            .then(a.n_layers.cmp(&b.n_layers))
    });

    let mut csv =
        String::from("lr,reg_lambda,n_layers,val_recall@20,val_ndcg@20,best_epoch,status,path\n");
    for r in &rows {
        match &r.outcome {
            Ok(s) => csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.lr,
                r.reg_lambda,
                r.n_layers,
                s.val_recall_at_20,
                s.val_ndcg_at_20,
                s.best_epoch,
                if s.diverged { "diverged" } else { "ok" },
                r.path
            )),
            Err(e) => csv.push_str(&format!(
                "{},{},{},,,,error: {},{}\n",
                r.lr,
                r.reg_lambda,
                r.n_layers,
                e.to_string().replace([',', '\n'], ";"),
                r.path
            )),
        }
    }
    std::fs::write(args.out.join("grid.csv"), csv)?;

    let best = rows
        .iter()
        .find(|r| r.outcome.is_ok())
        .ok_or_else(|| anyhow!("every grid cell failed"))?;
    let summary = best.outcome.as_ref().unwrap();
    let best_json: BTreeMap<&str, serde_json::Value> = [
        ("lr", json!(best.lr)),
        ("reg_lambda", json!(best.reg_lambda)),
        ("n_layers", json!(best.n_layers)),
        ("val_recall_at_20", json!(summary.val_recall_at_20)),
        ("path", json!(best.path)),
    ]
    .into_iter()
    .collect();
    std::fs::write(
        args.out.join("best.json"),
        serde_json::to_string_pretty(&best_json)?,
    )?;
    log::info!(
        "best cell: lr={} reg_lambda={} L={} with val recall@20 {:.4}",
        best.lr,
        best.reg_lambda,
        best.n_layers,
        summary.val_recall_at_20
    );
    Ok(())
}
