//! Two-stage training: embedding pretraining handoff, then joint
//! optimization of the group-level hinge loss plus the weighted
//! self-supervision loss with Adam.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_triplets, Dataset, Split, TripletBatch, TripletLevel};
use crate::error::{Error, Result};
use crate::graph::{pretrain, PretrainConfig, PretrainEpoch};
use crate::model::{BatchGraph, ComposerKind, GradBuffers, ModelParams};
use crate::ssl::{build_ssl_terms, make_pair, sample_relay_negatives};

/// Every hyperparameter of the pipeline. Defaults follow the standard setup:
/// d=64, L=3, gamma=0.3, mu=0.7, margins 0.5, lr=1e-3, batch 256, 5
/// negatives, rho=0.5, dropout 0.2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: ComposerKind,
    pub dim: usize,
    pub layers: usize,
    pub gamma: f64,
    pub mu: f64,
    pub margin_user: f64,
    pub margin_group: f64,
    pub margin_ssl: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub negatives: usize,
    pub rho: f64,
    pub dropout: f64,
    pub pretrain_epochs: usize,
    pub stage2_epochs: usize,
    pub use_social: bool,
    pub point_distance: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: ComposerKind::Geometric,
            dim: 64,
            layers: 3,
            gamma: 0.3,
            mu: 0.7,
            margin_user: 0.5,
            margin_group: 0.5,
            margin_ssl: 0.5,
            lr: 1e-3,
            batch_size: 256,
            negatives: 5,
            rho: 0.5,
            dropout: 0.2,
            pretrain_epochs: 200,
            stage2_epochs: 100,
            use_social: true,
            point_distance: false,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Validation("d must be >= 1".into()));
        }
        if self.gamma < 0.0 {
            return Err(Error::Validation("gamma must be >= 0".into()));
        }
        if self.mu < 0.0 {
            return Err(Error::Validation("mu must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation("dropout must be in [0, 1)".into()));
        }
        if !(0.0 < self.rho && self.rho <= 1.0) {
            return Err(Error::Validation("rho must be in (0, 1]".into()));
        }
        if self.negatives == 0 {
            return Err(Error::Validation("negatives must be >= 1".into()));
        }
        for (name, m) in [
            ("lambda", self.margin_user),
            ("lambda'", self.margin_group),
            ("lambda''", self.margin_ssl),
        ] {
            if m < 0.0 {
                return Err(Error::Validation(format!("margin {name} must be >= 0")));
            }
        }
        Ok(())
    }

    fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            dim: self.dim,
            layers: self.layers,
            margin: self.margin_user,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.pretrain_epochs,
            negatives: self.negatives,
            use_social: self.use_social,
        }
    }
}

/// Bias-corrected Adam moments (beta1 = 0.9, beta2 = 0.999, eps = 1e-8),
/// one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(sizes: &[usize]) -> AdamState {
        AdamState {
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over all tensors. Moments decay even where the gradient is
    /// zero.
    pub fn step(
        &mut self,
        params: &mut [&mut Vec<f64>],
        grads: &[&Vec<f64>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "adam state holds {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.m[i].len() || grads[i].len() != self.m[i].len() {
                return Err(Error::Dimension(format!(
                    "adam tensor {i}: state {}, param {}, grad {}",
                    self.m[i].len(),
                    p.len(),
                    grads[i].len()
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (i, param) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, g) in grads[i].iter().enumerate() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                param[k] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}

fn adam_for(model: &ModelParams) -> AdamState {
    let mut sizes = vec![
        model.embeddings.user.data.len(),
        model.embeddings.item.data.len(),
    ];
    sizes.extend(model.shared_slices().iter().map(|(_, s)| s.len()));
    AdamState::new(&sizes)
}

fn apply_step(
    model: &mut ModelParams,
    adam: &mut AdamState,
    grads: &GradBuffers,
    lr: f64,
) -> Result<()> {
    let grad_refs: Vec<&Vec<f64>> = std::iter::once(&grads.user.data)
        .chain(std::iter::once(&grads.item.data))
        .chain(grads.shared.iter())
        .collect();
    let mut params = model.all_slices_mut();
    adam.step(&mut params, &grad_refs, lr)
}

/// Group-level hinge loss `sum max(0, margin + d(G, v+) - d(G, v-))` with
/// gradients for item embeddings, member embeddings, and composer
/// parameters. Cubes are composed on the fly from current member
/// embeddings; the distance honors the model's point-distance flag.
pub fn group_loss(
    model: &ModelParams,
    batch: &TripletBatch,
    dataset: &Dataset,
) -> Result<(f64, GradBuffers)> {
    if batch.level != TripletLevel::Group {
        return Err(Error::Validation("group_loss needs a group-level batch".into()));
    }
    let mut graph = BatchGraph::new(model);
    let terms = build_group_terms(&mut graph, model, batch, dataset)?;
    let root = graph.total(terms);
    let loss = graph.tape.scalar(root);
    if !loss.is_finite() {
        return Err(Error::Numerical("group loss is not finite".into()));
    }
    let grads = graph.scatter(root)?;
    Ok((loss, grads))
}

/// Distance of the group-loss surface from its nearest non-differentiable
/// point (hinge activations, distance clamps, bounding min/max) at the
/// current parameters. Gradient checks use this to skip probes sitting on
/// a kink.
pub fn group_loss_kink_margin(
    model: &ModelParams,
    batch: &TripletBatch,
    dataset: &Dataset,
) -> Result<f64> {
    let mut graph = BatchGraph::new(model);
    let terms = build_group_terms(&mut graph, model, batch, dataset)?;
    let _ = graph.total(terms);
    Ok(graph.min_kink_margin())
}

pub(crate) fn build_group_terms(
    graph: &mut BatchGraph,
    model: &ModelParams,
    batch: &TripletBatch,
    dataset: &Dataset,
) -> Result<Vec<crate::autodiff::NodeId>> {
    let margin = model.config.margin_group;
    let mut terms = Vec::with_capacity(batch.triples.len());
    for &(group, pos, neg) in &batch.triples {
        let cube = graph.group_cube(dataset, group)?;
        let pos_node = graph.item(pos)?;
        let neg_node = graph.item(neg)?;
        let d_pos = graph.item_distance(cube, pos_node);
        let d_neg = graph.item_distance(cube, neg_node);
        terms.push(graph.hinge(margin, d_pos, d_neg));
    }
    Ok(terms)
}

/// Losses reported by one stage-two step, all batch sums.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub group: f64,
    pub ssl: f64,
    pub combined: f64,
}

/// One Adam step on `L_group + mu * L_self` over a group-level mini-batch.
///
/// Every distinct group in the batch contributes one self-supervision term:
/// a sampled overlapping partner when one exists, otherwise a
/// proportional-swap or proportional-imputation dummy chosen by coin flip.
/// Dropout is active on the deep layers during this call only.
pub fn stage2_step(
    model: &mut ModelParams,
    adam: &mut AdamState,
    batch: &TripletBatch,
    dataset: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    let cfg = model.config.clone();
    let dropout_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut graph = BatchGraph::with_dropout(model, cfg.dropout, Some(dropout_rng));

    let group_terms = build_group_terms(&mut graph, model, batch, dataset)?;
    let l_group = graph.total(group_terms);

    let mut ssl_terms = Vec::new();
    if cfg.mu > 0.0 {
        let mut seen = HashSet::new();
        for &(group, _, _) in &batch.triples {
            if !seen.insert(group) {
                continue;
            }
            let pair = make_pair(group, dataset, cfg.rho, rng)?;
            let negatives = sample_relay_negatives(&pair, dataset, rng)?;
            ssl_terms.extend(build_ssl_terms(&mut graph, model, &pair, &negatives, dataset)?);
        }
    }
    let l_ssl = graph.total(ssl_terms);
    let scaled = graph.tape.scale(l_ssl, cfg.mu);
    let combined = graph.tape.add(l_group, scaled);

    let losses = StepLosses {
        group: graph.tape.scalar(l_group),
        ssl: graph.tape.scalar(l_ssl),
        combined: graph.tape.scalar(combined),
    };
    if !losses.combined.is_finite() {
        return Err(Error::Numerical(format!(
            "stage-2 loss is not finite (group {}, ssl {})",
            losses.group, losses.ssl
        )));
    }
    let grads = graph.scatter(combined)?;
    apply_step(model, adam, &grads, cfg.lr)?;
    Ok(losses)
}

/// Per-epoch stage-two record; losses are means per triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Epoch {
    pub epoch: usize,
    pub group_loss: f64,
    pub ssl_loss: f64,
    pub combined_loss: f64,
    pub val_recall_at_10: Option<f64>,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub pretrain: Vec<PretrainEpoch>,
    pub stage2: Vec<Stage2Epoch>,
    pub checkpoint: Option<PathBuf>,
}

/// Versioned checkpoint: model, optimizer state, and progress. Serialized
/// as JSON (f64 values round-trip exactly).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub completed_epochs: usize,
    pub params: ModelParams,
    pub adam: AdamState,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let body = serde_json::to_string(checkpoint)
        .map_err(|e| Error::Validation(format!("serializing checkpoint: {e}")))?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&body)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Validation(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    Ok(ckpt)
}

fn epoch_seed(seed: u64, stage: u64, epoch: usize) -> u64 {
    // Mix so per-epoch streams are independent of each other and resumable.
    let mut x = seed ^ stage.wrapping_mul(0xd6e8_feb8_6659_fd93);
    x = x.wrapping_add((epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    x ^= x >> 32;
    x
}

/// Run Algorithm-style two-stage training: pretraining, then stage-two
/// epochs until the budget or until the relative combined-loss improvement
/// drops below 1e-4. A rolling checkpoint is written after every epoch when
/// `out_dir` is given. When validation pairs exist, the returned model is
/// the epoch snapshot with the best validation Recall@10; otherwise the
/// final state.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    let (table, pretrain_history) = pretrain(dataset, &config.pretrain_config(), config.seed)?;
    let model = ModelParams::new(config.clone(), table);
    let adam = adam_for(&model);
    run_stage2(dataset, model, adam, 0, pretrain_history, out_dir)
}

/// Continue stage-two training from a checkpoint. Per-epoch randomness is
/// derived from (seed, epoch), so the continuation reproduces exactly what
/// an uninterrupted run would have done.
pub fn resume(
    dataset: &Dataset,
    checkpoint: Checkpoint,
    out_dir: Option<&Path>,
) -> Result<(ModelParams, TrainReport)> {
    run_stage2(
        dataset,
        checkpoint.params,
        checkpoint.adam,
        checkpoint.completed_epochs,
        Vec::new(),
        out_dir,
    )
}

fn run_stage2(
    dataset: &Dataset,
    mut model: ModelParams,
    mut adam: AdamState,
    start_epoch: usize,
    pretrain_history: Vec<PretrainEpoch>,
    out_dir: Option<&Path>,
) -> Result<(ModelParams, TrainReport)> {
    let cfg = model.config.clone();
    let mut report = TrainReport {
        pretrain: pretrain_history,
        ..TrainReport::default()
    };
    let has_val = dataset.group_item.iter().any(|p| p.split == Split::Val);
    let mut best: Option<(f64, ModelParams)> = None;
    let mut prev_loss = f64::INFINITY;
    // Rolling per-epoch state for resuming; the selected model is written
    // separately at the end.
    let rolling_path = out_dir.map(|d| d.join("checkpoint_latest.json"));
    let final_path = out_dir.map(|d| d.join("checkpoint.json"));

    for epoch in start_epoch..cfg.stage2_epochs {
        let started = Instant::now();
        let seed = epoch_seed(cfg.seed, 2, epoch);
        let batch = sample_triplets(dataset, TripletLevel::Group, cfg.negatives, seed)?;
        let mut order: Vec<usize> = (0..batch.triples.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5353);
        order.shuffle(&mut shuffle_rng);
        let mut step_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7272);

        let mut sums = StepLosses {
            group: 0.0,
            ssl: 0.0,
            combined: 0.0,
        };
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mini = TripletBatch {
                level: TripletLevel::Group,
                triples: chunk.iter().map(|&i| batch.triples[i]).collect(),
            };
            let losses = stage2_step(&mut model, &mut adam, &mini, dataset, &mut step_rng)?;
            sums.group += losses.group;
            sums.ssl += losses.ssl;
            sums.combined += losses.combined;
        }

        let n = batch.triples.len().max(1) as f64;
        let combined_mean = sums.combined / n;
        let val_recall = if has_val {
            let r = crate::eval::evaluate(&model, dataset, &[10], Split::Val)?
                .overall
                .first()
                .map(|m| m.recall)
                .unwrap_or(0.0);
            Some(r)
        } else {
            None
        };
        report.stage2.push(Stage2Epoch {
            epoch,
            group_loss: sums.group / n,
            ssl_loss: sums.ssl / n,
            combined_loss: combined_mean,
            val_recall_at_10: val_recall,
            wall_secs: started.elapsed().as_secs_f64(),
        });

        if let Some(r) = val_recall {
            if best.as_ref().is_none_or(|(b, _)| r > *b) {
                best = Some((r, model.clone()));
            }
        }
        if let Some(path) = &rolling_path {
            save_checkpoint(
                &Checkpoint {
                    version: CHECKPOINT_VERSION,
                    completed_epochs: epoch + 1,
                    params: model.clone(),
                    adam: adam.clone(),
                },
                path,
            )?;
        }

        let improvement = (prev_loss - combined_mean) / prev_loss.abs().max(1e-12);
        if epoch > start_epoch && improvement < 1e-4 {
            break;
        }
        prev_loss = combined_mean;
    }

    let selected = match best {
        Some((_, m)) => m,
        None => model,
    };
    if let Some(path) = &final_path {
        save_checkpoint(
            &Checkpoint {
                version: CHECKPOINT_VERSION,
                completed_epochs: report.stage2.last().map_or(start_epoch, |e| e.epoch + 1),
                params: selected.clone(),
                adam,
            },
            path,
        )?;
        report.checkpoint = Some(path.clone());
    }
    Ok((selected, report))
}
