//! Orchestration: Stage-1 pre-training, Stage-2 downstream training, the
//! single-stage ablation arm, and the four-arm ablation suite.

use crate::core_types::{Dataset, EmbeddingTable, IdKind, IdSpace, InteractionEvent, Split};
use crate::datagen::{build_latent_model, make_corpora, Corpora, GeneratorConfig};
use crate::error::{Error, Result};
use crate::eval::{auc, hit_at_k, logloss, EpochMetrics, HitEvalPlan, Stage};
use crate::loss_grad::{
    assemble_batch, bce_forward_backward, contrastive_backward, contrastive_forward, Temperature,
};
use crate::mat::Mat;
use crate::models::{
    ctr_backward, ctr_forward, DownstreamModel, EmbeddingMode, MlpParams, TwoTowerModel,
};
use crate::optimizers::{DenseAdam, ScalarAdagrad, SparseAdagrad};
use crate::rng::{stream_rng, substream_rng, Stream};
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Baseline,
    SingleStage,
    TwoStageFrozen,
    TwoStageFineTuned,
}

impl Arm {
    pub const ALL: [Arm; 4] = [
        Arm::Baseline,
        Arm::SingleStage,
        Arm::TwoStageFrozen,
        Arm::TwoStageFineTuned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::SingleStage => "single_stage",
            Arm::TwoStageFrozen => "two_stage_frozen",
            Arm::TwoStageFineTuned => "two_stage_finetuned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Arm::Baseline),
            "single_stage" | "single-stage" => Ok(Arm::SingleStage),
            "two_stage_frozen" | "frozen" => Ok(Arm::TwoStageFrozen),
            "two_stage_finetuned" | "finetune" => Ok(Arm::TwoStageFineTuned),
            _ => Err(Error::invalid(format!("unknown arm '{s}'"))),
        }
    }

    pub fn embedding_mode(self) -> EmbeddingMode {
        match self {
            Arm::Baseline | Arm::SingleStage => EmbeddingMode::Scratch,
            Arm::TwoStageFrozen => EmbeddingMode::Frozen,
            Arm::TwoStageFineTuned => EmbeddingMode::FineTune,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainLoss {
    Contrastive,
    Bce,
}

impl PretrainLoss {
    pub fn name(self) -> &'static str {
        match self {
            PretrainLoss::Contrastive => "contrastive",
            PretrainLoss::Bce => "bce",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(PretrainLoss::Contrastive),
            "bce" => Ok(PretrainLoss::Bce),
            _ => Err(Error::invalid(format!("unknown pretrain loss '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    /// Embedding dimension for both towers.
    pub dim: usize,
    pub init_scale: f64,
    /// Contrastive pre-training batch size (in-batch negatives come from here).
    pub batch_size: usize,
    /// Uniform random negatives per contrastive row.
    pub uniform_negatives: usize,
    /// Uniform negatives per positive for BCE objectives (pre-train baseline
    /// and the downstream CTR loss).
    pub bce_negatives: usize,
    /// Embedding Adagrad learning rate for contrastive pre-training.
    pub embedding_lr: f64,
    /// Embedding Adagrad learning rate for BCE pre-training. Tuned
    /// independently of `embedding_lr` so the loss comparison pits each
    /// objective at its own operating point rather than sharing one rate.
    pub bce_lr: f64,
    /// Embedding Adagrad learning rate for Stage-2 (downstream) training.
    /// Kept separate from `embedding_lr` because the downstream corpus is
    /// 10x smaller: the pre-train rate overwrites transferred embeddings
    /// within an epoch, while a gentler rate lets fine-tuning adapt them.
    pub downstream_embedding_lr: f64,
    pub embedding_weight_decay: f64,
    /// Per-row gradient L2 clip; 0 disables clipping.
    pub grad_clip: f64,
    pub temperature_lr: f64,
    pub mlp_lr: f64,
    pub mlp_hidden: [usize; 2],
    pub downstream_batch: usize,
    pub pretrain_epochs: u32,
    pub downstream_epochs: u32,
    pub pretrain_loss: PretrainLoss,
    /// Weight of the contrastive term in the single-stage joint loss.
    pub single_stage_lambda: f64,
    /// Cap on holdout positives used per Hit@K evaluation.
    pub eval_pairs: usize,
    pub n_candidates: usize,
    pub hit_k: usize,
    pub overfit_threshold: f64,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            generator: GeneratorConfig::default(),
            dim: 32,
            init_scale: 1.0,
            batch_size: 256,
            uniform_negatives: 128,
            bce_negatives: 4,
            embedding_lr: 0.02,
            bce_lr: 0.15,
            downstream_embedding_lr: 0.01,
            embedding_weight_decay: 0.0,
            grad_clip: 0.0,
            temperature_lr: 0.001,
            mlp_lr: 6e-5,
            mlp_hidden: [64, 32],
            downstream_batch: 512,
            pretrain_epochs: 5,
            downstream_epochs: 5,
            pretrain_loss: PretrainLoss::Contrastive,
            single_stage_lambda: 1.0,
            eval_pairs: 5000,
            n_candidates: 100,
            hit_k: 3,
            overfit_threshold: 0.005,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.dim == 0 || self.batch_size == 0 || self.downstream_batch == 0 {
            return Err(Error::invalid("dim and batch sizes must be >= 1"));
        }
        if self.pretrain_epochs == 0 || self.downstream_epochs == 0 {
            return Err(Error::invalid("epoch counts must be >= 1"));
        }
        if self.pretrain_epochs > 50 || self.downstream_epochs > 50 {
            return Err(Error::invalid("epoch counts above 50 are not supported"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.hit_k == 0 || self.n_candidates < self.hit_k {
            return Err(Error::invalid("need n_candidates >= hit_k >= 1"));
        }
        if self.eval_pairs == 0 {
            return Err(Error::invalid("eval_pairs must be >= 1"));
        }
        if self.embedding_lr <= 0.0
            || self.bce_lr <= 0.0
            || self.downstream_embedding_lr <= 0.0
            || self.mlp_lr <= 0.0
            || self.temperature_lr <= 0.0
        {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.single_stage_lambda < 0.0 {
            return Err(Error::invalid("single_stage_lambda must be >= 0"));
        }
        Ok(())
    }

    fn user_space(&self) -> IdSpace {
        IdSpace {
            kind: IdKind::User,
            cardinality: self.generator.n_users,
        }
    }

    fn item_space(&self) -> IdSpace {
        IdSpace {
            kind: IdKind::Item,
            cardinality: self.generator.n_items,
        }
    }

    fn fresh_tables(&self, seed: u64) -> Result<(EmbeddingTable, EmbeddingTable)> {
        Ok((
            EmbeddingTable::new(self.user_space(), self.dim, self.init_scale, seed)?,
            EmbeddingTable::new(self.item_space(), self.dim, self.init_scale, seed)?,
        ))
    }
}

// Epoch-stream tag offsets so pre-train, downstream, and the single-stage
// contrastive term never share a draw stream within one seed.
const PRETRAIN_TAG: u8 = 0;
const DOWNSTREAM_TAG: u8 = 100;
const SINGLE_STAGE_TAG: u8 = 200;

/// Scale a row gradient in place: weight decay toward zero plus optional
/// L2 norm clipping.
fn condition_grad(grad: &mut [f64], row: &[f64], weight_decay: f64, clip: f64) {
    if weight_decay > 0.0 {
        for (g, &w) in grad.iter_mut().zip(row) {
            *g += weight_decay * w;
        }
    }
    if clip > 0.0 {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > clip {
            let s = clip / norm;
            for g in grad.iter_mut() {
                *g *= s;
            }
        }
    }
}

fn accumulate_rows(map: &mut BTreeMap<u32, Vec<f64>>, ids: &[u32], grads: &Mat, scale: f64) {
    for (i, &id) in ids.iter().enumerate() {
        let g = grads.row(i);
        let slot = map
            .entry(id)
            .or_insert_with(|| vec![0.0; grads.cols]);
        for (s, &v) in slot.iter_mut().zip(g) {
            *s += scale * v;
        }
    }
}

fn finish_grads(
    map: &mut BTreeMap<u32, Vec<f64>>,
    table: &EmbeddingTable,
    weight_decay: f64,
    clip: f64,
) {
    if weight_decay == 0.0 && clip == 0.0 {
        return;
    }
    let mut row = vec![0.0f64; table.dim];
    for (&id, g) in map.iter_mut() {
        table.read_row_into(id, &mut row);
        condition_grad(g, &row, weight_decay, clip);
    }
}

fn shuffled_indices(n: usize, seed: u64, epoch_tag: u8) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..n as u32).collect();
    let mut rng = stream_rng(seed, Stream::EpochShuffle(epoch_tag));
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Fixed eval materials for one corpus: Hit@K candidate plan plus per-pair
/// negatives for AUC/logloss, both stable across epochs.
struct EvalSet {
    plan: HitEvalPlan,
    users: Vec<u32>,
    items: Vec<u32>,
    labels: Vec<u8>,
}

impl EvalSet {
    fn new(cfg: &ExperimentConfig, holdout: &Dataset, seed: u64) -> Result<Self> {
        let n = cfg.eval_pairs.min(holdout.len());
        if n == 0 {
            return Err(Error::invalid("holdout is empty"));
        }
        let pairs: Vec<(u32, u32)> = holdout.events[..n]
            .iter()
            .map(|e| (e.user_id, e.item_id))
            .collect();
        let plan = HitEvalPlan::new(&pairs, cfg.generator.n_items, cfg.n_candidates, seed)?;
        let mut users = Vec::with_capacity(n * (1 + cfg.bce_negatives));
        let mut items = Vec::with_capacity(n * (1 + cfg.bce_negatives));
        let mut labels = Vec::with_capacity(n * (1 + cfg.bce_negatives));
        for (idx, &(u, p)) in pairs.iter().enumerate() {
            users.push(u);
            items.push(p);
            labels.push(1);
            let mut rng = substream_rng(seed, Stream::EvalNegatives, idx as u64);
            for _ in 0..cfg.bce_negatives {
                users.push(u);
                items.push(rng.gen_range(0..cfg.generator.n_items));
                labels.push(0);
            }
        }
        Ok(EvalSet {
            plan,
            users,
            items,
            labels,
        })
    }
}

fn eval_two_tower(
    cfg: &ExperimentConfig,
    model: &TwoTowerModel,
    set: &EvalSet,
    arm: &str,
    seed: u64,
    epoch: u32,
) -> Result<EpochMetrics> {
    let hit = hit_at_k(
        |u, ids| {
            let uids = vec![u; ids.len()];
            model.score(&uids, ids).expect("eval ids are in range")
        },
        &set.plan,
        cfg.hit_k,
    )?;
    let scores = model.score(&set.users, &set.items)?;
    Ok(EpochMetrics {
        arm: arm.to_string(),
        stage: Stage::Pretrain,
        seed,
        epoch,
        split: Split::Holdout,
        hit_at_k: hit,
        auc: auc(&scores, &set.labels)?,
        logloss: logloss(&scores, &set.labels)?,
    })
}

fn eval_downstream(
    cfg: &ExperimentConfig,
    model: &DownstreamModel,
    set: &EvalSet,
    arm: &str,
    seed: u64,
    epoch: u32,
) -> Result<EpochMetrics> {
    let hit = hit_at_k(
        |u, ids| {
            let uids = vec![u; ids.len()];
            let (logits, _) = ctr_forward(model, &uids, ids).expect("eval ids are in range");
            logits
        },
        &set.plan,
        cfg.hit_k,
    )?;
    let (logits, _) = ctr_forward(model, &set.users, &set.items)?;
    Ok(EpochMetrics {
        arm: arm.to_string(),
        stage: Stage::Downstream,
        seed,
        epoch,
        split: Split::Holdout,
        hit_at_k: hit,
        auc: auc(&logits, &set.labels)?,
        logloss: logloss(&logits, &set.labels)?,
    })
}

pub struct PretrainResult {
    pub model: TwoTowerModel,
    pub metrics: Vec<EpochMetrics>,
    pub optimizer_steps: u64,
}

/// Stage 1: train the two-tower model on the broad pre-train corpus for
/// `pretrain_epochs` full passes, evaluating Hit@K on the pre-train holdout
/// at epoch 0 and after every epoch.
pub fn run_pretrain(
    cfg: &ExperimentConfig,
    corpora: &Corpora,
    loss: PretrainLoss,
    seed: u64,
) -> Result<PretrainResult> {
    cfg.validate()?;
    if corpora.pretrain.is_empty() {
        return Err(Error::invalid("pre-train corpus is empty"));
    }
    let (mut user_table, mut item_table) = cfg.fresh_tables(seed)?;
    let mut temp = Temperature::default();
    // Each pre-training loss gets its own tuned embedding rate: a rate
    // that lets the sampled softmax converge cleanly saturates BCE long
    // before the end of epoch 1, hiding its post-peak decline.
    let lr = match loss {
        PretrainLoss::Contrastive => cfg.embedding_lr,
        PretrainLoss::Bce => cfg.bce_lr,
    };
    let mut user_opt = SparseAdagrad::new(&user_table, lr, 1e-8)?;
    let mut item_opt = SparseAdagrad::new(&item_table, lr, 1e-8)?;
    let mut theta_opt = ScalarAdagrad::new(cfg.temperature_lr, 1e-8);

    let arm = format!("pretrain_{}", loss.name());
    let eval_set = EvalSet::new(cfg, &corpora.pretrain_holdout, seed)?;
    let mut metrics = Vec::new();
    let snapshot = |u: &EmbeddingTable, i: &EmbeddingTable, t: &Temperature| TwoTowerModel {
        user_table: u.clone(),
        item_table: i.clone(),
        temp: *t,
    };
    metrics.push(eval_two_tower(
        cfg,
        &snapshot(&user_table, &item_table, &temp),
        &eval_set,
        &arm,
        seed,
        0,
    )?);

    let events = &corpora.pretrain.events;
    let mut steps = 0u64;
    for epoch in 1..=cfg.pretrain_epochs {
        let tag = PRETRAIN_TAG + epoch as u8;
        let order = shuffled_indices(events.len(), seed, tag);
        let mut neg_rng = stream_rng(seed, Stream::BatchNegatives(tag));
        for chunk in order.chunks(cfg.batch_size) {
            let batch_events: Vec<InteractionEvent> =
                chunk.iter().map(|&i| events[i as usize]).collect();
            let mut user_grads: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
            let mut item_grads: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
            match loss {
                PretrainLoss::Contrastive => {
                    let batch = assemble_batch(
                        &batch_events,
                        &user_table,
                        &item_table,
                        cfg.uniform_negatives,
                        &mut neg_rng,
                    )?;
                    let (_, cache) = contrastive_forward(&batch, &temp)?;
                    let grad = contrastive_backward(&batch, &cache)?;
                    accumulate_rows(&mut user_grads, &batch.user_ids, &grad.d_user, 1.0);
                    accumulate_rows(&mut item_grads, &batch.pos_item_ids, &grad.d_pos, 1.0);
                    accumulate_rows(
                        &mut item_grads,
                        &batch.uniform_neg_item_ids,
                        &grad.d_uniform_neg,
                        1.0,
                    );
                    let mut theta = temp.theta();
                    theta_opt.step(&mut theta, grad.d_theta);
                    temp.set_theta(theta);
                }
                PretrainLoss::Bce => {
                    // Negatives are keyed by event index, not epoch: the BCE
                    // arm trains on a fixed dataset that later epochs revisit
                    // verbatim, which is what drives its one-epoch overfit.
                    let n_items = cfg.generator.n_items;
                    let mut user_ids = Vec::new();
                    let mut item_ids = Vec::new();
                    let mut labels = Vec::new();
                    for (&idx, e) in chunk.iter().zip(&batch_events) {
                        user_ids.push(e.user_id);
                        item_ids.push(e.item_id);
                        labels.push(1u8);
                        let mut ev_rng = substream_rng(
                            seed,
                            Stream::BatchNegatives(PRETRAIN_TAG),
                            idx as u64,
                        );
                        for _ in 0..cfg.bce_negatives {
                            user_ids.push(e.user_id);
                            item_ids.push(ev_rng.gen_range(0..n_items));
                            labels.push(0u8);
                        }
                    }
                    let u = user_table.lookup(&user_ids)?;
                    let v = item_table.lookup(&item_ids)?;
                    let (_, d_user, d_item) = bce_forward_backward(&u, &v, &labels)?;
                    accumulate_rows(&mut user_grads, &user_ids, &d_user, 1.0);
                    accumulate_rows(&mut item_grads, &item_ids, &d_item, 1.0);
                }
            }
            finish_grads(
                &mut user_grads,
                &user_table,
                cfg.embedding_weight_decay,
                cfg.grad_clip,
            );
            finish_grads(
                &mut item_grads,
                &item_table,
                cfg.embedding_weight_decay,
                cfg.grad_clip,
            );
            user_opt.step(&mut user_table, &user_grads)?;
            item_opt.step(&mut item_table, &item_grads)?;
            steps += 1;
        }
        metrics.push(eval_two_tower(
            cfg,
            &snapshot(&user_table, &item_table, &temp),
            &eval_set,
            &arm,
            seed,
            epoch,
        )?);
    }

    Ok(PretrainResult {
        model: TwoTowerModel::new(user_table, item_table, temp)?,
        metrics,
        optimizer_steps: steps,
    })
}

pub struct DownstreamResult {
    pub model: DownstreamModel,
    pub metrics: Vec<EpochMetrics>,
}

/// Mean BCE on raw logits; returns the per-logit gradient of the mean.
fn bce_on_logits(logits: &[f64], labels: &[u8]) -> (f64, Vec<f64>) {
    let inv = 1.0 / logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&s, &y) in logits.iter().zip(labels) {
        let y = y as f64;
        loss += s.max(0.0) - s * y + (-s.abs()).exp().ln_1p();
        let sig = if s >= 0.0 {
            1.0 / (1.0 + (-s).exp())
        } else {
            let e = s.exp();
            e / (1.0 + e)
        };
        grad.push((sig - y) * inv);
    }
    (loss * inv, grad)
}

/// Stage 2: train the downstream CTR model on the single-surface corpus.
///
/// `init` must be `None` for Baseline/SingleStage and a Stage-1 checkpoint
/// for the two-stage arms. SingleStage adds `lambda` times the contrastive
/// loss over the same batch's embeddings to the BCE objective.
pub fn run_downstream(
    cfg: &ExperimentConfig,
    corpora: &Corpora,
    init: Option<&TwoTowerModel>,
    arm: Arm,
    seed: u64,
) -> Result<DownstreamResult> {
    cfg.validate()?;
    if corpora.downstream_train.is_empty() {
        return Err(Error::invalid("downstream corpus is empty"));
    }
    let (user_table, item_table) = match (arm, init) {
        (Arm::Baseline | Arm::SingleStage, None) => cfg.fresh_tables(seed)?,
        (Arm::Baseline | Arm::SingleStage, Some(_)) => {
            return Err(Error::invalid(format!(
                "arm {} does not take a checkpoint",
                arm.name()
            )));
        }
        (Arm::TwoStageFrozen | Arm::TwoStageFineTuned, Some(ckpt)) => {
            if ckpt.user_table.dim != cfg.dim {
                return Err(Error::invalid(format!(
                    "checkpoint dim {} != configured dim {}",
                    ckpt.user_table.dim, cfg.dim
                )));
            }
            let mut u = ckpt.user_table.clone();
            let mut i = ckpt.item_table.clone();
            u.set_frozen(false);
            i.set_frozen(false);
            (u, i)
        }
        (Arm::TwoStageFrozen | Arm::TwoStageFineTuned, None) => {
            return Err(Error::invalid(format!(
                "arm {} requires a Stage-1 checkpoint",
                arm.name()
            )));
        }
    };

    let mlp = MlpParams::new(
        &[3 * cfg.dim, cfg.mlp_hidden[0], cfg.mlp_hidden[1], 1],
        seed,
    )?;
    let mut model = DownstreamModel::new(user_table, item_table, mlp, arm.embedding_mode())?;
    let trainable_embeddings = model.embedding_mode != EmbeddingMode::Frozen;
    let mut user_opt = SparseAdagrad::new(&model.user_table, cfg.downstream_embedding_lr, 1e-8)?;
    let mut item_opt = SparseAdagrad::new(&model.item_table, cfg.downstream_embedding_lr, 1e-8)?;
    let mut adam = DenseAdam::new(&model.mlp, cfg.mlp_lr, 0.9, 0.999, 1e-8);

    // Single-stage joint loss keeps its own learned temperature.
    let single_stage = arm == Arm::SingleStage && cfg.single_stage_lambda > 0.0;
    let mut temp = Temperature::default();
    let mut theta_opt = ScalarAdagrad::new(cfg.temperature_lr, 1e-8);

    let eval_set = EvalSet::new(cfg, &corpora.downstream_holdout, seed)?;
    let mut metrics = Vec::new();
    metrics.push(eval_downstream(cfg, &model, &eval_set, arm.name(), seed, 0)?);

    let events = &corpora.downstream_train.events;
    let n_items = cfg.generator.n_items;
    for epoch in 1..=cfg.downstream_epochs {
        let tag = DOWNSTREAM_TAG + epoch as u8;
        let order = shuffled_indices(events.len(), seed, tag);
        // Negatives are re-sampled every epoch from this stream.
        let mut neg_rng = stream_rng(seed, Stream::BatchNegatives(tag));
        let mut ss_rng = stream_rng(seed, Stream::BatchNegatives(SINGLE_STAGE_TAG + epoch as u8));
        for chunk in order.chunks(cfg.downstream_batch) {
            let batch_events: Vec<InteractionEvent> =
                chunk.iter().map(|&i| events[i as usize]).collect();
            let mut user_ids = Vec::with_capacity(batch_events.len() * (1 + cfg.bce_negatives));
            let mut item_ids = Vec::with_capacity(user_ids.capacity());
            let mut labels = Vec::with_capacity(user_ids.capacity());
            for e in &batch_events {
                user_ids.push(e.user_id);
                item_ids.push(e.item_id);
                labels.push(1u8);
                for _ in 0..cfg.bce_negatives {
                    user_ids.push(e.user_id);
                    item_ids.push(neg_rng.gen_range(0..n_items));
                    labels.push(0u8);
                }
            }
            let (logits, cache) = ctr_forward(&model, &user_ids, &item_ids)?;
            let (_, dlogits) = bce_on_logits(&logits, &labels);
            let (mlp_grads, d_user, d_item) = ctr_backward(&model.mlp, &cache, &dlogits)?;

            let mut user_grads: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
            let mut item_grads: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
            if trainable_embeddings {
                accumulate_rows(&mut user_grads, &user_ids, &d_user, 1.0);
                accumulate_rows(&mut item_grads, &item_ids, &d_item, 1.0);
            }

            if single_stage {
                let batch = assemble_batch(
                    &batch_events,
                    &model.user_table,
                    &model.item_table,
                    cfg.uniform_negatives,
                    &mut ss_rng,
                )?;
                let (_, ccache) = contrastive_forward(&batch, &temp)?;
                let grad = contrastive_backward(&batch, &ccache)?;
                let lambda = cfg.single_stage_lambda;
                accumulate_rows(&mut user_grads, &batch.user_ids, &grad.d_user, lambda);
                accumulate_rows(&mut item_grads, &batch.pos_item_ids, &grad.d_pos, lambda);
                accumulate_rows(
                    &mut item_grads,
                    &batch.uniform_neg_item_ids,
                    &grad.d_uniform_neg,
                    lambda,
                );
                let mut theta = temp.theta();
                theta_opt.step(&mut theta, lambda * grad.d_theta);
                temp.set_theta(theta);
            }

            adam.step(&mut model.mlp, &mlp_grads)?;
            if trainable_embeddings {
                finish_grads(
                    &mut user_grads,
                    &model.user_table,
                    cfg.embedding_weight_decay,
                    cfg.grad_clip,
                );
                finish_grads(
                    &mut item_grads,
                    &model.item_table,
                    cfg.embedding_weight_decay,
                    cfg.grad_clip,
                );
                user_opt.step(&mut model.user_table, &user_grads)?;
                item_opt.step(&mut model.item_table, &item_grads)?;
            }
        }
        metrics.push(eval_downstream(
            cfg,
            &model,
            &eval_set,
            arm.name(),
            seed,
            epoch,
        )?);
    }

    Ok(DownstreamResult { model, metrics })
}

/// The single-stage ablation arm: joint BCE + lambda * contrastive on the
/// downstream corpus only.
pub fn run_single_stage(cfg: &ExperimentConfig, corpora: &Corpora, seed: u64) -> Result<DownstreamResult> {
    run_downstream(cfg, corpora, None, Arm::SingleStage, seed)
}

#[derive(Debug, Clone)]
pub struct ArmSummary {
    pub arm: Arm,
    pub final_hits: Vec<f64>,
    pub mean: f64,
    pub stdev: f64,
    /// (mean_arm - mean_baseline) / mean_baseline
    pub lift_vs_baseline: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub metrics: Vec<EpochMetrics>,
    pub summaries: Vec<ArmSummary>,
    /// Per seed: did the frozen arm leave its tables byte-identical to the
    /// Stage-1 checkpoint?
    pub frozen_contract_ok: Vec<bool>,
    /// Stage-1 model per seed, in `cfg.seeds` order.
    pub checkpoints: Vec<TwoTowerModel>,
}

struct SeedRun {
    metrics: Vec<EpochMetrics>,
    final_hit: BTreeMap<&'static str, f64>,
    frozen_ok: bool,
    checkpoint: TwoTowerModel,
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let mut gen_cfg = cfg.generator.clone();
    gen_cfg.seed = seed;
    let seed_cfg = ExperimentConfig {
        generator: gen_cfg.clone(),
        ..cfg.clone()
    };
    let latent = build_latent_model(&gen_cfg)?;
    let corpora = make_corpora(&latent, &gen_cfg)?;

    let mut metrics = Vec::new();
    let pre = run_pretrain(&seed_cfg, &corpora, PretrainLoss::Contrastive, seed)?;
    metrics.extend(pre.metrics.iter().cloned());

    let mut final_hit = BTreeMap::new();
    let mut frozen_ok = true;
    for arm in Arm::ALL {
        let init = match arm {
            Arm::Baseline | Arm::SingleStage => None,
            Arm::TwoStageFrozen | Arm::TwoStageFineTuned => Some(&pre.model),
        };
        let res = run_downstream(&seed_cfg, &corpora, init, arm, seed)?;
        if arm == Arm::TwoStageFrozen {
            frozen_ok = res.model.user_table.raw() == pre.model.user_table.raw()
                && res.model.item_table.raw() == pre.model.item_table.raw();
        }
        final_hit.insert(arm.name(), res.metrics.last().unwrap().hit_at_k);
        metrics.extend(res.metrics);
    }
    Ok(SeedRun {
        metrics,
        final_hit,
        frozen_ok,
        checkpoint: pre.model,
    })
}

/// Run all four arms over every seed on shared per-seed corpora and summarize
/// final holdout Hit@K with lifts against the baseline arm.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<AblationReport> {
    cfg.validate()?;
    if cfg.seeds.len() < 2 {
        return Err(Error::invalid("ablation needs at least 2 seeds for stdev"));
    }
    let runs: Vec<Result<SeedRun>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed))
        .collect();
    let mut metrics = Vec::new();
    let mut frozen_contract_ok = Vec::new();
    let mut checkpoints = Vec::new();
    let mut per_arm: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for run in runs {
        let run = run?;
        metrics.extend(run.metrics);
        frozen_contract_ok.push(run.frozen_ok);
        checkpoints.push(run.checkpoint);
        for (arm, hit) in run.final_hit {
            per_arm.entry(arm).or_default().push(hit);
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let baseline_mean = mean(&per_arm[Arm::Baseline.name()]);
    let summaries = Arm::ALL
        .iter()
        .map(|&arm| {
            let hits = per_arm[arm.name()].clone();
            let m = mean(&hits);
            let var = hits.iter().map(|h| (h - m).powi(2)).sum::<f64>()
                / (hits.len() as f64 - 1.0);
            ArmSummary {
                arm,
                mean: m,
                stdev: var.sqrt(),
                lift_vs_baseline: (m - baseline_mean) / baseline_mean,
                final_hits: hits,
            }
        })
        .collect();

    Ok(AblationReport {
        metrics,
        summaries,
        frozen_contract_ok,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_cfg() -> ExperimentConfig {
        ExperimentConfig {
            generator: GeneratorConfig {
                n_users: 100,
                n_items: 300,
                n_topics: 4,
                zipf_exponent: 1.2,
                affinity_strength: 4.0,
                events_per_user: 4,
                surface_mix: [0.5, 0.3, 0.2],
                coverage_ratio: 3.0,
                seed: 0,
            },
            dim: 8,
            batch_size: 32,
            uniform_negatives: 16,
            downstream_batch: 64,
            mlp_hidden: [16, 8],
            pretrain_epochs: 2,
            downstream_epochs: 2,
            eval_pairs: 50,
            n_candidates: 20,
            seeds: vec![1, 2],
            ..ExperimentConfig::default()
        }
    }

    fn tiny_corpora(cfg: &ExperimentConfig, seed: u64) -> Corpora {
        let mut gc = cfg.generator.clone();
        gc.seed = seed;
        let latent = build_latent_model(&gc).unwrap();
        make_corpora(&latent, &gc).unwrap()
    }

    #[test]
    fn pretrain_step_count_is_ceil_div() {
        let mut cfg = tiny_cfg();
        cfg.pretrain_epochs = 1;
        let corpora = tiny_corpora(&cfg, 1);
        let n = corpora.pretrain.len();
        let res = run_pretrain(&cfg, &corpora, PretrainLoss::Contrastive, 1).unwrap();
        assert_eq!(res.optimizer_steps as usize, n.div_ceil(cfg.batch_size));
        // epoch 0 plus one trained epoch
        assert_eq!(res.metrics.len(), 2);
    }

    #[test]
    fn pretrain_deterministic() {
        let cfg = tiny_cfg();
        let corpora = tiny_corpora(&cfg, 1);
        let a = run_pretrain(&cfg, &corpora, PretrainLoss::Contrastive, 1).unwrap();
        let b = run_pretrain(&cfg, &corpora, PretrainLoss::Contrastive, 1).unwrap();
        assert_eq!(a.model.user_table.raw(), b.model.user_table.raw());
        assert_eq!(a.model.item_table.raw(), b.model.item_table.raw());
        assert_eq!(a.model.temp.theta(), b.model.temp.theta());
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn downstream_arm_contracts() {
        let cfg = tiny_cfg();
        let corpora = tiny_corpora(&cfg, 1);
        let pre = run_pretrain(&cfg, &corpora, PretrainLoss::Contrastive, 1).unwrap();

        // baseline rejects a checkpoint
        assert!(run_downstream(&cfg, &corpora, Some(&pre.model), Arm::Baseline, 1).is_err());
        // two-stage arms require one
        assert!(run_downstream(&cfg, &corpora, None, Arm::TwoStageFrozen, 1).is_err());
        assert!(run_downstream(&cfg, &corpora, None, Arm::TwoStageFineTuned, 1).is_err());
    }

    #[test]
    fn frozen_arm_leaves_tables_bit_identical() {
        let cfg = tiny_cfg();
        let corpora = tiny_corpora(&cfg, 1);
        let pre = run_pretrain(&cfg, &corpora, PretrainLoss::Contrastive, 1).unwrap();
        let res = run_downstream(&cfg, &corpora, Some(&pre.model), Arm::TwoStageFrozen, 1).unwrap();
        assert_eq!(res.model.user_table.raw(), pre.model.user_table.raw());
        assert_eq!(res.model.item_table.raw(), pre.model.item_table.raw());
    }

    #[test]
    fn lambda_zero_single_stage_equals_baseline() {
        let mut cfg = tiny_cfg();
        cfg.single_stage_lambda = 0.0;
        let corpora = tiny_corpora(&cfg, 1);
        let base = run_downstream(&cfg, &corpora, None, Arm::Baseline, 1).unwrap();
        let ss = run_single_stage(&cfg, &corpora, 1).unwrap();
        assert_eq!(base.model.user_table.raw(), ss.model.user_table.raw());
        assert_eq!(base.model.item_table.raw(), ss.model.item_table.raw());
        assert_eq!(base.model.mlp, ss.model.mlp);
        for (a, b) in base.metrics.iter().zip(&ss.metrics) {
            assert_eq!(a.hit_at_k, b.hit_at_k);
            assert_eq!(a.auc, b.auc);
        }
    }

    #[test]
    fn finetune_from_random_checkpoint_equals_scratch() {
        let cfg = tiny_cfg();
        let corpora = tiny_corpora(&cfg, 1);
        // a "checkpoint" holding the same random init the baseline would draw
        let (u, i) = cfg.fresh_tables(1).unwrap();
        let ckpt = TwoTowerModel::new(u, i, Temperature::default()).unwrap();
        let scratch = run_downstream(&cfg, &corpora, None, Arm::Baseline, 1).unwrap();
        let finetune =
            run_downstream(&cfg, &corpora, Some(&ckpt), Arm::TwoStageFineTuned, 1).unwrap();
        assert_eq!(
            scratch.model.user_table.raw(),
            finetune.model.user_table.raw()
        );
        assert_eq!(
            scratch.model.item_table.raw(),
            finetune.model.item_table.raw()
        );
        assert_eq!(scratch.model.mlp, finetune.model.mlp);
    }

    #[test]
    fn ablation_report_shape_and_determinism() {
        let cfg = tiny_cfg();
        let a = run_ablation(&cfg).unwrap();
        let b = run_ablation(&cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.summaries.len(), 4);
        let baseline = a
            .summaries
            .iter()
            .find(|s| s.arm == Arm::Baseline)
            .unwrap();
        assert_eq!(baseline.lift_vs_baseline, 0.0);
        assert!(a.frozen_contract_ok.iter().all(|&ok| ok));
        for s in &a.summaries {
            assert_eq!(s.final_hits.len(), cfg.seeds.len());
        }
    }

    #[test]
    fn epoch_accounting() {
        let cfg = tiny_cfg();
        let corpora = tiny_corpora(&cfg, 2);
        let res = run_downstream(&cfg, &corpora, None, Arm::Baseline, 2).unwrap();
        let epochs: Vec<u32> = res.metrics.iter().map(|m| m.epoch).collect();
        assert_eq!(epochs, vec![0, 1, 2]);
    }
}
