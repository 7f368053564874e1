//! Bit-exact binary checkpoints, columnar dataset files, metrics CSV export,
//! and the flat key=value config format.
//!
//! All multi-byte fields are little-endian. Checkpoints are compared
//! byte-wise by the test suite, so layouts here are frozen.

use crate::core_types::{Dataset, IdKind, IdSpace, InteractionEvent, Split, Surface};
use crate::error::{Error, Result};
use crate::eval::EpochMetrics;
use crate::loss_grad::Temperature;
use crate::models::TwoTowerModel;
use crate::pipeline::{ExperimentConfig, PretrainLoss};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"IDEMB\x01\x00\x00";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Fixed fields total 68 bytes; padded to 72 so the header is 24-byte aligned.
pub const CHECKPOINT_HEADER_LEN: usize = 72;

pub const DATASET_MAGIC: [u8; 6] = *b"IDDAT\x01";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dim: u32,
    pub user_rows: u64,
    pub item_rows: u64,
    pub tau: f32,
    pub config_digest: [u8; 32],
}

/// Digest over the structural parts of a config (data generator, dim, seed):
/// the parts that must agree between the pre-training run that wrote a
/// checkpoint and the downstream run that loads it.
pub fn config_digest(cfg: &ExperimentConfig, seed: u64) -> [u8; 32] {
    let g = &cfg.generator;
    let text = format!(
        "n_users={}\nn_items={}\nn_topics={}\nzipf_exponent={}\naffinity_strength={}\n\
         events_per_user={}\nsurface_mix={},{},{}\ncoverage_ratio={}\ndim={}\nseed={}\n",
        g.n_users,
        g.n_items,
        g.n_topics,
        g.zipf_exponent,
        g.affinity_strength,
        g.events_per_user,
        g.surface_mix[0],
        g.surface_mix[1],
        g.surface_mix[2],
        g.coverage_ratio,
        cfg.dim,
        seed
    );
    let mut out = [0u8; 32];
    out.copy_from_slice(&Sha256::digest(text.as_bytes()));
    out
}

fn push_f32_rows(buf: &mut Vec<u8>, rows: &[f32]) {
    buf.reserve(rows.len() * 4);
    for &v in rows {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn checkpoint_bytes(model: &TwoTowerModel, digest: &[u8; 32]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(
        CHECKPOINT_HEADER_LEN + 4 * (model.user_table.raw().len() + model.item_table.raw().len()),
    );
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.user_table.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(model.user_table.n_rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(model.item_table.n_rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(model.temp.tau() as f32).to_le_bytes());
    buf.extend_from_slice(digest);
    buf.resize(CHECKPOINT_HEADER_LEN, 0);
    push_f32_rows(&mut buf, model.user_table.raw());
    push_f32_rows(&mut buf, model.item_table.raw());
    buf
}

pub fn save_checkpoint(model: &TwoTowerModel, digest: &[u8; 32], path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model, digest);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

fn take<'a>(buf: &'a [u8], off: &mut usize, n: usize, field: &str) -> Result<&'a [u8]> {
    if *off + n > buf.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "file truncated while reading {field}"
        )));
    }
    let s = &buf[*off..*off + n];
    *off += n;
    Ok(s)
}

fn read_f32_rows(buf: &[u8], off: &mut usize, n: usize, field: &str) -> Result<Vec<f32>> {
    let raw = take(buf, off, n * 4, field)?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Rebuild a temperature whose f32-rounded tau equals the stored value, so
/// save/load/save is byte-identical.
fn temperature_from_stored_tau(tau32: f32) -> Result<Temperature> {
    let mut temp = Temperature::from_tau(tau32 as f64, 0.01, 10.0)?;
    if temp.tau() as f32 != tau32 {
        let mut theta = temp.theta();
        for _ in 0..8 {
            if temp.tau() as f32 == tau32 {
                break;
            }
            let dir = if (temp.tau() as f32) < tau32 { 1.0 } else { -1.0 };
            theta += dir * theta.abs().max(1.0) * f64::EPSILON;
            temp.set_theta(theta);
        }
    }
    Ok(temp)
}

pub fn load_checkpoint(path: &Path) -> Result<(TwoTowerModel, CheckpointHeader)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    load_checkpoint_bytes(&buf)
}

pub fn load_checkpoint_bytes(buf: &[u8]) -> Result<(TwoTowerModel, CheckpointHeader)> {
    let mut off = 0usize;
    let magic = take(buf, &mut off, 8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(buf, &mut off, 4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let dim = u32::from_le_bytes(take(buf, &mut off, 4, "dim")?.try_into().unwrap());
    let user_rows = u64::from_le_bytes(take(buf, &mut off, 8, "user_rows")?.try_into().unwrap());
    let item_rows = u64::from_le_bytes(take(buf, &mut off, 8, "item_rows")?.try_into().unwrap());
    let tau = f32::from_le_bytes(take(buf, &mut off, 4, "tau")?.try_into().unwrap());
    let mut config_digest = [0u8; 32];
    config_digest.copy_from_slice(take(buf, &mut off, 32, "config_digest")?);
    off = CHECKPOINT_HEADER_LEN;
    if dim == 0 || user_rows == 0 || item_rows == 0 {
        return Err(Error::CorruptCheckpoint("zero dim or row count".into()));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::CorruptCheckpoint("tau must be positive".into()));
    }

    let user = read_f32_rows(buf, &mut off, user_rows as usize * dim as usize, "user rows")?;
    let item = read_f32_rows(buf, &mut off, item_rows as usize * dim as usize, "item rows")?;
    if off != buf.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            buf.len() - off
        )));
    }
    let user_table = crate::core_types::EmbeddingTable::from_rows(
        IdSpace {
            kind: IdKind::User,
            cardinality: user_rows as u32,
        },
        dim as usize,
        user,
    )?;
    let item_table = crate::core_types::EmbeddingTable::from_rows(
        IdSpace {
            kind: IdKind::Item,
            cardinality: item_rows as u32,
        },
        dim as usize,
        item,
    )?;
    let temp = temperature_from_stored_tau(tau)?;
    let header = CheckpointHeader {
        version,
        dim,
        user_rows,
        item_rows,
        tau,
        config_digest,
    };
    Ok((TwoTowerModel::new(user_table, item_table, temp)?, header))
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + ds.len() * 9);
    buf.extend_from_slice(&DATASET_MAGIC);
    buf.push(match ds.split {
        Split::Train => 0,
        Split::Holdout => 1,
    });
    let mut mask = 0u8;
    for s in &ds.surfaces {
        mask |= 1 << s.as_u8();
    }
    buf.push(mask);
    buf.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for e in &ds.events {
        buf.extend_from_slice(&e.user_id.to_le_bytes());
    }
    for e in &ds.events {
        buf.extend_from_slice(&e.item_id.to_le_bytes());
    }
    for e in &ds.events {
        buf.push(e.surface.as_u8());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let err = |m: &str| Error::CorruptDataset(m.into());
    if buf.len() < 16 {
        return Err(err("file shorter than header"));
    }
    if buf[..6] != DATASET_MAGIC {
        return Err(err("bad magic"));
    }
    let split = match buf[6] {
        0 => Split::Train,
        1 => Split::Holdout,
        v => return Err(Error::CorruptDataset(format!("unknown split code {v}"))),
    };
    let mask = buf[7];
    let n = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    if buf.len() != 16 + n * 9 {
        return Err(err("size does not match event count"));
    }
    let users = &buf[16..16 + n * 4];
    let items = &buf[16 + n * 4..16 + n * 8];
    let surfaces_raw = &buf[16 + n * 8..];
    let mut events = Vec::with_capacity(n);
    for i in 0..n {
        let u = u32::from_le_bytes(users[i * 4..i * 4 + 4].try_into().unwrap());
        let p = u32::from_le_bytes(items[i * 4..i * 4 + 4].try_into().unwrap());
        events.push(InteractionEvent {
            user_id: u,
            item_id: p,
            surface: Surface::from_u8(surfaces_raw[i])?,
            label: 1,
        });
    }
    let surfaces = Surface::ALL
        .iter()
        .copied()
        .filter(|s| mask & (1 << s.as_u8()) != 0)
        .collect();
    Ok(Dataset {
        events,
        split,
        surfaces,
    })
}

/// Format with 9 significant digits, plain decimal notation.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0.000000000".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (8 - exp).clamp(0, 17) as usize;
    format!("{v:.decimals$}")
}

/// CSV rows: `arm,stage,seed,epoch,split,metric,value`, canonically sorted.
pub fn metrics_csv(series: &[EpochMetrics], hit_k: usize) -> String {
    let mut rows: Vec<(String, String)> = Vec::with_capacity(series.len() * 3);
    for m in series {
        let prefix = |metric: &str| {
            format!(
                "{},{},{},{},{},{}",
                m.arm,
                m.stage.name(),
                m.seed,
                m.epoch,
                m.split.name(),
                metric
            )
        };
        rows.push((prefix("auc"), format_sig9(m.auc)));
        rows.push((prefix(&format!("hit_at_{hit_k}")), format_sig9(m.hit_at_k)));
        rows.push((prefix("logloss"), format_sig9(m.logloss)));
    }
    rows.sort();
    let mut out = String::from("arm,stage,seed,epoch,split,metric,value\n");
    for (prefix, value) in rows {
        out.push_str(&prefix);
        out.push(',');
        out.push_str(&value);
        out.push('\n');
    }
    out
}

pub fn export_metrics(series: &[EpochMetrics], hit_k: usize, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(metrics_csv(series, hit_k).as_bytes())?;
    Ok(())
}

/// One parsed metrics-CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub arm: String,
    pub stage: String,
    pub seed: u64,
    pub epoch: u32,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("empty metrics file"))?;
    if header != "arm,stage,seed,epoch,split,metric,value" {
        return Err(Error::invalid(format!("bad metrics header: {header}")));
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::invalid(format!("bad metrics row {}", ln + 2)));
        }
        rows.push(MetricRow {
            arm: parts[0].to_string(),
            stage: parts[1].to_string(),
            seed: parts[2]
                .parse()
                .map_err(|_| Error::invalid(format!("bad seed in row {}", ln + 2)))?,
            epoch: parts[3]
                .parse()
                .map_err(|_| Error::invalid(format!("bad epoch in row {}", ln + 2)))?,
            split: parts[4].to_string(),
            metric: parts[5].to_string(),
            value: parts[6]
                .parse()
                .map_err(|_| Error::invalid(format!("bad value in row {}", ln + 2)))?,
        });
    }
    Ok(rows)
}

/// Canonical flat key=value serialization of a full experiment config;
/// `parse_config` is its inverse.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let g = &cfg.generator;
    let seeds: Vec<String> = cfg.seeds.iter().map(|s| s.to_string()).collect();
    format!(
        "# synthetic data\n\
         n_users = {}\n\
         n_items = {}\n\
         n_topics = {}\n\
         zipf_exponent = {}\n\
         affinity_strength = {}\n\
         events_per_user = {}\n\
         surface_mix_homefeed = {}\n\
         surface_mix_related_pins = {}\n\
         surface_mix_other = {}\n\
         coverage_ratio = {}\n\
         # model\n\
         dim = {}\n\
         init_scale = {}\n\
         mlp_hidden1 = {}\n\
         mlp_hidden2 = {}\n\
         # training\n\
         batch_size = {}\n\
         uniform_negatives = {}\n\
         bce_negatives = {}\n\
         embedding_lr = {}\n\
         bce_lr = {}\n\
         downstream_embedding_lr = {}\n\
         embedding_weight_decay = {}\n\
         grad_clip = {}\n\
         temperature_lr = {}\n\
         mlp_lr = {}\n\
         downstream_batch = {}\n\
         pretrain_epochs = {}\n\
         downstream_epochs = {}\n\
         pretrain_loss = {}\n\
         single_stage_lambda = {}\n\
         # evaluation\n\
         eval_pairs = {}\n\
         n_candidates = {}\n\
         hit_k = {}\n\
         overfit_threshold = {}\n\
         seed_list = {}\n",
        g.n_users,
        g.n_items,
        g.n_topics,
        g.zipf_exponent,
        g.affinity_strength,
        g.events_per_user,
        g.surface_mix[0],
        g.surface_mix[1],
        g.surface_mix[2],
        g.coverage_ratio,
        cfg.dim,
        cfg.init_scale,
        cfg.mlp_hidden[0],
        cfg.mlp_hidden[1],
        cfg.batch_size,
        cfg.uniform_negatives,
        cfg.bce_negatives,
        cfg.embedding_lr,
        cfg.bce_lr,
        cfg.downstream_embedding_lr,
        cfg.embedding_weight_decay,
        cfg.grad_clip,
        cfg.temperature_lr,
        cfg.mlp_lr,
        cfg.downstream_batch,
        cfg.pretrain_epochs,
        cfg.downstream_epochs,
        cfg.pretrain_loss.name(),
        cfg.single_stage_lambda,
        cfg.eval_pairs,
        cfg.n_candidates,
        cfg.hit_k,
        cfg.overfit_threshold,
        seeds.join(",")
    )
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", ln + 1)))?;
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("line {}: bad {what} '{value}'", ln + 1));
        macro_rules! num {
            ($what:expr) => {
                value.parse().map_err(|_| bad($what))?
            };
        }
        match key {
            "n_users" => cfg.generator.n_users = num!("count"),
            "n_items" => cfg.generator.n_items = num!("count"),
            "n_topics" => cfg.generator.n_topics = num!("count"),
            "zipf_exponent" => cfg.generator.zipf_exponent = num!("number"),
            "affinity_strength" => cfg.generator.affinity_strength = num!("number"),
            "events_per_user" => cfg.generator.events_per_user = num!("count"),
            "surface_mix_homefeed" => cfg.generator.surface_mix[0] = num!("number"),
            "surface_mix_related_pins" => cfg.generator.surface_mix[1] = num!("number"),
            "surface_mix_other" => cfg.generator.surface_mix[2] = num!("number"),
            "coverage_ratio" => cfg.generator.coverage_ratio = num!("number"),
            "dim" => cfg.dim = num!("count"),
            "init_scale" => cfg.init_scale = num!("number"),
            "mlp_hidden1" => cfg.mlp_hidden[0] = num!("count"),
            "mlp_hidden2" => cfg.mlp_hidden[1] = num!("count"),
            "batch_size" => cfg.batch_size = num!("count"),
            "uniform_negatives" => cfg.uniform_negatives = num!("count"),
            "bce_negatives" => cfg.bce_negatives = num!("count"),
            "embedding_lr" => cfg.embedding_lr = num!("number"),
            "bce_lr" => cfg.bce_lr = num!("number"),
            "downstream_embedding_lr" => cfg.downstream_embedding_lr = num!("number"),
            "embedding_weight_decay" => cfg.embedding_weight_decay = num!("number"),
            "grad_clip" => cfg.grad_clip = num!("number"),
            "temperature_lr" => cfg.temperature_lr = num!("number"),
            "mlp_lr" => cfg.mlp_lr = num!("number"),
            "downstream_batch" => cfg.downstream_batch = num!("count"),
            "pretrain_epochs" => cfg.pretrain_epochs = num!("count"),
            "downstream_epochs" => cfg.downstream_epochs = num!("count"),
            "pretrain_loss" => cfg.pretrain_loss = PretrainLoss::parse(value)?,
            "single_stage_lambda" => cfg.single_stage_lambda = num!("number"),
            "eval_pairs" => cfg.eval_pairs = num!("count"),
            "n_candidates" => cfg.n_candidates = num!("count"),
            "hit_k" => cfg.hit_k = num!("count"),
            "overfit_threshold" => cfg.overfit_threshold = num!("number"),
            "seed_list" => {
                cfg.seeds = value
                    .split(',')
                    .map(|s| s.trim().parse().map_err(|_| bad("seed list")))
                    .collect::<Result<Vec<u64>>>()?;
            }
            _ => return Err(Error::Config(format!("line {}: unknown key '{key}'", ln + 1))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
