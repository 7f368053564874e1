//! Epoch-boundary metrics: sampled-candidate Hit@K, exact rank-sum AUC,
//! logloss, and the detector for the one-epoch overfitting pattern.

use crate::error::{Error, Result};
use crate::rng::{substream_rng, Stream};
use rand::Rng;
use std::collections::HashSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Pretrain,
    Downstream,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Downstream => "downstream",
        }
    }
}

/// One metric record per (arm, stage, seed, epoch, split). Epoch 0 means
/// "before training".
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub arm: String,
    pub stage: Stage,
    pub seed: u64,
    pub epoch: u32,
    pub split: crate::core_types::Split,
    pub hit_at_k: f64,
    pub auc: f64,
    pub logloss: f64,
}

/// Fixed candidate sets for Hit@K evaluation: for each positive pair, the
/// positive item plus (n_candidates - 1) distractors sampled uniformly
/// without replacement, excluding the positive. Sets depend only on
/// (pair index, seed) so curves across epochs score identical candidates.
#[derive(Debug, Clone)]
pub struct HitEvalPlan {
    pub pairs: Vec<(u32, u32)>,
    /// Per pair: the distractor item ids.
    pub candidates: Vec<Vec<u32>>,
    pub n_candidates: usize,
}

impl HitEvalPlan {
    pub fn new(
        pairs: &[(u32, u32)],
        n_items: u32,
        n_candidates: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_candidates < 1 {
            return Err(Error::invalid("n_candidates must be >= 1"));
        }
        if n_candidates as u64 > n_items as u64 {
            return Err(Error::invalid(
                "n_candidates exceeds the item space cardinality",
            ));
        }
        let mut candidates = Vec::with_capacity(pairs.len());
        for (idx, &(_, pos)) in pairs.iter().enumerate() {
            let mut rng = substream_rng(seed, Stream::EvalCandidates, idx as u64);
            let mut seen = HashSet::with_capacity(n_candidates);
            let mut cands = Vec::with_capacity(n_candidates - 1);
            while cands.len() < n_candidates - 1 {
                let c = rng.gen_range(0..n_items);
                if c != pos && seen.insert(c) {
                    cands.push(c);
                }
            }
            candidates.push(cands);
        }
        Ok(HitEvalPlan {
            pairs: pairs.to_vec(),
            candidates,
            n_candidates,
        })
    }
}

/// Mean hit rate at k under the plan. A hit requires the positive to score
/// strictly above at least (n_candidates - k) distractors; ties are misses.
pub fn hit_at_k<S: Fn(u32, &[u32]) -> Vec<f64>>(
    scorer: S,
    plan: &HitEvalPlan,
    k: usize,
) -> Result<f64> {
    if k < 1 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if k > plan.n_candidates {
        return Err(Error::invalid("k must not exceed n_candidates"));
    }
    if plan.pairs.is_empty() {
        return Err(Error::invalid("hit_at_k needs at least one eval pair"));
    }
    let mut hits = 0usize;
    let mut ids = Vec::with_capacity(plan.n_candidates);
    for (i, &(user, pos)) in plan.pairs.iter().enumerate() {
        ids.clear();
        ids.push(pos);
        ids.extend_from_slice(&plan.candidates[i]);
        let scores = scorer(user, &ids);
        debug_assert_eq!(scores.len(), ids.len());
        let pos_score = scores[0];
        // rank = 1 + number of candidates scoring >= positive (ties miss)
        let beaten_or_tied = scores[1..].iter().filter(|&&s| s >= pos_score).count();
        if beaten_or_tied < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / plan.pairs.len() as f64)
}

/// Exact AUC by the rank-sum formula, ties contributing 1/2.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract("auc input length mismatch".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "auc requires both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Mean binary cross-entropy of logits against labels.
pub fn logloss(logits: &[f64], labels: &[u8]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::Contract("logloss input mismatch".into()));
    }
    let mut total = 0.0;
    for (&s, &y) in logits.iter().zip(labels) {
        total += s.max(0.0) - s * y as f64 + (-s.abs()).exp().ln_1p();
    }
    Ok(total / logits.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverfitReport {
    pub peak_epoch: u32,
    pub degradation: f64,
    pub verdict: bool,
}

/// One-epoch overfit: the holdout curve peaks at epoch <= 1 and then loses
/// more than `threshold` absolute by the final epoch.
pub fn detect_one_epoch_overfit(
    series: &[(u32, f64)],
    min_epochs: usize,
    threshold: f64,
) -> Result<OverfitReport> {
    if min_epochs < 2 {
        return Err(Error::invalid("min_epochs must be >= 2"));
    }
    if series.len() < min_epochs {
        return Err(Error::invalid(format!(
            "series has {} points, need at least {min_epochs}",
            series.len()
        )));
    }
    let mut peak_epoch = series[0].0;
    let mut peak = series[0].1;
    for &(e, v) in series {
        if v > peak {
            peak = v;
            peak_epoch = e;
        }
    }
    let final_v = series.last().unwrap().1;
    let degradation = peak - final_v;
    Ok(OverfitReport {
        peak_epoch,
        degradation,
        verdict: peak_epoch <= 1 && degradation > threshold,
    })
}
