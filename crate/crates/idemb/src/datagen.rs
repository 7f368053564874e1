//! Seeded synthetic engagement-data generator.
//!
//! Item popularity is Zipf-distributed so the corpus has the heavy tail that
//! drives the one-epoch effect; a latent-topic model gives user/item affinity
//! a learnable ground truth so holdout metrics measure generalization rather
//! than noise.

use crate::core_types::{Dataset, InteractionEvent, Split, Surface};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use rand::Rng;
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_users: u32,
    pub n_items: u32,
    pub n_topics: usize,
    pub zipf_exponent: f64,
    pub affinity_strength: f64,
    pub events_per_user: u32,
    /// Proportions for [Homefeed, RelatedPins, Other]; must sum to 1.
    pub surface_mix: [f64; 3],
    /// Pre-train corpus size divided by downstream corpus size.
    pub coverage_ratio: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_users: 20_000,
            n_items: 50_000,
            n_topics: 16,
            zipf_exponent: 1.2,
            affinity_strength: 4.0,
            events_per_user: 5,
            surface_mix: [0.5, 0.3, 0.2],
            coverage_ratio: 10.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 {
            return Err(Error::invalid("n_users and n_items must be >= 1"));
        }
        if self.n_topics == 0 {
            return Err(Error::invalid("n_topics must be >= 1"));
        }
        if self.zipf_exponent <= 0.0 {
            return Err(Error::invalid("zipf_exponent must be > 0"));
        }
        if self.affinity_strength < 0.0 {
            return Err(Error::invalid("affinity_strength must be >= 0"));
        }
        if self.events_per_user == 0 {
            return Err(Error::invalid("events_per_user must be >= 1"));
        }
        if self.surface_mix.iter().any(|&p| p < 0.0) {
            return Err(Error::invalid("surface_mix entries must be nonnegative"));
        }
        let sum: f64 = self.surface_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "surface_mix must sum to 1, got {sum}"
            )));
        }
        if self.coverage_ratio < 1.0 {
            return Err(Error::invalid("coverage_ratio must be >= 1"));
        }
        Ok(())
    }

    pub fn downstream_train_size(&self) -> usize {
        self.n_users as usize * self.events_per_user as usize
    }

    pub fn pretrain_size(&self) -> usize {
        (self.coverage_ratio * self.downstream_train_size() as f64).round() as usize
    }
}

/// Ground-truth structure behind the generator: topic mixtures per user and
/// item plus a rank-shuffled Zipf popularity vector.
#[derive(Debug, Clone)]
pub struct LatentModel {
    pub n_users: u32,
    pub n_items: u32,
    pub n_topics: usize,
    /// Row-major (n_users x n_topics), rows sum to 1.
    pub user_topics: Vec<f64>,
    /// Row-major (n_items x n_topics), rows sum to 1.
    pub item_topics: Vec<f64>,
    /// Probability per item id; Zipf over a seeded permutation of ranks.
    pub item_popularity: Vec<f64>,
}

impl LatentModel {
    #[inline]
    pub fn user_row(&self, u: u32) -> &[f64] {
        let i = u as usize * self.n_topics;
        &self.user_topics[i..i + self.n_topics]
    }

    #[inline]
    pub fn item_row(&self, p: u32) -> &[f64] {
        let i = p as usize * self.n_topics;
        &self.item_topics[i..i + self.n_topics]
    }
}

/// Normalized Zipf weights: weight of 1-based rank r is r^(-s) / H_n(s).
pub fn zipf_weights(n: usize, s: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("zipf_weights: n must be >= 1"));
    }
    if s <= 0.0 {
        return Err(Error::invalid("zipf_weights: exponent must be > 0"));
    }
    let mut w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-s)).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// Normalize i.i.d. Exp(1) draws; a symmetric Dirichlet(1)-distributed row.
fn random_simplex_row(rng: &mut impl Rng, k: usize, out: &mut [f64]) {
    let mut total = 0.0;
    for slot in out.iter_mut().take(k) {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let e = -u.ln();
        *slot = e;
        total += e;
    }
    for slot in out.iter_mut().take(k) {
        *slot /= total;
    }
}

pub fn build_latent_model(cfg: &GeneratorConfig) -> Result<LatentModel> {
    cfg.validate()?;
    let k = cfg.n_topics;

    let mut user_topics = vec![0.0; cfg.n_users as usize * k];
    let mut rng = stream_rng(cfg.seed, Stream::LatentTopics(0));
    for r in 0..cfg.n_users as usize {
        random_simplex_row(&mut rng, k, &mut user_topics[r * k..(r + 1) * k]);
    }

    let mut item_topics = vec![0.0; cfg.n_items as usize * k];
    let mut rng = stream_rng(cfg.seed, Stream::LatentTopics(1));
    for r in 0..cfg.n_items as usize {
        random_simplex_row(&mut rng, k, &mut item_topics[r * k..(r + 1) * k]);
    }

    // Shuffle ranks so popularity is independent of topic structure.
    let weights = zipf_weights(cfg.n_items as usize, cfg.zipf_exponent)?;
    let mut perm: Vec<u32> = (0..cfg.n_items).collect();
    let mut rng = stream_rng(cfg.seed, Stream::PopularityShuffle);
    // Fisher-Yates
    for i in (1..perm.len()).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    let mut item_popularity = vec![0.0; cfg.n_items as usize];
    for (rank, &item) in perm.iter().enumerate() {
        item_popularity[item as usize] = weights[rank];
    }

    Ok(LatentModel {
        n_users: cfg.n_users,
        n_items: cfg.n_items,
        n_topics: k,
        user_topics,
        item_topics,
        item_popularity,
    })
}

/// Walker alias table for O(1) draws from a fixed discrete distribution.
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![0.0; n];
        let mut alias = vec![0u32; n];
        let mut small: Vec<u32> = Vec::new();
        let mut large: Vec<u32> = Vec::new();
        for (i, &p) in scaled.iter().enumerate() {
            if p < 1.0 {
                small.push(i as u32);
            } else {
                large.push(i as u32);
            }
        }
        while let Some(s) = small.pop() {
            let Some(l) = large.pop() else {
                // rounding left this bucket fractionally short of 1; take it whole
                prob[s as usize] = 1.0;
                continue;
            };
            prob[s as usize] = scaled[s as usize];
            alias[s as usize] = l;
            scaled[l as usize] = scaled[l as usize] + scaled[s as usize] - 1.0;
            if scaled[l as usize] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        for i in large {
            prob[i as usize] = 1.0;
        }
        AliasTable { prob, alias }
    }

    #[inline]
    pub fn draw(&self, rng: &mut impl Rng) -> u32 {
        let i = rng.gen_range(0..self.prob.len());
        if rng.gen::<f64>() < self.prob[i] {
            i as u32
        } else {
            self.alias[i]
        }
    }
}

fn surface_sampler(cfg: &GeneratorConfig, surfaces: &[Surface]) -> Result<Vec<(Surface, f64)>> {
    if surfaces.is_empty() {
        return Err(Error::invalid("surface set must be nonempty"));
    }
    let mut pairs: Vec<(Surface, f64)> = Surface::ALL
        .iter()
        .filter(|s| surfaces.contains(s))
        .map(|&s| (s, cfg.surface_mix[s.as_u8() as usize]))
        .collect();
    let total: f64 = pairs.iter().map(|(_, p)| p).sum();
    if total <= 0.0 {
        return Err(Error::invalid(
            "surface_mix assigns zero mass to the requested surfaces",
        ));
    }
    for p in &mut pairs {
        p.1 /= total;
    }
    Ok(pairs)
}

fn draw_surface(pairs: &[(Surface, f64)], rng: &mut impl Rng) -> Surface {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(s, p) in pairs {
        acc += p;
        if u < acc {
            return s;
        }
    }
    pairs.last().unwrap().0
}

/// One positive engagement draw: user uniform, then item with probability
/// proportional to popularity * exp(affinity * <user_topics, item_topics>).
///
/// Items are drawn by rejection from the popularity alias table; since topic
/// rows are probability vectors, the affinity dot product is at most 1 and
/// exp(affinity * (dot - 1)) is a valid acceptance probability.
fn draw_event(
    model: &LatentModel,
    cfg: &GeneratorConfig,
    surface_pairs: &[(Surface, f64)],
    alias: &AliasTable,
    rng: &mut impl Rng,
) -> InteractionEvent {
    let user_id = rng.gen_range(0..model.n_users);
    let urow = model.user_row(user_id);
    let item_id = loop {
        let cand = alias.draw(rng);
        if cfg.affinity_strength == 0.0 {
            break cand;
        }
        let dot = crate::mat::dot(urow, model.item_row(cand));
        let accept = (cfg.affinity_strength * (dot - 1.0)).exp();
        if rng.gen::<f64>() < accept {
            break cand;
        }
    };
    let surface = draw_surface(surface_pairs, rng);
    InteractionEvent {
        user_id,
        item_id,
        surface,
        label: 1,
    }
}

/// Sample `n_events` positive events on the given surfaces.
///
/// `stream_id` selects an independent draw stream so distinct corpora from
/// the same seed do not overlap.
pub fn sample_events(
    model: &LatentModel,
    cfg: &GeneratorConfig,
    n_events: usize,
    surfaces: &[Surface],
    split: Split,
    stream_id: u8,
) -> Result<Dataset> {
    if n_events == 0 {
        return Err(Error::invalid("n_events must be >= 1"));
    }
    let surface_pairs = surface_sampler(cfg, surfaces)?;
    let alias = AliasTable::new(&model.item_popularity);
    let mut rng = stream_rng(cfg.seed, Stream::Events(stream_id));
    let mut events = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        events.push(draw_event(model, cfg, &surface_pairs, &alias, &mut rng));
    }
    Ok(Dataset {
        events,
        split,
        surfaces: surfaces.to_vec(),
    })
}

/// Like `sample_events` but rejects any draw whose (user, item) pair appears
/// in `excluded`, so holdout positives never leak from the train split.
fn sample_events_excluding(
    model: &LatentModel,
    cfg: &GeneratorConfig,
    n_events: usize,
    surfaces: &[Surface],
    excluded: &HashSet<(u32, u32)>,
    stream_id: u8,
) -> Result<Dataset> {
    let surface_pairs = surface_sampler(cfg, surfaces)?;
    let alias = AliasTable::new(&model.item_popularity);
    let mut rng = stream_rng(cfg.seed, Stream::Events(stream_id));
    let mut events = Vec::with_capacity(n_events);
    let max_attempts = n_events.saturating_mul(1000).max(1_000_000);
    let mut attempts = 0usize;
    while events.len() < n_events {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::invalid(
                "holdout sampling could not avoid train positives; corpus too dense",
            ));
        }
        let ev = draw_event(model, cfg, &surface_pairs, &alias, &mut rng);
        if !excluded.contains(&(ev.user_id, ev.item_id)) {
            events.push(ev);
        }
    }
    Ok(Dataset {
        events,
        split: Split::Holdout,
        surfaces: surfaces.to_vec(),
    })
}

pub struct Corpora {
    pub pretrain: Dataset,
    pub pretrain_holdout: Dataset,
    pub downstream_train: Dataset,
    pub downstream_holdout: Dataset,
}

fn positive_pairs(ds: &Dataset) -> HashSet<(u32, u32)> {
    ds.events
        .iter()
        .filter(|e| e.label == 1)
        .map(|e| (e.user_id, e.item_id))
        .collect()
}

/// Build the four corpora: a broad multi-surface pre-train split sized
/// coverage_ratio times the single-surface downstream split, each with a
/// 10% holdout that shares no positive pair with its train split.
pub fn make_corpora(model: &LatentModel, cfg: &GeneratorConfig) -> Result<Corpora> {
    cfg.validate()?;
    let n_ds = cfg.downstream_train_size();
    let n_pre = cfg.pretrain_size();
    let all = Surface::ALL.to_vec();
    let homefeed = vec![Surface::Homefeed];

    let pretrain = sample_events(model, cfg, n_pre, &all, Split::Train, 0)?;
    let downstream_train = sample_events(model, cfg, n_ds, &homefeed, Split::Train, 1)?;

    let pre_pairs = positive_pairs(&pretrain);
    let ds_pairs = positive_pairs(&downstream_train);

    let pretrain_holdout =
        sample_events_excluding(model, cfg, (n_pre / 10).max(1), &all, &pre_pairs, 2)?;
    let downstream_holdout =
        sample_events_excluding(model, cfg, (n_ds / 10).max(1), &homefeed, &ds_pairs, 3)?;

    Ok(Corpora {
        pretrain,
        pretrain_holdout,
        downstream_train,
        downstream_holdout,
    })
}

/// Keep each event independently with probability `rate`.
pub fn downsample(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid("downsample rate must be in (0, 1]"));
    }
    if rate == 1.0 {
        return Ok(ds.clone());
    }
    let mut rng = stream_rng(seed, Stream::Downsample);
    let events = ds
        .events
        .iter()
        .filter(|_| rng.gen::<f64>() < rate)
        .copied()
        .collect();
    Ok(Dataset {
        events,
        split: ds.split,
        surfaces: ds.surfaces.clone(),
    })
}

/// Plain-text corpus summary: per-surface counts plus an item
/// frequency-of-frequency histogram (how heavy the tail actually is).
pub fn summarize(ds: &Dataset, n_items: u32) -> String {
    let mut per_surface = [0usize; 3];
    let mut item_counts = vec![0u32; n_items as usize];
    for e in &ds.events {
        per_surface[e.surface.as_u8() as usize] += 1;
        item_counts[e.item_id as usize] += 1;
    }
    let buckets: [(u32, u32, &str); 6] = [
        (1, 1, "seen 1x"),
        (2, 2, "seen 2x"),
        (3, 5, "seen 3-5x"),
        (6, 10, "seen 6-10x"),
        (11, 100, "seen 11-100x"),
        (101, u32::MAX, "seen >100x"),
    ];
    let unseen = item_counts.iter().filter(|&&c| c == 0).count();
    let mut out = String::new();
    out.push_str(&format!(
        "events: {} (split: {})\n",
        ds.events.len(),
        ds.split.name()
    ));
    for s in Surface::ALL {
        out.push_str(&format!(
            "surface {}: {}\n",
            s.name(),
            per_surface[s.as_u8() as usize]
        ));
    }
    out.push_str(&format!("items unseen: {unseen}\n"));
    for (lo, hi, label) in buckets {
        let n = item_counts
            .iter()
            .filter(|&&c| c >= lo && c <= hi)
            .count();
        out.push_str(&format!("items {label}: {n}\n"));
    }
    out
}
