//! Forward and analytic backward passes for the contrastive loss over one
//! positive plus in-batch and uniform random negatives, and the BCE baseline.
//!
//! Per row the loss is -log softmax over {positive score, N negative scores}
//! with scores (u . v) / tau, reduced by batch mean. All math is f64 with
//! max-subtraction stabilization.

use crate::core_types::{EmbeddingTable, InteractionEvent};
use crate::error::{Error, Result};
use crate::mat::Mat;
use rand::Rng;

/// Learned temperature, parameterized as tau = clamp(exp(theta), min, max).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature {
    theta: f64,
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for Temperature {
    fn default() -> Self {
        // tau0 = 1, bounds [0.01, 10]
        Temperature {
            theta: 0.0,
            tau_min: 0.01,
            tau_max: 10.0,
        }
    }
}

impl Temperature {
    pub fn new(tau0: f64, tau_min: f64, tau_max: f64) -> Result<Self> {
        if !(tau_min > 0.0 && tau_max > tau_min) {
            return Err(Error::invalid("temperature bounds must satisfy 0 < min < max"));
        }
        if !(tau0 > 0.0) {
            return Err(Error::invalid("initial temperature must be positive"));
        }
        Ok(Temperature {
            theta: tau0.ln(),
            tau_min,
            tau_max,
        })
    }

    pub fn tau(&self) -> f64 {
        self.theta.exp().clamp(self.tau_min, self.tau_max)
    }

    /// True when exp(theta) lies outside the bounds, where d tau / d theta = 0.
    pub fn clamped(&self) -> bool {
        let raw = self.theta.exp();
        raw < self.tau_min || raw > self.tau_max
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn set_theta(&mut self, theta: f64) {
        self.theta = theta;
    }

    /// Rebuild from a stored tau value (checkpoint load).
    pub fn from_tau(tau: f64, tau_min: f64, tau_max: f64) -> Result<Self> {
        Temperature::new(tau, tau_min, tau_max)
    }
}

/// One positive pair per row plus shared uniform negatives; other rows'
/// positives act as in-batch negatives where the mask allows.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub user_vecs: Mat,
    pub pos_vecs: Mat,
    pub uniform_neg_vecs: Mat,
    /// Row-major B x B; true where row j's positive serves as a negative for
    /// row i. Diagonal is always false.
    pub in_batch_mask: Vec<bool>,
    pub user_ids: Vec<u32>,
    pub pos_item_ids: Vec<u32>,
    pub uniform_neg_item_ids: Vec<u32>,
}

impl ContrastiveBatch {
    pub fn batch_size(&self) -> usize {
        self.user_vecs.rows
    }

    pub fn n_uniform(&self) -> usize {
        self.uniform_neg_vecs.rows
    }

    /// Effective negative count for a row: uniform + unmasked in-batch.
    pub fn neg_count(&self, row: usize) -> usize {
        let b = self.batch_size();
        self.n_uniform()
            + self.in_batch_mask[row * b..(row + 1) * b]
                .iter()
                .filter(|&&m| m)
                .count()
    }

    fn validate(&self) -> Result<()> {
        let b = self.batch_size();
        let d = self.user_vecs.cols;
        if b == 0 || d == 0 {
            return Err(Error::invalid("contrastive batch must be nonempty"));
        }
        if self.pos_vecs.rows != b || self.pos_vecs.cols != d {
            return Err(Error::Contract("pos_vecs shape mismatch".into()));
        }
        if self.uniform_neg_vecs.cols != d && self.uniform_neg_vecs.rows != 0 {
            return Err(Error::Contract("uniform_neg_vecs dim mismatch".into()));
        }
        if self.in_batch_mask.len() != b * b {
            return Err(Error::Contract("in_batch_mask shape mismatch".into()));
        }
        for i in 0..b {
            if self.in_batch_mask[i * b + i] {
                return Err(Error::Contract("in_batch_mask diagonal must be false".into()));
            }
        }
        if !self.user_vecs.is_finite()
            || !self.pos_vecs.is_finite()
            || !self.uniform_neg_vecs.is_finite()
        {
            return Err(Error::Numeric("non-finite embedding in batch".into()));
        }
        Ok(())
    }
}

/// Gradients of the mean contrastive loss.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub d_user: Mat,
    pub d_pos: Mat,
    pub d_uniform_neg: Mat,
    pub d_theta: f64,
}

/// Opaque forward state consumed by `contrastive_backward`.
pub struct ContrastiveCache {
    loss: f64,
    /// dL/ds for the in-batch score matrix; diagonal holds the positive term.
    g_in: Mat,
    /// dL/ds for the uniform-negative scores.
    g_un: Mat,
    tau: f64,
    d_theta: f64,
    shape: (usize, usize, usize),
}

/// Mean -log softmax at the positive. Returns the loss and the state needed
/// for the analytic backward pass.
pub fn contrastive_forward(
    batch: &ContrastiveBatch,
    temp: &Temperature,
) -> Result<(f64, ContrastiveCache)> {
    batch.validate()?;
    let b = batch.batch_size();
    let m = batch.n_uniform();
    let tau = temp.tau();

    // Logits: s_in[i][j] = u_i . p_j / tau, s_un[i][k] = u_i . n_k / tau.
    let mut s_in = Mat::matmul_nt(&batch.user_vecs, &batch.pos_vecs);
    let mut s_un = Mat::matmul_nt(&batch.user_vecs, &batch.uniform_neg_vecs);
    for v in s_in.data.iter_mut().chain(s_un.data.iter_mut()) {
        *v /= tau;
    }

    let mut g_in = Mat::zeros(b, b);
    let mut g_un = Mat::zeros(b, m);
    let mut total_loss = 0.0;
    let mut d_theta = 0.0;
    let inv_b = 1.0 / b as f64;

    for i in 0..b {
        let mask = &batch.in_batch_mask[i * b..(i + 1) * b];
        let sin = s_in.row(i);
        let sun = s_un.row(i);
        let s_pos = sin[i];

        let n = batch.neg_count(i);
        if n == 0 {
            // Degenerate softmax over a single outcome: loss 0, zero grads.
            continue;
        }

        let mut mx = s_pos;
        for (j, &s) in sin.iter().enumerate() {
            if mask[j] && s > mx {
                mx = s;
            }
        }
        for &s in sun {
            if s > mx {
                mx = s;
            }
        }

        let e_pos = (s_pos - mx).exp();
        let mut denom = e_pos;
        for (j, &s) in sin.iter().enumerate() {
            if mask[j] {
                denom += (s - mx).exp();
            }
        }
        for &s in sun {
            denom += (s - mx).exp();
        }

        let q_pos = e_pos / denom;
        total_loss += -(q_pos.ln());

        // dL/ds, including the 1/B mean factor.
        let gr = g_in.row_mut(i);
        gr[i] = -(1.0 - q_pos) * inv_b;
        d_theta -= gr[i] * s_pos;
        for j in 0..b {
            if mask[j] {
                let q = (sin[j] - mx).exp() / denom;
                gr[j] = q * inv_b;
                d_theta -= gr[j] * sin[j];
            }
        }
        let gu = g_un.row_mut(i);
        for k in 0..m {
            let q = (sun[k] - mx).exp() / denom;
            gu[k] = q * inv_b;
            d_theta -= gu[k] * sun[k];
        }
    }

    let loss = total_loss * inv_b;
    if !loss.is_finite() {
        return Err(Error::Numeric("contrastive loss is non-finite".into()));
    }
    if temp.clamped() {
        d_theta = 0.0;
    }
    Ok((
        loss,
        ContrastiveCache {
            loss,
            g_in,
            g_un,
            tau,
            d_theta,
            shape: (b, m, batch.user_vecs.cols),
        },
    ))
}

pub fn contrastive_backward(batch: &ContrastiveBatch, cache: &ContrastiveCache) -> Result<LossGrad> {
    let (b, m, d) = cache.shape;
    if batch.batch_size() != b || batch.n_uniform() != m || batch.user_vecs.cols != d {
        return Err(Error::Contract(
            "contrastive cache does not match the supplied batch".into(),
        ));
    }
    // Chain rule through s = u . v / tau.
    let mut w_in = cache.g_in.clone();
    let mut w_un = cache.g_un.clone();
    let inv_tau = 1.0 / cache.tau;
    for v in w_in.data.iter_mut().chain(w_un.data.iter_mut()) {
        *v *= inv_tau;
    }

    // d_user = W_in * P + W_un * Nu
    let mut d_user = Mat::matmul_nn(&w_in, &batch.pos_vecs);
    if m > 0 {
        let extra = Mat::matmul_nn(&w_un, &batch.uniform_neg_vecs);
        for (a, e) in d_user.data.iter_mut().zip(extra.data) {
            *a += e;
        }
    }
    // d_pos = W_in^T * U (own-positive term on the diagonal plus every row
    // that used this positive as an in-batch negative).
    let d_pos = Mat::matmul_tn(&w_in, &batch.user_vecs);
    // d_uniform_neg accumulates over all rows that shared each negative.
    let d_uniform_neg = if m > 0 {
        Mat::matmul_tn(&w_un, &batch.user_vecs)
    } else {
        Mat::zeros(0, d)
    };

    Ok(LossGrad {
        loss: cache.loss,
        d_user,
        d_pos,
        d_uniform_neg,
        d_theta: cache.d_theta,
    })
}

/// Build a contrastive batch from positive events: look up user and positive
/// item rows, mask in-batch duplicates by exact item id, and draw M uniform
/// random negatives from the full item space.
pub fn assemble_batch(
    events: &[InteractionEvent],
    user_table: &EmbeddingTable,
    item_table: &EmbeddingTable,
    n_uniform: usize,
    rng: &mut impl Rng,
) -> Result<ContrastiveBatch> {
    let b = events.len();
    if b == 0 {
        return Err(Error::invalid("assemble_batch requires at least one event"));
    }
    let user_ids: Vec<u32> = events.iter().map(|e| e.user_id).collect();
    let pos_item_ids: Vec<u32> = events.iter().map(|e| e.item_id).collect();
    let uniform_neg_item_ids: Vec<u32> = (0..n_uniform)
        .map(|_| rng.gen_range(0..item_table.id_space.cardinality))
        .collect();

    let user_vecs = user_table.lookup(&user_ids)?;
    let pos_vecs = item_table.lookup(&pos_item_ids)?;
    let uniform_neg_vecs = item_table.lookup(&uniform_neg_item_ids)?;

    let mut in_batch_mask = vec![false; b * b];
    for i in 0..b {
        for j in 0..b {
            in_batch_mask[i * b + j] = j != i && pos_item_ids[j] != pos_item_ids[i];
        }
    }

    Ok(ContrastiveBatch {
        user_vecs,
        pos_vecs,
        uniform_neg_vecs,
        in_batch_mask,
        user_ids,
        pos_item_ids,
        uniform_neg_item_ids,
    })
}

#[inline]
fn stable_sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Stable -[y log sigma(s) + (1-y) log(1-sigma(s))] on s = u . v, mean over
/// rows, with gradients chained back to both embedding sides.
pub fn bce_forward_backward(
    user_vecs: &Mat,
    item_vecs: &Mat,
    labels: &[u8],
) -> Result<(f64, Mat, Mat)> {
    let b = user_vecs.rows;
    if item_vecs.rows != b || labels.len() != b || item_vecs.cols != user_vecs.cols {
        return Err(Error::Contract("bce input shape mismatch".into()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::invalid("bce labels must be 0 or 1"));
    }
    if b == 0 {
        return Err(Error::invalid("bce batch must be nonempty"));
    }
    let mut loss = 0.0;
    let mut d_user = Mat::zeros(b, user_vecs.cols);
    let mut d_item = Mat::zeros(b, user_vecs.cols);
    let inv_b = 1.0 / b as f64;
    for i in 0..b {
        let u = user_vecs.row(i);
        let v = item_vecs.row(i);
        let s = crate::mat::dot(u, v);
        let y = labels[i] as f64;
        // max(s,0) - s*y + ln(1 + e^{-|s|})
        loss += s.max(0.0) - s * y + (-s.abs()).exp().ln_1p();
        let g = (stable_sigmoid(s) - y) * inv_b;
        crate::mat::axpy(g, v, d_user.row_mut(i));
        crate::mat::axpy(g, u, d_item.row_mut(i));
    }
    loss *= inv_b;
    if !loss.is_finite() {
        return Err(Error::Numeric("bce loss is non-finite".into()));
    }
    Ok((loss, d_user, d_item))
}
