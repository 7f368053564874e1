//! Sparse per-row Adagrad for embedding tables and dense Adam for the MLP.
//!
//! Adagrad is the embedding optimizer because its update is exactly zero for
//! a zero gradient, so lazy sparse updates are equivalent to a dense pass
//! over zero-padded gradients. Lazy Adam has no such equivalence.

use crate::core_types::EmbeddingTable;
use crate::error::{Error, Result};
use crate::models::{MlpGrads, MlpParams};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct SparseAdagrad {
    /// One accumulator per (row, dim) entry of the owning table.
    acc: Vec<f64>,
    dim: usize,
    pub lr: f64,
    pub eps: f64,
}

impl SparseAdagrad {
    pub fn new(table: &EmbeddingTable, lr: f64, eps: f64) -> Result<Self> {
        if lr <= 0.0 || eps <= 0.0 {
            return Err(Error::invalid("adagrad lr and eps must be positive"));
        }
        Ok(SparseAdagrad {
            acc: vec![0.0; table.n_rows() * table.dim],
            dim: table.dim,
            lr,
            eps,
        })
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.acc
    }

    /// Lazy step: rows absent from `row_grads` are untouched, in both the
    /// table and the accumulator. BTreeMap keys give a canonical update order.
    pub fn step(
        &mut self,
        table: &mut EmbeddingTable,
        row_grads: &BTreeMap<u32, Vec<f64>>,
    ) -> Result<()> {
        if table.frozen() {
            return Err(Error::FrozenViolation);
        }
        let mut row = vec![0.0f64; self.dim];
        for (&id, g) in row_grads {
            if g.len() != self.dim {
                return Err(Error::Contract("gradient dim mismatch".into()));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite embedding gradient".into()));
            }
            table.id_space.check(id)?;
            table.read_row_into(id, &mut row);
            let base = id as usize * self.dim;
            for k in 0..self.dim {
                let gk = g[k];
                self.acc[base + k] += gk * gk;
                row[k] -= self.lr * gk / (self.acc[base + k].sqrt() + self.eps);
            }
            table.write_row(id, &row)?;
        }
        Ok(())
    }
}

/// Adagrad on a single scalar (the temperature parameter theta).
#[derive(Debug, Clone)]
pub struct ScalarAdagrad {
    acc: f64,
    pub lr: f64,
    pub eps: f64,
}

impl ScalarAdagrad {
    pub fn new(lr: f64, eps: f64) -> Self {
        ScalarAdagrad { acc: 0.0, lr, eps }
    }

    pub fn step(&mut self, value: &mut f64, grad: f64) {
        if grad == 0.0 {
            return;
        }
        self.acc += grad * grad;
        *value -= self.lr * grad / (self.acc.sqrt() + self.eps);
    }
}

#[derive(Debug, Clone)]
pub struct DenseAdam {
    m: MlpGrads,
    v: MlpGrads,
    step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl DenseAdam {
    pub fn new(params: &MlpParams, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        DenseAdam {
            m: MlpGrads::zeros_like(params),
            v: MlpGrads::zeros_like(params),
            step_count: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
        if grads.d_weights.len() != params.weights.len() {
            return Err(Error::Contract("adam gradient shape mismatch".into()));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for l in 0..params.weights.len() {
            if grads.d_weights[l].rows != params.weights[l].rows
                || grads.d_weights[l].cols != params.weights[l].cols
            {
                return Err(Error::Contract("adam gradient shape mismatch".into()));
            }
            adam_update(
                &mut params.weights[l].data,
                &grads.d_weights[l].data,
                &mut self.m.d_weights[l].data,
                &mut self.v.d_weights[l].data,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            adam_update(
                &mut params.biases[l],
                &grads.d_biases[l],
                &mut self.m.d_biases[l],
                &mut self.v.d_biases[l],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
