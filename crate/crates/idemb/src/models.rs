//! Stage-1 two-tower dot-product scorer and the Stage-2 downstream CTR model
//! (a small relu MLP over concat(u, p, u*p)) with manual backpropagation.

use crate::core_types::EmbeddingTable;
use crate::error::{Error, Result};
use crate::loss_grad::Temperature;
use crate::mat::{dot, Mat};
use crate::rng::{stream_rng, Stream};
use rand::Rng;

/// Minimal dot-product model: user tower and item tower are bare embedding
/// tables, combined only by an inner product.
#[derive(Debug, Clone)]
pub struct TwoTowerModel {
    pub user_table: EmbeddingTable,
    pub item_table: EmbeddingTable,
    pub temp: Temperature,
}

impl TwoTowerModel {
    pub fn new(user_table: EmbeddingTable, item_table: EmbeddingTable, temp: Temperature) -> Result<Self> {
        if user_table.dim != item_table.dim {
            return Err(Error::Contract("tower dims must match".into()));
        }
        Ok(TwoTowerModel {
            user_table,
            item_table,
            temp,
        })
    }

    /// Raw dot-product scores; temperature is applied inside losses, not here.
    pub fn score(&self, user_ids: &[u32], item_ids: &[u32]) -> Result<Vec<f64>> {
        if user_ids.len() != item_ids.len() {
            return Err(Error::Contract("id list lengths differ".into()));
        }
        let mut out = Vec::with_capacity(user_ids.len());
        let d = self.user_table.dim;
        let mut u = vec![0.0; d];
        let mut p = vec![0.0; d];
        for (&uid, &iid) in user_ids.iter().zip(item_ids) {
            self.user_table.id_space.check(uid)?;
            self.item_table.id_space.check(iid)?;
            self.user_table.read_row_into(uid, &mut u);
            self.item_table.read_row_into(iid, &mut p);
            out.push(dot(&u, &p));
        }
        Ok(out)
    }
}

/// MLP over the 3d feature map, relu hidden layers, single logit output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// [input, h1, h2, ..., 1]
    pub layer_dims: Vec<usize>,
    /// weights[l] has shape (layer_dims[l+1], layer_dims[l]), row-major.
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpParams {
    /// Seeded uniform Glorot-style init.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("mlp needs at least two nonzero layer dims"));
        }
        if *layer_dims.last().unwrap() != 1 {
            return Err(Error::invalid("mlp output layer must have width 1"));
        }
        let mut rng = stream_rng(seed, Stream::MlpInit);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            let data = (0..n_in * n_out)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            weights.push(Mat::from_vec(n_out, n_in, data));
            biases.push(vec![0.0; n_out]);
        }
        Ok(MlpParams {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
            && self.biases.iter().flatten().all(|b| b.is_finite())
    }
}

/// Gradients shaped like `MlpParams`.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub d_weights: Vec<Mat>,
    pub d_biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        MlpGrads {
            d_weights: p.weights.iter().map(|w| Mat::zeros(w.rows, w.cols)).collect(),
            d_biases: p.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingMode {
    Scratch,
    Frozen,
    FineTune,
}

impl EmbeddingMode {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingMode::Scratch => "scratch",
            EmbeddingMode::Frozen => "frozen",
            EmbeddingMode::FineTune => "finetune",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DownstreamModel {
    pub user_table: EmbeddingTable,
    pub item_table: EmbeddingTable,
    pub mlp: MlpParams,
    pub embedding_mode: EmbeddingMode,
}

impl DownstreamModel {
    pub fn new(
        mut user_table: EmbeddingTable,
        mut item_table: EmbeddingTable,
        mlp: MlpParams,
        embedding_mode: EmbeddingMode,
    ) -> Result<Self> {
        if user_table.dim != item_table.dim {
            return Err(Error::Contract("table dims must match".into()));
        }
        if mlp.layer_dims[0] != 3 * user_table.dim {
            return Err(Error::Contract(format!(
                "mlp input width {} != 3 * dim {}",
                mlp.layer_dims[0],
                3 * user_table.dim
            )));
        }
        let frozen = embedding_mode == EmbeddingMode::Frozen;
        user_table.set_frozen(frozen);
        item_table.set_frozen(frozen);
        Ok(DownstreamModel {
            user_table,
            item_table,
            mlp,
            embedding_mode,
        })
    }
}

/// Activations retained for the backward pass.
pub struct CtrCache {
    user_vecs: Mat,
    item_vecs: Mat,
    /// Layer inputs: activations[0] is the feature matrix, activations[l]
    /// the post-relu output of layer l-1.
    activations: Vec<Mat>,
    /// Pre-activation values per layer (for the relu derivative).
    pre_acts: Vec<Mat>,
    shape: (usize, usize),
}

/// concat(u, p, u*p) per row.
fn feature_map(u: &Mat, p: &Mat) -> Mat {
    let (b, d) = (u.rows, u.cols);
    let mut f = Mat::zeros(b, 3 * d);
    for i in 0..b {
        let ur = u.row(i);
        let pr = p.row(i);
        let fr = f.row_mut(i);
        fr[..d].copy_from_slice(ur);
        fr[d..2 * d].copy_from_slice(pr);
        for k in 0..d {
            fr[2 * d + k] = ur[k] * pr[k];
        }
    }
    f
}

/// Forward pass on explicit embedding matrices (f64); the table-backed entry
/// point and the gradient-check harness both go through here.
pub fn ctr_forward_vecs(mlp: &MlpParams, user_vecs: Mat, item_vecs: Mat) -> Result<(Vec<f64>, CtrCache)> {
    if user_vecs.rows != item_vecs.rows || user_vecs.cols != item_vecs.cols {
        return Err(Error::Contract("embedding matrix shape mismatch".into()));
    }
    if mlp.layer_dims[0] != 3 * user_vecs.cols {
        return Err(Error::Contract("feature width does not match mlp input".into()));
    }
    let b = user_vecs.rows;
    let features = feature_map(&user_vecs, &item_vecs);
    let mut activations = vec![features];
    let mut pre_acts = Vec::new();
    let last = mlp.n_layers() - 1;
    for (l, (w, bias)) in mlp.weights.iter().zip(&mlp.biases).enumerate() {
        let mut z = Mat::matmul_nt(activations.last().unwrap(), w);
        for i in 0..z.rows {
            let zr = z.row_mut(i);
            for (j, zb) in zr.iter_mut().enumerate() {
                *zb += bias[j];
            }
        }
        pre_acts.push(z.clone());
        if l < last {
            for v in z.data.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        activations.push(z);
    }
    let logits: Vec<f64> = activations.last().unwrap().data.clone();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    Ok((
        logits,
        CtrCache {
            user_vecs,
            item_vecs,
            activations,
            pre_acts,
            shape: (b, mlp.layer_dims[0]),
        },
    ))
}

/// Table-backed forward: looks up rows then defers to `ctr_forward_vecs`.
pub fn ctr_forward(
    model: &DownstreamModel,
    user_ids: &[u32],
    item_ids: &[u32],
) -> Result<(Vec<f64>, CtrCache)> {
    if user_ids.len() != item_ids.len() {
        return Err(Error::Contract("id list lengths differ".into()));
    }
    let u = model.user_table.lookup(user_ids)?;
    let p = model.item_table.lookup(item_ids)?;
    ctr_forward_vecs(&model.mlp, u, p)
}

/// Reverse-mode gradients through the MLP, the concatenation, and the
/// elementwise product. Embedding gradients are returned per input row;
/// aggregation over duplicate ids is the caller's job.
pub fn ctr_backward(
    mlp: &MlpParams,
    cache: &CtrCache,
    dloss_dlogits: &[f64],
) -> Result<(MlpGrads, Mat, Mat)> {
    let b = cache.shape.0;
    if dloss_dlogits.len() != b {
        return Err(Error::Contract("dloss_dlogits length mismatch".into()));
    }
    if mlp.layer_dims[0] != cache.shape.1 {
        return Err(Error::Contract("cache does not match this mlp".into()));
    }
    let mut grads = MlpGrads::zeros_like(mlp);
    let last = mlp.n_layers() - 1;

    // Upstream gradient for the output layer.
    let mut dz = Mat::from_vec(b, 1, dloss_dlogits.to_vec());
    for l in (0..=last).rev() {
        if l < last {
            // dz arrived as d(activation); gate by relu'.
            for (v, &z) in dz.data.iter_mut().zip(&cache.pre_acts[l].data) {
                if z <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        grads.d_weights[l] = Mat::matmul_tn(&dz, &cache.activations[l]);
        for i in 0..b {
            let dr = dz.row(i);
            for (j, g) in grads.d_biases[l].iter_mut().enumerate() {
                *g += dr[j];
            }
        }
        dz = Mat::matmul_nn(&dz, &mlp.weights[l]);
    }

    // dz is now the gradient w.r.t. the feature matrix (B x 3d).
    let d = cache.user_vecs.cols;
    let mut d_user = Mat::zeros(b, d);
    let mut d_item = Mat::zeros(b, d);
    for i in 0..b {
        let g = dz.row(i);
        let ur = cache.user_vecs.row(i);
        let pr = cache.item_vecs.row(i);
        let du = d_user.row_mut(i);
        let dp = d_item.row_mut(i);
        for k in 0..d {
            du[k] = g[k] + pr[k] * g[2 * d + k];
            dp[k] = g[d + k] + ur[k] * g[2 * d + k];
        }
    }
    Ok((grads, d_user, d_item))
}
