//! Pointwise per-face network `F -> H -> H -> {C softmax, E embedding}`
//! with ReLU hidden layers, hand-written backpropagation and Adam.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::Prediction;
use crate::preprocess::FEATURE_DIM;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_EMBED: usize = 16;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub features: usize,
    pub hidden: usize,
    pub classes: usize,
    pub embed: usize,
}

impl Dims {
    pub fn new(classes: usize) -> Self {
        Dims {
            features: FEATURE_DIM,
            hidden: DEFAULT_HIDDEN,
            classes,
            embed: DEFAULT_EMBED,
        }
    }

    /// `(rows, cols)` of each block in storage order: w1, b1, w2, b2, wc,
    /// bc, we, be. Biases have one row.
    fn blocks(&self) -> [(usize, usize); 8] {
        let (f, h, c, e) = (self.features, self.hidden, self.classes, self.embed);
        [
            (f, h),
            (1, h),
            (h, h),
            (1, h),
            (h, c),
            (1, c),
            (h, e),
            (1, e),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(r, c)| r * c).sum()
    }

    fn offsets(&self) -> [usize; 9] {
        let mut out = [0; 9];
        for (k, (r, c)) in self.blocks().iter().enumerate() {
            out[k + 1] = out[k] + r * c;
        }
        out
    }
}

const W1: usize = 0;
const B1: usize = 1;
const W2: usize = 2;
const B2: usize = 3;
const WC: usize = 4;
const BC: usize = 5;
const WE: usize = 6;
const BE: usize = 7;

/// All weights and biases in one flat buffer. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        ModelParams {
            dims,
            data: vec![0.0; dims.param_count()],
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut p = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offs = dims.offsets();
        for k in [W1, W2, WC, WE] {
            let (r, c) = dims.blocks()[k];
            let limit = (6.0 / (r + c) as f64).sqrt();
            for x in &mut p.data[offs[k]..offs[k + 1]] {
                *x = rng.random_range(-limit..limit);
            }
        }
        p
    }

    fn block(&self, k: usize) -> ArrayView2<'_, f64> {
        let offs = self.dims.offsets();
        let shape = self.dims.blocks()[k];
        ArrayView2::from_shape(shape, &self.data[offs[k]..offs[k + 1]]).unwrap()
    }

    fn bias(&self, k: usize) -> ArrayView1<'_, f64> {
        self.block(k).index_axis_move(Axis(0), 0)
    }

    fn from_blocks(dims: Dims, blocks: [Array2<f64>; 8]) -> Self {
        let mut data = Vec::with_capacity(dims.param_count());
        for b in &blocks {
            data.extend(b.iter());
        }
        ModelParams { dims, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Intermediate activations kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    probs: Array2<f64>,
}

fn relu(mut z: Array2<f64>) -> Array2<f64> {
    z.mapv_inplace(|v| v.max(0.0));
    z
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    z
}

pub fn forward_cached(
    params: &ModelParams,
    features: ArrayView2<f64>,
) -> Result<(Prediction, ForwardCache), ModelError> {
    if features.ncols() != params.dims.features {
        return Err(ModelError::Shape(format!(
            "features have {} columns, model expects {}",
            features.ncols(),
            params.dims.features
        )));
    }
    let h1 = relu(features.dot(&params.block(W1)) + params.bias(B1));
    let h2 = relu(h1.dot(&params.block(W2)) + params.bias(B2));
    let probs = softmax_rows(h2.dot(&params.block(WC)) + params.bias(BC));
    let embed = h2.dot(&params.block(WE)) + params.bias(BE);
    let cache = ForwardCache {
        x: features.to_owned(),
        h1,
        h2,
        probs: probs.clone(),
    };
    Ok((Prediction { probs, embed }, cache))
}

pub fn forward(params: &ModelParams, features: ArrayView2<f64>) -> Result<Prediction, ModelError> {
    forward_cached(params, features).map(|(p, _)| p)
}

/// Parameter gradient given upstream gradients w.r.t. the softmax output
/// and the embedding.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    d_probs: ArrayView2<f64>,
    d_embed: ArrayView2<f64>,
) -> Result<ModelParams, ModelError> {
    let n = cache.x.nrows();
    let dims = params.dims;
    if d_probs.dim() != (n, dims.classes) || d_embed.dim() != (n, dims.embed) {
        return Err(ModelError::Shape(format!(
            "upstream gradients are {:?} and {:?}, expected ({n}, {}) and ({n}, {})",
            d_probs.dim(),
            d_embed.dim(),
            dims.classes,
            dims.embed
        )));
    }
    // softmax Jacobian: dz = p * (dp - <dp, p>)
    let mut dz = &cache.probs * &d_probs;
    let inner = dz.sum_axis(Axis(1));
    for (mut row, (p, s)) in dz
        .rows_mut()
        .into_iter()
        .zip(cache.probs.rows().into_iter().zip(inner.iter()))
    {
        row.scaled_add(-s, &p);
    }
    let col_sums = |m: &Array2<f64>| m.sum_axis(Axis(0)).insert_axis(Axis(0));

    let g_wc = cache.h2.t().dot(&dz);
    let g_bc = col_sums(&dz);
    let g_we = cache.h2.t().dot(&d_embed);
    let g_be = d_embed.sum_axis(Axis(0)).insert_axis(Axis(0));

    let mut dh2 = dz.dot(&params.block(WC).t()) + d_embed.dot(&params.block(WE).t());
    dh2.zip_mut_with(&cache.h2, |g, &h| {
        if h <= 0.0 {
            *g = 0.0
        }
    });
    let g_w2 = cache.h1.t().dot(&dh2);
    let g_b2 = col_sums(&dh2);

    let mut dh1 = dh2.dot(&params.block(W2).t());
    dh1.zip_mut_with(&cache.h1, |g, &h| {
        if h <= 0.0 {
            *g = 0.0
        }
    });
    let g_w1 = cache.x.t().dot(&dh1);
    let g_b1 = col_sums(&dh1);

    Ok(ModelParams::from_blocks(
        dims,
        [g_w1, g_b1, g_w2, g_b2, g_wc, g_bc, g_we, g_be],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Calls to [`update`].
    pub step: u64,
    /// Updates applied to each parameter block; drives bias correction.
    pub block_steps: Vec<u64>,
}

impl OptimState {
    pub fn new(config: AdamConfig, dims: Dims) -> Self {
        let n = dims.param_count();
        OptimState {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            block_steps: vec![0; dims.blocks().len()],
        }
    }
}

/// One Adam step with bias correction. A block whose gradient is exactly
/// zero (a head the loss never reached) is skipped: its moments, values
/// and step count stay as they were. Rejects non-finite gradients before
/// touching any state.
pub fn update(
    params: &mut ModelParams,
    grads: &ModelParams,
    opt: &mut OptimState,
) -> Result<(), ModelError> {
    let offs = params.dims.offsets();
    if grads.dims != params.dims
        || opt.m.len() != params.data.len()
        || opt.block_steps.len() + 1 != offs.len()
    {
        return Err(ModelError::Shape(
            "gradient or optimizer state does not match parameters".into(),
        ));
    }
    if let Some(index) = grads.data.iter().position(|g| !g.is_finite()) {
        return Err(ModelError::NonFiniteGradient { index });
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = opt.config;
    opt.step += 1;
    for (b, range) in offs.windows(2).map(|w| w[0]..w[1]).enumerate() {
        if grads.data[range.clone()].iter().all(|&g| g == 0.0) {
            continue;
        }
        opt.block_steps[b] += 1;
        let t = opt.block_steps[b] as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for k in range {
            let g = grads.data[k];
            opt.m[k] = beta1 * opt.m[k] + (1.0 - beta1) * g;
            opt.v[k] = beta2 * opt.v[k] + (1.0 - beta2) * g * g;
            let m_hat = opt.m[k] / c1;
            let v_hat = opt.v[k] / c2;
            params.data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Parameters plus optimizer state, serialized as JSON with exact float
/// round-trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: ModelParams,
    pub optim: OptimState,
}

impl Checkpoint {
    pub fn new(params: ModelParams, optim: OptimState) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            params,
            optim,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {}",
                ck.version
            )));
        }
        let n = ck.params.dims.param_count();
        if ck.params.data.len() != n || ck.optim.m.len() != n || ck.optim.v.len() != n {
            return Err(ModelError::Checkpoint(format!(
                "expected {n} values per array"
            )));
        }
        Ok(ck)
    }
}
