//! The transformer itself: configuration, flat parameter storage with a
//! named layout, forward pass with a full activation cache, and hand-written
//! reverse-mode backward with optional feature-gradient injection at block
//! outputs.
//!
//! Blocks are pre-LN (LN → attention → residual, LN → MLP with GELU →
//! residual), there is no class token, and the head mean-pools tokens. Every
//! parameter lives in one flat f64 vector addressed through [`Layout`], which
//! is what keeps the optimizer, checkpointing, and finite-difference tests
//! simple.

use serde::{Deserialize, Serialize};

use super::rng::SplitMix64;
use crate::tensor::TensorError;

pub const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    #[serde(default = "default_class_count")]
    pub class_count: usize,
    pub seed: u64,
}

fn default_image_size() -> usize {
    16
}
fn default_patch_size() -> usize {
    4
}
fn default_mlp_ratio() -> usize {
    4
}
fn default_class_count() -> usize {
    10
}

impl ModelConfig {
    /// The shipped teacher size: dim 32, depth 8, 4 heads.
    pub fn teacher_default(seed: u64) -> Self {
        Self {
            image_size: 16,
            patch_size: 4,
            embed_dim: 32,
            depth: 8,
            heads: 4,
            mlp_ratio: 4,
            class_count: 10,
            seed,
        }
    }

    /// The shipped student size: dim 16, depth 4, 2 heads (half the teacher
    /// in both width and depth).
    pub fn student_default(seed: u64) -> Self {
        Self {
            embed_dim: 16,
            depth: 4,
            heads: 2,
            ..Self::teacher_default(seed)
        }
    }

    pub fn validate(&self) -> Result<(), TinyVitError> {
        if self.patch_size == 0 || self.image_size == 0 {
            return Err(TinyVitError::BadConfig("zero image or patch size".into()));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(TinyVitError::BadConfig(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(TinyVitError::BadConfig(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.depth == 0 {
            return Err(TinyVitError::BadConfig("depth must be >= 1".into()));
        }
        if self.mlp_ratio == 0 {
            return Err(TinyVitError::BadConfig("mlp_ratio must be >= 1".into()));
        }
        if self.class_count < 2 {
            return Err(TinyVitError::BadConfig("class_count must be >= 2".into()));
        }
        Ok(())
    }

    /// Patches per side of the image grid.
    pub fn side(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Token count (no class token).
    pub fn tokens(&self) -> usize {
        self.side() * self.side()
    }

    /// Pixels per patch.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn hidden(&self) -> usize {
        self.mlp_ratio * self.embed_dim
    }
}

#[derive(Debug)]
pub enum TinyVitError {
    BadConfig(String),
    ShapeMismatch(String),
    Tensor(TensorError),
    Manifest(String),
}

impl std::fmt::Display for TinyVitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::BadConfig(why) => write!(f, "bad model config: {why}"),
            Self::ShapeMismatch(why) => write!(f, "shape mismatch: {why}"),
            Self::Tensor(e) => write!(f, "tensor error: {e}"),
            Self::Manifest(why) => write!(f, "bad checkpoint manifest: {why}"),
        }
    }
}

impl std::error::Error for TinyVitError {}

impl From<TensorError> for TinyVitError {
    fn from(e: TensorError) -> Self {
        Self::Tensor(e)
    }
}

/// Name, shape, and flat offset of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat offsets of one block's tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Where every tensor lives inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub patch_w: usize,
    pub patch_b: usize,
    pub pos: usize,
    pub blocks: Vec<BlockOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
    pub specs: Vec<TensorSpec>,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        let p = cfg.patch_dim();
        let n = cfg.tokens();
        let hidden = cfg.hidden();
        let k = cfg.class_count;

        let mut specs = Vec::new();
        let mut cursor = 0usize;
        let mut claim = |name: String, shape: Vec<usize>| -> usize {
            let offset = cursor;
            cursor += shape.iter().product::<usize>();
            specs.push(TensorSpec {
                name,
                shape,
                offset,
            });
            offset
        };

        let patch_w = claim("patch_w".into(), vec![d, p]);
        let patch_b = claim("patch_b".into(), vec![d]);
        let pos = claim("pos".into(), vec![n, d]);
        let mut blocks = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            blocks.push(BlockOffsets {
                ln1_g: claim(format!("block{l}.ln1_g"), vec![d]),
                ln1_b: claim(format!("block{l}.ln1_b"), vec![d]),
                wq: claim(format!("block{l}.wq"), vec![d, d]),
                bq: claim(format!("block{l}.bq"), vec![d]),
                wk: claim(format!("block{l}.wk"), vec![d, d]),
                bk: claim(format!("block{l}.bk"), vec![d]),
                wv: claim(format!("block{l}.wv"), vec![d, d]),
                bv: claim(format!("block{l}.bv"), vec![d]),
                wo: claim(format!("block{l}.wo"), vec![d, d]),
                bo: claim(format!("block{l}.bo"), vec![d]),
                ln2_g: claim(format!("block{l}.ln2_g"), vec![d]),
                ln2_b: claim(format!("block{l}.ln2_b"), vec![d]),
                w1: claim(format!("block{l}.w1"), vec![hidden, d]),
                b1: claim(format!("block{l}.b1"), vec![hidden]),
                w2: claim(format!("block{l}.w2"), vec![d, hidden]),
                b2: claim(format!("block{l}.b2"), vec![d]),
            });
        }
        let lnf_g = claim("lnf_g".into(), vec![d]);
        let lnf_b = claim("lnf_b".into(), vec![d]);
        let head_w = claim("head_w".into(), vec![k, d]);
        let head_b = claim("head_b".into(), vec![k]);

        Self {
            patch_w,
            patch_b,
            pos,
            blocks,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
            total: cursor,
            specs,
        }
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }
}

/// All parameters of one model, flat, plus the layout that addresses them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl ModelParams {
    /// Seeded initialization: Gaussian(0, 0.02) for every weight matrix and
    /// the positional table, ones for layernorm gains, zeros for all biases.
    /// Draw order is fixed (patch, pos, blocks in depth order, head), which
    /// is what makes init bitwise-reproducible.
    pub fn init(cfg: &ModelConfig) -> Result<Self, TinyVitError> {
        cfg.validate()?;
        let layout = Layout::new(cfg);
        let mut data = vec![0.0; layout.total];
        let mut rng = SplitMix64::new(cfg.seed);
        let d = cfg.embed_dim;
        let fill = |start: usize, len: usize, rng: &mut SplitMix64, data: &mut Vec<f64>| {
            for v in &mut data[start..start + len] {
                *v = INIT_STD * rng.next_gaussian();
            }
        };

        fill(layout.patch_w, d * cfg.patch_dim(), &mut rng, &mut data);
        fill(layout.pos, cfg.tokens() * d, &mut rng, &mut data);
        for off in &layout.blocks {
            fill(off.wq, d * d, &mut rng, &mut data);
            fill(off.wk, d * d, &mut rng, &mut data);
            fill(off.wv, d * d, &mut rng, &mut data);
            fill(off.wo, d * d, &mut rng, &mut data);
            fill(off.w1, cfg.hidden() * d, &mut rng, &mut data);
            fill(off.w2, d * cfg.hidden(), &mut rng, &mut data);
            for v in &mut data[off.ln1_g..off.ln1_g + d] {
                *v = 1.0;
            }
            for v in &mut data[off.ln2_g..off.ln2_g + d] {
                *v = 1.0;
            }
        }
        for v in &mut data[layout.lnf_g..layout.lnf_g + d] {
            *v = 1.0;
        }
        fill(layout.head_w, cfg.class_count * d, &mut rng, &mut data);

        Ok(Self {
            cfg: *cfg,
            layout,
            data,
        })
    }
}

/// Normalized activations and the inverse stddev of one layernorm site.
#[derive(Debug, Clone)]
struct LnCache {
    /// (rows, D) normalized pre-affine values.
    xhat: Vec<f64>,
    /// (rows) 1/sqrt(var + eps) per token.
    inv_std: Vec<f64>,
    /// (rows, D) post-affine output, the input to the next matmul.
    out: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    ln1: LnCache,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// (B, heads, N, N) attention weights after softmax.
    att: Vec<f64>,
    /// (B, N, D) heads concatenated.
    ctx: Vec<f64>,
    ln2: LnCache,
    /// (B, N, hidden) MLP pre-activation.
    pre_act: Vec<f64>,
    /// (B, N, hidden) GELU output.
    act: Vec<f64>,
}

/// Everything the backward pass and the analysis pipeline need from one
/// forward pass.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    pub batch: usize,
    /// (B, N, P) extracted patches.
    patches: Vec<f64>,
    /// (B, N, D) after patch embedding plus positions.
    pub x0: Vec<f64>,
    blocks: Vec<BlockCache>,
    /// Post-block token maps, one (B, N, D) vector per layer; the features
    /// that spectral analysis and distillation read.
    pub layer_tokens: Vec<Vec<f64>>,
    final_norm: LnCache,
    /// (B, D) token mean after the final layernorm.
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ActivationCache {
    /// Token map of the 1-indexed layer `k`, as (B, N, D) flat data.
    pub fn layer(&self, k: usize) -> &[f64] {
        &self.layer_tokens[k - 1]
    }
}

/// y[r, o] = Σ_i w[o, i]·x[r, i] + b[o], rows-major everything.
fn linear(x: &[f64], w: &[f64], b: &[f64], rows: usize, d_in: usize, d_out: usize, y: &mut [f64]) {
    for r in 0..rows {
        let xr = &x[r * d_in..(r + 1) * d_in];
        let yr = &mut y[r * d_out..(r + 1) * d_out];
        for o in 0..d_out {
            let wo = &w[o * d_in..(o + 1) * d_in];
            let mut acc = b[o];
            for i in 0..d_in {
                acc += wo[i] * xr[i];
            }
            yr[o] = acc;
        }
    }
}

/// Accumulates dw, db and writes dx for the linear map above.
/// dx is overwritten, dw/db are accumulated into.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    d_in: usize,
    d_out: usize,
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    for r in 0..rows {
        let xr = &x[r * d_in..(r + 1) * d_in];
        let dyr = &dy[r * d_out..(r + 1) * d_out];
        let dxr = &mut dx[r * d_in..(r + 1) * d_in];
        dxr.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..d_out {
            let g = dyr[o];
            db[o] += g;
            let wo = &w[o * d_in..(o + 1) * d_in];
            let dwo = &mut dw[o * d_in..(o + 1) * d_in];
            for i in 0..d_in {
                dwo[i] += g * xr[i];
                dxr[i] += g * wo[i];
            }
        }
    }
}

/// Layernorm over the last axis with cached normalized values.
fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], rows: usize, d: usize) -> LnCache {
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    let mut out = vec![0.0; rows * d];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = istd;
        for i in 0..d {
            let xh = (xr[i] - mean) * istd;
            xhat[r * d + i] = xh;
            out[r * d + i] = gain[i] * xh + bias[i];
        }
    }
    LnCache { xhat, inv_std, out }
}

/// Backward of [`layer_norm`]: writes dx, accumulates dgain/dbias.
fn layer_norm_backward(
    ln: &LnCache,
    gain: &[f64],
    dy: &[f64],
    rows: usize,
    d: usize,
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    for r in 0..rows {
        let xh = &ln.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for i in 0..d {
            let dxh = dyr[i] * gain[i];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[i];
            dgain[i] += dyr[i] * xh[i];
            dbias[i] += dyr[i];
        }
        let m1 = sum_dxhat / d as f64;
        let m2 = sum_dxhat_xhat / d as f64;
        let istd = ln.inv_std[r];
        for i in 0..d {
            let dxh = dyr[i] * gain[i];
            dx[r * d + i] = istd * (dxh - m1 - xh[i] * m2);
        }
    }
}

const GELU_S: f64 = 0.7978845608028654; // sqrt(2/π)
const GELU_C: f64 = 0.044715;

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_S * (u + GELU_C * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_S * (u + GELU_C * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_S * (1.0 + 3.0 * GELU_C * u * u)
}

/// Full forward pass over a batch of flat row-major images.
///
/// Returns the logits (B, K) and the cache holding every intermediate the
/// backward pass or the spectral pipeline might want.
pub fn forward(p: &ModelParams, images: &[Vec<f64>]) -> (Vec<f64>, ActivationCache) {
    let cfg = &p.cfg;
    let lay = &p.layout;
    let b_count = images.len();
    let (n, d, pd) = (cfg.tokens(), cfg.embed_dim, cfg.patch_dim());
    let (heads, hd, hidden) = (cfg.heads, cfg.embed_dim / cfg.heads, cfg.hidden());
    let side = cfg.side();
    let rows = b_count * n;
    let scale = 1.0 / (hd as f64).sqrt();

    // Patch extraction.
    let mut patches = vec![0.0; rows * pd];
    for (b, img) in images.iter().enumerate() {
        assert_eq!(
            img.len(),
            cfg.image_size * cfg.image_size,
            "image size disagrees with config"
        );
        for pn in 0..n {
            let (pi, pj) = (pn / side, pn % side);
            for r in 0..cfg.patch_size {
                for c in 0..cfg.patch_size {
                    patches[(b * n + pn) * pd + r * cfg.patch_size + c] =
                        img[(pi * cfg.patch_size + r) * cfg.image_size + pj * cfg.patch_size + c];
                }
            }
        }
    }

    // Patch embedding plus positions.
    let mut x = vec![0.0; rows * d];
    linear(
        &patches,
        &p.data[lay.patch_w..lay.patch_w + d * pd],
        &p.data[lay.patch_b..lay.patch_b + d],
        rows,
        pd,
        d,
        &mut x,
    );
    for b in 0..b_count {
        for t in 0..n {
            for i in 0..d {
                x[(b * n + t) * d + i] += p.data[lay.pos + t * d + i];
            }
        }
    }
    let x0 = x.clone();

    let mut blocks = Vec::with_capacity(cfg.depth);
    let mut layer_tokens = Vec::with_capacity(cfg.depth);
    for off in &lay.blocks {
        // Attention half.
        let ln1 = layer_norm(
            &x,
            &p.data[off.ln1_g..off.ln1_g + d],
            &p.data[off.ln1_b..off.ln1_b + d],
            rows,
            d,
        );
        let mut q = vec![0.0; rows * d];
        let mut k = vec![0.0; rows * d];
        let mut v = vec![0.0; rows * d];
        linear(&ln1.out, &p.data[off.wq..off.wq + d * d], &p.data[off.bq..off.bq + d], rows, d, d, &mut q);
        linear(&ln1.out, &p.data[off.wk..off.wk + d * d], &p.data[off.bk..off.bk + d], rows, d, d, &mut k);
        linear(&ln1.out, &p.data[off.wv..off.wv + d * d], &p.data[off.bv..off.bv + d], rows, d, d, &mut v);

        let mut att = vec![0.0; b_count * heads * n * n];
        let mut ctx = vec![0.0; rows * d];
        for b in 0..b_count {
            for h in 0..heads {
                let att_base = (b * heads + h) * n * n;
                for i in 0..n {
                    let qi = &q[(b * n + i) * d + h * hd..(b * n + i) * d + (h + 1) * hd];
                    let row = &mut att[att_base + i * n..att_base + (i + 1) * n];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..n {
                        let kj = &k[(b * n + j) * d + h * hd..(b * n + j) * d + (h + 1) * hd];
                        let mut s = 0.0;
                        for e in 0..hd {
                            s += qi[e] * kj[e];
                        }
                        let s = s * scale;
                        row[j] = s;
                        max = max.max(s);
                    }
                    let mut sum = 0.0;
                    for j in 0..n {
                        row[j] = (row[j] - max).exp();
                        sum += row[j];
                    }
                    let inv = 1.0 / sum;
                    for j in 0..n {
                        row[j] *= inv;
                    }
                    let ci = &mut ctx[(b * n + i) * d + h * hd..(b * n + i) * d + (h + 1) * hd];
                    for j in 0..n {
                        let w = row[j];
                        let vj = &v[(b * n + j) * d + h * hd..(b * n + j) * d + (h + 1) * hd];
                        for e in 0..hd {
                            ci[e] += w * vj[e];
                        }
                    }
                }
            }
        }

        let mut attn_out = vec![0.0; rows * d];
        linear(&ctx, &p.data[off.wo..off.wo + d * d], &p.data[off.bo..off.bo + d], rows, d, d, &mut attn_out);
        let mut x_mid = x;
        for (xm, ao) in x_mid.iter_mut().zip(&attn_out) {
            *xm += ao;
        }

        // MLP half.
        let ln2 = layer_norm(
            &x_mid,
            &p.data[off.ln2_g..off.ln2_g + d],
            &p.data[off.ln2_b..off.ln2_b + d],
            rows,
            d,
        );
        let mut pre_act = vec![0.0; rows * hidden];
        linear(&ln2.out, &p.data[off.w1..off.w1 + hidden * d], &p.data[off.b1..off.b1 + hidden], rows, d, hidden, &mut pre_act);
        let act: Vec<f64> = pre_act.iter().map(|&u| gelu(u)).collect();
        let mut mlp_out = vec![0.0; rows * d];
        linear(&act, &p.data[off.w2..off.w2 + d * hidden], &p.data[off.b2..off.b2 + d], rows, hidden, d, &mut mlp_out);
        let mut x_out = x_mid.clone();
        for (xo, mo) in x_out.iter_mut().zip(&mlp_out) {
            *xo += mo;
        }

        blocks.push(BlockCache {
            ln1,
            q,
            k,
            v,
            att,
            ctx,
            ln2,
            pre_act,
            act,
        });
        layer_tokens.push(x_out.clone());
        x = x_out;
    }

    // Final norm, mean pool, classifier.
    let final_norm = layer_norm(
        &x,
        &p.data[lay.lnf_g..lay.lnf_g + d],
        &p.data[lay.lnf_b..lay.lnf_b + d],
        rows,
        d,
    );
    let mut pooled = vec![0.0; b_count * d];
    for b in 0..b_count {
        for t in 0..n {
            for i in 0..d {
                pooled[b * d + i] += final_norm.out[(b * n + t) * d + i];
            }
        }
        for i in 0..d {
            pooled[b * d + i] /= n as f64;
        }
    }
    let k_classes = cfg.class_count;
    let mut logits = vec![0.0; b_count * k_classes];
    linear(
        &pooled,
        &p.data[lay.head_w..lay.head_w + k_classes * d],
        &p.data[lay.head_b..lay.head_b + k_classes],
        b_count,
        d,
        k_classes,
        &mut logits,
    );

    let cache = ActivationCache {
        batch: b_count,
        patches,
        x0,
        blocks,
        layer_tokens,
        final_norm,
        pooled,
        logits: logits.clone(),
    };
    (logits, cache)
}

/// Exact reverse-mode gradients for every parameter.
///
/// `logit_grad` is dL/dlogits (B, K). `feature_grads` carries optional
/// dL/d(layer output) terms as (1-indexed layer, flat (B, N, D)) pairs; they
/// are added where the corresponding block output enters the reverse walk,
/// so a gradient injected at layer k can never touch parameters above k.
pub fn backward(
    p: &ModelParams,
    cache: &ActivationCache,
    logit_grad: &[f64],
    feature_grads: &[(usize, &[f64])],
) -> Result<Vec<f64>, TinyVitError> {
    let cfg = &p.cfg;
    let lay = &p.layout;
    let b_count = cache.batch;
    let (n, d, pd) = (cfg.tokens(), cfg.embed_dim, cfg.patch_dim());
    let (heads, hd, hidden) = (cfg.heads, cfg.embed_dim / cfg.heads, cfg.hidden());
    let rows = b_count * n;
    let scale = 1.0 / (hd as f64).sqrt();
    let k_classes = cfg.class_count;

    if logit_grad.len() != b_count * k_classes {
        return Err(TinyVitError::ShapeMismatch(format!(
            "logit grad has {} entries, expected {}",
            logit_grad.len(),
            b_count * k_classes
        )));
    }
    let mut injected: Vec<Option<&[f64]>> = vec![None; cfg.depth];
    for &(layer, g) in feature_grads {
        if layer == 0 || layer > cfg.depth {
            return Err(TinyVitError::ShapeMismatch(format!(
                "feature gradient for layer {layer} of a depth-{} model",
                cfg.depth
            )));
        }
        if g.len() != rows * d {
            return Err(TinyVitError::ShapeMismatch(format!(
                "feature gradient for layer {layer} has {} entries, expected {}",
                g.len(),
                rows * d
            )));
        }
        injected[layer - 1] = Some(g);
    }

    let mut grads = vec![0.0; lay.total];

    // Head: logits = head_w · pooled + head_b.
    let mut d_pooled = vec![0.0; b_count * d];
    {
        let (dw, db) = (lay.head_w, lay.head_b);
        for b in 0..b_count {
            for k in 0..k_classes {
                let g = logit_grad[b * k_classes + k];
                grads[db + k] += g;
                for i in 0..d {
                    grads[dw + k * d + i] += g * cache.pooled[b * d + i];
                    d_pooled[b * d + i] += g * p.data[dw + k * d + i];
                }
            }
        }
    }

    let mut d_final = vec![0.0; rows * d];
    for b in 0..b_count {
        for t in 0..n {
            for i in 0..d {
                d_final[(b * n + t) * d + i] = d_pooled[b * d + i] / n as f64;
            }
        }
    }

    let mut dx = vec![0.0; rows * d];
    {
        let (mut dg, mut dbias) = (vec![0.0; d], vec![0.0; d]);
        layer_norm_backward(
            &cache.final_norm,
            &p.data[lay.lnf_g..lay.lnf_g + d],
            &d_final,
            rows,
            d,
            &mut dx,
            &mut dg,
            &mut dbias,
        );
        grads[lay.lnf_g..lay.lnf_g + d].copy_from_slice(&dg);
        grads[lay.lnf_b..lay.lnf_b + d].copy_from_slice(&dbias);
    }

    // Blocks in reverse.
    for l in (0..cfg.depth).rev() {
        if let Some(g) = injected[l] {
            for (acc, inj) in dx.iter_mut().zip(g) {
                *acc += inj;
            }
        }
        let off = &lay.blocks[l];
        let bc = &cache.blocks[l];

        // MLP half: x_out = x_mid + W2·gelu(W1·ln2(x_mid) + b1) + b2.
        let d_mlp_out = &dx;
        let mut d_act = vec![0.0; rows * hidden];
        {
            let mut dw2 = vec![0.0; d * hidden];
            let mut db2 = vec![0.0; d];
            linear_backward(
                &bc.act,
                &p.data[off.w2..off.w2 + d * hidden],
                d_mlp_out,
                rows,
                hidden,
                d,
                &mut d_act,
                &mut dw2,
                &mut db2,
            );
            add_into(&mut grads[off.w2..off.w2 + d * hidden], &dw2);
            add_into(&mut grads[off.b2..off.b2 + d], &db2);
        }
        let mut d_pre = vec![0.0; rows * hidden];
        for i in 0..rows * hidden {
            d_pre[i] = d_act[i] * gelu_grad(bc.pre_act[i]);
        }
        let mut d_h2 = vec![0.0; rows * d];
        {
            let mut dw1 = vec![0.0; hidden * d];
            let mut db1 = vec![0.0; hidden];
            linear_backward(
                &bc.ln2.out,
                &p.data[off.w1..off.w1 + hidden * d],
                &d_pre,
                rows,
                d,
                hidden,
                &mut d_h2,
                &mut dw1,
                &mut db1,
            );
            add_into(&mut grads[off.w1..off.w1 + hidden * d], &dw1);
            add_into(&mut grads[off.b1..off.b1 + hidden], &db1);
        }
        let mut d_x_mid = vec![0.0; rows * d];
        {
            let (mut dg, mut dbias) = (vec![0.0; d], vec![0.0; d]);
            layer_norm_backward(
                &bc.ln2,
                &p.data[off.ln2_g..off.ln2_g + d],
                &d_h2,
                rows,
                d,
                &mut d_x_mid,
                &mut dg,
                &mut dbias,
            );
            add_into(&mut grads[off.ln2_g..off.ln2_g + d], &dg);
            add_into(&mut grads[off.ln2_b..off.ln2_b + d], &dbias);
        }
        for (dm, dout) in d_x_mid.iter_mut().zip(dx.iter()) {
            *dm += dout; // residual branch
        }

        // Attention half: x_mid = x_in + Wo·ctx + bo.
        let mut d_ctx = vec![0.0; rows * d];
        {
            let mut dwo = vec![0.0; d * d];
            let mut dbo = vec![0.0; d];
            linear_backward(
                &bc.ctx,
                &p.data[off.wo..off.wo + d * d],
                &d_x_mid,
                rows,
                d,
                d,
                &mut d_ctx,
                &mut dwo,
                &mut dbo,
            );
            add_into(&mut grads[off.wo..off.wo + d * d], &dwo);
            add_into(&mut grads[off.bo..off.bo + d], &dbo);
        }

        let mut d_q = vec![0.0; rows * d];
        let mut d_k = vec![0.0; rows * d];
        let mut d_v = vec![0.0; rows * d];
        let mut d_att_row = vec![0.0; n];
        let mut d_s_row = vec![0.0; n];
        for b in 0..b_count {
            for h in 0..heads {
                let att_base = (b * heads + h) * n * n;
                for i in 0..n {
                    let dci = &d_ctx[(b * n + i) * d + h * hd..(b * n + i) * d + (h + 1) * hd];
                    let att_row = &bc.att[att_base + i * n..att_base + (i + 1) * n];
                    // d att and d v.
                    for j in 0..n {
                        let vj = &bc.v[(b * n + j) * d + h * hd..(b * n + j) * d + (h + 1) * hd];
                        let mut acc = 0.0;
                        for e in 0..hd {
                            acc += dci[e] * vj[e];
                        }
                        d_att_row[j] = acc;
                        let dvj = &mut d_v[(b * n + j) * d + h * hd..(b * n + j) * d + (h + 1) * hd];
                        let w = att_row[j];
                        for e in 0..hd {
                            dvj[e] += w * dci[e];
                        }
                    }
                    // Softmax backward.
                    let dot: f64 = d_att_row.iter().zip(att_row).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d_s_row[j] = att_row[j] * (d_att_row[j] - dot);
                    }
                    // Scores backward.
                    let qi = &bc.q[(b * n + i) * d + h * hd..(b * n + i) * d + (h + 1) * hd];
                    let dqi_base = (b * n + i) * d + h * hd;
                    for j in 0..n {
                        let ds = d_s_row[j] * scale;
                        let kj = &bc.k[(b * n + j) * d + h * hd..(b * n + j) * d + (h + 1) * hd];
                        for e in 0..hd {
                            d_q[dqi_base + e] += ds * kj[e];
                        }
                        let dkj = &mut d_k[(b * n + j) * d + h * hd..(b * n + j) * d + (h + 1) * hd];
                        for e in 0..hd {
                            dkj[e] += ds * qi[e];
                        }
                    }
                }
            }
        }

        let mut d_h1 = vec![0.0; rows * d];
        let mut d_h1_part = vec![0.0; rows * d];
        for (dmat, dvec, dname) in [
            (off.wq, off.bq, &d_q),
            (off.wk, off.bk, &d_k),
            (off.wv, off.bv, &d_v),
        ] {
            let mut dw = vec![0.0; d * d];
            let mut db = vec![0.0; d];
            linear_backward(
                &bc.ln1.out,
                &p.data[dmat..dmat + d * d],
                dname,
                rows,
                d,
                d,
                &mut d_h1_part,
                &mut dw,
                &mut db,
            );
            add_into(&mut grads[dmat..dmat + d * d], &dw);
            add_into(&mut grads[dvec..dvec + d], &db);
            add_into(&mut d_h1, &d_h1_part);
        }

        let mut d_x_in = vec![0.0; rows * d];
        {
            let (mut dg, mut dbias) = (vec![0.0; d], vec![0.0; d]);
            layer_norm_backward(
                &bc.ln1,
                &p.data[off.ln1_g..off.ln1_g + d],
                &d_h1,
                rows,
                d,
                &mut d_x_in,
                &mut dg,
                &mut dbias,
            );
            add_into(&mut grads[off.ln1_g..off.ln1_g + d], &dg);
            add_into(&mut grads[off.ln1_b..off.ln1_b + d], &dbias);
        }
        for (di, dm) in d_x_in.iter_mut().zip(&d_x_mid) {
            *di += dm; // residual branch
        }
        dx = d_x_in;
    }

    // Positions and patch embedding.
    for b in 0..b_count {
        for t in 0..n {
            for i in 0..d {
                grads[lay.pos + t * d + i] += dx[(b * n + t) * d + i];
            }
        }
    }
    {
        let mut d_patches = vec![0.0; rows * pd];
        let mut dw = vec![0.0; d * pd];
        let mut db = vec![0.0; d];
        linear_backward(
            &cache.patches,
            &p.data[lay.patch_w..lay.patch_w + d * pd],
            &dx,
            rows,
            pd,
            d,
            &mut d_patches,
            &mut dw,
            &mut db,
        );
        add_into(&mut grads[lay.patch_w..lay.patch_w + d * pd], &dw);
        add_into(&mut grads[lay.patch_b..lay.patch_b + d], &db);
    }
    Ok(grads)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}
