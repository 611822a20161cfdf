//! Frequency-alignment distillation: channel alignment by adaptive average
//! pooling, per-plane 2-D real FFTs stacked into re/im pairs, the MSE loss
//! over those stacks, the soft cross-entropy/KL objective on logits, and the
//! combined total loss. Every loss comes with its analytic gradient with
//! respect to the student quantities; teacher inputs are constants.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fft::{rfft2, rfft2_adjoint, ComplexTensor};
use crate::tensor::FeatureMap;

/// Loss hyperparameters. The defaults are the ones the whole pipeline ships
/// with: temperature 1, alpha 0.9, beta 0.2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            alpha: 0.9,
            beta: 0.2,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        if !(self.temperature > 0.0) {
            return Err(DistillError::BadConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DistillError::BadConfig(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0) {
            return Err(DistillError::BadConfig(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Real and imaginary planes of per-(batch, channel) RFFT2 outputs, stacked
/// along a new leading axis: dims (2, B, C, H, ⌊W/2⌋+1), slice 0 real.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumStack {
    pub dims: [usize; 5],
    pub data: Vec<f64>,
}

impl SpectrumStack {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Every term of the training objective for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_kl: f64,
    pub l_kd: f64,
    pub l_fft: f64,
    pub l_total: f64,
}

/// Soft-target loss value plus its gradient with respect to student logits.
#[derive(Debug, Clone)]
pub struct KdLoss {
    pub l_ce: f64,
    pub l_kl: f64,
    /// (1−α)·l_ce + α·T²·l_kl.
    pub value: f64,
    /// Row-major (B, K).
    pub grad: Vec<f64>,
}

/// Combined objective: breakdown plus gradients for logits and for each
/// student feature map, already scaled by β/|pairs|.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub breakdown: LossBreakdown,
    pub logit_grad: Vec<f64>,
    pub feature_grads: Vec<FeatureMap>,
}

#[derive(Debug)]
pub enum DistillError {
    SpatialMismatch(String),
    LabelOutOfRange { label: usize, classes: usize },
    BadConfig(String),
}

impl fmt::Display for DistillError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SpatialMismatch(why) => write!(f, "spatial mismatch: {why}"),
            Self::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Self::BadConfig(why) => write!(f, "bad config: {why}"),
        }
    }
}

impl std::error::Error for DistillError {}

/// Brings a student/teacher pair to a common channel count by adaptively
/// average-pooling the wider tensor down to C = min(C_s, C_t); the narrower
/// one passes through untouched. Batch and spatial dims must already agree.
pub fn align_channels(
    s: &FeatureMap,
    t: &FeatureMap,
) -> Result<(FeatureMap, FeatureMap), DistillError> {
    check_spatial(s, t)?;
    let (c_s, c_t) = (s.dims[1], t.dims[1]);
    let c = c_s.min(c_t);
    Ok((pool_channels(s, c), pool_channels(t, c)))
}

fn check_spatial(s: &FeatureMap, t: &FeatureMap) -> Result<(), DistillError> {
    let ([b_s, _, h_s, w_s], [b_t, _, h_t, w_t]) = (s.dims, t.dims);
    if b_s != b_t || h_s != h_t || w_s != w_t {
        return Err(DistillError::SpatialMismatch(format!(
            "student (B,H,W) = ({b_s},{h_s},{w_s}) vs teacher ({b_t},{h_t},{w_t})"
        )));
    }
    Ok(())
}

/// Window bounds of adaptive pooling: output channel i covers input channels
/// [⌊i·C_in/C_out⌋, ⌈(i+1)·C_in/C_out⌉).
fn pool_window(i: usize, c_in: usize, c_out: usize) -> (usize, usize) {
    let lo = i * c_in / c_out;
    let hi = ((i + 1) * c_in).div_ceil(c_out);
    (lo, hi)
}

/// Adaptive average pooling along the channel axis. A no-op copy when the
/// channel counts already match.
fn pool_channels(x: &FeatureMap, c_out: usize) -> FeatureMap {
    let [b_count, c_in, h, w] = x.dims;
    if c_in == c_out {
        return x.clone();
    }
    let plane = h * w;
    let mut out = FeatureMap::zeros([b_count, c_out, h, w]);
    for b in 0..b_count {
        for i in 0..c_out {
            let (lo, hi) = pool_window(i, c_in, c_out);
            let scale = 1.0 / (hi - lo) as f64;
            for p in 0..plane {
                let mut acc = 0.0;
                for c in lo..hi {
                    acc += x.data[(b * c_in + c) * plane + p];
                }
                out.data[(b * c_out + i) * plane + p] = acc * scale;
            }
        }
    }
    out
}

/// Transpose of [`pool_channels`]: routes a gradient on the pooled tensor
/// back to the original channels, each window member receiving its 1/|window|
/// share.
fn pool_channels_adjoint(g: &FeatureMap, c_in: usize) -> FeatureMap {
    let [b_count, c_out, h, w] = g.dims;
    if c_in == c_out {
        return g.clone();
    }
    let plane = h * w;
    let mut out = FeatureMap::zeros([b_count, c_in, h, w]);
    for b in 0..b_count {
        for i in 0..c_out {
            let (lo, hi) = pool_window(i, c_in, c_out);
            let scale = 1.0 / (hi - lo) as f64;
            for p in 0..plane {
                let share = g.data[(b * c_out + i) * plane + p] * scale;
                for c in lo..hi {
                    out.data[(b * c_in + c) * plane + p] += share;
                }
            }
        }
    }
    out
}

/// RFFT2 of every (batch, channel) plane, real and imaginary parts stacked
/// along a new leading axis.
pub fn spectrum_stack(x: &FeatureMap) -> SpectrumStack {
    let [b_count, c_count, h, w] = x.dims;
    let wr = w / 2 + 1;
    let half = b_count * c_count * h * wr;
    let mut data = vec![0.0; 2 * half];
    for b in 0..b_count {
        for c in 0..c_count {
            let plane = &x.data[(b * c_count + c) * h * w..(b * c_count + c + 1) * h * w];
            let f = rfft2(plane, h, w);
            let base = (b * c_count + c) * h * wr;
            data[base..base + h * wr].copy_from_slice(&f.re);
            data[half + base..half + base + h * wr].copy_from_slice(&f.im);
        }
    }
    SpectrumStack {
        dims: [2, b_count, c_count, h, wr],
        data,
    }
}

/// Mean squared error between the spectrum stacks of an aligned pair, with
/// the gradient with respect to the student's original (pre-pooling) tensor.
///
/// The mean runs over all 2·B·C·H·(⌊W/2⌋+1) stacked elements. Alignment
/// happens internally; the teacher is a constant.
pub fn fft_loss(s: &FeatureMap, t: &FeatureMap) -> Result<(f64, FeatureMap), DistillError> {
    let (s_al, t_al) = align_channels(s, t)?;
    let stack_s = spectrum_stack(&s_al);
    let stack_t = spectrum_stack(&t_al);
    let nel = stack_s.numel() as f64;

    let mut value = 0.0;
    let mut diff = Vec::with_capacity(stack_s.numel());
    for (a, b) in stack_s.data.iter().zip(&stack_t.data) {
        let d = a - b;
        value += d * d;
        diff.push(d);
    }
    value /= nel;

    // d value / d stack_s = (2/Nel)·diff, pulled back through each plane's
    // transform and then through the pooling if the student was pooled.
    let [_, b_count, c_count, h, wr] = stack_s.dims;
    let w = s_al.dims[3];
    let half = b_count * c_count * h * wr;
    let scale = 2.0 / nel;
    let mut grad_aligned = FeatureMap::zeros(s_al.dims);
    for b in 0..b_count {
        for c in 0..c_count {
            let base = (b * c_count + c) * h * wr;
            let g = ComplexTensor {
                dims: vec![h, wr],
                re: diff[base..base + h * wr].iter().map(|d| d * scale).collect(),
                im: diff[half + base..half + base + h * wr]
                    .iter()
                    .map(|d| d * scale)
                    .collect(),
            };
            let plane = rfft2_adjoint(&g, h, w).expect("stack dims are consistent by construction");
            let out_base = (b * c_count + c) * h * w;
            grad_aligned.data[out_base..out_base + h * w].copy_from_slice(&plane);
        }
    }
    Ok((value, pool_channels_adjoint(&grad_aligned, s.dims[1])))
}

/// Soft distillation loss on logits:
/// (1−α)·CE(student, labels) + α·T²·KL(teacher_T ∥ student_T), both terms
/// averaged over the batch, with the softened distributions p = softmax(z/T).
///
/// The gradient with respect to the student logits is
/// (1−α)·(p_s − onehot)/B + α·T·(p_sᵀ − p_tᵀ)/B.
pub fn kd_loss(
    student_logits: &[f64],
    teacher_logits: &[f64],
    labels: &[usize],
    classes: usize,
    cfg: &DistillConfig,
) -> Result<KdLoss, DistillError> {
    cfg.validate()?;
    let batch = labels.len();
    assert_eq!(student_logits.len(), batch * classes, "student logit shape");
    assert_eq!(teacher_logits.len(), batch * classes, "teacher logit shape");
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(DistillError::LabelOutOfRange { label, classes });
    }

    let t = cfg.temperature;
    let alpha = cfg.alpha;
    let inv_b = 1.0 / batch as f64;
    let mut l_ce = 0.0;
    let mut l_kl = 0.0;
    let mut grad = vec![0.0; batch * classes];
    let mut p_s = vec![0.0; classes];
    let mut lp_s = vec![0.0; classes];
    let mut lp_st = vec![0.0; classes];
    let mut lp_tt = vec![0.0; classes];

    for b in 0..batch {
        let s_row = &student_logits[b * classes..(b + 1) * classes];
        let t_row = &teacher_logits[b * classes..(b + 1) * classes];
        log_softmax(s_row, 1.0, &mut lp_s);
        for k in 0..classes {
            p_s[k] = lp_s[k].exp();
        }
        log_softmax(s_row, t, &mut lp_st);
        log_softmax(t_row, t, &mut lp_tt);

        l_ce -= lp_s[labels[b]];
        for k in 0..classes {
            let p_tt = lp_tt[k].exp();
            if p_tt > 0.0 {
                l_kl += p_tt * (lp_tt[k] - lp_st[k]);
            }
            let onehot = if k == labels[b] { 1.0 } else { 0.0 };
            let p_st = lp_st[k].exp();
            grad[b * classes + k] =
                (1.0 - alpha) * (p_s[k] - onehot) * inv_b + alpha * t * (p_st - p_tt) * inv_b;
        }
    }
    l_ce *= inv_b;
    l_kl *= inv_b;
    Ok(KdLoss {
        l_ce,
        l_kl,
        value: (1.0 - alpha) * l_ce + alpha * t * t * l_kl,
        grad,
    })
}

/// Numerically stable log-softmax of `row / t` into `out`.
fn log_softmax(row: &[f64], t: f64, out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / t;
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = z / t - max;
        sum += o.exp();
    }
    let log_sum = sum.ln();
    for o in out.iter_mut() {
        *o -= log_sum;
    }
}

/// The full objective over a set of aligned feature pairs plus logits:
/// L_total = L_kd + β·L_fft with L_fft the arithmetic mean of the per-pair
/// losses (zero for an empty pair list).
///
/// Feature gradients come back per pair, already scaled by β/|pairs| so they
/// can be injected into the student backward pass as-is.
pub fn total_loss(
    pairs: &[(&FeatureMap, &FeatureMap)],
    student_logits: &[f64],
    teacher_logits: &[f64],
    labels: &[usize],
    classes: usize,
    cfg: &DistillConfig,
) -> Result<TotalLoss, DistillError> {
    let kd = kd_loss(student_logits, teacher_logits, labels, classes, cfg)?;

    let mut l_fft = 0.0;
    let mut feature_grads = Vec::with_capacity(pairs.len());
    if !pairs.is_empty() {
        let pair_scale = cfg.beta / pairs.len() as f64;
        for (s, t) in pairs {
            let (value, mut grad) = fft_loss(s, t)?;
            l_fft += value;
            for g in &mut grad.data {
                *g *= pair_scale;
            }
            feature_grads.push(grad);
        }
        l_fft /= pairs.len() as f64;
    }

    let breakdown = LossBreakdown {
        l_ce: kd.l_ce,
        l_kl: kd.l_kl,
        l_kd: kd.value,
        l_fft,
        l_total: kd.value + cfg.beta * l_fft,
    };
    Ok(TotalLoss {
        breakdown,
        logit_grad: kd.grad,
        feature_grads,
    })
}
