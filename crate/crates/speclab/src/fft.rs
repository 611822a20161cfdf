//! Discrete Fourier machinery: a naive-DFT reference, a fast 1-D transform
//! (radix-2 for power-of-two lengths, Bluestein for everything else), the
//! channel-wise batched transform the spectral analysis runs on, and a 2-D
//! real FFT with its exact adjoint for the loss gradients.
//!
//! Convention: forward transforms are unnormalized, the inverse carries the
//! 1/n. Magnitudes therefore scale with the transform length, which is what
//! makes intensity plots comparable across channel counts.

use std::f64::consts::{PI, TAU};

use crate::tensor::FeatureMap;

/// Complex vector as separate real/imag planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVec {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVec {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Self {
        assert_eq!(re.len(), im.len(), "re/im length mismatch");
        Self { re, im }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn from_real(re: &[f64]) -> Self {
        Self {
            re: re.to_vec(),
            im: vec![0.0; re.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

/// Complex tensor of arbitrary rank, row-major, as separate re/im planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    pub dims: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexTensor {
    pub fn zeros(dims: Vec<usize>) -> Self {
        let count = dims.iter().product();
        Self {
            dims,
            re: vec![0.0; count],
            im: vec![0.0; count],
        }
    }
}

#[derive(Debug)]
pub enum FftError {
    ShapeMismatch(String),
}

impl std::fmt::Display for FftError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::ShapeMismatch(why) => write!(f, "shape mismatch: {why}"),
        }
    }
}

impl std::error::Error for FftError {}

/// Textbook O(n²) DFT, the oracle every fast path is tested against.
///
/// Forward: X[k] = Σ_j v[j]·exp(−2πi·jk/n). Inverse flips the sign and
/// divides by n. Twiddle angles are reduced mod n before the trig calls so
/// the oracle itself stays accurate at larger n.
pub fn dft_naive(v: &ComplexVec, inverse: bool) -> ComplexVec {
    let n = v.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out = ComplexVec::zeros(n);
    for k in 0..n {
        let (mut acc_re, mut acc_im) = (0.0, 0.0);
        for j in 0..n {
            let angle = sign * TAU * ((j * k) % n) as f64 / n as f64;
            let (s, c) = angle.sin_cos();
            acc_re += v.re[j] * c - v.im[j] * s;
            acc_im += v.re[j] * s + v.im[j] * c;
        }
        out.re[k] = acc_re;
        out.im[k] = acc_im;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for x in out.re.iter_mut().chain(out.im.iter_mut()) {
            *x *= scale;
        }
    }
    out
}

/// Fast 1-D transform for any length n ≥ 1.
///
/// Power-of-two lengths run iterative radix-2 Cooley-Tukey; everything else
/// goes through Bluestein's chirp-z reduction to a padded power-of-two
/// convolution. Same convention as [`dft_naive`].
pub fn fft1d(v: &ComplexVec, inverse: bool) -> ComplexVec {
    let n = v.len();
    let mut out = v.clone();
    let sign = if inverse { 1.0 } else { -1.0 };
    transform(&mut out.re, &mut out.im, sign);
    if inverse {
        let scale = 1.0 / n as f64;
        for x in out.re.iter_mut().chain(out.im.iter_mut()) {
            *x *= scale;
        }
    }
    out
}

/// Unnormalized transform with explicit sign; dispatches radix-2/Bluestein.
fn transform(re: &mut [f64], im: &mut [f64], sign: f64) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(re, im, sign);
    } else {
        bluestein(re, im, sign);
    }
}

/// Iterative radix-2 Cooley-Tukey, in place, n a power of two.
fn radix2(re: &mut [f64], im: &mut [f64], sign: f64) {
    let n = re.len();
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let angle = sign * TAU * k as f64 / len as f64;
                let (ws, wc) = angle.sin_cos();
                let (ur, ui) = (re[start + k], im[start + k]);
                let (vr, vi) = (re[start + k + half], im[start + k + half]);
                let tr = vr * wc - vi * ws;
                let ti = vr * ws + vi * wc;
                re[start + k] = ur + tr;
                im[start + k] = ui + ti;
                re[start + k + half] = ur - tr;
                im[start + k + half] = ui - ti;
            }
        }
        len <<= 1;
    }
}

/// Bluestein's chirp-z algorithm for arbitrary n: rewrites the DFT as a
/// circular convolution of length m = next power of two ≥ 2n−1 and runs the
/// convolution with radix-2 transforms.
fn bluestein(re: &mut [f64], im: &mut [f64], sign: f64) {
    let n = re.len();
    let m = (2 * n - 1).next_power_of_two();

    // Chirp c[j] = exp(sign·πi·j²/n), with j² reduced mod 2n (the chirp's
    // period) before the trig call.
    let mut chirp_re = vec![0.0; n];
    let mut chirp_im = vec![0.0; n];
    for j in 0..n {
        let angle = sign * PI * ((j * j) % (2 * n)) as f64 / n as f64;
        let (s, c) = angle.sin_cos();
        chirp_re[j] = c;
        chirp_im[j] = s;
    }

    // a = v ⊙ chirp, zero-padded to m.
    let mut a_re = vec![0.0; m];
    let mut a_im = vec![0.0; m];
    for j in 0..n {
        a_re[j] = re[j] * chirp_re[j] - im[j] * chirp_im[j];
        a_im[j] = re[j] * chirp_im[j] + im[j] * chirp_re[j];
    }

    // b = conj(chirp), laid out circularly at offsets ±j.
    let mut b_re = vec![0.0; m];
    let mut b_im = vec![0.0; m];
    b_re[0] = chirp_re[0];
    b_im[0] = -chirp_im[0];
    for j in 1..n {
        b_re[j] = chirp_re[j];
        b_im[j] = -chirp_im[j];
        b_re[m - j] = b_re[j];
        b_im[m - j] = b_im[j];
    }

    radix2(&mut a_re, &mut a_im, -1.0);
    radix2(&mut b_re, &mut b_im, -1.0);
    for k in 0..m {
        let r = a_re[k] * b_re[k] - a_im[k] * b_im[k];
        let i = a_re[k] * b_im[k] + a_im[k] * b_re[k];
        a_re[k] = r;
        a_im[k] = i;
    }
    radix2(&mut a_re, &mut a_im, 1.0);
    let scale = 1.0 / m as f64;

    for k in 0..n {
        let (cr, ci) = (chirp_re[k], chirp_im[k]);
        let (vr, vi) = (a_re[k] * scale, a_im[k] * scale);
        re[k] = vr * cr - vi * ci;
        im[k] = vr * ci + vi * cr;
    }
}

/// Runs one 1-D FFT along the channel axis for every (batch, y, x) position.
///
/// Output dims match the input (B, C, H, W), with the C axis now indexing
/// frequency bins.
pub fn fft_channels(x: &FeatureMap) -> ComplexTensor {
    let [b_count, c_count, h, w] = x.dims;
    let plane = h * w;
    let mut out = ComplexTensor::zeros(vec![b_count, c_count, h, w]);
    let mut fiber_re = vec![0.0; c_count];
    let mut fiber_im = vec![0.0; c_count];
    for b in 0..b_count {
        for p in 0..plane {
            let base = b * c_count * plane + p;
            for c in 0..c_count {
                fiber_re[c] = x.data[base + c * plane];
                fiber_im[c] = 0.0;
            }
            transform(&mut fiber_re, &mut fiber_im, -1.0);
            for c in 0..c_count {
                out.re[base + c * plane] = fiber_re[c];
                out.im[base + c * plane] = fiber_im[c];
            }
        }
    }
    out
}

/// 2-D FFT of a real H×W plane, keeping only the ⌊W/2⌋+1 non-negative
/// frequencies of the last axis (the rest is Hermitian-redundant).
///
/// Rows are transformed first, the retained columns second.
pub fn rfft2(plane: &[f64], h: usize, w: usize) -> ComplexTensor {
    assert_eq!(plane.len(), h * w, "plane length disagrees with H·W");
    let wr = w / 2 + 1;
    let mut out = ComplexTensor::zeros(vec![h, wr]);

    let mut row_re = vec![0.0; w];
    let mut row_im = vec![0.0; w];
    for y in 0..h {
        row_re.copy_from_slice(&plane[y * w..(y + 1) * w]);
        row_im.iter_mut().for_each(|v| *v = 0.0);
        transform(&mut row_re, &mut row_im, -1.0);
        for k in 0..wr {
            out.re[y * wr + k] = row_re[k];
            out.im[y * wr + k] = row_im[k];
        }
    }

    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for k in 0..wr {
        for y in 0..h {
            col_re[y] = out.re[y * wr + k];
            col_im[y] = out.im[y * wr + k];
        }
        transform(&mut col_re, &mut col_im, -1.0);
        for y in 0..h {
            out.re[y * wr + k] = col_re[y];
            out.im[y * wr + k] = col_im[y];
        }
    }
    out
}

/// Exact transpose of the real-linear map behind [`rfft2`].
///
/// Writing A for x ↦ (re, im) of rfft2(x), this returns Aᵀg, so that
/// ⟨rfft2(x), g⟩ = ⟨x, rfft2_adjoint(g)⟩ with the inner product summing
/// elementwise products over both planes. The implementation is the forward
/// pipeline run backwards: conjugate-sign unnormalized transforms down the
/// columns, zero-fill of the truncated frequencies, the same along rows,
/// then the real part.
pub fn rfft2_adjoint(g: &ComplexTensor, h: usize, w: usize) -> Result<Vec<f64>, FftError> {
    let wr = w / 2 + 1;
    if g.dims != [h, wr] {
        return Err(FftError::ShapeMismatch(format!(
            "adjoint input dims {:?}, expected [{h}, {wr}]",
            g.dims
        )));
    }

    let mut work_re = g.re.clone();
    let mut work_im = g.im.clone();
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for k in 0..wr {
        for y in 0..h {
            col_re[y] = work_re[y * wr + k];
            col_im[y] = work_im[y * wr + k];
        }
        transform(&mut col_re, &mut col_im, 1.0);
        for y in 0..h {
            work_re[y * wr + k] = col_re[y];
            work_im[y * wr + k] = col_im[y];
        }
    }

    let mut out = vec![0.0; h * w];
    let mut row_re = vec![0.0; w];
    let mut row_im = vec![0.0; w];
    for y in 0..h {
        row_re.iter_mut().for_each(|v| *v = 0.0);
        row_im.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..wr {
            row_re[k] = work_re[y * wr + k];
            row_im[k] = work_im[y * wr + k];
        }
        transform(&mut row_re, &mut row_im, 1.0);
        out[y * w..(y + 1) * w].copy_from_slice(&row_re);
    }
    Ok(out)
}
