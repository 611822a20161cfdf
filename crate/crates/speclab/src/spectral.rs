//! Channel-spectrum analytics over feature maps: per-layer spectra and
//! intensities, whole-model profiles, histograms, intensity-based layer
//! selection with the head/tail student mapping, and a scale-free distance
//! between profiles of different depths.

use std::fmt;

use crate::fft::{fft_channels, ComplexTensor};
use crate::tensor::FeatureMap;

/// Per-frequency average magnitude of one layer's channel FFT.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpectrum {
    /// One non-negative entry per frequency bin; length = channel count.
    pub values: Vec<f64>,
    /// 1-indexed position of the source layer in its model.
    pub layer_index: usize,
}

/// Layer intensities across a whole model, in depth order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelProfile {
    pub intensities: Vec<f64>,
    /// Optional display names, same length as `intensities` when present.
    pub labels: Option<Vec<String>>,
}

impl ModelProfile {
    pub fn from_intensities(intensities: Vec<f64>) -> Self {
        Self {
            intensities,
            labels: None,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.intensities.len()
    }
}

/// Paired teacher/student layer choices, both 1-indexed and ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSelection {
    pub teacher_layers: Vec<usize>,
    pub student_layers: Vec<usize>,
}

/// One histogram bin: inclusive lower edge and the number of layers in it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lower: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpectralError {
    /// Requested k outside [1, layer count].
    KOutOfRange { k: usize, layers: usize },
    /// Head+tail demand exceeds the student's depth.
    BudgetExceeded { head: usize, tail: usize, student_depth: usize },
    /// A profile whose maximum is zero cannot be normalized.
    ZeroProfile,
    /// Empty input where at least one layer is required.
    EmptyProfile,
}

impl fmt::Display for SpectralError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::KOutOfRange { k, layers } => {
                write!(f, "k = {k} out of range for a {layers}-layer profile")
            }
            Self::BudgetExceeded { head, tail, student_depth } => write!(
                f,
                "selection needs {head} head + {tail} tail layers but the student has only {student_depth}"
            ),
            Self::ZeroProfile => write!(f, "profile maximum is zero; cannot normalize"),
            Self::EmptyProfile => write!(f, "profile has no layers"),
        }
    }
}

impl std::error::Error for SpectralError {}

/// Elementwise magnitude sqrt(re² + im²) of a complex tensor.
pub fn magnitude(f: &ComplexTensor) -> Vec<f64> {
    f.re.iter()
        .zip(&f.im)
        .map(|(r, i)| (r * r + i * i).sqrt())
        .collect()
}

/// Channel spectrum of one layer: FFT along channels, magnitude, then the
/// mean over batch and both spatial axes. Output length equals the channel
/// count, entry k the average magnitude of frequency bin k.
pub fn channel_spectrum(x: &FeatureMap, layer_index: usize) -> ChannelSpectrum {
    let [b_count, c_count, h, w] = x.dims;
    let f = fft_channels(x);
    let mag = magnitude(&f);
    let plane = h * w;
    let positions = (b_count * plane) as f64;
    let mut values = vec![0.0; c_count];
    for b in 0..b_count {
        for c in 0..c_count {
            let base = (b * c_count + c) * plane;
            let mut acc = 0.0;
            for p in 0..plane {
                acc += mag[base + p];
            }
            values[c] += acc;
        }
    }
    for v in &mut values {
        *v /= positions;
    }
    ChannelSpectrum {
        values,
        layer_index,
    }
}

/// Scalar intensity of a layer: the mean of its channel spectrum.
pub fn layer_intensity(s: &ChannelSpectrum) -> f64 {
    s.values.iter().sum::<f64>() / s.values.len() as f64
}

/// Intensity of every layer in depth order.
pub fn model_profile(layers: &[FeatureMap]) -> ModelProfile {
    let intensities = layers
        .iter()
        .enumerate()
        .map(|(i, x)| layer_intensity(&channel_spectrum(x, i + 1)))
        .collect();
    ModelProfile::from_intensities(intensities)
}

/// Uniform-width histogram of the profile's intensities over [min, max].
///
/// The maximum lands in the last bin and counts always sum to the layer
/// count. A degenerate range (min = max) collapses to a single bin holding
/// everything.
pub fn intensity_histogram(p: &ModelProfile, bins: usize) -> Result<Vec<HistogramBin>, SpectralError> {
    assert!(bins >= 1, "bins must be >= 1");
    if p.intensities.is_empty() {
        return Err(SpectralError::EmptyProfile);
    }
    let min = p.intensities.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = p.intensities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok(vec![HistogramBin {
            lower: min,
            count: p.intensities.len(),
        }]);
    }
    let width = (max - min) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lower: min + i as f64 * width,
            count: 0,
        })
        .collect();
    for &v in &p.intensities {
        let mut i = ((v - min) / width) as usize;
        if i >= bins {
            i = bins - 1; // the maximum belongs to the last bin
        }
        out[i].count += 1;
    }
    Ok(out)
}

/// The k most intense layers, 1-indexed, sorted ascending. Ties go to the
/// lower layer index.
pub fn select_layers_topk(p: &ModelProfile, k: usize) -> Result<Vec<usize>, SpectralError> {
    let n = p.layer_count();
    if k == 0 || k > n {
        return Err(SpectralError::KOutOfRange { k, layers: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        p.intensities[b]
            .partial_cmp(&p.intensities[a])
            .unwrap()
            .then_with(|| a.cmp(&b))
    });
    let mut chosen: Vec<usize> = order[..k].iter().map(|&i| i + 1).collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Maps a teacher-layer selection onto a shallower student.
///
/// Teacher layers split into "head" (index ≤ n_t/2) and "tail" (the rest);
/// the student contributes its first `head` and last `tail` layers. With the
/// counts written h and τ, the result is {1..h} ∪ {n_s−τ+1..n_s}, paired
/// with the teacher layers in ascending order.
pub fn map_student_layers(
    teacher_sel: &[usize],
    n_t: usize,
    n_s: usize,
) -> Result<LayerSelection, SpectralError> {
    assert!(
        teacher_sel.iter().all(|&i| i >= 1 && i <= n_t),
        "teacher indices must lie in [1, {n_t}]"
    );
    let head = teacher_sel.iter().filter(|&&i| 2 * i <= n_t).count();
    let tail = teacher_sel.len() - head;
    if head + tail > n_s {
        return Err(SpectralError::BudgetExceeded {
            head,
            tail,
            student_depth: n_s,
        });
    }
    let mut teacher_layers = teacher_sel.to_vec();
    teacher_layers.sort_unstable();
    let student_layers: Vec<usize> = (1..=head)
        .chain(n_s - tail + 1..=n_s)
        .collect();
    Ok(LayerSelection {
        teacher_layers,
        student_layers,
    })
}

/// Scale-free distance between two profiles: each is normalized by its own
/// maximum, the shorter is linearly interpolated onto the longer's grid with
/// endpoints pinned, and the mean absolute difference is returned.
pub fn profile_distance(a: &ModelProfile, b: &ModelProfile) -> Result<f64, SpectralError> {
    if a.intensities.is_empty() || b.intensities.is_empty() {
        return Err(SpectralError::EmptyProfile);
    }
    let norm = |p: &ModelProfile| -> Result<Vec<f64>, SpectralError> {
        let max = p.intensities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max <= 0.0 {
            return Err(SpectralError::ZeroProfile);
        }
        Ok(p.intensities.iter().map(|v| v / max).collect())
    };
    let na = norm(a)?;
    let nb = norm(b)?;
    let (long, short) = if na.len() >= nb.len() { (&na, &nb) } else { (&nb, &na) };
    let resampled = resample(short, long.len());
    let sum: f64 = long
        .iter()
        .zip(&resampled)
        .map(|(x, y)| (x - y).abs())
        .sum();
    Ok(sum / long.len() as f64)
}

/// Linear interpolation of `values` onto `target` evenly spaced points with
/// both endpoints pinned. A single-point profile extends as a constant.
fn resample(values: &[f64], target: usize) -> Vec<f64> {
    if values.len() == 1 {
        return vec![values[0]; target];
    }
    if target == 1 {
        return vec![values[0]];
    }
    let m = values.len();
    (0..target)
        .map(|j| {
            let t = j as f64 / (target - 1) as f64 * (m - 1) as f64;
            let lo = t.floor() as usize;
            let hi = lo.min(m - 2) + 1;
            let frac = t - lo as f64;
            values[lo] * (1.0 - frac) + values[hi.min(m - 1)] * frac
        })
        .collect()
}
