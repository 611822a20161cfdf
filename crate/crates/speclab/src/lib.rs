//! Spectral analysis of transformer feature maps and frequency-alignment
//! distillation, end to end: NPY tensor ingestion, FFT kernels with exact
//! adjoints, channel-spectrum analytics and layer selection, distillation
//! losses with analytic gradients, and a small manually-differentiated
//! vision transformer for running the whole pipeline on synthetic data.
//!
//! Everything computes in f64 and is deterministic: same inputs, same seeds,
//! same bits out.

pub mod distill;
pub mod fft;
pub mod spectral;
pub mod tensor;
pub mod tinyvit;
