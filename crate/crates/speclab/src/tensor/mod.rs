//! Dense real tensors and their on-disk NPY form.
//!
//! Two layouts cover everything downstream: [`FeatureMap`] is the spatial
//! (B, C, H, W) view that the spectral and distillation code consumes, and
//! [`TokenMap`] is the (B, N, C) view that transformer dumps arrive in.
//! All values are f64; `<f4` files are widened on load so gradient checks
//! have the precision they need.

pub mod npy;

use std::fmt;
use std::io;
use std::path::Path;

/// Real 4-D tensor in row-major (B, C, H, W) order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

/// Real 3-D tensor in row-major (B, N, C) order, N the token count.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMap {
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}

/// What [`load_npy`] found on disk: rank 4 is spatial, rank 3 is tokens.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedTensor {
    Feature(FeatureMap),
    Token(TokenMap),
}

#[derive(Debug)]
pub enum TensorError {
    BadMagic,
    UnsupportedVersion { major: u8, minor: u8 },
    BadHeader(String),
    UnsupportedDtype(String),
    FortranOrderUnsupported,
    UnsupportedRank(usize),
    TruncatedPayload { expected: usize, got: usize },
    NonFiniteValue { index: usize },
    ShapeMismatch(String),
    Io(io::Error),
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadMagic => write!(f, "not an NPY file (bad magic)"),
            Self::UnsupportedVersion { major, minor } => {
                write!(f, "unsupported NPY version {major}.{minor} (only 1.0)")
            }
            Self::BadHeader(why) => write!(f, "malformed NPY header: {why}"),
            Self::UnsupportedDtype(d) => {
                write!(f, "unsupported dtype '{d}' (only '<f4' and '<f8')")
            }
            Self::FortranOrderUnsupported => {
                write!(f, "fortran_order arrays are not supported")
            }
            Self::UnsupportedRank(r) => {
                write!(f, "unsupported rank {r} (expected 3 or 4)")
            }
            Self::TruncatedPayload { expected, got } => {
                write!(f, "truncated payload: expected {expected} bytes, got {got}")
            }
            Self::NonFiniteValue { index } => {
                write!(f, "non-finite value at flat index {index}")
            }
            Self::ShapeMismatch(why) => write!(f, "shape mismatch: {why}"),
            Self::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for TensorError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for TensorError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

impl FeatureMap {
    /// Builds a (B, C, H, W) tensor, checking that every dim is ≥ 1 and the
    /// payload length matches.
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self, TensorError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(TensorError::ShapeMismatch(format!(
                "zero-sized dim in {dims:?}"
            )));
        }
        let count: usize = dims.iter().product();
        if data.len() != count {
            return Err(TensorError::ShapeMismatch(format!(
                "dims {dims:?} imply {count} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        let count = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; count],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn idx(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.idx(b, c, h, w)]
    }
}

impl TokenMap {
    /// Builds a (B, N, C) tensor with the same checks as [`FeatureMap::new`].
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self, TensorError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(TensorError::ShapeMismatch(format!(
                "zero-sized dim in {dims:?}"
            )));
        }
        let count: usize = dims.iter().product();
        if data.len() != count {
            return Err(TensorError::ShapeMismatch(format!(
                "dims {dims:?} imply {count} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    #[inline]
    pub fn at(&self, b: usize, n: usize, c: usize) -> f64 {
        self.data[(b * self.dims[1] + n) * self.dims[2] + c]
    }
}

/// Loads an NPY file, dispatching on rank: 3 → [`TokenMap`], 4 → [`FeatureMap`].
///
/// Accepts `<f4` (widened to f64) and `<f8`, C-order only. Any NaN or Inf in
/// the payload is a load error, so downstream code can assume finiteness.
pub fn load_npy(path: &Path) -> Result<LoadedTensor, TensorError> {
    let (dims, data) = npy::read_raw(path)?;
    match dims.len() {
        3 => Ok(LoadedTensor::Token(TokenMap::new(
            [dims[0], dims[1], dims[2]],
            data,
        )?)),
        4 => Ok(LoadedTensor::Feature(FeatureMap::new(
            [dims[0], dims[1], dims[2], dims[3]],
            data,
        )?)),
        r => Err(TensorError::UnsupportedRank(r)),
    }
}

/// Writes a feature map as NPY v1.0, `<f8`, C-order.
pub fn save_npy(t: &FeatureMap, path: &Path) -> Result<(), TensorError> {
    npy::write_raw(path, &t.dims, &t.data)
}

/// Reinterprets a token dump as a spatial map: token n lands at
/// (h, w) = (n div W, n mod W) and the channel axis moves to second place.
///
/// With `drop_class` the first token is discarded, for dumps that carry a
/// class token in slot 0; such a token has no spatial position.
pub fn tokens_to_spatial(
    t: &TokenMap,
    h: usize,
    w: usize,
    drop_class: bool,
) -> Result<FeatureMap, TensorError> {
    let [b_count, n_count, c_count] = t.dims;
    let offset = usize::from(drop_class);
    if n_count != h * w + offset {
        return Err(TensorError::ShapeMismatch(format!(
            "{n_count} tokens cannot fill a {h}x{w} grid (drop_class = {drop_class})"
        )));
    }
    let mut out = FeatureMap::zeros([b_count, c_count, h, w]);
    for b in 0..b_count {
        for n in 0..h * w {
            let (hh, ww) = (n / w, n % w);
            for c in 0..c_count {
                let i = out.idx(b, c, hh, ww);
                out.data[i] = t.at(b, n + offset, c);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`tokens_to_spatial`] for class-token-free maps; used to route
/// spatial-domain gradients back into token layout.
pub fn spatial_to_tokens(x: &FeatureMap) -> TokenMap {
    let [b_count, c_count, h, w] = x.dims;
    let n_count = h * w;
    let mut data = vec![0.0; b_count * n_count * c_count];
    for b in 0..b_count {
        for n in 0..n_count {
            let (hh, ww) = (n / w, n % w);
            for c in 0..c_count {
                data[(b * n_count + n) * c_count + c] = x.at(b, c, hh, ww);
            }
        }
    }
    TokenMap {
        dims: [b_count, n_count, c_count],
        data,
    }
}

/// File name for the k-th layer dump (1-indexed): `layer_007.npy`.
pub fn layer_file_name(k: usize) -> String {
    format!("layer_{k:03}.npy")
}

/// Parses a layer index back out of a `layer_<k>.npy` file name.
pub fn layer_index_from_name(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("layer_")?.strip_suffix(".npy")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinyvit::rng::SplitMix64;

    #[test]
    fn load_identity_on_known_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.npy");
        let t = FeatureMap::new([1, 2, 2, 2], (0..8).map(|i| i as f64).collect()).unwrap();
        save_npy(&t, &path).unwrap();
        match load_npy(&path).unwrap() {
            LoadedTensor::Feature(back) => {
                assert_eq!(back.dims, [1, 2, 2, 2]);
                assert_eq!(back.data, t.data);
            }
            other => panic!("expected rank-4 dispatch, got {other:?}"),
        }
    }

    #[test]
    fn minimal_tensor_serializes_to_136_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("min.npy");
        let t = FeatureMap::new([1, 1, 1, 1], vec![0.0]).unwrap();
        save_npy(&t, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // 128-byte preamble plus one f64.
        assert_eq!(bytes.len(), 136);
        assert_eq!(&bytes[128..], &[0u8; 8]);
    }

    #[test]
    fn roundtrip_is_bitwise_on_seeded_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seeded.npy");
        let mut rng = SplitMix64::new(33);
        let data: Vec<f64> = (0..3 * 5 * 4 * 4).map(|_| rng.next_uniform()).collect();
        let t = FeatureMap::new([3, 5, 4, 4], data).unwrap();
        save_npy(&t, &path).unwrap();

        let first = std::fs::read(&path).unwrap();
        match load_npy(&path).unwrap() {
            LoadedTensor::Feature(back) => {
                assert_eq!(back.dims, t.dims);
                // Bitwise equality, not approximate.
                for (a, b) in back.data.iter().zip(&t.data) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
                save_npy(&back, &path).unwrap();
            }
            other => panic!("expected rank-4 dispatch, got {other:?}"),
        }
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn rank3_dispatches_to_token_map() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tok.npy");
        npy::write_raw(&path, &[1, 4, 2], &(0..8).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        match load_npy(&path).unwrap() {
            LoadedTensor::Token(t) => assert_eq!(t.dims, [1, 4, 2]),
            other => panic!("expected rank-3 dispatch, got {other:?}"),
        }
    }

    #[test]
    fn rank2_is_rejected_by_typed_loader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mat.npy");
        npy::write_raw(&path, &[2, 3], &vec![0.0; 6]).unwrap();
        assert!(matches!(
            load_npy(&path),
            Err(TensorError::UnsupportedRank(2))
        ));
    }

    #[test]
    fn tokens_to_spatial_lays_tokens_row_major() {
        let t = TokenMap::new([1, 4, 1], vec![10.0, 11.0, 12.0, 13.0]).unwrap();
        let x = tokens_to_spatial(&t, 2, 2, false).unwrap();
        assert_eq!(x.dims, [1, 1, 2, 2]);
        assert_eq!(x.data, vec![10.0, 11.0, 12.0, 13.0]);
        assert_eq!(x.at(0, 0, 1, 0), 12.0);
    }

    #[test]
    fn tokens_to_spatial_drops_class_token() {
        let t = TokenMap::new([1, 5, 1], vec![99.0, 10.0, 11.0, 12.0, 13.0]).unwrap();
        let x = tokens_to_spatial(&t, 2, 2, true).unwrap();
        assert_eq!(x.data, vec![10.0, 11.0, 12.0, 13.0]);
    }

    #[test]
    fn tokens_to_spatial_rejects_wrong_token_count() {
        let t = TokenMap::new([1, 5, 1], vec![0.0; 5]).unwrap();
        assert!(matches!(
            tokens_to_spatial(&t, 2, 2, false),
            Err(TensorError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn spatial_roundtrip_recovers_tokens_minus_class() {
        let mut rng = SplitMix64::new(7);
        let data: Vec<f64> = (0..2 * 17 * 8).map(|_| rng.next_uniform()).collect();
        let t = TokenMap::new([2, 17, 8], data).unwrap();
        let x = tokens_to_spatial(&t, 4, 4, true).unwrap();
        let back = spatial_to_tokens(&x);
        assert_eq!(back.dims, [2, 16, 8]);
        for b in 0..2 {
            for n in 0..16 {
                for c in 0..8 {
                    assert_eq!(back.at(b, n, c), t.at(b, n + 1, c));
                }
            }
        }
    }

    #[test]
    fn tokens_to_spatial_preserves_values_per_batch_channel() {
        let mut rng = SplitMix64::new(19);
        let data: Vec<f64> = (0..3 * 6 * 4).map(|_| rng.next_uniform()).collect();
        let t = TokenMap::new([3, 6, 4], data).unwrap();
        let x = tokens_to_spatial(&t, 2, 3, false).unwrap();
        for b in 0..3 {
            for c in 0..4 {
                let mut from_tokens: Vec<f64> = (0..6).map(|n| t.at(b, n, c)).collect();
                let mut from_spatial: Vec<f64> = (0..2)
                    .flat_map(|h| (0..3).map(move |w| (h, w)))
                    .map(|(h, w)| x.at(b, c, h, w))
                    .collect();
                from_tokens.sort_by(f64::total_cmp);
                from_spatial.sort_by(f64::total_cmp);
                assert_eq!(from_tokens, from_spatial);
            }
        }
    }

    #[test]
    fn layer_file_names_are_zero_padded_and_parse_back() {
        assert_eq!(layer_file_name(7), "layer_007.npy");
        assert_eq!(layer_file_name(123), "layer_123.npy");
        assert_eq!(layer_index_from_name("layer_007.npy"), Some(7));
        assert_eq!(layer_index_from_name("layer_1024.npy"), Some(1024));
        assert_eq!(layer_index_from_name("weights.npy"), None);
        assert_eq!(layer_index_from_name("layer_x.npy"), None);
    }
}
