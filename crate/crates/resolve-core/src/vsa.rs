//! Vector-symbolic primitive algebra: bipolarization, bundling, binding,
//! bipolar cosine, and bit-packed bipolar kernels.
//!
//! The packed fast path is inference/benchmark-only; training goes through
//! the real-valued sign-STE path on the tape.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Element-wise `δ(x) = -1 if x < 0, +1 if x > 0, 0 at exactly 0`.
pub fn bipolarize<S: Scalar>(v: &[S]) -> Vec<S> {
    v.iter()
        .map(|&x| {
            if x > S::zero() {
                S::one()
            } else if x < S::zero() {
                -S::one()
            } else {
                S::zero()
            }
        })
        .collect()
}

/// Bundling: element-wise real-valued sum.
pub fn bundle<S: Scalar>(a: &[S], b: &[S]) -> Result<Vec<S>> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| x + y).collect())
}

/// n-ary bundle; exists for algebra tests, the attention path bundles pairs.
pub fn bundle_many<S: Scalar>(vs: &[&[S]]) -> Result<Vec<S>> {
    let d = vs.first().map(|v| v.len()).unwrap_or(0);
    let mut out = vec![S::zero(); d];
    for v in vs {
        if v.len() != d {
            return Err(Error::DimMismatch(v.len(), d));
        }
        for (o, &x) in out.iter_mut().zip(*v) {
            *o += x;
        }
    }
    Ok(out)
}

/// Binding: Hadamard (element-wise) product.
pub fn bind<S: Scalar>(a: &[S], b: &[S]) -> Result<Vec<S>> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| x * y).collect())
}

/// Inner product divided by D — the cosine of two bipolar hypervectors
/// under the convention that their L2 norms are √D.
pub fn bipolar_cosine<S: Scalar>(a: &[S], b: &[S]) -> Result<S> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch(a.len(), b.len()));
    }
    let dot: S = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    Ok(dot / S::from_f64_lossy(a.len() as f64))
}

const WORD: usize = 64;

/// Bipolar hypervector packed one bit per coordinate.
///
/// Coordinate `k` maps to bit `k mod 64` of word `k / 64`; bit = 1 means
/// the coordinate is +1. Coordinates that were exactly 0 under δ are
/// recorded in `zero_mask` so the packed dot product stays exact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedBipolar {
    dim: usize,
    words: Vec<u64>,
    zero_mask: Vec<u64>,
}

impl PackedBipolar {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn zero_mask(&self) -> &[u64] {
        &self.zero_mask
    }

    /// Bytes of payload (sign bits plus zero mask), for bandwidth accounting.
    pub fn payload_bytes(&self) -> usize {
        (self.words.len() + self.zero_mask.len()) * 8
    }
}

/// Pack a ternary vector (values in {-1, 0, +1}) into bits.
pub fn pack<S: Scalar>(v: &[S]) -> Result<PackedBipolar> {
    let dim = v.len();
    let n_words = dim.div_ceil(WORD);
    let mut words = vec![0u64; n_words];
    let mut zero_mask = vec![0u64; n_words];
    for (k, &x) in v.iter().enumerate() {
        let (w, b) = (k / WORD, k % WORD);
        if x == S::one() {
            words[w] |= 1 << b;
        } else if x == S::zero() {
            zero_mask[w] |= 1 << b;
        } else if x != -S::one() {
            return Err(Error::NonTernary {
                index: k,
                value: x.to_f64_lossy(),
            });
        }
    }
    Ok(PackedBipolar {
        dim,
        words,
        zero_mask,
    })
}

/// Exact inverse of [`pack`], reproducing zeros.
pub fn unpack<S: Scalar>(p: &PackedBipolar) -> Vec<S> {
    (0..p.dim)
        .map(|k| {
            let (w, b) = (k / WORD, k % WORD);
            if p.zero_mask[w] >> b & 1 == 1 {
                S::zero()
            } else if p.words[w] >> b & 1 == 1 {
                S::one()
            } else {
                -S::one()
            }
        })
        .collect()
}

/// Exact ternary dot product via XNOR/popcount over coordinates that are
/// nonzero in both operands: `D' - 2·hamming`, where `D'` counts the
/// shared nonzero coordinates.
pub fn packed_dot(a: &PackedBipolar, b: &PackedBipolar) -> Result<i64> {
    if a.dim != b.dim {
        return Err(Error::DimMismatch(a.dim, b.dim));
    }
    let mut both_nonzero: i64 = 0;
    let mut hamming: i64 = 0;
    let n_words = a.words.len();
    for w in 0..n_words {
        let mut valid = !(a.zero_mask[w] | b.zero_mask[w]);
        if w == n_words - 1 && a.dim % WORD != 0 {
            valid &= (1u64 << (a.dim % WORD)) - 1;
        }
        both_nonzero += (valid.count_ones()) as i64;
        hamming += ((a.words[w] ^ b.words[w]) & valid).count_ones() as i64;
    }
    Ok(both_nonzero - 2 * hamming)
}

/// [`bipolar_cosine`] on the packed representation.
pub fn packed_cosine(a: &PackedBipolar, b: &PackedBipolar) -> Result<f64> {
    Ok(packed_dot(a, b)? as f64 / a.dim as f64)
}
