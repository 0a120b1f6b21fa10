//! Normalization and distance primitives.
//!
//! Retrieval compares codes by Euclidean distance after scaling every code
//! to unit length. All arithmetic is done in `f64`.

use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};

/// Norms at or below this are treated as zero vectors.
pub const ZERO_NORM_EPS: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for k in 0..4 {
            acc[k] += ca[k] * cb[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Squared Euclidean distance. The caller guarantees equal lengths.
///
/// Uses four independent accumulators so the loop vectorizes; the summation
/// order is fixed, so results are reproducible across runs and thread counts.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for k in 0..4 {
            let t = ca[k] - cb[k];
            acc[k] += t * t;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(squared_distance(a, b).sqrt())
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    normalize_in_place(&mut out)?;
    Ok(out)
}

/// Scales `v` to unit length in place. Fails on zero or non-finite norms.
pub fn normalize_in_place(v: &mut [f64]) -> Result<()> {
    let n = norm(v);
    if !n.is_finite() {
        return Err(Error::NonFinite { id: None });
    }
    if n <= ZERO_NORM_EPS {
        return Err(Error::ZeroVector { id: None });
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    Ok(())
}

/// Returns a copy of `set` with every row scaled to unit length.
pub fn normalize_set(set: &DescriptorSet) -> Result<DescriptorSet> {
    let mut out = set.clone();
    out.normalize_rows()?;
    Ok(out)
}
