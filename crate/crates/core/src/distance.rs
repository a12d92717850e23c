//! Scale-invariant cosine distance and base-2 Jensen-Shannon divergence.
//!
//! Both functions are defined on non-negative vectors. The cosine distance
//! `sqrt(1 - cos(a, b))` is a metric and ignores the magnitude of either
//! argument; a zero-norm argument yields cosine 0 and hence distance 1.
//! The Jensen-Shannon divergence normalizes both arguments to distributions
//! first and treats `0 * log 0` as 0, so disjoint supports give exactly 1.

use crate::error::{DotError, Result};

/// Floor applied to denominators and to entries inside logarithms.
pub const EPS: f64 = 1e-12;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of the angle between `a` and `b`, or 0 if either has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    Ok(cosine_from_parts(dot(a, b), norm(a), norm(b)))
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    Ok(distance_from_cosine(cosine_from_parts(dot(a, b), norm(a), norm(b))))
}

#[inline]
pub(crate) fn cosine_from_parts(ab: f64, na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (ab / (na * nb)).clamp(-1.0, 1.0)
    }
}

#[inline]
pub(crate) fn distance_from_cosine(cos: f64) -> f64 {
    (1.0 - cos).max(0.0).sqrt()
}

/// Base-2 Jensen-Shannon divergence between the L1-normalized inputs.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    if !(sp > 0.0) || !(sq > 0.0) {
        return Err(DotError::Degenerate(
            "Jensen-Shannon divergence of a zero-sum vector".into(),
        ));
    }
    Ok(js_normalized(p, sp, q, sq))
}

/// JS divergence of `p / sp` and `q / sq`; callers guarantee positive sums.
pub(crate) fn js_normalized(p: &[f64], sp: f64, q: &[f64], sq: f64) -> f64 {
    let mut acc = 0.0;
    for (&pr, &qr) in p.iter().zip(q) {
        let pk = pr / sp;
        let qk = qr / sq;
        let m = pk + qk;
        if pk > 0.0 {
            acc += pk * (2.0 * pk / m).log2();
        }
        if qk > 0.0 {
            acc += qk * (2.0 * qk / m).log2();
        }
    }
    (0.5 * acc).clamp(0.0, 1.0)
}

/// Gradient of `js_normalized` with respect to the unnormalized `p`.
///
/// The derivative with respect to the normalized entry is
/// `0.5 * log2(2 p_k / (p_k + q_k))`; the chain rule through `p / sum(p)`
/// centers it by its `p`-weighted mean and divides by the sum. Entries inside
/// the logarithm are floored at [`EPS`]. Returns whether the floor was hit.
pub(crate) fn js_grad_first(p: &[f64], sp: f64, q: &[f64], sq: f64, out: &mut [f64]) -> bool {
    let mut clamped = false;
    let mut mean = 0.0;
    for ((o, &pr), &qr) in out.iter_mut().zip(p).zip(q) {
        let pk = pr / sp;
        let qk = qr / sq;
        if pk < EPS {
            clamped = true;
        }
        let h = 0.5 * (2.0 * pk.max(EPS) / (pk + qk).max(EPS)).log2();
        *o = h;
        mean += pk * h;
    }
    for o in out.iter_mut() {
        *o = (*o - mean) / sp;
    }
    clamped
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(DotError::dim(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}
