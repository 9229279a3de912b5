//! The relaxed hashing objective
//!
//! ```text
//! L(W) = -(1/n) Tr(WᵀSW) + (α/2n) ‖ |XW| - J ‖²_F
//! ```
//!
//! and its gradient `G = -(2/n) S W + (α/n) Xᵀ (XW - sgn(XW))`, where `J` is
//! the all-ones n×k matrix (never materialized).

use nalgebra::DMatrix;

use crate::anchor_graph::CompressedSimilarity;
use crate::dataset::FeatureMatrix;
use crate::error::{EshError, Result};
use crate::par;

/// Below this the quantization term is treated as zero when tuning α.
pub const ALPHA_DEGENERACY: f64 = 1e-12;

/// How `sgn` maps an exact zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroRule {
    /// Zero stays zero (derivative convention).
    Zero,
    /// Zero becomes +1 (encoding convention).
    Positive,
}

#[inline]
pub fn sign_value(v: f64, rule: ZeroRule) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        match rule {
            ZeroRule::Zero => 0.0,
            ZeroRule::Positive => 1.0,
        }
    }
}

pub fn sgn(m: &DMatrix<f64>, rule: ZeroRule) -> DMatrix<f64> {
    m.map(|v| sign_value(v, rule))
}

/// The two pieces of the objective at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// `-(1/n) Tr(WᵀSW)`
    pub spectral: f64,
    /// `(1/n) ‖|XW| - J‖²_F`, without the α/2 factor.
    pub quantization: f64,
}

impl LossTerms {
    pub fn total(&self, alpha: f64) -> f64 {
        self.spectral + 0.5 * alpha * self.quantization
    }
}

fn check_shapes(w: &DMatrix<f64>, x: &FeatureMatrix, s: &CompressedSimilarity) -> Result<()> {
    if w.nrows() != x.dims() {
        return Err(EshError::DimensionMismatch {
            expected: x.dims(),
            actual: w.nrows(),
        });
    }
    if s.dims() != x.dims() {
        return Err(EshError::DimensionMismatch {
            expected: x.dims(),
            actual: s.dims(),
        });
    }
    Ok(())
}

fn trace_term(w: &DMatrix<f64>, s: &CompressedSimilarity, n: usize) -> (f64, DMatrix<f64>) {
    let sw = s.matrix() * w;
    let tr = w.dot(&sw);
    (-tr / n as f64, sw)
}

/// One pass over X: returns `Σ(|XW|-1)²` and, when requested,
/// `Xᵀ(XW - sgn₀(XW))`.
fn data_pass(x: &FeatureMatrix, w: &DMatrix<f64>, want_grad: bool) -> (f64, Option<DMatrix<f64>>) {
    let (d, k) = (x.dims(), w.ncols());
    let partials = par::map_chunks(x.rows(), par::ROW_CHUNK, |r| {
        let (start, len) = (r.start, r.len());
        let xt = x.view_rows_transposed(start, len);
        let mut proj = xt.tr_mul(w);
        let mut q = 0.0;
        for v in proj.iter_mut() {
            let e = v.abs() - 1.0;
            q += e * e;
            *v -= sign_value(*v, ZeroRule::Zero);
        }
        let g = want_grad.then(|| xt * &proj);
        (q, g)
    });
    let mut q = 0.0;
    let mut grad = want_grad.then(|| DMatrix::<f64>::zeros(d, k));
    for (pq, pg) in partials {
        q += pq;
        if let (Some(acc), Some(pg)) = (grad.as_mut(), pg) {
            *acc += pg;
        }
    }
    (q, grad)
}

pub fn loss_terms(w: &DMatrix<f64>, x: &FeatureMatrix, s: &CompressedSimilarity) -> Result<LossTerms> {
    check_shapes(w, x, s)?;
    let n = x.rows();
    let (spectral, _) = trace_term(w, s, n);
    let (q, _) = data_pass(x, w, false);
    Ok(LossTerms {
        spectral,
        quantization: q / n as f64,
    })
}

pub fn loss(w: &DMatrix<f64>, x: &FeatureMatrix, s: &CompressedSimilarity, alpha: f64) -> Result<f64> {
    if alpha == 0.0 {
        check_shapes(w, x, s)?;
        return Ok(trace_term(w, s, x.rows()).0);
    }
    Ok(loss_terms(w, x, s)?.total(alpha))
}

pub fn gradient(
    w: &DMatrix<f64>,
    x: &FeatureMatrix,
    s: &CompressedSimilarity,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    Ok(loss_and_gradient(w, x, s, alpha)?.1)
}

/// Loss and gradient sharing a single pass over the data.
pub fn loss_and_gradient(
    w: &DMatrix<f64>,
    x: &FeatureMatrix,
    s: &CompressedSimilarity,
    alpha: f64,
) -> Result<(f64, DMatrix<f64>)> {
    check_shapes(w, x, s)?;
    let n = x.rows() as f64;
    let (spectral, sw) = trace_term(w, s, x.rows());
    let mut g = sw * (-2.0 / n);
    if alpha == 0.0 {
        return Ok((spectral, g));
    }
    let (q, xr) = data_pass(x, w, true);
    g += xr.expect("gradient requested") * (alpha / n);
    Ok((spectral + 0.5 * alpha * q / n, g))
}

/// α that makes both objective terms equally large at `w0`:
/// `α = |2 T₁ / T₂|`.
pub fn auto_alpha(w0: &DMatrix<f64>, x: &FeatureMatrix, s: &CompressedSimilarity) -> Result<f64> {
    let terms = loss_terms(w0, x, s)?;
    alpha_from_terms(terms)
}

pub fn alpha_from_terms(terms: LossTerms) -> Result<f64> {
    if terms.quantization < ALPHA_DEGENERACY {
        return Err(EshError::DegenerateAlpha(terms.quantization));
    }
    Ok((2.0 * terms.spectral / terms.quantization).abs())
}
