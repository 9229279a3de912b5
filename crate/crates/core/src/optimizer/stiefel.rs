//! Matrices with orthonormal columns and the moves that keep them there.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{EshError, Result};

/// Smallest singular value accepted by [`stiefel_project`].
pub const RANK_TOLERANCE: f64 = 1e-12;
pub const TAU_MIN: f64 = 1e-10;
pub const TAU_MAX: f64 = 1e3;
/// `‖Ydiff‖²_F` below this counts as stagnation in [`bb_step`].
pub const BB_STAGNATION: f64 = 1e-24;

/// A d×k matrix `W` with `WᵀW = I_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix(DMatrix<f64>);

impl ProjectionMatrix {
    /// Accepts `w` if `‖WᵀW - I‖_∞ <= tol`.
    pub fn from_matrix(w: DMatrix<f64>, tol: f64) -> Result<Self> {
        if w.ncols() > w.nrows() || w.ncols() == 0 {
            return Err(EshError::Shape(format!("projection must be d×k with 1 <= k <= d, got {:?}", w.shape())));
        }
        let r = orthogonality_residual(&w);
        if !(r <= tol) {
            return Err(EshError::InvalidArgument(format!(
                "columns are not orthonormal (residual {r:e})"
            )));
        }
        Ok(Self(w))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dims(&self) -> usize {
        self.0.nrows()
    }

    pub fn bits(&self) -> usize {
        self.0.ncols()
    }

    pub fn residual(&self) -> f64 {
        orthogonality_residual(&self.0)
    }
}

/// `‖WᵀW - I‖_∞` (largest absolute entry).
pub fn orthogonality_residual(w: &DMatrix<f64>) -> f64 {
    let mut g = w.tr_mul(w);
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.amax()
}

/// Nearest matrix with orthonormal columns in Frobenius norm: `U Vᵀ` from the
/// thin SVD `W = U Σ Vᵀ`.
pub fn stiefel_project(w: &DMatrix<f64>) -> Result<ProjectionMatrix> {
    let (d, k) = w.shape();
    if k == 0 || k > d {
        return Err(EshError::Shape(format!("cannot project a {d}×{k} matrix")));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(EshError::InvalidArgument("matrix has non-finite entries".into()));
    }
    let svd = w.clone().svd(true, true);
    let smallest = svd.singular_values.min();
    if smallest < RANK_TOLERANCE {
        return Err(EshError::RankDeficient(smallest));
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    Ok(ProjectionMatrix(u * v_t))
}

/// Seeded Gaussian d×k matrix projected onto the Stiefel manifold.
pub fn init_w(d: usize, k: usize, seed: u64) -> Result<ProjectionMatrix> {
    if k == 0 || k > d {
        return Err(EshError::InvalidArgument(format!("need 1 <= k <= d, got k={k}, d={d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..d * k).map(|_| StandardNormal.sample(&mut rng)).collect();
    stiefel_project(&DMatrix::from_row_slice(d, k, &values))
}

/// Riemannian gradient in the tangent plane: `G - W Gᵀ W`.
pub fn tangent_gradient(w: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    g - w * g.tr_mul(w)
}

/// Skew-symmetric `F = G Wᵀ - W Gᵀ`.
pub fn skew_generator(w: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    g * w.transpose() - w * g.transpose()
}

/// Cayley update `Y(τ) = (I + τ/2 F)⁻¹ (I - τ/2 F) W`, solved as a d×d
/// linear system with partially pivoted LU.
pub fn cayley_step(w: &DMatrix<f64>, g: &DMatrix<f64>, tau: f64) -> Result<ProjectionMatrix> {
    if w.shape() != g.shape() {
        return Err(EshError::Shape(format!(
            "W is {:?} but G is {:?}",
            w.shape(),
            g.shape()
        )));
    }
    let d = w.nrows();
    let half = 0.5 * tau * skew_generator(w, g);
    let lhs = DMatrix::<f64>::identity(d, d) + &half;
    let rhs = w - &half * w;
    let y = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| EshError::SolverFailure("I + τ/2·F is singular".into()))?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(EshError::SolverFailure("Cayley update produced non-finite values".into()));
    }
    Ok(ProjectionMatrix(y))
}

/// Barzilai–Borwein step `|Tr(MᵀY)| / Tr(YᵀY)`, clamped to
/// `[TAU_MIN, TAU_MAX]`. Returns `previous` when `Y` has stagnated.
pub fn bb_step(m: &DMatrix<f64>, ydiff: &DMatrix<f64>, previous: f64) -> f64 {
    let denom = ydiff.norm_squared();
    if !(denom >= BB_STAGNATION) {
        return previous;
    }
    let tau = m.dot(ydiff).abs() / denom;
    if tau.is_finite() {
        tau.clamp(TAU_MIN, TAU_MAX)
    } else {
        previous
    }
}
