use std::time::Instant;

use nalgebra::DMatrix;

use super::objective::{alpha_from_terms, loss_and_gradient, loss_terms};
use super::stiefel::{bb_step, cayley_step, init_w, orthogonality_residual, stiefel_project, tangent_gradient};
use super::{Algorithm, Alpha, ProjectionMatrix, TraceRecord, TrainConfig, TrainTrace};
use crate::anchor_graph::CompressedSimilarity;
use crate::dataset::FeatureMatrix;
use crate::error::{EshError, Result};

const EARLY_STOP_TOLERANCE: f64 = 1e-7;
const EARLY_STOP_PATIENCE: usize = 10;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub w: ProjectionMatrix,
    pub trace: TrainTrace,
}

/// α for `w0`: the fixed value, or the balancing value when `auto`.
pub fn resolve_alpha(
    alpha: Alpha,
    w0: &DMatrix<f64>,
    x: &FeatureMatrix,
    s: &CompressedSimilarity,
) -> Result<f64> {
    match alpha {
        Alpha::Fixed(v) => Ok(v),
        Alpha::Auto => alpha_from_terms(loss_terms(w0, x, s)?),
    }
}

pub fn train(x: &FeatureMatrix, s: &CompressedSimilarity, config: &TrainConfig) -> Result<TrainOutcome> {
    match config.algorithm {
        Algorithm::Esh1 => esh1_train(x, s, config),
        Algorithm::Esh2 => esh2_train(x, s, config),
    }
}

struct Setup {
    w: DMatrix<f64>,
    alpha: f64,
    loss: f64,
    grad: DMatrix<f64>,
}

fn setup(x: &FeatureMatrix, s: &CompressedSimilarity, config: &TrainConfig) -> Result<Setup> {
    config.validate(x.dims())?;
    if s.dims() != x.dims() {
        return Err(EshError::DimensionMismatch {
            expected: x.dims(),
            actual: s.dims(),
        });
    }
    let w = init_w(x.dims(), config.bits, config.seed)?.into_inner();
    let alpha = resolve_alpha(config.alpha, &w, x, s)?;
    let (loss, grad) = loss_and_gradient(&w, x, s, alpha)?;
    Ok(Setup { w, alpha, loss, grad })
}

struct Stopper {
    enabled: bool,
    calm: usize,
}

impl Stopper {
    fn should_stop(&mut self, previous: f64, current: f64) -> bool {
        if !self.enabled {
            return false;
        }
        let rel = (current - previous).abs() / previous.abs().max(f64::MIN_POSITIVE);
        if rel < EARLY_STOP_TOLERANCE {
            self.calm += 1;
        } else {
            self.calm = 0;
        }
        self.calm >= EARLY_STOP_PATIENCE
    }
}

/// Projected gradient: `W ← Proj(W - ηG)` for `N` iterations.
pub fn esh1_train(x: &FeatureMatrix, s: &CompressedSimilarity, config: &TrainConfig) -> Result<TrainOutcome> {
    let start = Instant::now();
    let Setup { mut w, alpha, loss, mut grad } = setup(x, s, config)?;
    let mut trace = TrainTrace { alpha, initial_loss: loss, records: Vec::with_capacity(config.iterations) };
    let mut stopper = Stopper { enabled: config.early_stop, calm: 0 };
    let mut previous = loss;
    for p in 1..=config.iterations {
        let stepped = &w - &grad * config.eta;
        w = stiefel_project(&stepped)?.into_inner();
        let (loss, g) = loss_and_gradient(&w, x, s, alpha)?;
        grad = g;
        trace.records.push(TraceRecord {
            iteration: p,
            loss,
            orth_residual: orthogonality_residual(&w),
            step_size: config.eta,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if stopper.should_stop(previous, loss) {
            break;
        }
        previous = loss;
    }
    Ok(TrainOutcome { w: ProjectionMatrix::from_matrix(w, 1e-8)?, trace })
}

/// Manifold descent: Cayley update with step `τ`, then a Barzilai–Borwein
/// step from successive iterates and tangent gradients. The tangent gradient
/// of the previous iterate is carried over rather than recomputed.
pub fn esh2_train(x: &FeatureMatrix, s: &CompressedSimilarity, config: &TrainConfig) -> Result<TrainOutcome> {
    let start = Instant::now();
    let Setup { mut w, alpha, loss, mut grad } = setup(x, s, config)?;
    let mut trace = TrainTrace { alpha, initial_loss: loss, records: Vec::with_capacity(config.iterations) };
    let mut stopper = Stopper { enabled: config.early_stop, calm: 0 };
    let mut tangent = tangent_gradient(&w, &grad);
    let mut tau = config.tau0;
    let mut previous = loss;
    for p in 1..=config.iterations {
        let next = cayley_step(&w, &grad, tau)?.into_inner();
        let (loss, g) = loss_and_gradient(&next, x, s, alpha)?;
        let next_tangent = tangent_gradient(&next, &g);
        let used = tau;
        tau = bb_step(&(&next - &w), &(&next_tangent - &tangent), tau);
        w = next;
        grad = g;
        tangent = next_tangent;
        trace.records.push(TraceRecord {
            iteration: p,
            loss,
            orth_residual: orthogonality_residual(&w),
            step_size: used,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if stopper.should_stop(previous, loss) {
            break;
        }
        previous = loss;
    }
    Ok(TrainOutcome { w: ProjectionMatrix::from_matrix(w, 1e-6)?, trace })
}
