//! Training the projection `W`.
//!
//! Two trainers minimize the same objective over matrices with orthonormal
//! columns: [`esh1_train`] takes plain gradient steps and projects back with
//! an SVD, [`esh2_train`] moves along the manifold with Cayley updates and
//! Barzilai–Borwein step sizes.

mod objective;
mod stiefel;
mod train;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use objective::{
    alpha_from_terms, auto_alpha, gradient, loss, loss_and_gradient, loss_terms, sgn, sign_value, LossTerms,
    ZeroRule, ALPHA_DEGENERACY,
};
pub use stiefel::{
    bb_step, cayley_step, init_w, orthogonality_residual, skew_generator, stiefel_project, tangent_gradient,
    ProjectionMatrix, BB_STAGNATION, RANK_TOLERANCE, TAU_MAX, TAU_MIN,
};
pub use train::{esh1_train, esh2_train, resolve_alpha, train, TrainOutcome};

use crate::error::{EshError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Projected gradient.
    Esh1,
    /// Cayley updates on the Stiefel manifold.
    Esh2,
}

impl FromStr for Algorithm {
    type Err = EshError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "esh1" => Ok(Algorithm::Esh1),
            "esh2" => Ok(Algorithm::Esh2),
            other => Err(EshError::InvalidArgument(format!("unknown algorithm {other:?}"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Esh1 => "esh1",
            Algorithm::Esh2 => "esh2",
        })
    }
}

/// Regularization weight: balanced automatically at the initial point, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlphaRepr", into = "AlphaRepr")]
pub enum Alpha {
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AlphaRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<AlphaRepr> for Alpha {
    type Error = EshError;

    fn try_from(r: AlphaRepr) -> Result<Self> {
        match r {
            AlphaRepr::Number(v) => Alpha::fixed(v),
            AlphaRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Alpha> for AlphaRepr {
    fn from(a: Alpha) -> Self {
        match a {
            Alpha::Auto => AlphaRepr::Text("auto".into()),
            Alpha::Fixed(v) => AlphaRepr::Number(v),
        }
    }
}

impl Alpha {
    pub fn fixed(v: f64) -> Result<Self> {
        if v >= 0.0 && v.is_finite() {
            Ok(Alpha::Fixed(v))
        } else {
            Err(EshError::InvalidArgument(format!("alpha must be finite and >= 0, got {v}")))
        }
    }
}

impl FromStr for Alpha {
    type Err = EshError;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Alpha::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| EshError::InvalidArgument(format!("alpha must be `auto` or a number, got {s:?}")))?;
        Alpha::fixed(v)
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Alpha::Auto => f.write_str("auto"),
            Alpha::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub bits: usize,
    pub iterations: usize,
    pub eta: f64,
    pub alpha: Alpha,
    pub tau0: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Stop once the relative loss change stays below 1e-7 for 10
    /// consecutive iterations.
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            bits: 16,
            iterations: 300,
            eta: 0.01,
            alpha: Alpha::Auto,
            tau0: 0.01,
            seed: 0,
            algorithm: Algorithm::Esh2,
            early_stop: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dims: usize) -> Result<()> {
        if self.bits == 0 || self.bits > dims {
            return Err(EshError::InvalidArgument(format!(
                "need 1 <= bits <= d, got bits={}, d={dims}",
                self.bits
            )));
        }
        if self.iterations == 0 {
            return Err(EshError::InvalidArgument("iterations must be >= 1".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(EshError::InvalidArgument(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.tau0 >= 0.0 && self.tau0.is_finite()) {
            return Err(EshError::InvalidArgument(format!("tau0 must be finite and >= 0, got {}", self.tau0)));
        }
        if let Alpha::Fixed(a) = self.alpha {
            Alpha::fixed(a)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub loss: f64,
    pub orth_residual: f64,
    pub step_size: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub alpha: f64,
    pub initial_loss: f64,
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_loss, |r| r.loss)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// CSV with header `iteration,loss,orth_residual,step_size,elapsed_ms`.
    /// Without `with_timing` the elapsed column is left empty so the file
    /// depends only on the inputs.
    pub fn write_csv<W: Write>(&self, w: &mut W, with_timing: bool) -> std::io::Result<()> {
        writeln!(w, "iteration,loss,orth_residual,step_size,elapsed_ms")?;
        for r in &self.records {
            write!(w, "{},{:e},{:e},{:e},", r.iteration, r.loss, r.orth_residual, r.step_size)?;
            if with_timing {
                write!(w, "{:.3}", r.elapsed_ms)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
