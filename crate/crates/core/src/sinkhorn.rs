//! Log-domain Sinkhorn normalization.
//!
//! `S^L(X/τ)` alternates row and column normalization `L` times on the log
//! scores and exponentiates once at the end, so large `1/τ` cannot overflow.

use crate::assignment::hungarian;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::Permutation;
use crate::tensor::Tensor;

/// Smallest probability used when taking logs for hardening.
const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub temperature: f64,
    pub iterations: usize,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { temperature: 0.5, iterations: 20 }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || self.iterations == 0 {
            return Err(Error::InvalidConfig("sinkhorn needs temperature > 0 and at least one iteration".into()));
        }
        Ok(())
    }
}

/// `log S^L(X/τ)` on the tape.
pub fn log_sinkhorn(tape: &mut Tape, scores: Var, cfg: SinkhornConfig) -> Result<Var> {
    cfg.validate()?;
    let shape = tape.value(scores).shape();
    if shape.0 != shape.1 {
        return Err(Error::NotSquare { op: "sinkhorn", shape });
    }
    let mut y = tape.scale(scores, 1.0 / cfg.temperature);
    for _ in 0..cfg.iterations {
        let rows = tape.logsumexp_rows(y)?;
        y = tape.sub_col(y, rows)?;
        let yt = tape.transpose(y);
        let cols = tape.logsumexp_rows(yt)?;
        let yt = tape.sub_col(yt, cols)?;
        y = tape.transpose(yt);
    }
    Ok(y)
}

/// Differentiable soft permutation `S^L(X/τ)`.
pub fn sinkhorn(tape: &mut Tape, scores: Var, cfg: SinkhornConfig) -> Result<Var> {
    let log_p = log_sinkhorn(tape, scores, cfg)?;
    Ok(tape.exp(log_p))
}

/// Forward-only [`sinkhorn`] on a plain matrix.
pub fn sinkhorn_matrix(scores: &Tensor, cfg: SinkhornConfig) -> Result<Tensor> {
    let mut tape = Tape::no_grad();
    let x = tape.constant(scores.clone());
    let p = sinkhorn(&mut tape, x, cfg)?;
    Ok(tape.value(p).clone())
}

/// Forward-only [`log_sinkhorn`] on a plain matrix.
pub fn log_sinkhorn_matrix(scores: &Tensor, cfg: SinkhornConfig) -> Result<Tensor> {
    let mut tape = Tape::no_grad();
    let x = tape.constant(scores.clone());
    let p = log_sinkhorn(&mut tape, x, cfg)?;
    Ok(tape.value(p).clone())
}

/// Rounds log-probabilities to the permutation maximizing `Σ_j log P[j, σ(j)]`.
pub fn harden_log(log_p: &Tensor) -> Result<Permutation> {
    let floor = crate::math::ln(LOG_FLOOR);
    hungarian(&log_p.map(|v| -(if v > floor { v } else { floor })))
}

/// Rounds a soft assignment to the permutation maximizing
/// `Σ_j log P[j, σ(j)]`, with entries clamped away from zero.
pub fn harden(p_soft: &Tensor) -> Result<Permutation> {
    harden_log(&p_soft.map(|v| crate::math::ln(v.max(LOG_FLOOR))))
}
