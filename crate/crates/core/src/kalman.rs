//! Differentiable Kalman filter over the stacked multi-object state,
//! conditioned on (soft) assignment matrices, plus an RTS smoother.
//!
//! The measurement matrix at step `k` is `M_k = P_k ⊗ I_d`, where row `j` of
//! `P_k` distributes observation slot `j` over tracks. With `P_k` a hard
//! permutation this is the usual `H P_k` of the multi-object model; with a
//! Sinkhorn output it is its relaxation.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::math::LN_2PI;
use crate::model::{stack, ModelParams};
use crate::tensor::Tensor;

/// Mean and covariance nodes of a Gaussian over the stacked state.
#[derive(Debug, Clone, Copy)]
pub struct GaussianBelief {
    pub mean: Var,
    pub cov: Var,
}

/// Plain-valued Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefValue {
    pub mean: Tensor,
    pub cov: Tensor,
}

impl GaussianBelief {
    pub fn value(&self, tape: &Tape) -> BeliefValue {
        BeliefValue { mean: tape.value(self.mean).clone(), cov: tape.value(self.cov).clone() }
    }
}

/// Joint model matrices placed on a tape as constants.
#[derive(Debug, Clone)]
pub struct FilterModel {
    pub objects: usize,
    pub dim: usize,
    transition: Var,
    transition_t: Var,
    process_noise: Var,
    measurement_noise: Var,
    identity: Var,
    log_norm: Var,
    prior: GaussianBelief,
    joint_transition: Tensor,
}

impl FilterModel {
    /// Places the joint model on `tape` with process noise `q_scale · Q`.
    pub fn on_tape(tape: &mut Tape, params: &ModelParams, q_scale: f64) -> Self {
        let nd = params.state_dim();
        let f = params.joint_transition();
        let transition = tape.constant(f.clone());
        let transition_t = tape.constant(f.transpose());
        let process_noise = tape.constant(params.joint_process_noise().scale(q_scale));
        let measurement_noise = tape.constant(params.joint_measurement_noise());
        let identity = tape.constant(Tensor::identity(nd));
        let log_norm = tape.constant(Tensor::scalar(-0.5 * nd as f64 * LN_2PI));
        let prior = GaussianBelief {
            mean: tape.constant(params.joint_prior_mean()),
            cov: tape.constant(params.joint_prior_cov()),
        };
        Self {
            objects: params.objects,
            dim: params.dim,
            transition,
            transition_t,
            process_noise,
            measurement_noise,
            identity,
            log_norm,
            prior,
            joint_transition: f,
        }
    }

    pub fn prior(&self) -> GaussianBelief {
        self.prior
    }

    pub fn state_dim(&self) -> usize {
        self.objects * self.dim
    }
}

fn symmetrize(tape: &mut Tape, m: Var) -> Result<Var> {
    let mt = tape.transpose(m);
    let sum = tape.add(m, mt)?;
    Ok(tape.scale(sum, 0.5))
}

/// `μ̂ = F μ`, `Σ̂ = sym(F Σ Fᵀ + Q)`.
pub fn predict(tape: &mut Tape, belief: GaussianBelief, model: &FilterModel) -> Result<GaussianBelief> {
    let mean = tape.matmul(model.transition, belief.mean)?;
    let fs = tape.matmul(model.transition, belief.cov)?;
    let fsf = tape.matmul(fs, model.transition_t)?;
    let cov = tape.add(fsf, model.process_noise)?;
    let cov = symmetrize(tape, cov)?;
    Ok(GaussianBelief { mean, cov })
}

/// Lifts an `N x N` assignment to the `Nd x Nd` measurement matrix `P ⊗ I_d`.
pub fn assignment_to_joint(tape: &mut Tape, p_soft: Var, dim: usize) -> Var {
    tape.kron_identity(p_soft, dim)
}

/// Kalman update with measurement matrix `M = P ⊗ I_d`.
///
/// Returns the posterior and `log N(z | M μ̂, M Σ̂ Mᵀ + R)`. The innovation
/// covariance is only ever factored, never inverted; the posterior
/// covariance uses the Joseph form and is symmetrized.
pub fn update(
    tape: &mut Tape,
    predicted: GaussianBelief,
    z: Var,
    p_soft: Var,
    model: &FilterModel,
) -> Result<(GaussianBelief, Var)> {
    let nd = model.state_dim();
    let p_shape = tape.value(p_soft).shape();
    if p_shape != (model.objects, model.objects) {
        return Err(Error::ShapeMismatch { op: "kalman_update", left: p_shape, right: (model.objects, model.objects) });
    }
    if tape.value(z).shape() != (nd, 1) {
        return Err(Error::ShapeMismatch { op: "kalman_update", left: tape.value(z).shape(), right: (nd, 1) });
    }

    let m = assignment_to_joint(tape, p_soft, model.dim);
    let mt = tape.transpose(m);
    let predicted_z = tape.matmul(m, predicted.mean)?;
    let innovation = tape.sub(z, predicted_z)?;
    let ms = tape.matmul(m, predicted.cov)?;
    let msm = tape.matmul(ms, mt)?;
    let s = tape.add(msm, model.measurement_noise)?;

    // S⁻¹ M Σ̂ = Kᵀ, since S and Σ̂ are symmetric.
    let (gain_t, logdet) = tape.cholesky_solve_logdet(s, ms)?;
    let gain = tape.transpose(gain_t);
    let (s_inv_v, _) = tape.cholesky_solve_logdet(s, innovation)?;
    let vt = tape.transpose(innovation);
    let quad = tape.matmul(vt, s_inv_v)?;
    let half = tape.add(logdet, quad)?;
    let half = tape.scale(half, -0.5);
    let log_marginal = tape.add(half, model.log_norm)?;

    let correction = tape.matmul(gain, innovation)?;
    let mean = tape.add(predicted.mean, correction)?;

    let km = tape.matmul(gain, m)?;
    let a = tape.sub(model.identity, km)?;
    let at = tape.transpose(a);
    let asig = tape.matmul(a, predicted.cov)?;
    let joseph = tape.matmul(asig, at)?;
    let kr = tape.matmul(gain, model.measurement_noise)?;
    let kt = tape.transpose(gain);
    let krk = tape.matmul(kr, kt)?;
    let cov = tape.add(joseph, krk)?;
    let cov = symmetrize(tape, cov)?;

    debug_assert_eq!(tape.value(cov).shape(), (nd, nd));
    Ok((GaussianBelief { mean, cov }, log_marginal))
}

/// Everything recorded by one filter pass; all vectors have length `K`.
#[derive(Debug, Clone)]
pub struct FilterTrace {
    pub predicted: Vec<GaussianBelief>,
    pub posterior: Vec<GaussianBelief>,
    pub log_marginals: Vec<Var>,
    pub assignments: Vec<Var>,
    /// `Σ_k log p(z_k | P_{1:k}, z_{1:k-1})`.
    pub total: Var,
}

impl FilterTrace {
    pub fn steps(&self) -> usize {
        self.posterior.len()
    }

    pub fn total_value(&self, tape: &Tape) -> f64 {
        tape.value(self.total).item()
    }

    pub fn filtered(&self, tape: &Tape) -> Vec<BeliefValue> {
        self.posterior.iter().map(|b| b.value(tape)).collect()
    }
}

fn with_step(err: Error, step: usize) -> Error {
    match err {
        Error::NotPositiveDefinite { min_eigenvalue, .. } => {
            Error::NotPositiveDefinite { step: Some(step), min_eigenvalue }
        }
        other => other,
    }
}

/// Runs the filter over `observations` (each `N x d`, slot order) using one
/// assignment node per step. Step 0 updates the prior directly.
pub fn filter_sequence(
    tape: &mut Tape,
    observations: &[Tensor],
    assignments: &[Var],
    model: &FilterModel,
) -> Result<FilterTrace> {
    if observations.len() != assignments.len() || observations.is_empty() {
        return Err(Error::InvalidConfig(alloc::format!(
            "filter needs one assignment per observation (got {} and {})",
            assignments.len(),
            observations.len()
        )));
    }
    let k = observations.len();
    let mut trace = FilterTrace {
        predicted: Vec::with_capacity(k),
        posterior: Vec::with_capacity(k),
        log_marginals: Vec::with_capacity(k),
        assignments: assignments.to_vec(),
        total: model.log_norm,
    };
    let mut belief = model.prior();
    let mut total: Option<Var> = None;
    for (step, (z, &p)) in observations.iter().zip(assignments).enumerate() {
        let predicted =
            if step == 0 { belief } else { predict(tape, belief, model).map_err(|e| with_step(e, step))? };
        let z = tape.constant(stack(z));
        let (posterior, ll) = update(tape, predicted, z, p, model).map_err(|e| with_step(e, step))?;
        total = Some(match total {
            None => ll,
            Some(t) => tape.add(t, ll)?,
        });
        trace.predicted.push(predicted);
        trace.posterior.push(posterior);
        trace.log_marginals.push(ll);
        belief = posterior;
    }
    trace.total = total.expect("at least one step");
    Ok(trace)
}

/// Rauch–Tung–Striebel backward pass over a completed trace.
pub fn smooth(tape: &Tape, trace: &FilterTrace, model: &FilterModel) -> Result<Vec<BeliefValue>> {
    let k = trace.steps();
    let mut out: Vec<BeliefValue> = trace.filtered(tape);
    if k < 2 {
        return Ok(out);
    }
    let f = &model.joint_transition;
    for step in (0..k - 1).rev() {
        let filtered = &out[step];
        let pred_next = trace.predicted[step + 1].value(tape);
        let factor = Cholesky::factor(&pred_next.cov).map_err(|e| with_step(e, step + 1))?;
        // G = Σ_k Fᵀ Σ̂_{k+1}⁻¹ = (Σ̂_{k+1}⁻¹ F Σ_k)ᵀ
        let gain = factor.solve(&f.matmul(&filtered.cov)?)?.transpose();
        let next = &out[step + 1];
        let mean = filtered.mean.add(&gain.matmul(&next.mean.sub(&pred_next.mean)?)?)?;
        let cov =
            filtered.cov.add(&gain.matmul(&next.cov.sub(&pred_next.cov)?)?.matmul(&gain.transpose())?)?.symmetrized();
        out[step] = BeliefValue { mean, cov };
    }
    Ok(out)
}

/// Forward-only filter and smoother with fixed assignment matrices.
pub fn filter_and_smooth(
    params: &ModelParams,
    q_scale: f64,
    observations: &[Tensor],
    assignments: &[Tensor],
) -> Result<FilterOutput> {
    let mut tape = Tape::no_grad();
    let model = FilterModel::on_tape(&mut tape, params, q_scale);
    let vars: Vec<Var> = assignments.iter().map(|p| tape.constant(p.clone())).collect();
    let trace = filter_sequence(&mut tape, observations, &vars, &model)?;
    let smoothed = smooth(&tape, &trace, &model)?;
    Ok(FilterOutput {
        log_likelihood: trace.total_value(&tape),
        log_marginals: trace.log_marginals.iter().map(|v| tape.value(*v).item()).collect(),
        filtered: trace.filtered(&tape),
        smoothed,
    })
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub log_likelihood: f64,
    pub log_marginals: Vec<f64>,
    pub filtered: Vec<BeliefValue>,
    pub smoothed: Vec<BeliefValue>,
}
