//! EM training of the assignment network by gradient ascent on the Kalman
//! marginal likelihood, with graduated optimization of the process noise.
//!
//! Each iteration predicts a soft assignment per step (network → Sinkhorn),
//! runs the differentiable filter with the current process-noise scale, and
//! takes one optimizer step on the mean per-step negative log-likelihood.
//! The process noise starts at `α·Q` and grows by `γ` per iteration until it
//! reaches `Q`.

use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::datagen::stream_rng;
use crate::error::{Error, Result};
use crate::kalman::{filter_sequence, FilterModel};
use crate::math;
use crate::model::{Episode, ModelParams, Permutation};
use crate::network::{make_inputs, predict_scores, InitScheme, InputMode, NetworkParams, ParamVars, DEFAULT_HIDDEN};
use crate::sinkhorn::{harden_log, log_sinkhorn_matrix, sinkhorn, SinkhornConfig};
use crate::tensor::Tensor;

/// RNG stream used for mini-batch sampling.
const STREAM_BATCHES: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    /// `θ ← θ - λ g`.
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// γ ≥ 1. With `q_min_scale = 1` graduation is disabled.
    pub graduation_rate: f64,
    /// α ∈ (0, 1]: the process noise starts at `α·Q`.
    pub q_min_scale: f64,
    pub batch_size: usize,
    /// Steps per sampled subsequence; `0` means whole episodes.
    pub subsequence_len: usize,
    pub sinkhorn: SinkhornConfig,
    /// Final temperature of an optional geometric anneal.
    pub final_temperature: Option<f64>,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub input_mode: InputMode,
    pub hidden: Vec<usize>,
    pub init: InitScheme,
    /// Independent initializations; the one whose hardened assignments give
    /// the highest training log-likelihood is kept. Restarts that diverge
    /// are skipped.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let iterations = 300;
        Self {
            learning_rate: 0.05,
            iterations,
            graduation_rate: graduation_rate_for(0.01, iterations),
            q_min_scale: 0.01,
            batch_size: 8,
            subsequence_len: 20,
            sinkhorn: SinkhornConfig::default(),
            final_temperature: None,
            seed: 0,
            optimizer: Optimizer::Sgd,
            clip_norm: 10.0,
            input_mode: InputMode::Positional,
            hidden: DEFAULT_HIDDEN.to_vec(),
            init: InitScheme::Scaled,
            restarts: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.learning_rate >= 0.0) {
            return bad("learning rate must be non-negative");
        }
        if !(self.graduation_rate >= 1.0) {
            return bad("graduation rate must be >= 1");
        }
        if !(self.q_min_scale > 0.0 && self.q_min_scale <= 1.0) {
            return bad("Q_min scale must lie in (0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        if let Some(t) = self.final_temperature {
            if !(t > 0.0) {
                return bad("final temperature must be positive");
            }
        }
        self.sinkhorn.validate()
    }

    /// Disables graduated optimization (`α = γ = 1`).
    pub fn without_graduation(mut self) -> Self {
        self.q_min_scale = 1.0;
        self.graduation_rate = 1.0;
        self
    }

    /// Sets `α` and picks `γ` so that `Q` is reached halfway through.
    pub fn with_graduation(mut self, q_min_scale: f64) -> Self {
        self.q_min_scale = q_min_scale;
        self.graduation_rate = graduation_rate_for(q_min_scale, self.iterations);
        self
    }

    fn temperature_at(&self, iteration: usize) -> f64 {
        let t0 = self.sinkhorn.temperature;
        match self.final_temperature {
            Some(t1) if self.iterations > 1 => {
                let frac = iteration as f64 / (self.iterations - 1) as f64;
                t0 * math::powf(t1 / t0, frac)
            }
            _ => t0,
        }
    }
}

/// γ such that `α γ^(N/2) = 1`.
pub fn graduation_rate_for(q_min_scale: f64, iterations: usize) -> f64 {
    let half = (iterations / 2).max(1) as f64;
    math::powf(1.0 / q_min_scale, 1.0 / half)
}

/// Process-noise scale at iteration `i`: `min(α γ^i, 1)`.
pub fn q_schedule(q_min_scale: f64, graduation_rate: f64, iteration: usize) -> f64 {
    let scale = q_min_scale * math::powf(graduation_rate, iteration as f64);
    scale.min(1.0)
}

/// First iteration at which the schedule reaches full `Q`, if it ever does.
pub fn q_full_iteration(q_min_scale: f64, graduation_rate: f64) -> Option<usize> {
    if q_min_scale >= 1.0 {
        return Some(0);
    }
    if graduation_rate <= 1.0 {
        return None;
    }
    let i = math::ceil(math::ln(1.0 / q_min_scale) / math::ln(graduation_rate)) as usize;
    // guard against ceil landing one short after rounding
    Some(if q_schedule(q_min_scale, graduation_rate, i) < 1.0 { i + 1 } else { i })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-step negative log marginal likelihood of each iteration's batch.
    pub nll: Vec<f64>,
    pub q_scale: Vec<f64>,
    /// Global gradient norm before clipping.
    pub grad_norm: Vec<f64>,
    /// Wall-clock seconds since training started, as reported by the clock.
    pub seconds: Vec<f64>,
    pub params: NetworkParams,
}

impl TrainReport {
    pub fn iterations(&self) -> usize {
        self.nll.len()
    }
}

struct OptimizerState {
    kind: Optimizer,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u32,
}

impl OptimizerState {
    fn new(kind: Optimizer, params: &NetworkParams) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { kind, m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, params: &mut NetworkParams, grads: &[Tensor], lr: f64) {
        self.t += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= lr * gv;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, epsilon } => {
                let t = self.t as f64;
                let c1 = 1.0 - math::powf(beta1, t);
                let c2 = 1.0 - math::powf(beta2, t);
                for (((p, g), m), v) in
                    params.tensors_mut().into_iter().zip(grads).zip(self.m.iter_mut()).zip(self.v.iter_mut())
                {
                    for i in 0..g.data().len() {
                        let gv = g.data()[i];
                        let mv = beta1 * m.data()[i] + (1.0 - beta1) * gv;
                        let vv = beta2 * v.data()[i] + (1.0 - beta2) * gv * gv;
                        m.data_mut()[i] = mv;
                        v.data_mut()[i] = vv;
                        p.data_mut()[i] -= lr * (mv / c1) / (math::sqrt(vv / c2) + epsilon);
                    }
                }
            }
        }
    }
}

/// Clips in place; returns the norm before clipping.
fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = math::sqrt(grads.iter().map(Tensor::norm_sq).sum());
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g = g.scale(s);
        }
    }
    norm
}

/// NaN scores reach the filter as a failed factorization or a bad log.
fn caused_by_non_finite(e: &Error) -> bool {
    match e {
        Error::NotPositiveDefinite { min_eigenvalue, .. } => !min_eigenvalue.is_finite(),
        Error::NonPositiveLog { value } => value.is_nan(),
        _ => false,
    }
}

/// Per-step network inputs of an episode.
pub fn episode_inputs(episode: &Episode, mode: InputMode) -> Result<Vec<Tensor>> {
    (0..episode.steps())
        .map(|k| {
            let ctx = episode.context.as_ref().map(|c| &c[k]);
            make_inputs(&episode.observations[k], ctx, mode)
        })
        .collect()
}

/// Records `Σ_k log p(z_k | …)` of one (sub)sequence on `tape`.
fn sequence_log_likelihood(
    tape: &mut Tape,
    vars: &ParamVars,
    model: &FilterModel,
    observations: &[Tensor],
    inputs: &[Tensor],
    sinkhorn_cfg: SinkhornConfig,
) -> Result<Var> {
    let mut assignments = Vec::with_capacity(observations.len());
    for x in inputs {
        let scores = predict_scores(tape, vars, x)?;
        assignments.push(sinkhorn(tape, scores, sinkhorn_cfg)?);
    }
    let trace = filter_sequence(tape, observations, &assignments, model)?;
    Ok(trace.total)
}

struct Member {
    episode: usize,
    start: usize,
    len: usize,
}

fn sample_batch(episodes: &[Episode], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Member> {
    let full = cfg.subsequence_len == 0 || episodes.iter().all(|e| cfg.subsequence_len >= e.steps());
    if full && cfg.batch_size >= episodes.len() {
        return episodes.iter().enumerate().map(|(i, e)| Member { episode: i, start: 0, len: e.steps() }).collect();
    }
    (0..cfg.batch_size)
        .map(|_| {
            let episode = rng.random_range(0..episodes.len());
            let k = episodes[episode].steps();
            let len = if cfg.subsequence_len == 0 { k } else { cfg.subsequence_len.min(k) };
            let start = rng.random_range(0..=k - len);
            Member { episode, start, len }
        })
        .collect()
}

/// Seed of restart `r`; restart 0 uses the configured seed itself.
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains freshly initialized networks; see [`em_train_from`]. With
/// several restarts, each uses [`restart_seed`] for initialization and
/// batch sampling, and the run with the lowest [`hard_nll`] wins (ties keep
/// the earlier run).
pub fn em_train(
    episodes: &[Episode],
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<(NetworkParams, TrainReport)> {
    em_train_with_clock(episodes, params, config, &mut || 0.0)
}

/// [`em_train`] with wall-clock seconds supplied by `clock`.
pub fn em_train_with_clock(
    episodes: &[Episode],
    params: &ModelParams,
    config: &TrainConfig,
    clock: &mut dyn FnMut() -> f64,
) -> Result<(NetworkParams, TrainReport)> {
    config.validate()?;
    let first = episodes.first().ok_or_else(|| Error::InvalidConfig("training needs at least one episode".into()))?;
    let input_dim = config.input_mode.input_dim(first.dim(), first.context_dim())?;
    let mut best: Option<(f64, NetworkParams, TrainReport)> = None;
    let mut last_err = None;
    for r in 0..config.restarts {
        let run = TrainConfig { seed: restart_seed(config.seed, r), ..config.clone() };
        let net = NetworkParams::init(input_dim, &run.hidden, params.objects, run.seed, run.init)?;
        if config.restarts == 1 {
            return em_train_from(episodes, params, &run, net, clock);
        }
        // a diverged restart drops out; training fails only if all of them do
        let scored = em_train_from(episodes, params, &run, net, clock).and_then(|(net, report)| {
            let score = hard_nll(episodes, params, &net, run.input_mode, run.sinkhorn)?;
            Ok((score, net, report))
        });
        match scored {
            Ok(s) if best.as_ref().is_none_or(|b| s.0 < b.0) => best = Some(s),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some((_, net, report)), _) => Ok((net, report)),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("restarts is validated to be at least 1"),
    }
}

/// Runs `config.iterations` EM iterations starting from `net`. `clock`
/// supplies wall-clock seconds for the report.
pub fn em_train_from(
    episodes: &[Episode],
    params: &ModelParams,
    config: &TrainConfig,
    mut net: NetworkParams,
    clock: &mut dyn FnMut() -> f64,
) -> Result<(NetworkParams, TrainReport)> {
    config.validate()?;
    if episodes.is_empty() {
        return Err(Error::InvalidConfig("training needs at least one episode".into()));
    }
    for e in episodes {
        e.validate()?;
        if e.objects() != params.objects || e.dim() != params.dim {
            return Err(Error::InvalidConfig("episode shape differs from model".into()));
        }
    }
    if net.outputs() != params.objects {
        return Err(Error::InvalidConfig("network output width must equal object count".into()));
    }
    let inputs: Vec<Vec<Tensor>> =
        episodes.iter().map(|e| episode_inputs(e, config.input_mode)).collect::<Result<_>>()?;

    let mut rng = stream_rng(config.seed, STREAM_BATCHES);
    let mut opt = OptimizerState::new(config.optimizer, &net);
    let start = clock();
    let mut report = TrainReport {
        nll: Vec::with_capacity(config.iterations),
        q_scale: Vec::with_capacity(config.iterations),
        grad_norm: Vec::with_capacity(config.iterations),
        seconds: Vec::with_capacity(config.iterations),
        params: net.clone(),
    };

    for iteration in 0..config.iterations {
        let q_scale = q_schedule(config.q_min_scale, config.graduation_rate, iteration);
        let sk =
            SinkhornConfig { temperature: config.temperature_at(iteration), iterations: config.sinkhorn.iterations };
        let batch = sample_batch(episodes, config, &mut rng);

        let mut tape = Tape::new();
        let vars = net.on_tape(&mut tape);
        let model = FilterModel::on_tape(&mut tape, params, q_scale);
        let mut loss: Option<Var> = None;
        for m in &batch {
            let range = m.start..m.start + m.len;
            let ll = sequence_log_likelihood(
                &mut tape,
                &vars,
                &model,
                &episodes[m.episode].observations[range.clone()],
                &inputs[m.episode][range],
                sk,
            )
            .map_err(|e| {
                if caused_by_non_finite(&e) {
                    Error::NonFiniteLoss { iteration, last_good: alloc::boxed::Box::new(net.clone()) }
                } else {
                    e
                }
            })?;
            let nll = tape.scale(ll, -1.0 / (m.len as f64 * batch.len() as f64));
            loss = Some(match loss {
                None => nll,
                Some(acc) => tape.add(acc, nll)?,
            });
        }
        let loss = loss.expect("non-empty batch");
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let mut grads = vars.gradients(&grads);
        if !value.is_finite() || !grads.iter().all(Tensor::is_finite) {
            return Err(Error::NonFiniteLoss { iteration, last_good: alloc::boxed::Box::new(net) });
        }
        let norm = clip_gradients(&mut grads, config.clip_norm);
        opt.step(&mut net, &grads, config.learning_rate);

        report.nll.push(value);
        report.q_scale.push(q_scale);
        report.grad_norm.push(norm);
        report.seconds.push(clock() - start);
    }
    report.params = net.clone();
    Ok((net, report))
}

/// Mean per-step negative log marginal likelihood of whole episodes under
/// the full process noise, with no gradient recording.
pub fn evaluate_ll(
    episodes: &[Episode],
    params: &ModelParams,
    net: &NetworkParams,
    mode: InputMode,
    sinkhorn_cfg: SinkhornConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut steps = 0usize;
    for e in episodes {
        let inputs = episode_inputs(e, mode)?;
        let mut tape = Tape::no_grad();
        let vars = net.on_tape(&mut tape);
        let model = FilterModel::on_tape(&mut tape, params, 1.0);
        let ll = sequence_log_likelihood(&mut tape, &vars, &model, &e.observations, &inputs, sinkhorn_cfg)?;
        total -= tape.value(ll).item();
        steps += e.steps();
    }
    if steps == 0 {
        return Err(Error::InvalidConfig("no steps to evaluate".into()));
    }
    Ok(total / steps as f64)
}

/// Mean per-step negative log marginal likelihood at full process noise
/// when the filter uses the network's hardened assignments.
pub fn hard_nll(
    episodes: &[Episode],
    params: &ModelParams,
    net: &NetworkParams,
    mode: InputMode,
    sinkhorn_cfg: SinkhornConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut steps = 0usize;
    for e in episodes {
        let perms: Vec<Tensor> =
            predict_permutations(e, net, mode, sinkhorn_cfg)?.iter().map(Permutation::to_matrix).collect();
        total -= crate::kalman::filter_and_smooth(params, 1.0, &e.observations, &perms)?.log_likelihood;
        steps += e.steps();
    }
    if steps == 0 {
        return Err(Error::InvalidConfig("no steps to evaluate".into()));
    }
    Ok(total / steps as f64)
}

/// Hardened per-step assignments predicted by `net` (slot → track).
pub fn predict_permutations(
    episode: &Episode,
    net: &NetworkParams,
    mode: InputMode,
    sinkhorn_cfg: SinkhornConfig,
) -> Result<Vec<Permutation>> {
    episode_inputs(episode, mode)?
        .iter()
        .map(|x| {
            let scores = crate::network::scores_matrix(net, x)?;
            harden_log(&log_sinkhorn_matrix(&scores, sinkhorn_cfg)?)
        })
        .collect()
}

/// Settings for label-supervised training of the same network.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Steps (each contributing `N` rows) per mini-batch.
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub input_mode: InputMode,
    pub hidden: Vec<usize>,
    pub init: InitScheme,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            iterations: 500,
            batch_size: 16,
            seed: 0,
            optimizer: Optimizer::adam(),
            input_mode: InputMode::Contextual,
            hidden: DEFAULT_HIDDEN.to_vec(),
            init: InitScheme::Scaled,
        }
    }
}

/// Cross-entropy training on `(inputs, labels)` pairs where `labels[j]` is
/// the class of input row `j`.
pub fn supervised_train(
    samples: &[(Tensor, Permutation)],
    classes: usize,
    config: &SupervisedConfig,
) -> Result<NetworkParams> {
    let first = samples.first().ok_or_else(|| Error::InvalidConfig("supervised training needs samples".into()))?;
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let mut net = NetworkParams::init(first.0.cols(), &config.hidden, classes, config.seed, config.init)?;
    let mut opt = OptimizerState::new(config.optimizer, &net);
    let mut rng = stream_rng(config.seed, STREAM_BATCHES);
    for _ in 0..config.iterations {
        let mut rows = Vec::new();
        let mut onehot = Vec::new();
        let mut count = 0usize;
        for _ in 0..config.batch_size {
            let (x, labels) = &samples[rng.random_range(0..samples.len())];
            for j in 0..x.rows() {
                rows.extend_from_slice(x.row(j));
                let mut target = alloc::vec![0.0; classes];
                target[labels[j]] = 1.0;
                onehot.extend(target);
                count += 1;
            }
        }
        let x = Tensor::from_vec(count, first.0.cols(), rows)?;
        let targets = Tensor::from_vec(count, classes, onehot)?;

        let mut tape = Tape::new();
        let vars = net.on_tape(&mut tape);
        let logp = crate::network::log_probs(&mut tape, &vars, &x)?;
        let t = tape.constant(targets);
        let picked = tape.mul(logp, t)?;
        let total = tape.sum(picked);
        let loss = tape.scale(total, -1.0 / count as f64);
        let grads = tape.backward(loss)?;
        let grads = vars.gradients(&grads);
        opt.step(&mut net, &grads, config.learning_rate);
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_starts_at_alpha() {
        assert_eq!(q_schedule(0.01, 1.1, 0), 0.01);
        assert_eq!(q_schedule(0.3, 1.0, 1000), 0.3);
        assert_eq!(q_schedule(1.0, 1.0, 7), 1.0);
    }

    #[test]
    fn schedule_reaches_q_at_49() {
        assert_eq!(q_full_iteration(0.01, 1.1), Some(49));
        assert!(q_schedule(0.01, 1.1, 48) < 1.0);
        for i in 49..200 {
            assert_eq!(q_schedule(0.01, 1.1, i), 1.0);
        }
        assert_eq!(q_full_iteration(0.5, 1.0), None);
    }

    #[test]
    fn default_graduation_reaches_q_midway() {
        let cfg = TrainConfig::default();
        let full = q_full_iteration(cfg.q_min_scale, cfg.graduation_rate).unwrap();
        assert!((full as i64 - (cfg.iterations / 2) as i64).abs() <= 1, "{full}");
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = alloc::vec![Tensor::filled(1, 4, 10.0)];
        let before = clip_gradients(&mut g, 10.0);
        assert_eq!(before, 20.0);
        assert!((libm::sqrt(g[0].norm_sq()) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.graduation_rate = 0.9;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.q_min_scale = 1.5;
        assert!(c.validate().is_err());
    }
}
