//! Hungarian tracking baseline, label-supervised baselines and metrics.
//!
//! Learned tracks are only defined up to a global relabeling, so every
//! metric takes an alignment: a permutation mapping estimated track `i` to
//! true object `alignment[i]`.

use alloc::vec::Vec;

use crate::assignment::hungarian;
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::kalman::{filter_and_smooth, predict, smooth, update, BeliefValue, FilterModel, FilterOutput};
use crate::linalg::Cholesky;
use crate::math;
use crate::model::{stack, unstack, Episode, ModelParams, Permutation};
use crate::network::{scores_matrix, NetworkParams};
use crate::tensor::Tensor;
use crate::trainer::{episode_inputs, supervised_train, SupervisedConfig};

/// Distance used by the tracking baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CostKind {
    /// Squared Euclidean distance to the predicted track mean.
    #[default]
    Euclidean,
    /// Squared Mahalanobis distance under the per-track innovation covariance.
    Mahalanobis,
}

#[derive(Debug, Clone)]
pub struct TrackerOutput {
    /// Slot → track assignment chosen at each step.
    pub assignments: Vec<Permutation>,
    pub log_likelihood: f64,
    pub filtered: Vec<BeliefValue>,
    pub smoothed: Vec<BeliefValue>,
}

/// `cost[j, i]` between measurement slot `j` and the predicted block of track `i`.
pub fn association_cost(z: &Tensor, predicted: &BeliefValue, params: &ModelParams, kind: CostKind) -> Result<Tensor> {
    let (n, d) = (params.objects, params.dim);
    let means = unstack(&predicted.mean, d);
    let mut cost = Tensor::zeros(n, n);
    let blocks: Vec<Option<Cholesky>> = match kind {
        CostKind::Euclidean => (0..n).map(|_| None).collect(),
        CostKind::Mahalanobis => (0..n)
            .map(|i| {
                let mut block = Tensor::zeros(d, d);
                for a in 0..d {
                    for b in 0..d {
                        block[(a, b)] = predicted.cov[(i * d + a, i * d + b)];
                    }
                }
                Cholesky::factor(&block.add(&params.measurement_noise)?).map(Some)
            })
            .collect::<Result<_>>()?,
    };
    for j in 0..n {
        for i in 0..n {
            let diff: Vec<f64> = z.row(j).iter().zip(means.row(i)).map(|(a, b)| a - b).collect();
            cost[(j, i)] = match &blocks[i] {
                None => diff.iter().map(|v| v * v).sum(),
                Some(ch) => {
                    let v = Tensor::column(&diff);
                    let w = ch.solve(&v)?;
                    v.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
                }
            };
        }
    }
    Ok(cost)
}

/// Greedy-in-time tracker: at each step assign measurements to predicted
/// track means by the Hungarian method, update, and smooth at the end.
pub fn hungarian_tracker(episode: &Episode, params: &ModelParams, kind: CostKind) -> Result<TrackerOutput> {
    episode.validate()?;
    let mut tape = Tape::no_grad();
    let model = FilterModel::on_tape(&mut tape, params, 1.0);
    let mut belief = model.prior();
    let mut assignments = Vec::with_capacity(episode.steps());
    let mut predicted_all = Vec::with_capacity(episode.steps());
    let mut posterior_all = Vec::with_capacity(episode.steps());
    let mut lls = Vec::with_capacity(episode.steps());
    for (step, z) in episode.observations.iter().enumerate() {
        let predicted = if step == 0 { belief } else { predict(&mut tape, belief, &model)? };
        let cost = association_cost(z, &predicted.value(&tape), params, kind)?;
        let perm = hungarian(&cost)?;
        let p = tape.constant(perm.to_matrix());
        let zv = tape.constant(stack(z));
        let (post, ll) = update(&mut tape, predicted, zv, p, &model)?;
        assignments.push(perm);
        predicted_all.push(predicted);
        posterior_all.push(post);
        lls.push(ll);
        belief = post;
    }
    let mut total = lls[0];
    for ll in &lls[1..] {
        total = tape.add(total, *ll)?;
    }
    let trace = crate::kalman::FilterTrace {
        predicted: predicted_all,
        posterior: posterior_all,
        log_marginals: lls,
        assignments: Vec::new(),
        total,
    };
    let smoothed = smooth(&tape, &trace, &model)?;
    Ok(TrackerOutput {
        assignments,
        log_likelihood: trace.total_value(&tape),
        filtered: trace.filtered(&tape),
        smoothed,
    })
}

/// Filter and smooth with the given hard assignments.
pub fn track_with_permutations(episode: &Episode, params: &ModelParams, perms: &[Permutation]) -> Result<FilterOutput> {
    let mats: Vec<Tensor> = perms.iter().map(Permutation::to_matrix).collect();
    filter_and_smooth(params, 1.0, &episode.observations, &mats)
}

/// Per-step `N x d` track estimates from stacked beliefs.
pub fn belief_tracks(beliefs: &[BeliefValue], dim: usize) -> Vec<Tensor> {
    beliefs.iter().map(|b| unstack(&b.mean, dim)).collect()
}

fn check_tracks(estimated: &[Tensor], truth: &[Tensor]) -> Result<(usize, usize)> {
    if estimated.len() != truth.len() || estimated.is_empty() {
        return Err(Error::InvalidConfig("track sequences differ in length".into()));
    }
    let shape = truth[0].shape();
    if estimated.iter().chain(truth).any(|t| t.shape() != shape) {
        return Err(Error::InvalidConfig("track shapes differ".into()));
    }
    Ok(shape)
}

/// Global relabeling minimizing total squared error between estimated and
/// true trajectories: Hungarian on the step-averaged pairwise distances.
pub fn align_identities(estimated: &[Tensor], truth: &[Tensor]) -> Result<Permutation> {
    let (n, _) = check_tracks(estimated, truth)?;
    let mut cost = Tensor::zeros(n, n);
    for (e, t) in estimated.iter().zip(truth) {
        for i in 0..n {
            for o in 0..n {
                let d2: f64 = e.row(i).iter().zip(t.row(o)).map(|(a, b)| (a - b) * (a - b)).sum();
                cost[(i, o)] += d2;
            }
        }
    }
    let k = estimated.len() as f64;
    hungarian(&cost.scale(1.0 / k))
}

/// Global relabeling of predicted labels maximizing agreement with the
/// true labels.
pub fn align_labels(predicted: &[Permutation], truth: &[Permutation]) -> Result<Permutation> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::InvalidConfig("label sequences differ in length".into()));
    }
    let n = truth[0].len();
    let mut counts = Tensor::zeros(n, n);
    for (p, t) in predicted.iter().zip(truth) {
        for j in 0..n {
            counts[(p[j], t[j])] -= 1.0;
        }
    }
    hungarian(&counts)
}

/// Root mean squared error over steps, objects and coordinates.
pub fn rmse(estimated: &[Tensor], truth: &[Tensor], alignment: &Permutation) -> Result<f64> {
    let (n, d) = check_tracks(estimated, truth)?;
    if alignment.len() != n {
        return Err(Error::InvalidPermutation { len: n });
    }
    let mut sse = 0.0;
    for (e, t) in estimated.iter().zip(truth) {
        for i in 0..n {
            for (a, b) in e.row(i).iter().zip(t.row(alignment[i])) {
                sse += (a - b) * (a - b);
            }
        }
    }
    Ok(math::sqrt(sse / (estimated.len() * n * d) as f64))
}

/// Fraction of `(step, slot)` pairs whose aligned predicted track equals
/// the true object.
pub fn association_accuracy(predicted: &[Permutation], truth: &[Permutation], alignment: &Permutation) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::InvalidConfig("assignment sequences differ in length".into()));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, t) in predicted.iter().zip(truth) {
        if p.len() != t.len() || alignment.len() != t.len() {
            return Err(Error::InvalidPermutation { len: t.len() });
        }
        for j in 0..t.len() {
            hits += usize::from(alignment[p[j]] == t[j]);
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

/// RMSE and accuracy after identity alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse: f64,
    pub accuracy: f64,
    pub alignment: Permutation,
}

/// Aligns smoothed tracks to the ground truth and scores both the estimates
/// and the assignments that produced them.
pub fn evaluate_tracking(
    episode: &Episode,
    smoothed: &[BeliefValue],
    assignments: &[Permutation],
) -> Result<EvalReport> {
    let tracks = belief_tracks(smoothed, episode.dim());
    let alignment = align_identities(&tracks, &episode.states)?;
    Ok(EvalReport {
        rmse: rmse(&tracks, &episode.states, &alignment)?,
        accuracy: association_accuracy(assignments, &episode.true_perms, &alignment)?,
        alignment,
    })
}

fn labelled_samples(
    episodes: &[Episode],
    labels: &[Vec<Permutation>],
    cfg: &SupervisedConfig,
) -> Result<Vec<(Tensor, Permutation)>> {
    let mut out = Vec::new();
    for (e, l) in episodes.iter().zip(labels) {
        for (x, p) in episode_inputs(e, cfg.input_mode)?.into_iter().zip(l) {
            out.push((x, p.clone()));
        }
    }
    Ok(out)
}

/// Detector trained with cross-entropy on the true slot identities.
pub fn ground_truth_supervised_train(episodes: &[Episode], cfg: &SupervisedConfig) -> Result<NetworkParams> {
    let labels: Vec<Vec<Permutation>> = episodes.iter().map(|e| e.true_perms.clone()).collect();
    let samples = labelled_samples(episodes, &labels, cfg)?;
    let classes = episodes.first().map(Episode::objects).ok_or_else(|| Error::InvalidConfig("no episodes".into()))?;
    supervised_train(&samples, classes, cfg)
}

#[derive(Debug, Clone)]
pub struct PseudoLabelled {
    pub params: NetworkParams,
    /// `1 -` tracker association accuracy, pooled over episodes.
    pub label_error: f64,
}

/// Detector trained on labels produced by the Hungarian tracker.
pub fn hungarian_supervised_train(
    episodes: &[Episode],
    params: &ModelParams,
    cfg: &SupervisedConfig,
) -> Result<PseudoLabelled> {
    let mut labels = Vec::with_capacity(episodes.len());
    let mut correct = 0.0;
    let mut total = 0.0;
    for e in episodes {
        let out = hungarian_tracker(e, params, CostKind::Euclidean)?;
        let report = evaluate_tracking(e, &out.smoothed, &out.assignments)?;
        let count = (e.steps() * e.objects()) as f64;
        correct += report.accuracy * count;
        total += count;
        labels.push(out.assignments);
    }
    let samples = labelled_samples(episodes, &labels, cfg)?;
    let trained = supervised_train(&samples, params.objects, cfg)?;
    Ok(PseudoLabelled { params: trained, label_error: 1.0 - correct / total })
}

/// Held-out detection accuracy: per step, the network's scores are hardened
/// by the Hungarian method, then predicted labels are globally aligned to
/// the true identities.
pub fn detector_accuracy(net: &NetworkParams, episode: &Episode, cfg: &SupervisedConfig) -> Result<f64> {
    label_accuracy(&detector_labels(net, episode, cfg)?, &episode.true_perms)
}

/// Accuracy after the agreement-maximizing global relabeling.
pub fn label_accuracy(predicted: &[Permutation], truth: &[Permutation]) -> Result<f64> {
    let alignment = align_labels(predicted, truth)?;
    association_accuracy(predicted, truth, &alignment)
}

pub fn detector_labels(net: &NetworkParams, episode: &Episode, cfg: &SupervisedConfig) -> Result<Vec<Permutation>> {
    episode_inputs(episode, cfg.input_mode)?.iter().map(|x| hungarian(&scores_matrix(net, x)?.scale(-1.0))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tracks() -> Vec<Tensor> {
        vec![Tensor::from_rows(&[[0.0, 0.0], [5.0, 5.0]]), Tensor::from_rows(&[[0.1, 0.0], [5.0, 5.1]])]
    }

    #[test]
    fn identical_tracks_identity_alignment_zero_rmse() {
        let t = tracks();
        let a = align_identities(&t, &t).unwrap();
        assert_eq!(a, Permutation::identity(2));
        assert_eq!(rmse(&t, &t, &a).unwrap(), 0.0);
    }

    #[test]
    fn swapped_tracks_recover_swap() {
        let t = tracks();
        let swap = Permutation::new(vec![1, 0]).unwrap();
        let est: Vec<Tensor> = t.iter().map(|m| crate::model::apply_permutation(m, &swap).unwrap()).collect();
        let a = align_identities(&est, &t).unwrap();
        assert_eq!(a, swap);
        assert_eq!(rmse(&est, &t, &a).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_rmse() {
        let t = tracks();
        let est: Vec<Tensor> = t.iter().map(|m| m.map(|v| v - 0.3)).collect();
        let r = rmse(&est, &t, &Permutation::identity(2)).unwrap();
        assert!((r - 0.3).abs() < 1e-12);
    }

    #[test]
    fn accuracy_perfect_and_alignment_invariant() {
        let truth = vec![Permutation::new(vec![0, 1, 2]).unwrap(), Permutation::new(vec![2, 0, 1]).unwrap()];
        let id = Permutation::identity(3);
        assert_eq!(association_accuracy(&truth, &truth, &id).unwrap(), 1.0);
        // predicted labels are a relabeling σ⁻¹ of the truth; aligning with σ undoes it
        let sigma = Permutation::new(vec![1, 2, 0]).unwrap();
        let relabeled: Vec<Permutation> = truth.iter().map(|p| sigma.inverse().compose(p)).collect();
        assert_eq!(association_accuracy(&relabeled, &truth, &sigma).unwrap(), 1.0);
        assert_eq!(align_labels(&relabeled, &truth).unwrap(), sigma);
    }

    #[test]
    fn single_object_tracker_identity() {
        let cfg = crate::datagen::WalkConfig { objects: 2, ..Default::default() };
        let mut ep = crate::datagen::generate_random_walk(&cfg, 1).unwrap();
        // collapse to one object
        ep.states = ep.states.iter().map(|s| Tensor::from_rows(&[s.row(0)])).collect();
        ep.observations = ep.states.clone();
        ep.true_perms = vec![Permutation::identity(1); ep.steps()];
        let params = ModelParams::random_walk(1, 2, 0.1, 0.1).unwrap();
        let out = hungarian_tracker(&ep, &params, CostKind::Euclidean).unwrap();
        assert!(out.assignments.iter().all(|p| *p == Permutation::identity(1)));
    }
}
