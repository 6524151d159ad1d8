//! Synthetic episodes.
//!
//! Seeding: every generator draws from `ChaCha8Rng::seed_from_u64(seed)`
//! with a dedicated stream per quantity, so changing one quantity's draw
//! count never shifts another's.
//!
//! | stream | quantity |
//! |---|---|
//! | 0 | initial state and process noise |
//! | 1 | per-step permutations |
//! | 2 | measurement noise |
//! | 3 | context feature noise |
//!
//! Identity embeddings for feature-conditioned data come from stream 0 of
//! the separate dataset seed, so every episode of a dataset shares them.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{apply_permutation, Episode, ModelParams, Permutation};
use crate::tensor::Tensor;

pub const STREAM_PROCESS: u64 = 0;
pub const STREAM_PERMUTATION: u64 = 1;
pub const STREAM_MEASUREMENT: u64 = 2;
pub const STREAM_FEATURES: u64 = 3;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random-walk experiment constants.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkConfig {
    pub objects: usize,
    pub dim: usize,
    pub steps: usize,
    pub sigma_q: f64,
    pub sigma_r: f64,
    /// Draw a uniform permutation per step; `false` keeps identity order.
    pub shuffle: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self { objects: 4, dim: 2, steps: 100, sigma_q: 0.1, sigma_r: 0.1, shuffle: true }
    }
}

impl WalkConfig {
    /// Filter model matching the generator.
    pub fn model_params(&self) -> Result<ModelParams> {
        ModelParams::random_walk(self.objects, self.dim, self.sigma_q, self.sigma_r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 || self.objects < 2 || self.dim == 0 {
            return Err(Error::InvalidConfig("random walk needs steps >= 2, objects >= 2, dim >= 1".into()));
        }
        if !(self.sigma_q >= 0.0 && self.sigma_r >= 0.0) {
            return Err(Error::InvalidConfig("noise scales must be non-negative".into()));
        }
        Ok(())
    }
}

/// Context features for the identity-recognition task.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub dim: usize,
    pub sigma_f: f64,
    pub dataset_seed: u64,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::from_vec(rows, cols, data).expect("length matches")
}

/// `x₀ ~ N(0, I)`, `x_k ~ N(x_{k-1}, σ_q² I)`, `z_k = P_k (x_k + N(0, σ_r² I))`.
pub fn generate_random_walk(cfg: &WalkConfig, seed: u64) -> Result<Episode> {
    cfg.validate()?;
    let (n, d, k) = (cfg.objects, cfg.dim, cfg.steps);
    let mut process = stream_rng(seed, STREAM_PROCESS);
    let mut perm_rng = stream_rng(seed, STREAM_PERMUTATION);
    let mut meas = stream_rng(seed, STREAM_MEASUREMENT);

    let mut states = Vec::with_capacity(k);
    let mut observations = Vec::with_capacity(k);
    let mut true_perms = Vec::with_capacity(k);

    let mut x = normal_matrix(&mut process, n, d, 1.0);
    for step in 0..k {
        if step > 0 {
            let noise = normal_matrix(&mut process, n, d, cfg.sigma_q);
            x = x.add(&noise)?;
        }
        let mut order: Vec<usize> = (0..n).collect();
        if cfg.shuffle {
            order.shuffle(&mut perm_rng);
        }
        let perm = Permutation::new(order)?;
        let noisy = x.add(&normal_matrix(&mut meas, n, d, cfg.sigma_r))?;
        observations.push(apply_permutation(&noisy, &perm)?);
        states.push(x.clone());
        true_perms.push(perm);
    }

    Ok(Episode { states, observations, true_perms, context: None, seed })
}

/// Fixed per-identity embeddings `e_i ~ N(0, I_c)`, one row per object.
pub fn identity_embeddings(objects: usize, features: &FeatureConfig) -> Tensor {
    let mut rng = stream_rng(features.dataset_seed, STREAM_PROCESS);
    normal_matrix(&mut rng, objects, features.dim, 1.0)
}

/// Random walk whose measurements also carry a noisy identity embedding:
/// the context row in slot `j` is `e_{P_k[j]} + N(0, σ_f² I)`.
pub fn generate_feature_conditioned(cfg: &WalkConfig, features: &FeatureConfig, seed: u64) -> Result<Episode> {
    if features.dim == 0 || !(features.sigma_f >= 0.0) {
        return Err(Error::InvalidConfig("feature dim must be positive".into()));
    }
    let mut episode = generate_random_walk(cfg, seed)?;
    let embeddings = identity_embeddings(cfg.objects, features);
    let mut rng = stream_rng(seed, STREAM_FEATURES);
    let context = episode
        .true_perms
        .iter()
        .map(|perm| {
            let rows = apply_permutation(&embeddings, perm)?;
            let noise = normal_matrix(&mut rng, cfg.objects, features.dim, features.sigma_f);
            rows.add(&noise)
        })
        .collect::<Result<Vec<_>>>()?;
    episode.context = Some(context);
    Ok(episode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_noise_repeats_initial_state() {
        let cfg = WalkConfig { steps: 5, sigma_q: 0.0, sigma_r: 0.0, shuffle: false, ..WalkConfig::default() };
        let ep = generate_random_walk(&cfg, 3).unwrap();
        for z in &ep.observations {
            assert_eq!(z, &ep.states[0]);
        }
    }

    #[test]
    fn default_shapes() {
        let ep = generate_random_walk(&WalkConfig::default(), 1).unwrap();
        assert_eq!(ep.steps(), 100);
        assert_eq!(ep.states.len(), 100);
        assert_eq!(ep.true_perms.len(), 100);
        assert_eq!(ep.observations[0].shape(), (4, 2));
        assert_eq!(ep.states[99].shape(), (4, 2));
        ep.validate().unwrap();
    }

    #[test]
    fn same_seed_bit_identical() {
        let cfg = WalkConfig::default();
        assert_eq!(generate_random_walk(&cfg, 42).unwrap(), generate_random_walk(&cfg, 42).unwrap());
        assert_ne!(generate_random_walk(&cfg, 42).unwrap(), generate_random_walk(&cfg, 43).unwrap());
    }

    #[test]
    fn observations_follow_permutation() {
        let cfg = WalkConfig { sigma_r: 0.0, ..WalkConfig::default() };
        let ep = generate_random_walk(&cfg, 9).unwrap();
        for k in 0..ep.steps() {
            for j in 0..cfg.objects {
                assert_eq!(ep.observations[k].row(j), ep.states[k].row(ep.true_perms[k][j]));
            }
        }
    }

    #[test]
    fn too_short_rejected() {
        let cfg = WalkConfig { steps: 1, ..WalkConfig::default() };
        assert!(generate_random_walk(&cfg, 0).is_err());
    }
}
