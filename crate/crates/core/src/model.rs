//! Linear-Gaussian multi-object model and episode containers.
//!
//! The joint state of `N` objects is stored as `N` rows of `d` coordinates.
//! Flattened row-major it becomes the stacked `Nd` vector used by the filter,
//! with object `i` occupying entries `i*d .. (i+1)*d`. Joint dynamics are
//! block-diagonal replications of the per-object matrices.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::tensor::Tensor;

/// A bijection on `0..n`. Entry `j` is the image of `j`.
///
/// For observation permutations, `perm[j]` is the object measured in slot `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &v in &map {
            if v >= n || seen[v] {
                return Err(Error::InvalidPermutation { len: n });
            }
            seen[v] = true;
        }
        Ok(Self(map))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (j, &i) in self.0.iter().enumerate() {
            inv[i] = j;
        }
        Self(inv)
    }

    /// `self ∘ inner`: `j ↦ self[inner[j]]`.
    pub fn compose(&self, inner: &Self) -> Self {
        Self(inner.0.iter().map(|&j| self.0[j]).collect())
    }

    /// 0/1 matrix with `P[j, perm[j]] = 1`.
    pub fn to_matrix(&self) -> Tensor {
        let n = self.0.len();
        let mut m = Tensor::zeros(n, n);
        for (j, &i) in self.0.iter().enumerate() {
            m[(j, i)] = 1.0;
        }
        m
    }
}

impl core::ops::Index<usize> for Permutation {
    type Output = usize;

    fn index(&self, j: usize) -> &usize {
        &self.0[j]
    }
}

/// Row `j` of the result is row `perm[j]` of `matrix`.
pub fn apply_permutation(matrix: &Tensor, perm: &Permutation) -> Result<Tensor> {
    if perm.len() != matrix.rows() {
        return Err(Error::ShapeMismatch { op: "apply_permutation", left: matrix.shape(), right: (perm.len(), 1) });
    }
    let cols = matrix.cols();
    let mut data = Vec::with_capacity(matrix.rows() * cols);
    for &src in perm.as_slice() {
        data.extend_from_slice(matrix.row(src));
    }
    Tensor::from_vec(matrix.rows(), cols, data)
}

/// Per-object linear-Gaussian dynamics and measurement model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub objects: usize,
    pub dim: usize,
    pub transition: Tensor,
    pub process_noise: Tensor,
    pub measurement_noise: Tensor,
    pub prior_mean: Tensor,
    pub prior_cov: Tensor,
}

impl ModelParams {
    /// Random walk: `F = I`, `Q = σ_q² I`, `R = σ_r² I`, prior `N(0, I)`.
    pub fn random_walk(objects: usize, dim: usize, sigma_q: f64, sigma_r: f64) -> Result<Self> {
        Self::new(
            objects,
            Tensor::identity(dim),
            Tensor::identity(dim).scale(sigma_q * sigma_q),
            Tensor::identity(dim).scale(sigma_r * sigma_r),
            Tensor::zeros(dim, 1),
            Tensor::identity(dim),
        )
    }

    pub fn new(
        objects: usize,
        transition: Tensor,
        process_noise: Tensor,
        measurement_noise: Tensor,
        prior_mean: Tensor,
        prior_cov: Tensor,
    ) -> Result<Self> {
        let dim = transition.rows();
        if objects == 0 || dim == 0 {
            return Err(Error::InvalidConfig("objects and dim must be positive".into()));
        }
        for (name, m) in [
            ("transition", &transition),
            ("process noise", &process_noise),
            ("measurement noise", &measurement_noise),
            ("prior covariance", &prior_cov),
        ] {
            if m.shape() != (dim, dim) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "{name} must be {dim}x{dim}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if prior_mean.shape() != (dim, 1) {
            return Err(Error::InvalidConfig("prior mean must be a d-vector".into()));
        }
        for (name, m) in [
            ("process noise", &process_noise),
            ("measurement noise", &measurement_noise),
            ("prior covariance", &prior_cov),
        ] {
            let spd = m.asymmetry() < 1e-12 && Cholesky::factor(m).map(|c| c.jitter() == 0.0).unwrap_or(false);
            if !spd {
                return Err(Error::InvalidConfig(alloc::format!("{name} must be symmetric positive definite")));
            }
        }
        Ok(Self { objects, dim, transition, process_noise, measurement_noise, prior_mean, prior_cov })
    }

    pub fn state_dim(&self) -> usize {
        self.objects * self.dim
    }

    pub fn joint_transition(&self) -> Tensor {
        self.transition.block_diag_repeat(self.objects)
    }

    pub fn joint_process_noise(&self) -> Tensor {
        self.process_noise.block_diag_repeat(self.objects)
    }

    pub fn joint_measurement_noise(&self) -> Tensor {
        self.measurement_noise.block_diag_repeat(self.objects)
    }

    pub fn joint_prior_mean(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.state_dim());
        for _ in 0..self.objects {
            data.extend_from_slice(self.prior_mean.data());
        }
        Tensor::column(&data)
    }

    pub fn joint_prior_cov(&self) -> Tensor {
        self.prior_cov.block_diag_repeat(self.objects)
    }
}

/// Ground truth and permuted measurements for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// `K` tensors of shape `N x d`; row `i` is object `i`.
    pub states: Vec<Tensor>,
    /// `K` tensors of shape `N x d`; row `j` measures object `true_perms[k][j]`.
    pub observations: Vec<Tensor>,
    pub true_perms: Vec<Permutation>,
    /// Optional `K` tensors of shape `N x c`, aligned with `observations`.
    pub context: Option<Vec<Tensor>>,
    pub seed: u64,
}

impl Episode {
    pub fn steps(&self) -> usize {
        self.observations.len()
    }

    pub fn objects(&self) -> usize {
        self.observations.first().map_or(0, Tensor::rows)
    }

    pub fn dim(&self) -> usize {
        self.observations.first().map_or(0, Tensor::cols)
    }

    pub fn context_dim(&self) -> Option<usize> {
        self.context.as_ref().and_then(|c| c.first().map(Tensor::cols))
    }

    /// Contiguous sub-episode over `range` of steps.
    pub fn slice(&self, range: Range<usize>) -> Self {
        Self {
            states: self.states[range.clone()].to_vec(),
            observations: self.observations[range.clone()].to_vec(),
            true_perms: self.true_perms[range.clone()].to_vec(),
            context: self.context.as_ref().map(|c| c[range].to_vec()),
            seed: self.seed,
        }
    }

    /// Splits into `(first fraction, remainder)`.
    pub fn split(&self, fraction: f64) -> (Self, Self) {
        let k = self.steps();
        let cut = ((k as f64) * fraction) as usize;
        let cut = cut.clamp(1, k.saturating_sub(1).max(1));
        (self.slice(0..cut), self.slice(cut..k))
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.steps();
        if self.states.len() != k || self.true_perms.len() != k {
            return Err(Error::InvalidConfig("episode arrays disagree on length".into()));
        }
        let (n, d) = (self.objects(), self.dim());
        for (s, z) in self.states.iter().zip(&self.observations) {
            if s.shape() != (n, d) || z.shape() != (n, d) {
                return Err(Error::InvalidConfig("episode step has inconsistent shape".into()));
            }
        }
        if self.true_perms.iter().any(|p| p.len() != n) {
            return Err(Error::InvalidConfig("permutation length differs from object count".into()));
        }
        if let Some(ctx) = &self.context {
            let c = self.context_dim().unwrap_or(0);
            if ctx.len() != k || ctx.iter().any(|t| t.shape() != (n, c)) {
                return Err(Error::InvalidConfig("context features misaligned".into()));
            }
        }
        Ok(())
    }
}

/// `N x d` → `Nd x 1`.
pub fn stack(rows: &Tensor) -> Tensor {
    Tensor::column(rows.data())
}

/// `Nd x 1` → `N x d`.
pub fn unstack(vector: &Tensor, dim: usize) -> Tensor {
    Tensor::from_vec(vector.rows() / dim, dim, vector.data().to_vec()).expect("stacked length is a multiple of dim")
}
