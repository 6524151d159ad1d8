//! Cholesky factorization with diagonal jitter escalation, triangular solves
//! and a small symmetric eigenvalue routine used for diagnostics.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Diagonal jitter tried in order before a factorization is declared failed.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-9, 1e-6];

/// Lower-triangular factor `L` with `L Lᵀ = A + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    l: Tensor,
    jitter: f64,
}

impl Cholesky {
    /// Factors the symmetric part of `a`, escalating jitter along
    /// [`JITTER_LADDER`].
    pub fn factor(a: &Tensor) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::NotSquare { op: "cholesky", shape: a.shape() });
        }
        let sym = a.symmetrized();
        for &jitter in JITTER_LADDER.iter() {
            if let Some(l) = try_factor(&sym, jitter) {
                return Ok(Self { l, jitter });
            }
        }
        Err(Error::NotPositiveDefinite { step: None, min_eigenvalue: min_eigenvalue(&sym) })
    }

    pub fn lower(&self) -> &Tensor {
        &self.l
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| 2.0 * math::ln(self.l[(i, i)])).sum()
    }

    /// `A⁻¹ B`.
    pub fn solve(&self, b: &Tensor) -> Result<Tensor> {
        let n = self.dim();
        if b.rows() != n {
            return Err(Error::ShapeMismatch { op: "cholesky_solve", left: self.l.shape(), right: b.shape() });
        }
        let m = b.cols();
        let l = &self.l;
        let mut x = b.clone();
        for col in 0..m {
            // L y = b
            for i in 0..n {
                let mut s = x[(i, col)];
                for k in 0..i {
                    s -= l[(i, k)] * x[(k, col)];
                }
                x[(i, col)] = s / l[(i, i)];
            }
            // Lᵀ x = y
            for i in (0..n).rev() {
                let mut s = x[(i, col)];
                for k in i + 1..n {
                    s -= l[(k, i)] * x[(k, col)];
                }
                x[(i, col)] = s / l[(i, i)];
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Tensor {
        self.solve(&Tensor::identity(self.dim())).expect("identity has matching rows")
    }
}

fn try_factor(a: &Tensor, jitter: f64) -> Option<Tensor> {
    let n = a.rows();
    let mut l = Tensor::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = math::sqrt(d);
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &Tensor) -> Vec<f64> {
    let n = a.rows();
    let mut m = a.symmetrized();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[(i, j)] * m[(i, j)];
                }
            }
        }
        if off < 1e-22 * (1.0 + m.norm_sq()) || !off.is_finite() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + math::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    eig
}

pub fn min_eigenvalue(a: &Tensor) -> f64 {
    symmetric_eigenvalues(a).first().copied().unwrap_or(f64::NAN)
}
