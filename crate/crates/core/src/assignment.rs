//! Linear assignment by the Hungarian (Kuhn–Munkres) method.
//!
//! [`hungarian`] returns a minimum-cost perfect matching; among all optimal
//! matchings it returns the lexicographically smallest assignment vector,
//! which makes the output independent of the solver's internal pivot order.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::Permutation;
use crate::tensor::Tensor;

/// O(n³) shortest augmenting path with row/column potentials.
/// Returns `assign[row] = col` and the total cost.
fn solve(cost: &[f64], n: usize, rows: &[usize], cols: &[usize]) -> (Vec<usize>, f64) {
    let m = rows.len();
    debug_assert_eq!(m, cols.len());
    if m == 0 {
        return (Vec::new(), 0.0);
    }
    let at = |i: usize, j: usize| cost[rows[i] * n + cols[j]];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=m {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![0usize; m];
    for j in 1..=m {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    let total = assign.iter().enumerate().map(|(i, &j)| at(i, j)).sum();
    (assign, total)
}

fn check(cost: &Tensor) -> Result<()> {
    if !cost.is_square() {
        return Err(Error::NotSquare { op: "hungarian", shape: cost.shape() });
    }
    if !cost.is_finite() {
        return Err(Error::InvalidConfig("assignment costs must be finite".into()));
    }
    Ok(())
}

/// Minimum cost over all permutations.
pub fn min_assignment_cost(cost: &Tensor) -> Result<f64> {
    check(cost)?;
    let n = cost.rows();
    let idx: Vec<usize> = (0..n).collect();
    Ok(solve(cost.data(), n, &idx, &idx).1)
}

/// `Σ_j cost[j, perm[j]]`.
pub fn assignment_cost(cost: &Tensor, perm: &Permutation) -> f64 {
    perm.as_slice().iter().enumerate().map(|(j, &i)| cost[(j, i)]).sum()
}

/// Exact minimum-cost assignment, `result[row] = col`. Ties are broken
/// towards the lexicographically smallest assignment vector; costs within a
/// relative `1e-10` of the optimum count as ties.
pub fn hungarian(cost: &Tensor) -> Result<Permutation> {
    check(cost)?;
    let n = cost.rows();
    let data = cost.data();
    let all: Vec<usize> = (0..n).collect();
    let (_, optimum) = solve(data, n, &all, &all);
    let tol = 1e-10 * (1.0 + cost.max_abs() * n as f64);

    let mut assign = Vec::with_capacity(n);
    let mut free_cols: Vec<usize> = all.clone();
    let mut fixed = 0.0;
    for row in 0..n {
        let rest_rows: Vec<usize> = (row + 1..n).collect();
        let mut chosen = None;
        for (pos, &col) in free_cols.iter().enumerate() {
            let rest_cols: Vec<usize> =
                free_cols.iter().enumerate().filter(|(p, _)| *p != pos).map(|(_, c)| *c).collect();
            let (_, rest) = solve(data, n, &rest_rows, &rest_cols);
            if fixed + data[row * n + col] + rest <= optimum + tol {
                chosen = Some(pos);
                break;
            }
        }
        // The optimum is attained by some completion, so one column always fits.
        let pos = chosen.expect("an optimal completion exists");
        let col = free_cols.remove(pos);
        fixed += data[row * n + col];
        assign.push(col);
    }
    Permutation::new(assign)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anti_identity_cost_gives_identity() {
        let cost = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let p = hungarian(&cost).unwrap();
        assert_eq!(p, Permutation::identity(2));
        assert_eq!(assignment_cost(&cost, &p), 0.0);
    }

    #[test]
    fn all_equal_costs_identity() {
        let cost = Tensor::filled(5, 5, 3.0);
        assert_eq!(hungarian(&cost).unwrap(), Permutation::identity(5));
    }

    #[test]
    fn tie_break_prefers_lexicographic() {
        // Two optima: (1,0,2) and (0,1,2) both cost 0 → (0,1,2).
        let cost = Tensor::from_rows(&[[0.0, 0.0, 5.0], [0.0, 0.0, 5.0], [5.0, 5.0, 0.0]]);
        assert_eq!(hungarian(&cost).unwrap().as_slice(), &[0, 1, 2]);
        let cost = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(hungarian(&cost).unwrap().as_slice(), &[1, 0]);
    }

    #[test]
    fn rejects_non_square_and_non_finite() {
        assert!(hungarian(&Tensor::zeros(2, 3)).is_err());
        let mut c = Tensor::zeros(2, 2);
        c[(0, 1)] = f64::NAN;
        assert!(hungarian(&c).is_err());
    }

    #[test]
    fn empty_and_single() {
        assert!(hungarian(&Tensor::zeros(0, 0)).unwrap().is_empty());
        assert_eq!(hungarian(&Tensor::scalar(7.0)).unwrap().as_slice(), &[0]);
    }
}
