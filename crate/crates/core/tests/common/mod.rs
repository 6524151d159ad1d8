#![allow(dead_code)]

use neuralda_core::autodiff::{Tape, Var};
use neuralda_core::datagen::stream_rng;
use neuralda_core::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn randn(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = stream_rng(seed, 11);
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Entries drawn uniformly from `[0, 1)`.
pub fn rand_uniform(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = stream_rng(seed, 12);
    let data = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

pub fn spd(n: usize, seed: u64) -> Tensor {
    let a = randn(n, n, seed);
    a.matmul(&a.transpose()).unwrap().add(&Tensor::identity(n).scale(n as f64 * 0.5)).unwrap()
}

/// Reduces a matrix-valued output to a scalar with fixed random weights so
/// every output entry contributes to the gradient.
pub fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let (r, c) = tape.value(x).shape();
    let w = tape.constant(randn(r, c, seed));
    let m = tape.mul(x, w).unwrap();
    tape.sum(m)
}

/// Compares reverse-mode gradients of `f` against central differences.
/// Returns the worst relative error seen.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let eval = |values: &[Tensor]| {
        let mut t = Tape::no_grad();
        let vs: Vec<Var> = values.iter().map(|v| t.param(v.clone())).collect();
        let out = f(&mut t, &vs);
        t.value(out).item()
    };

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]);
        for idx in 0..input.data().len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[idx] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[idx] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[idx];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            let abs_err = (a - numeric).abs();
            if abs_err > 1e-8 {
                worst = worst.max(err);
            }
        }
    }
    worst
}
