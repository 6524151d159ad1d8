//! Reverse-mode gradients against central finite differences.

mod common;

use common::{check_gradients, randn, spd, weighted_sum};
use neuralda_core::autodiff::{logsumexp, Tape};
use neuralda_core::kalman::{filter_sequence, FilterModel};
use neuralda_core::model::ModelParams;
use neuralda_core::network::{predict_scores, InitScheme, NetworkParams};
use neuralda_core::sinkhorn::{sinkhorn, SinkhornConfig};
use neuralda_core::tensor::Tensor;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

#[test]
fn matmul() {
    let err = check_gradients(&[randn(3, 4, 1), randn(4, 2, 2)], 1e-6, |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, y, 3)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn elementwise_binary() {
    let inputs = [randn(3, 3, 4), randn(3, 3, 5)];
    for op in 0..3 {
        let err = check_gradients(&inputs, H, |t, v| {
            let y = match op {
                0 => t.add(v[0], v[1]).unwrap(),
                1 => t.sub(v[0], v[1]).unwrap(),
                _ => t.mul(v[0], v[1]).unwrap(),
            };
            weighted_sum(t, y, 6)
        });
        assert!(err < TOL, "op {op}: {err}");
    }
}

#[test]
fn unary() {
    let x = randn(2, 5, 7);
    let pos = x.map(|v| v.abs() + 0.5);
    let err = check_gradients(&[x.clone()], H, |t, v| {
        let a = t.scale(v[0], -1.7);
        let b = t.exp(a);
        weighted_sum(t, b, 8)
    });
    assert!(err < TOL, "scale/exp {err}");
    let err = check_gradients(&[pos], H, |t, v| {
        let a = t.log(v[0]).unwrap();
        weighted_sum(t, a, 9)
    });
    assert!(err < TOL, "log {err}");
    // keep away from the kink
    let away = x.map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
    let err = check_gradients(&[away], H, |t, v| {
        let a = t.relu(v[0]);
        let b = t.transpose(a);
        weighted_sum(t, b, 10)
    });
    assert!(err < TOL, "relu/transpose {err}");
}

#[test]
fn row_and_column_broadcasts() {
    let err = check_gradients(&[randn(3, 4, 11), randn(3, 1, 12), randn(1, 4, 13)], H, |t, v| {
        let a = t.sub_col(v[0], v[1]).unwrap();
        let b = t.add_row(a, v[2]).unwrap();
        let c = t.kron_identity(b, 2);
        weighted_sum(t, c, 14)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn logsumexp_gradient_is_softmax() {
    let x = randn(3, 5, 15);
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let l = tape.logsumexp_rows(v).unwrap();
    let s = tape.sum(l);
    let g = tape.backward(s).unwrap().get(v);
    for r in 0..3 {
        let lse = logsumexp(x.row(r));
        for c in 0..5 {
            let softmax = (x[(r, c)] - lse).exp();
            assert!((g[(r, c)] - softmax).abs() < 1e-14);
        }
    }
    let err = check_gradients(&[x], H, |t, v| {
        let l = t.logsumexp_rows(v[0]).unwrap();
        weighted_sum(t, l, 16)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn cholesky_solve_and_logdet() {
    let a = spd(4, 17);
    let b = randn(4, 2, 18);
    let err = check_gradients(&[a.clone(), b], H, |t, v| {
        // the op sees a symmetrized input, so differentiate through an explicit symmetrization
        let at = t.transpose(v[0]);
        let s = t.add(v[0], at).unwrap();
        let s = t.scale(s, 0.5);
        let (x, logdet) = t.cholesky_solve_logdet(s, v[1]).unwrap();
        let ws = weighted_sum(t, x, 19);
        let ld = t.scale(logdet, 0.7);
        t.add(ws, ld).unwrap()
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn logdet_gradient_is_inverse() {
    let a = spd(3, 20);
    let mut tape = Tape::new();
    let v = tape.param(a.clone());
    let b = tape.constant(Tensor::zeros(3, 1));
    let (_, ld) = tape.cholesky_solve_logdet(v, b).unwrap();
    let g = tape.backward(ld).unwrap().get(v);
    let inv = neuralda_core::linalg::Cholesky::factor(&a).unwrap().inverse();
    assert!(g.sub(&inv).unwrap().max_abs() < 1e-12);
}

#[test]
fn sinkhorn_twenty_iterations() {
    let cfg = SinkhornConfig { temperature: 0.5, iterations: 20 };
    let err = check_gradients(&[randn(4, 4, 21)], H, |t, v| {
        let p = sinkhorn(t, v[0], cfg).unwrap();
        weighted_sum(t, p, 22)
    });
    assert!(err < TOL, "{err}");
}

/// Network → Sinkhorn → filter → log marginal, N=2, d=1, K=3.
#[test]
fn end_to_end_loss() {
    let start = std::time::Instant::now();
    let params = ModelParams::random_walk(2, 1, 0.3, 0.2).unwrap();
    let net = NetworkParams::init(1, &[8, 8], 2, 5, InitScheme::PaperLiteral).unwrap();
    let obs = vec![
        Tensor::from_rows(&[[0.4], [-1.1]]),
        Tensor::from_rows(&[[-0.9], [0.6]]),
        Tensor::from_rows(&[[0.5], [-1.3]]),
    ];
    let cfg = SinkhornConfig::default();
    let inputs: Vec<Tensor> = net.tensors().into_iter().cloned().collect();
    let err = check_gradients(&inputs, H, |t, v| {
        let vars = net_vars(v);
        let model = FilterModel::on_tape(t, &params, 1.0);
        let assignments: Vec<_> = obs
            .iter()
            .map(|z| {
                let s = predict_scores(t, &vars, z).unwrap();
                sinkhorn(t, s, cfg).unwrap()
            })
            .collect();
        let trace = filter_sequence(t, &obs, &assignments, &model).unwrap();
        t.scale(trace.total, -1.0 / 3.0)
    });
    assert!(err < 1e-4, "{err}");
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

fn net_vars(v: &[neuralda_core::autodiff::Var]) -> neuralda_core::network::ParamVars {
    neuralda_core::network::ParamVars::from_vars(v.chunks(2).map(|c| (c[0], c[1])).collect())
}

#[test]
fn recording_does_not_change_values() {
    let a = spd(3, 23);
    let b = randn(3, 2, 24);
    let run = |tape: &mut Tape| {
        let va = tape.param(a.clone());
        let vb = tape.param(b.clone());
        let (x, ld) = tape.cholesky_solve_logdet(va, vb).unwrap();
        let e = tape.exp(x);
        let l = tape.logsumexp_rows(e).unwrap();
        let s = tape.sum(l);
        (tape.value(s).item(), tape.value(ld).item())
    };
    let mut rec = Tape::new();
    let mut plain = Tape::no_grad();
    let (r, p) = (run(&mut rec), run(&mut plain));
    assert_eq!(r.0.to_bits(), p.0.to_bits());
    assert_eq!(r.1.to_bits(), p.1.to_bits());
}

#[test]
fn backward_is_repeatable() {
    let mut tape = Tape::new();
    let x = tape.param(randn(3, 3, 25));
    let cfg = SinkhornConfig::default();
    let p = sinkhorn(&mut tape, x, cfg).unwrap();
    let s = weighted_sum(&mut tape, p, 26);
    let g1 = tape.backward(s).unwrap().get(x);
    let g2 = tape.backward(s).unwrap().get(x);
    assert_eq!(g1, g2);
}
