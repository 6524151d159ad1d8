use neuralda_core::datagen::{generate_random_walk, WalkConfig};
use neuralda_core::kalman::filter_and_smooth;
use neuralda_core::model::{Episode, Permutation};
use neuralda_core::network::{InitScheme, NetworkParams};
use neuralda_core::trainer::{em_train, em_train_from, evaluate_ll, hard_nll, restart_seed, TrainConfig};
use neuralda_core::Error;

fn short_walk(seed: u64, steps: usize) -> (Episode, neuralda_core::model::ModelParams) {
    let cfg = WalkConfig { steps, ..WalkConfig::default() };
    (generate_random_walk(&cfg, seed).unwrap(), cfg.model_params().unwrap())
}

fn full_batch(iterations: usize, lr: f64) -> TrainConfig {
    TrainConfig { iterations, learning_rate: lr, subsequence_len: 0, batch_size: 1, ..TrainConfig::default() }
        .without_graduation()
}

#[test]
fn zero_learning_rate_keeps_parameters_and_loss() {
    let (ep, params) = short_walk(1, 15);
    let cfg = full_batch(5, 0.0);
    let (net, report) = em_train(std::slice::from_ref(&ep), &params, &cfg).unwrap();
    let init = NetworkParams::init(2, &cfg.hidden, 4, cfg.seed, cfg.init).unwrap();
    assert_eq!(net, init);
    assert!(report.nll.iter().all(|v| *v == report.nll[0]));
}

#[test]
fn zero_learning_rate_loss_follows_q_schedule_only() {
    let (ep, params) = short_walk(2, 15);
    let cfg =
        TrainConfig { iterations: 12, learning_rate: 0.0, subsequence_len: 0, batch_size: 1, ..TrainConfig::default() }
            .with_graduation(0.1);
    let (_, report) = em_train(std::slice::from_ref(&ep), &params, &cfg).unwrap();
    for i in 1..12 {
        if report.q_scale[i] == report.q_scale[i - 1] {
            assert_eq!(report.nll[i], report.nll[i - 1]);
        }
    }
}

#[test]
fn disabled_graduation_keeps_q_constant() {
    let (ep, params) = short_walk(3, 10);
    let (_, report) = em_train(std::slice::from_ref(&ep), &params, &full_batch(8, 0.01)).unwrap();
    assert_eq!(report.iterations(), 8);
    assert!(report.q_scale.iter().all(|q| *q == 1.0));
    assert_eq!(report.grad_norm.len(), 8);
    assert_eq!(report.seconds.len(), 8);
}

#[test]
fn graduated_schedule_is_monotone_and_capped() {
    let (ep, params) = short_walk(3, 10);
    let cfg = TrainConfig { iterations: 30, subsequence_len: 5, batch_size: 2, ..TrainConfig::default() }
        .with_graduation(0.01);
    let (_, report) = em_train(std::slice::from_ref(&ep), &params, &cfg).unwrap();
    assert!((report.q_scale[0] - 0.01).abs() < 1e-15);
    assert!(report.q_scale.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(*report.q_scale.last().unwrap(), 1.0);
}

#[test]
fn training_is_reproducible() {
    let (ep, params) = short_walk(4, 40);
    let cfg = TrainConfig { iterations: 20, ..TrainConfig::default() };
    let a = em_train(std::slice::from_ref(&ep), &params, &cfg).unwrap();
    let b = em_train(std::slice::from_ref(&ep), &params, &cfg).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1.nll, b.1.nll);
    assert_eq!(a.1.grad_norm, b.1.grad_norm);
}

#[test]
fn small_steps_do_not_increase_full_batch_loss() {
    let (ep, params) = short_walk(5, 20);
    let (_, report) = em_train(std::slice::from_ref(&ep), &params, &full_batch(11, 1e-4)).unwrap();
    for w in report.nll.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn two_objects_reach_the_oracle_likelihood() {
    // σ_r well below the initial separation of two objects
    let cfg = WalkConfig { objects: 2, dim: 2, steps: 60, sigma_q: 0.05, sigma_r: 0.05, shuffle: true };
    let params = cfg.model_params().unwrap();
    let ep = generate_random_walk(&cfg, 11).unwrap();
    let tc = TrainConfig { iterations: 200, ..TrainConfig::default() };
    let (net, _) = em_train(std::slice::from_ref(&ep), &params, &tc).unwrap();
    let trained = evaluate_ll(std::slice::from_ref(&ep), &params, &net, tc.input_mode, tc.sinkhorn).unwrap();
    let truth: Vec<_> = ep.true_perms.iter().map(Permutation::to_matrix).collect();
    let oracle = -filter_and_smooth(&params, 1.0, &ep.observations, &truth).unwrap().log_likelihood / 60.0;
    assert!(trained <= oracle + 2.0, "trained {trained} vs oracle {oracle}");
}

#[test]
fn trained_beats_untrained() {
    let mut wins = 0;
    for seed in 0..20u64 {
        let (ep, params) = short_walk(100 + seed, 40);
        let tc = TrainConfig { iterations: 60, seed, ..TrainConfig::default() };
        let untrained = NetworkParams::init(2, &tc.hidden, 4, seed, tc.init).unwrap();
        let (net, _) = em_train(std::slice::from_ref(&ep), &params, &tc).unwrap();
        let before = evaluate_ll(std::slice::from_ref(&ep), &params, &untrained, tc.input_mode, tc.sinkhorn).unwrap();
        let after = evaluate_ll(std::slice::from_ref(&ep), &params, &net, tc.input_mode, tc.sinkhorn).unwrap();
        wins += usize::from(after < before);
    }
    assert!(wins >= 18, "{wins}/20");
}

#[test]
fn evaluation_is_pure() {
    let (ep, params) = short_walk(6, 20);
    let net = NetworkParams::init(2, &[8, 8], 4, 1, InitScheme::Scaled).unwrap();
    let tc = TrainConfig::default();
    let a = evaluate_ll(std::slice::from_ref(&ep), &params, &net, tc.input_mode, tc.sinkhorn).unwrap();
    let b = evaluate_ll(std::slice::from_ref(&ep), &params, &net, tc.input_mode, tc.sinkhorn).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn divergence_reports_last_good_parameters() {
    let (ep, params) = short_walk(7, 10);
    let mut net = NetworkParams::init(2, &[8, 8], 4, 1, InitScheme::Scaled).unwrap();
    net.layers[0].weight[(0, 0)] = f64::NAN;
    let err =
        em_train_from(std::slice::from_ref(&ep), &params, &full_batch(3, 0.1), net.clone(), &mut || 0.0).unwrap_err();
    match err {
        Error::NonFiniteLoss { iteration, .. } => assert_eq!(iteration, 0),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn restarts_keep_the_best_hardened_likelihood() {
    let (ep, params) = short_walk(8, 20);
    let eps = std::slice::from_ref(&ep);
    let base = TrainConfig { iterations: 15, subsequence_len: 10, batch_size: 2, seed: 4, ..TrainConfig::default() };
    let single: Vec<(f64, NetworkParams)> = (0..3)
        .map(|r| {
            let cfg = TrainConfig { seed: restart_seed(base.seed, r), ..base.clone() };
            let (net, _) = em_train(eps, &params, &cfg).unwrap();
            (hard_nll(eps, &params, &net, cfg.input_mode, cfg.sinkhorn).unwrap(), net)
        })
        .collect();
    let best = single.iter().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
    let (net, _) = em_train(eps, &params, &TrainConfig { restarts: 3, ..base.clone() }).unwrap();
    assert_eq!(&net, &best.1);
    // one restart is plain training from the configured seed
    let (one, _) = em_train(eps, &params, &TrainConfig { restarts: 1, ..base.clone() }).unwrap();
    assert_eq!(one, single[0].1);
}

#[test]
fn restarts_fail_only_when_all_diverge() {
    let (ep, params) = short_walk(9, 12);
    let cfg = TrainConfig { learning_rate: 1e300, restarts: 2, ..full_batch(3, 1e300) };
    assert!(matches!(em_train(std::slice::from_ref(&ep), &params, &cfg), Err(Error::NonFiniteLoss { .. })));
}
