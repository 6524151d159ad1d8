use neuralda_core::datagen::{
    generate_feature_conditioned, generate_random_walk, identity_embeddings, FeatureConfig, WalkConfig,
};
use neuralda_core::model::apply_permutation;

#[test]
fn increments_and_measurement_noise_have_stated_covariance() {
    let cfg = WalkConfig { sigma_q: 0.3, sigma_r: 0.2, ..WalkConfig::default() };
    let (mut inc, mut inc_cross, mut meas) = (0.0, 0.0, 0.0);
    let (mut n_inc, mut n_meas) = (0usize, 0usize);
    for seed in 0..40 {
        let ep = generate_random_walk(&cfg, seed).unwrap();
        for k in 0..ep.steps() {
            let unpermuted = apply_permutation(&ep.observations[k], &ep.true_perms[k].inverse()).unwrap();
            let r = unpermuted.sub(&ep.states[k]).unwrap();
            meas += r.norm_sq();
            n_meas += r.data().len();
            if k > 0 {
                let d = ep.states[k].sub(&ep.states[k - 1]).unwrap();
                inc += d.norm_sq();
                for row in 0..d.rows() {
                    inc_cross += d[(row, 0)] * d[(row, 1)];
                }
                n_inc += d.data().len();
            }
        }
    }
    let var_q = inc / n_inc as f64;
    let var_r = meas / n_meas as f64;
    assert!((var_q / 0.09 - 1.0).abs() < 0.05, "{var_q}");
    assert!((var_r / 0.04 - 1.0).abs() < 0.05, "{var_r}");
    // off-diagonal covariance is zero; 2 * cross / n_inc is the correlation estimate
    assert!((2.0 * inc_cross / n_inc as f64 / 0.09).abs() < 0.05);
}

#[test]
fn permutations_are_uniform() {
    let cfg = WalkConfig::default();
    let mut counts = [[0usize; 4]; 4];
    let mut total = 0;
    for seed in 0..50 {
        for p in generate_random_walk(&cfg, seed).unwrap().true_perms {
            for j in 0..4 {
                counts[j][p[j]] += 1;
            }
            total += 1;
        }
    }
    for row in counts {
        for c in row {
            let f = c as f64 / total as f64;
            assert!((f - 0.25).abs() < 0.02, "{f}");
        }
    }
}

#[test]
fn unshuffled_episode_is_identity_ordered() {
    let cfg = WalkConfig { shuffle: false, ..WalkConfig::default() };
    let ep = generate_random_walk(&cfg, 9).unwrap();
    assert!(ep.true_perms.iter().all(|p| p.as_slice() == [0, 1, 2, 3]));
}

#[test]
fn context_identifies_objects_at_low_feature_noise() {
    let cfg = WalkConfig::default();
    let features = FeatureConfig { dim: 8, sigma_f: 0.1, dataset_seed: 7 };
    let emb = identity_embeddings(cfg.objects, &features);
    let ep = generate_feature_conditioned(&cfg, &features, 3).unwrap();
    let ctx = ep.context.as_ref().unwrap();
    let mut hits = 0;
    let mut total = 0;
    for (c, p) in ctx.iter().zip(&ep.true_perms) {
        for j in 0..cfg.objects {
            let nearest = (0..cfg.objects)
                .min_by(|&a, &b| {
                    let da: f64 = c.row(j).iter().zip(emb.row(a)).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = c.row(j).iter().zip(emb.row(b)).map(|(x, y)| (x - y).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            hits += usize::from(nearest == p[j]);
            total += 1;
        }
    }
    assert_eq!(hits, total);
}

#[test]
fn embeddings_shared_across_episodes() {
    let cfg = WalkConfig { steps: 2, ..WalkConfig::default() };
    let features = FeatureConfig { dim: 4, sigma_f: 0.0, dataset_seed: 1 };
    let a = generate_feature_conditioned(&cfg, &features, 1).unwrap();
    let b = generate_feature_conditioned(&cfg, &features, 2).unwrap();
    let emb = identity_embeddings(cfg.objects, &features);
    for ep in [a, b] {
        for (c, p) in ep.context.unwrap().iter().zip(&ep.true_perms) {
            assert_eq!(c, &apply_permutation(&emb, p).unwrap());
        }
    }
}
