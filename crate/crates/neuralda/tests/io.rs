use neuralda::io::{load_episode, read_json, save_episode, write_json, Checkpoint};
use neuralda_core::datagen::{generate_feature_conditioned, generate_random_walk, FeatureConfig, WalkConfig};
use neuralda_core::network::{InitScheme, InputMode, NetworkParams, DEFAULT_HIDDEN};
use neuralda_core::sinkhorn::SinkhornConfig;

#[test]
fn episode_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let walk = WalkConfig { steps: 15, ..WalkConfig::default() };
    for (name, e) in [
        ("walk.json", generate_random_walk(&walk, 3).unwrap()),
        (
            "features.json",
            generate_feature_conditioned(&walk, &FeatureConfig { dim: 8, sigma_f: 0.5, dataset_seed: 1 }, 4).unwrap(),
        ),
    ] {
        let path = dir.path().join(name);
        save_episode(&path, &e).unwrap();
        assert_eq!(load_episode(&path).unwrap(), e);
    }
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    // awkward values catch any lossy float formatting
    let mut net = NetworkParams::init(2, &DEFAULT_HIDDEN, 4, 9, InitScheme::PaperLiteral).unwrap();
    net.layers[0].weight.data_mut()[0] = 0.1 + 0.2;
    net.layers[1].bias.data_mut()[3] = -1.0e-300;
    let sk = SinkhornConfig { temperature: 0.3, iterations: 17 };
    write_json(&path, &Checkpoint::new(&net, InputMode::Positional, 2, None, sk)).unwrap();
    let ck: Checkpoint = read_json(&path).unwrap();
    assert_eq!(ck.network().unwrap(), net);
    assert_eq!(ck.sinkhorn(), sk);
    assert_eq!(ck.input_mode().unwrap(), InputMode::Positional);
}

#[test]
fn checkpoint_with_wrong_shapes_is_rejected() {
    let net = NetworkParams::init(2, &DEFAULT_HIDDEN, 4, 9, InitScheme::Scaled).unwrap();
    let mut ck = Checkpoint::new(&net, InputMode::Positional, 3, None, SinkhornConfig::default());
    assert!(ck.network().is_err());
    ck.dim = 2;
    assert!(ck.network().is_ok());
    ck.objects = 5;
    assert!(ck.network().is_err());
    ck.objects = 4;
    ck.layers[1].weight.pop();
    assert!(ck.network().is_err());
    ck = Checkpoint::new(&net, InputMode::Positional, 2, None, SinkhornConfig::default());
    ck.version = 99;
    assert!(ck.network().is_err());
}
