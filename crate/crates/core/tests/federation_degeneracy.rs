use fedot_core::data::{PartitionScheme, SyntheticParams};
use fedot_core::federation::{
    init_seed, train_seed, DataConfig, Federation, FederationConfig, LocalRule, MethodSpec,
    ModelConfig,
};
use fedot_core::nn::LayerStack;
use fedot_core::ot::OtConfig;
use fedot_core::sar::{local_train, SarConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn base(client_count: usize) -> FederationConfig {
    FederationConfig {
        rounds: 10,
        client_count,
        rate_set: vec![0.0],
        seed: 17,
        method: MethodSpec {
            local: LocalRule::Plain,
            fusion_alpha: 1.0,
            ..MethodSpec::full()
        },
        sar: SarConfig {
            lambda: 0.0,
            local_epochs: 2,
            lr: 0.05,
            batch_size: 16,
        },
        ot: OtConfig::exact(),
        model: ModelConfig { hidden: vec![8] },
        partition: PartitionScheme::Iid,
        data: DataConfig {
            synthetic: SyntheticParams {
                class_count: 4,
                dim: 6,
                samples_per_class: 40,
                cluster_spread: 0.5,
                seed: 2,
            },
            ..DataConfig::default()
        },
        ..FederationConfig::default()
    }
}

#[test]
fn single_client_matches_centralized_sgd() {
    let cfg = FederationConfig {
        method: MethodSpec {
            local: LocalRule::Sar,
            fusion_alpha: 0.5,
            ..MethodSpec::full()
        },
        ..base(1)
    };
    let mut fed = Federation::new(cfg.clone()).unwrap();
    let data = fed.clients()[0].train.clone();
    let dims = fed.global().dims();
    let mut central = LayerStack::init(&dims, &mut ChaCha8Rng::seed_from_u64(init_seed(cfg.seed)));
    assert_eq!(&central, fed.global());
    for round in 1..=cfg.rounds {
        fed.step().unwrap();
        central = local_train(&central, &data, 0.0, &cfg.sar, train_seed(cfg.seed, round, 0))
            .unwrap()
            .final_model;
        assert_eq!(&central, fed.global(), "round {round}");
    }
}

#[test]
fn full_size_exact_transport_matches_fedavg() {
    let cfg = base(4);
    let mut fed = Federation::new(cfg.clone()).unwrap();
    let mut reference = Federation::fedavg_reference(cfg.clone()).unwrap();
    for round in 1..=cfg.rounds {
        fed.step().unwrap();
        reference.step().unwrap();
        let gap = fed.global().max_abs_diff(reference.global()).unwrap();
        assert!(gap < 1e-5, "round {round}: gap {gap}");
    }
}

#[test]
fn identical_clients_average_to_either() {
    // two clients with identical shards and seeds: rerun one client's training
    let cfg = FederationConfig {
        rounds: 1,
        ..base(1)
    };
    let mut solo = Federation::fedavg_reference(cfg.clone()).unwrap();
    let data = solo.clients()[0].train.clone();
    let start = solo.global().clone();
    solo.step().unwrap();
    let trained = local_train(&start, &data, 0.0, &cfg.sar, train_seed(cfg.seed, 1, 0))
        .unwrap()
        .final_model;
    let avg = fedot_core::alignment::aggregate(&[(&trained, 0.5), (&trained, 0.5)]).unwrap();
    assert_eq!(&avg, solo.global());
}

#[test]
fn fedavg_loss_mostly_decreases() {
    let cfg = FederationConfig {
        sar: SarConfig {
            lr: 0.01,
            ..base(4).sar
        },
        ..base(4)
    };
    let mut fed = Federation::fedavg_reference(cfg).unwrap();
    let mut losses = vec![fed.global_loss().unwrap()];
    for _ in 0..10 {
        losses.push(fed.step().unwrap().global_loss);
    }
    let down = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down * 2 > losses.len() - 1, "{losses:?}");
}
