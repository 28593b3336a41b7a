use fedast::delay_model::{duration_from_uniform, make_profiles, sample_duration, DelayShape, SpeedMix, SpeedMultipliers};
use fedast::event_engine::sample_clients;
use fedast::local_trainer::local_train;
use fedast::objectives::{
    gaussian_blobs, initial_model, local_stoch_grad, partition_dirichlet, ClientShard, ObjectiveKind, Sample, Target, TargetKind,
    TaskSpec,
};
use fedast::seed::SeedTree;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mlp_spec(tau: usize, batch: usize) -> TaskSpec<f64> {
    TaskSpec::new(
        0,
        ObjectiveKind::TinyMlp { features: 3, hidden: 4, classes: 3 },
        tau,
        0.05,
        1.0,
        batch,
        Target { kind: TargetKind::Accuracy, value: 1.0 },
    )
    .unwrap()
}

fn shard(n: usize, seed: u64) -> ClientShard<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ClientShard { client_id: 0, samples: gaussian_blobs(n, 3, 3, 2.0, 1.0, &mut rng) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delta_is_the_average_of_the_step_gradients(tau in 1usize..6, batch in 1usize..8, seed in any::<u64>()) {
        let spec = mlp_spec(tau, batch);
        let data = shard(12, seed);
        let x0 = initial_model::<f64, _>(&spec.kind, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let before = x0.clone();
        let delta = local_train(&spec, &x0, &data, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&x0, &before);

        // replay the same stream by hand
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = x0.clone();
        let mut sum = vec![0.0; x.len()];
        for _ in 0..tau {
            let g = local_stoch_grad(&spec, &data, &x, &mut rng).unwrap();
            for i in 0..x.len() {
                sum[i] += g[i];
                x[i] -= spec.eta_c * g[i];
            }
        }
        let want: Vec<f64> = if tau == 1 { sum } else { sum.iter().map(|s| s * (1.0 / tau as f64)).collect() };
        prop_assert_eq!(delta, want);
    }

    #[test]
    fn durations_respect_the_floor(beta in 0.01f64..5.0, tau in 1usize..10, u in 0.0f64..1.0) {
        let d = duration_from_uniform(beta, tau, DelayShape::default(), u);
        prop_assert!(d >= tau as f64 * beta);
    }

    #[test]
    fn partition_is_disjoint_and_complete(seed in any::<u64>(), alpha in 0.01f64..10.0, clients in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Sample<f64>> = (0..90).map(|i| Sample { features: vec![i as f64], label: i % 4 }).collect();
        let shards = partition_dirichlet(&data, clients, alpha, &mut rng).unwrap();
        let mut seen: Vec<usize> = shards.iter().flat_map(|s| s.samples.iter().map(|x| x.features[0] as usize)).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..90).collect::<Vec<_>>());
    }
}

#[test]
fn exponential_mode_is_memoryless() {
    // P(X > s + t | X > s) = P(X > t) for shift 0
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let shape = DelayShape::exponential();
    let xs: Vec<f64> = (0..200_000).map(|_| duration_from_uniform(1.0, 1, shape, rng.random())).collect();
    let (s, t) = (0.7, 0.5);
    let past_s: Vec<f64> = xs.iter().copied().filter(|&x| x > s).collect();
    let cond = past_s.iter().filter(|&&x| x > s + t).count() as f64 / past_s.len() as f64;
    let plain = xs.iter().filter(|&&x| x > t).count() as f64 / xs.len() as f64;
    let se = (plain * (1.0 - plain) / past_s.len() as f64).sqrt();
    assert!((cond - plain).abs() < 4.0 * se, "{cond} vs {plain}");
    assert!((plain - (-t).exp()).abs() < 0.01);

    // the shifted default is not memoryless
    let ys: Vec<f64> = (0..50_000).map(|_| duration_from_uniform(1.0, 1, DelayShape::default(), rng.random())).collect();
    let over = |v: f64| ys.iter().filter(|&&y| y > v).count() as f64;
    assert!((over(1.5 + 0.5) / over(1.5) - over(0.5) / ys.len() as f64).abs() > 0.1);
}

#[test]
fn per_client_duration_means_follow_speed_class() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let profiles = make_profiles(400, &[1.0], SpeedMix::default(), SpeedMultipliers::default(), &mut rng).unwrap();
    for p in profiles.iter().take(12) {
        let n = 20_000;
        let mean: f64 = (0..n).map(|_| sample_duration(p, 0, 2, DelayShape::default(), &mut rng)).sum::<f64>() / n as f64;
        let want = 3.0 * 2.0 * p.speed_multiplier;
        assert!((mean - want).abs() / want < 0.03, "{mean} vs {want}");
    }
}

#[test]
fn selection_is_uniform() {
    let n = 20;
    let mut rng = SeedTree::new(5).rng(&[42]);
    let draws = sample_clients(n, 200_000, 0.3, &mut rng).unwrap();
    let mut counts = vec![0f64; n];
    for d in draws {
        counts[d] += 1.0;
    }
    let e = 200_000.0 / n as f64;
    let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
    // 19 degrees of freedom, 99.9th percentile is about 43.8
    assert!(chi2 < 43.8, "chi2 = {chi2}");
}

#[test]
fn small_alpha_is_more_skewed() {
    let data: Vec<Sample<f64>> = (0..4000).map(|i| Sample { features: vec![0.0], label: i % 4 }).collect();
    let skew = |alpha: f64| {
        let shards = partition_dirichlet(&data, 20, alpha, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        // mean over clients of the largest class share
        shards
            .iter()
            .filter(|s| !s.samples.is_empty())
            .map(|s| {
                let mut c = [0usize; 4];
                s.samples.iter().for_each(|x| c[x.label] += 1);
                *c.iter().max().unwrap() as f64 / s.samples.len() as f64
            })
            .sum::<f64>()
            / 20.0
    };
    let (lo, hi) = (skew(0.1), skew(100.0));
    assert!(lo > 0.7 && hi < 0.35, "{lo} {hi}");
}

#[test]
fn data_generation_is_seeded() {
    let a = shard(50, 9);
    let b = shard(50, 9);
    assert_eq!(a, b);
    let spec = mlp_spec(1, 4);
    let x = vec![0.1; spec.dim];
    let g1 = local_stoch_grad(&spec, &a, &x, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let g2 = local_stoch_grad(&spec, &b, &x, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(g1, g2);
}
