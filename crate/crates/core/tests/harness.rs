use std::sync::Arc;

use dispatch_core::geometry::Point;
use dispatch_core::harness::{
    evaluate, mean_reward, mean_served, synth_scenario, GreedyNearest, Policy, RandomPolicy, ScenarioSpec, Stage1Policy,
};
use dispatch_core::policy::{load_policy, save_policy, PolicyConfig, PolicyNet};
use dispatch_core::sim::{OrderRequest, World};
use dispatch_core::train::{stage1_train, Stage1Config};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn poisson_arrivals_have_the_configured_mean() {
    let spec = ScenarioSpec::desk();
    assert_eq!((spec.world.horizon, spec.world.workers), (30, 20));
    let counts: Vec<f64> = (0..1000).map(|s| synth_scenario(&spec, s).len() as f64).collect();
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    // 30 steps at rate 4: Poisson(120), so the sample mean has sd sqrt(120/1000).
    let sigma = (120.0f64 / 1000.0).sqrt();
    assert!((mean - 120.0).abs() < 3.0 * sigma, "mean {mean}");
}

#[test]
fn greedy_serves_at_least_as_many_as_random() {
    let spec = ScenarioSpec::desk();
    let seeds: Vec<u64> = (100..110).collect();
    let greedy = evaluate(&spec, &GreedyNearest, &seeds).unwrap();
    let random = evaluate(&spec, &RandomPolicy::new(3), &seeds).unwrap();
    assert!(mean_served(&greedy) >= mean_served(&random));
    assert!(mean_reward(&greedy) > mean_reward(&random));
}

#[test]
fn greedy_with_one_worker_and_one_order_assigns_it() {
    let mut spec = ScenarioSpec::desk();
    spec.world.workers = 1;
    let world_cfg = spec.world.clone();
    let request = OrderRequest {
        request_time: 0,
        origin: Point::new(2.0, 2.0),
        destination: Point::new(6.0, 5.0),
        deadline: None,
    };
    let mut world = World::new(world_cfg, vec![request]).unwrap();
    let obs = world.observe();
    let action = GreedyNearest.act(&obs).unwrap();
    assert_eq!(action.pairs, vec![(obs.workers[0].id, obs.orders[0].id)]);
    world.step(&action).unwrap();
}

#[test]
fn saved_checkpoint_reproduces_training_evaluation() {
    let spec = ScenarioSpec::desk();
    let cfg = PolicyConfig::desk();
    let (net, mut store) = PolicyNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let train = Stage1Config { episodes: 2, seed: 4, ..Stage1Config::desk() };
    stage1_train(&net, &mut store, &train, &spec, |_, _| Ok(())).unwrap();
    let net = Arc::new(net);
    let before = evaluate(&spec, &Stage1Policy::new(net.clone(), Arc::new(store.clone())), &spec.seeds).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stage1.ckpt");
    save_policy(&path, &cfg, &store, serde_json::json!({"episodes": 2})).unwrap();
    let (loaded_net, loaded, extra) = load_policy(&path).unwrap();
    assert_eq!(extra["episodes"], 2);
    let after = evaluate(&spec, &Stage1Policy::new(Arc::new(loaded_net), Arc::new(loaded)), &spec.seeds).unwrap();
    for (a, b) in before.iter().zip(&after) {
        assert!((a.metrics.total_reward - b.metrics.total_reward).abs() <= 1e-9);
    }
    assert!((mean_reward(&before) - mean_reward(&after)).abs() <= 1e-9);
}
