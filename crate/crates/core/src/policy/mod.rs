//! Attention policy network: per-entity encoders, a position-free
//! attention stack over workers and orders, a factorized worker-order
//! scoring head with a positive normalization on the order side, a
//! per-worker reject head, and two independent critics.

pub mod features;
pub mod net;
pub mod persist;
pub mod probe;

pub use features::Features;
pub use net::{action_cells, positive_normalize, ActorOutput, Arl, Critic, Encoded, ParamGroup, PolicyConfig, PolicyNet};
pub use persist::{load_policy, save_policy};
pub use probe::{qk_complexity_probe, ProbeReport};

/// Random observations and parameter noise for probes and checks.
pub mod fixtures {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::geometry::{Extent, Point};
    use crate::nn::ParamStore;
    use crate::sim::{Observation, OrderId, OrderView, WorkerId, WorkerView};

    pub fn order_view(rng: &mut ChaCha8Rng, id: u32, picked_up: bool) -> OrderView {
        let origin = Point::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
        let destination = Point::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
        OrderView {
            id: OrderId(id),
            origin,
            destination,
            request_time: rng.random_range(0..5),
            deadline: rng.random_range(8..30),
            direct_time: origin.distance(destination),
            picked_up,
        }
    }

    pub fn observation(seed: u64, n: usize, m: usize) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let workers = (0..n)
            .map(|i| {
                let load = rng.random_range(0..3usize);
                let onboard = (0..load).map(|k| order_view(&mut rng, 1000 + (i * 10 + k) as u32, true)).collect();
                WorkerView {
                    id: WorkerId(i as u32),
                    location: Point::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)),
                    capacity: 3,
                    load,
                    onboard,
                    available: rng.random_bool(0.8),
                    available_at: 5.0 + rng.random_range(0.0..3.0),
                }
            })
            .collect();
        let orders = (0..m).map(|j| order_view(&mut rng, j as u32, false)).collect();
        Observation { step: 5, horizon: 30, patience: 5, extent: Extent::default(), workers, orders }
    }

    /// Replaces every parameter with fresh noise so no branch is inert.
    pub fn scramble(store: &mut ParamStore, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use crate::assignment::{solve_stage1, solve_stage2, AssignmentAction};
    use crate::nn::{Graph, Mode, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> PolicyConfig {
        PolicyConfig {
            width: 8,
            hidden: 8,
            lstm_hidden: 3,
            arl_hidden: 4,
            actor_layers: 2,
            actor_heads: 2,
            actor_ff: 12,
            qk_dim: 4,
            reject_hidden: 5,
            critic_width: 8,
            critic_layers: 1,
            critic_heads: 2,
            critic_ff: 8,
            dropout: 0.1,
        }
    }

    fn net(seed: u64, config: PolicyConfig) -> (PolicyNet, crate::nn::ParamStore) {
        PolicyNet::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn normalized_branch_is_nonnegative_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = crate::nn::ParamStore::new();
        let mut g = Graph::new(&s, Mode::Eval);
        let data: Vec<f64> = (0..10_000 * 16).map(|_| rng.random_range(-40.0..40.0)).collect();
        let x = g.input(Tensor::matrix(10_000, 16, data).unwrap());
        let y = positive_normalize(&mut g, x);
        for row in g.value(y).to_rows() {
            assert!(row.iter().all(|&v| v >= 0.0));
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn arl_starts_as_identity_and_identical_orders_embed_identically() {
        let (net, store) = net(1, small());
        let mut obs = observation(2, 3, 2);
        obs.orders[1] = obs.orders[0].clone();
        obs.orders[1].id = crate::sim::OrderId(77);
        let f = Features::from_observation(&obs);
        let mut g = Graph::new(&store, Mode::Eval);
        let x = g.input(f.orders.clone());
        let y = net.order_arl.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let enc = net.encode_state(&mut g, &f).unwrap();
        let o = g.value(enc.orders).to_rows();
        assert_eq!(o[0], o[1]);
        assert_eq!(g.shape(enc.workers), (3, 8));
        assert_eq!(g.shape(enc.orders).1, 8);
    }

    #[test]
    fn scoring_head_closed_forms() {
        // d = 1: the normalized order side is identically 1.
        let cfg = PolicyConfig { qk_dim: 1, ..small() };
        let (net1, mut store) = net(3, cfg);
        scramble(&mut store, 9, 0.5);
        let f = Features::from_observation(&observation(5, 4, 3));
        let mut g = Graph::new(&store, Mode::Eval);
        let enc = net1.encode_state(&mut g, &f).unwrap();
        let m = net1.qk(&mut g, enc.workers, enc.orders).unwrap();
        let fw = net1.qk_f.forward(&mut g, enc.workers).unwrap();
        let (m, fw) = (g.value(m).to_rows(), g.value(fw).to_rows());
        for i in 0..4 {
            assert!(m[i].iter().all(|&v| (v - fw[i][0]).abs() < 1e-15));
        }

        // Constant positive order side: every entry is sum(f) / sqrt(d).
        let (net2, mut store) = net(3, small());
        scramble(&mut store, 10, 0.5);
        let last = *net2.qk_g.layers.last().unwrap();
        store.get_mut(last.w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        store.get_mut(last.b).data_mut().iter_mut().for_each(|v| *v = 0.7);
        let mut g = Graph::new(&store, Mode::Eval);
        let enc = net2.encode_state(&mut g, &f).unwrap();
        let m = net2.qk(&mut g, enc.workers, enc.orders).unwrap();
        let fw = net2.qk_f.forward(&mut g, enc.workers).unwrap();
        let (m, fw) = (g.value(m).to_rows(), g.value(fw).to_rows());
        for i in 0..4 {
            let expected = fw[i].iter().sum::<f64>() / 2.0;
            assert!(m[i].iter().all(|&v| (v - expected).abs() < 1e-12));
        }
    }

    fn permuted(obs: &crate::sim::Observation, pw: &[usize], po: &[usize]) -> crate::sim::Observation {
        let mut p = obs.clone();
        p.workers = pw.iter().map(|&i| obs.workers[i].clone()).collect();
        p.orders = po.iter().map(|&j| obs.orders[j].clone()).collect();
        p
    }

    #[test]
    fn actor_is_permutation_equivariant_and_critics_invariant() {
        let (net, mut store) = net(11, small());
        scramble(&mut store, 12, 0.4);
        let obs = observation(13, 5, 4);
        let (pw, po) = ([3, 0, 4, 1, 2], [2, 3, 1, 0]);
        let pobs = permuted(&obs, &pw, &po);
        let (f, pf) = (Features::from_observation(&obs), Features::from_observation(&pobs));
        let p = net.probability_matrix(&store, &f).unwrap();
        let pp = net.probability_matrix(&store, &pf).unwrap();
        for (a, &i) in pw.iter().enumerate() {
            for (b, &j) in po.iter().enumerate() {
                assert!((pp.get(a, b) - p.get(i, j)).abs() < 1e-9);
            }
            assert!((pp.reject(a) - p.reject(i)).abs() < 1e-9);
        }

        let action = solve_stage2(&p).unwrap();
        let q = |f: &Features, k: usize| {
            let mut g = Graph::new(&store, Mode::Eval);
            let enc = net.encode_state(&mut g, f).unwrap();
            let out = net.actor_forward(&mut g, enc).unwrap();
            let v = net.critic_forward(&mut g, out.workers, out.orders, f, &action, k).unwrap();
            g.value(v).item()
        };
        let (q0, q1) = (q(&f, 0), q(&f, 1));
        assert!((q0 - q(&pf, 0)).abs() < 1e-9);
        assert!((q1 - q(&pf, 1)).abs() < 1e-9);
        assert!((q0 - q1).abs() > 0.0);

        let idle = {
            let mut g = Graph::new(&store, Mode::Eval);
            let enc = net.encode_state(&mut g, &f).unwrap();
            let out = net.actor_forward(&mut g, enc).unwrap();
            let v = net.critic_forward(&mut g, out.workers, out.orders, &f, &AssignmentAction::empty(), 0).unwrap();
            g.value(v).item()
        };
        assert!(idle.is_finite());
        let bogus = AssignmentAction::new(vec![(crate::sim::WorkerId(0), crate::sim::OrderId(999))], vec![]);
        let mut g = Graph::new(&store, Mode::Eval);
        let enc = net.encode_state(&mut g, &f).unwrap();
        let out = net.actor_forward(&mut g, enc).unwrap();
        assert!(net.critic_forward(&mut g, out.workers, out.orders, &f, &bogus, 0).is_err());
    }

    #[test]
    fn stage1_values_batched_equal_pairwise_and_mask_unavailable() {
        let (net, mut store) = net(21, small());
        scramble(&mut store, 22, 0.4);
        let obs = observation(23, 6, 5);
        let f = Features::from_observation(&obs);
        let q = net.stage1_q_values(&store, &f).unwrap();
        for i in 0..6 {
            for j in 0..5 {
                if !f.available[i] {
                    assert_eq!(q.get(i, j), f64::NEG_INFINITY);
                    continue;
                }
                let one = net.stage1_q_values(&store, &f.select(&[i], &[j])).unwrap();
                assert!((one.get(0, 0) - q.get(i, j)).abs() <= 1e-12);
            }
        }
        let none = Features::from_observation(&observation(23, 6, 0));
        let q = net.stage1_q_values(&store, &none).unwrap();
        assert_eq!((q.rows, q.cols), (6, 0));
        assert!(solve_stage1(&q).unwrap().pairs.is_empty());
    }

    #[test]
    fn fresh_actor_reproduces_stage1_choice() {
        let (net, store) = net(31, small());
        for seed in 0..5 {
            let f = Features::from_observation(&observation(40 + seed, 6, 4));
            let q = net.stage1_q_values(&store, &f).unwrap();
            let p = net.probability_matrix(&store, &f).unwrap();
            p.check_rows(1e-12).unwrap();
            for i in 0..6 {
                if !f.available[i] {
                    assert_eq!(p.reject(i), 1.0);
                }
            }
            assert_eq!(solve_stage1(&q).unwrap().pairs, solve_stage2(&p).unwrap().pairs);
        }
    }

    #[test]
    fn probe_counts_head_passes() {
        let r = qk_complexity_probe(1, 1, 1, 8, 0).unwrap();
        assert_eq!(r.output_shape, (1, 1));
        let r = qk_complexity_probe(200, 50, 1, 8, 0).unwrap();
        assert_eq!((r.qk_head_passes, r.pairwise_head_passes), (250, 10_000));
        let ratios: Vec<f64> = [(50, 10), (100, 20), (200, 50)]
            .iter()
            .map(|&(n, m)| qk_complexity_probe(n, m, 1, 8, 0).unwrap().pass_ratio)
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] > w[0]));
    }
}
