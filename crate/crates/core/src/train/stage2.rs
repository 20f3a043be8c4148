use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assignment::{perturb_probabilities, solve_stage2, AssignmentAction, NoiseSpec};
use crate::error::{Error, Result};
use crate::harness::{episode_seed, ScenarioSpec};
use crate::nn::{Adam, Graph, Mode, ParamStore, Tensor, Var};
use crate::policy::{action_cells, Features, ParamGroup, PolicyNet};
use crate::train::config::Stage2Config;
use crate::train::log::{Mean, TrainLog};
use crate::train::replay::ReplayBuffer;
use crate::train::stage1::LossStep;

/// A whole-fleet step.
#[derive(Debug, Clone)]
pub struct GlobalTransition {
    pub state: Arc<Features>,
    pub action: AssignmentAction,
    /// Sum of the per-worker rewards of the step.
    pub reward: f64,
    pub next: Arc<Features>,
    pub terminal: bool,
}

/// Twin-critic target: the smaller of the two target values bootstraps.
pub fn critic_target(reward: f64, gamma: f64, terminal: bool, q1: f64, q2: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * q1.min(q2)
    }
}

/// Actor and critic updates alternate so the actor moves once per
/// `delay` critic updates.
pub fn actor_due(critic_updates: usize, delay: usize) -> bool {
    critic_updates > 0 && critic_updates % delay == 0
}

/// The joint action the actor in `store` takes in `f` under `noise`.
pub fn select_action<R: Rng + ?Sized>(
    net: &PolicyNet,
    store: &ParamStore,
    f: &Features,
    noise: NoiseSpec,
    rng: &mut R,
) -> Result<AssignmentAction> {
    let p = net.probability_matrix(store, f)?;
    solve_stage2(&perturb_probabilities(&p, noise, rng)?)
}

/// Both critics' values of `action` in `f`.
pub fn critic_values(net: &PolicyNet, store: &ParamStore, f: &Features, action: &AssignmentAction) -> Result<[f64; 2]> {
    let mut g = Graph::new(store, Mode::Eval);
    let enc = net.encode_state(&mut g, f)?;
    let q0 = net.critic_forward(&mut g, enc.workers, enc.orders, f, action, 0)?;
    let q1 = net.critic_forward(&mut g, enc.workers, enc.orders, f, action, 1)?;
    Ok([g.value(q0).item(), g.value(q1).item()])
}

/// Bootstrapped targets: the target actor picks `A'` on noise-smoothed
/// probabilities and the target critics value it.
pub fn critic_targets<R: Rng + ?Sized>(
    net: &PolicyNet,
    target: &ParamStore,
    batch: &[&GlobalTransition],
    gamma: f64,
    smoothing: NoiseSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                return Ok(t.reward);
            }
            let next_action = select_action(net, target, &t.next, smoothing, rng)?;
            let [q1, q2] = critic_values(net, target, &t.next, &next_action)?;
            Ok(critic_target(t.reward, gamma, false, q1, q2))
        })
        .collect()
}

/// `Σ_k mean_b (Q_k(S_b, A_b) - y_b)^2` on `g`.
pub fn critic_loss_var(
    g: &mut Graph,
    net: &PolicyNet,
    batch: &[&GlobalTransition],
    targets: &[f64],
    grad_to_actor: bool,
) -> Result<Var> {
    let mut qs = [Vec::new(), Vec::new()];
    for t in batch {
        let enc = net.encode_state(g, &t.state)?;
        let (w, o) = if grad_to_actor { (enc.workers, enc.orders) } else { (g.detach(enc.workers), g.detach(enc.orders)) };
        for (k, q) in qs.iter_mut().enumerate() {
            q.push(net.critic_forward(g, w, o, &t.state, &t.action, k)?);
        }
    }
    let y = g.input(Tensor::row(targets));
    let mut total = None;
    for q in &qs {
        let q = g.concat_cols(q)?;
        let d = g.sub(q, y)?;
        let sq = g.mul(d, d)?;
        let m = g.mean(sq);
        total = Some(match total {
            None => m,
            Some(acc) => g.add(acc, m)?,
        });
    }
    Ok(total.expect("two critics"))
}

pub fn critic_loss<R: Rng + ?Sized>(
    net: &PolicyNet,
    online: &ParamStore,
    target: &ParamStore,
    batch: &[&GlobalTransition],
    cfg: &Stage2Config,
    mode: Mode,
    rng: &mut R,
) -> Result<LossStep> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let targets = critic_targets(net, target, batch, cfg.gamma, cfg.target_noise, rng)?;
    let mut g = Graph::new(online, mode);
    let loss = critic_loss_var(&mut g, net, batch, &targets, cfg.critic_grad_to_actor)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("critic loss is {value}")));
    }
    Ok(LossStep { loss: value, grads: g.backward(loss)?, count: batch.len() })
}

/// `-mean_b [ q_b * Σ log P(cells of A_b) ]` on `g`, with the critic values
/// `q` supplied as constants.
pub fn actor_loss_var(
    g: &mut Graph,
    net: &PolicyNet,
    batch: &[&GlobalTransition],
    q: &[f64],
    include_rejects: bool,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(batch.len());
    for (t, &qv) in batch.iter().zip(q) {
        let cells = action_cells(&t.state, &t.action, include_rejects)?;
        if cells.is_empty() {
            continue;
        }
        let enc = net.encode_state(g, &t.state)?;
        let out = net.actor_forward(g, enc)?;
        let picked = g.gather(out.log_probs, &cells)?;
        let s = g.sum(picked);
        terms.push(g.scale(s, qv));
    }
    if terms.is_empty() {
        return Ok(g.constant(1, 1, 0.0));
    }
    let row = g.concat_cols(&terms)?;
    let total = g.sum(row);
    Ok(g.scale(total, -1.0 / batch.len() as f64))
}

/// Policy-gradient surrogate weighted by the first critic's value of the
/// stored action (no baseline).
pub fn actor_loss(
    net: &PolicyNet,
    store: &ParamStore,
    batch: &[&GlobalTransition],
    include_rejects: bool,
    mode: Mode,
) -> Result<LossStep> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let q = batch
        .iter()
        .map(|t| critic_values(net, store, &t.state, &t.action).map(|v| v[0]))
        .collect::<Result<Vec<_>>>()?;
    let mut g = Graph::new(store, mode);
    let loss = actor_loss_var(&mut g, net, batch, &q, include_rejects)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("actor loss is {value}")));
    }
    Ok(LossStep { loss: value, grads: g.backward(loss)?, count: batch.len() })
}

#[derive(Debug, Clone)]
pub struct Stage2Report {
    pub logs: Vec<TrainLog>,
    pub critic_updates: usize,
    pub actor_updates: usize,
}

/// Fine-tunes every parameter in `store` (typically initialised from a
/// stage-1 run) with twin critics and a delayed actor.
pub fn stage2_train(
    net: &PolicyNet,
    store: &mut ParamStore,
    cfg: &Stage2Config,
    spec: &ScenarioSpec,
    mut on_episode: impl FnMut(&TrainLog, &ParamStore) -> Result<()>,
) -> Result<Stage2Report> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut target = store.clone();
    let mut actor_adam = Adam::new(cfg.actor_adam, store);
    let mut critic_adam = Adam::new(cfg.critic_adam, store);
    let actor_mask = PolicyNet::group_mask(store, ParamGroup::Actor);
    let critic_mask: Vec<bool> = {
        let c0 = PolicyNet::group_mask(store, ParamGroup::Critic(0));
        let c1 = PolicyNet::group_mask(store, ParamGroup::Critic(1));
        c0.iter()
            .zip(&c1)
            .zip(&actor_mask)
            .map(|((a, b), act)| *a || *b || (cfg.critic_grad_to_actor && *act))
            .collect()
    };
    let mut buffer = ReplayBuffer::new(cfg.buffer);
    let mut logs = Vec::with_capacity(cfg.episodes);
    let (mut critic_updates, mut actor_updates) = (0, 0);

    for episode in 0..cfg.episodes {
        let seed = episode_seed(cfg.seed, episode);
        let mut world = spec.build_world(seed)?;
        let mut state = Arc::new(Features::from_observation(&world.observe()));
        let (mut closs, mut aloss) = (Mean::default(), Mean::default());
        let mut steps = 0;
        while !world.is_done() {
            let action = select_action(net, store, &state, cfg.noise, &mut rng)?;
            let outcome = world.step(&action)?;
            let next = Arc::new(Features::from_observation(&world.observe()));
            buffer.push(GlobalTransition {
                state: state.clone(),
                action,
                reward: outcome.global_reward * cfg.reward_scale,
                next: next.clone(),
                terminal: world.is_done(),
            });
            steps += 1;
            if steps % cfg.optimize_every == 0 {
                if let Ok(batch) = buffer.sample(cfg.batch, &mut rng) {
                    let mode = Mode::Train { seed: rng.random() };
                    let mut step = critic_loss(net, store, &target, &batch, cfg, mode, &mut rng)?;
                    step.grads.retain(|id| critic_mask[id.0]);
                    critic_adam.step(store, &step.grads)?;
                    closs.add(step.loss);
                    critic_updates += 1;
                    if actor_due(critic_updates, cfg.policy_delay) {
                        let mode = Mode::Train { seed: rng.random() };
                        let mut step = actor_loss(net, store, &batch, cfg.include_rejects, mode)?;
                        step.grads.retain(|id| actor_mask[id.0]);
                        actor_adam.step(store, &step.grads)?;
                        target.soft_update_from(store, cfg.tau)?;
                        aloss.add(step.loss);
                        actor_updates += 1;
                    }
                }
            }
            state = next;
        }
        world.drain();
        let mut row = TrainLog::new(episode, seed, &world.metrics());
        row.loss = closs.get();
        row.actor_loss = aloss.get();
        on_episode(&row, store)?;
        logs.push(row);
        actor_adam.decay_lr();
        critic_adam.decay_lr();
    }
    Ok(Stage2Report { logs, critic_updates, actor_updates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::fixtures::{observation, scramble};
    use crate::policy::PolicyConfig;

    fn tiny(seed: u64) -> (PolicyNet, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PolicyNet::new(PolicyConfig::desk(), &mut rng).unwrap()
    }

    #[test]
    fn twin_min_target() {
        assert!((critic_target(1.0, 0.99, false, 3.0, 5.0) - 3.97).abs() < 1e-15);
        assert_eq!(critic_target(1.0, 0.99, false, 3.0, 5.0), critic_target(1.0, 0.99, false, 5.0, 3.0));
        assert_eq!(critic_target(2.5, 0.99, true, 3.0, 5.0), 2.5);
    }

    #[test]
    fn delay_two_halves_actor_updates() {
        let due = (1..=10).filter(|&c| actor_due(c, 2)).count();
        assert_eq!(due, 5);
        assert_eq!((1..=10).filter(|&c| actor_due(c, 1)).count(), 10);
    }

    #[test]
    fn zero_noise_is_deterministic() {
        let (net, mut store) = tiny(3);
        scramble(&mut store, 1, 0.5);
        let f = Features::from_observation(&observation(7, 5, 4));
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(999);
        let a = select_action(&net, &store, &f, NoiseSpec::None, &mut r1).unwrap();
        let b = select_action(&net, &store, &f, NoiseSpec::Gaussian { sigma: 0.0 }, &mut r2).unwrap();
        assert_eq!(a, b);
        let greedy = solve_stage2(&net.probability_matrix(&store, &f).unwrap()).unwrap();
        assert_eq!(a, greedy);
    }

    fn sample_transition(net: &PolicyNet, store: &ParamStore, seed: u64, terminal: bool) -> GlobalTransition {
        let f = Arc::new(Features::from_observation(&observation(seed, 4, 3)));
        let next = Arc::new(Features::from_observation(&observation(seed + 100, 4, 3)));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let action = select_action(net, store, &f, NoiseSpec::Bsc { epsilon: 0.5 }, &mut rng).unwrap();
        GlobalTransition { state: f, action, reward: 1.25, next, terminal }
    }

    #[test]
    fn terminal_targets_do_not_bootstrap() {
        let (net, store) = tiny(4);
        let t = sample_transition(&net, &store, 1, true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = critic_targets(&net, &store, &[&t], 0.99, NoiseSpec::Gaussian { sigma: 0.05 }, &mut rng).unwrap();
        assert_eq!(y, vec![1.25]);
    }

    #[test]
    fn targets_never_exceed_either_bootstrap() {
        let (net, mut store) = tiny(6);
        scramble(&mut store, 2, 0.3);
        for seed in 0..8 {
            let t = sample_transition(&net, &store, seed, false);
            let y = critic_targets(&net, &store, &[&t], 0.99, NoiseSpec::None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()[0];
            let a = select_action(&net, &store, &t.next, NoiseSpec::None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let [q1, q2] = critic_values(&net, &store, &t.next, &a).unwrap();
            assert!(y <= t.reward + 0.99 * q1 && y <= t.reward + 0.99 * q2);
            assert!(y == t.reward + 0.99 * q1 || y == t.reward + 0.99 * q2);
        }
    }

    #[test]
    fn zero_value_gives_zero_actor_loss() {
        let (net, store) = tiny(8);
        let t = sample_transition(&net, &store, 3, false);
        let mut g = Graph::new(&store, Mode::Eval);
        let loss = actor_loss_var(&mut g, &net, &[&t], &[0.0], true).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn ascent_step_raises_taken_log_probability() {
        let (net, mut store) = tiny(9);
        scramble(&mut store, 4, 0.2);
        let t = sample_transition(&net, &store, 5, false);
        let logp = |s: &ParamStore| {
            let mut g = Graph::new(s, Mode::Eval);
            let enc = net.encode_state(&mut g, &t.state).unwrap();
            let out = net.actor_forward(&mut g, enc).unwrap();
            let cells = action_cells(&t.state, &t.action, true).unwrap();
            let p = g.gather(out.log_probs, &cells).unwrap();
            g.value(p).data().iter().sum::<f64>()
        };
        let before = logp(&store);
        let mut g = Graph::new(&store, Mode::Eval);
        let loss = actor_loss_var(&mut g, &net, &[&t], &[2.0], true).unwrap();
        let grads = g.backward(loss).unwrap();
        drop(g);
        for (id, gr) in grads.iter().map(|(id, g)| (id, g.clone())).collect::<Vec<_>>() {
            let p = store.get_mut(id);
            p.data_mut().iter_mut().zip(gr.data()).for_each(|(v, d)| *v -= 1e-3 * d);
        }
        assert!(logp(&store) > before);
    }
}
