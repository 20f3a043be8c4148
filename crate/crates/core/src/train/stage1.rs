use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assignment::{inject_exploration, solve_stage1, QMatrix};
use crate::error::{Error, Result};
use crate::harness::{episode_seed, ScenarioSpec};
use crate::nn::{Adam, Gradients, Graph, Mode, ParamStore, Tensor, Var};
use crate::policy::{Features, ParamGroup, PolicyNet};
use crate::train::config::Stage1Config;
use crate::train::log::{Mean, TrainLog};
use crate::train::replay::ReplayBuffer;

/// One worker's view of a step: its row in `state`, the order column it
/// took (if any), its reward and the following state.
#[derive(Debug, Clone)]
pub struct AgentTransition {
    pub state: Arc<Features>,
    pub worker: usize,
    pub action: Option<usize>,
    pub reward: f64,
    pub next: Arc<Features>,
    pub terminal: bool,
}

/// Double-Q target for one transition.
///
/// The next action is chosen by the online values (`online_next`, the
/// worker's row over the next orders; `None` when the worker cannot act)
/// and valued by the target network. Taking no order is always an option
/// worth zero.
pub fn double_q_target(reward: f64, gamma: f64, terminal: bool, online_next: Option<&[f64]>, target_next: &[f64]) -> f64 {
    if terminal {
        return reward;
    }
    let Some(online) = online_next else { return reward };
    let mut best = (0.0, None);
    for (j, &v) in online.iter().enumerate() {
        if v > best.0 {
            best = (v, Some(j));
        }
    }
    let bootstrap = best.1.map_or(0.0, |j| target_next[j]);
    reward + gamma * bootstrap
}

fn key(f: &Arc<Features>) -> *const Features {
    Arc::as_ptr(f)
}

/// Targets for every transition, evaluating each distinct next state once
/// per network.
pub fn ddqn_targets(
    net: &PolicyNet,
    online: &ParamStore,
    target: &ParamStore,
    batch: &[&AgentTransition],
    gamma: f64,
) -> Result<Vec<f64>> {
    let mut cache: HashMap<*const Features, (QMatrix, QMatrix)> = HashMap::new();
    batch
        .iter()
        .map(|t| {
            if t.terminal || t.action.is_none() {
                return Ok(t.reward);
            }
            let k = key(&t.next);
            if !cache.contains_key(&k) {
                let q = net.stage1_q_values(online, &t.next)?;
                let qt = net.stage1_q_values(target, &t.next)?;
                cache.insert(k, (q, qt));
            }
            let (q, qt) = &cache[&k];
            let cols = q.cols;
            let row = |m: &QMatrix| m.values[t.worker * cols..(t.worker + 1) * cols].to_vec();
            let online_row = q.available[t.worker].then(|| row(q));
            Ok(double_q_target(t.reward, gamma, false, online_row.as_deref(), &row(qt)))
        })
        .collect()
}

/// Loss value and parameter gradients of one optimization step.
#[derive(Debug, Clone)]
pub struct LossStep {
    pub loss: f64,
    pub grads: Gradients,
    /// Samples that entered the loss.
    pub count: usize,
}

/// Builds the squared TD error of the order-taking transitions on `g`.
/// Idle transitions have a fixed value of zero and do not contribute.
pub fn ddqn_loss_var(g: &mut Graph, net: &PolicyNet, batch: &[&AgentTransition], targets: &[f64]) -> Result<Option<Var>> {
    // Group by state so each is encoded once.
    let mut order: Vec<*const Features> = Vec::new();
    let mut groups: HashMap<*const Features, (Arc<Features>, Vec<(usize, usize)>, Vec<f64>)> = HashMap::new();
    for (t, &y) in batch.iter().zip(targets) {
        let Some(col) = t.action else { continue };
        let k = key(&t.state);
        let entry = groups.entry(k).or_insert_with(|| {
            order.push(k);
            (t.state.clone(), Vec::new(), Vec::new())
        });
        entry.1.push((t.worker, col));
        entry.2.push(y);
    }
    if order.is_empty() {
        return Ok(None);
    }
    let (mut picked, mut ys) = (Vec::new(), Vec::new());
    for k in order {
        let (f, cells, y) = &groups[&k];
        let q = net.stage1_q(g, f)?;
        picked.push(g.gather(q, cells)?);
        ys.extend_from_slice(y);
    }
    let q = g.concat_cols(&picked)?;
    let y = g.input(Tensor::row(&ys));
    let d = g.sub(q, y)?;
    let sq = g.mul(d, d)?;
    Ok(Some(g.mean(sq)))
}

/// Mean squared double-Q TD error and its gradient with respect to the
/// online parameters.
pub fn ddqn_loss(
    net: &PolicyNet,
    online: &ParamStore,
    target: &ParamStore,
    batch: &[&AgentTransition],
    gamma: f64,
    mode: Mode,
) -> Result<Option<LossStep>> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let targets = ddqn_targets(net, online, target, batch, gamma)?;
    let mut g = Graph::new(online, mode);
    let Some(loss) = ddqn_loss_var(&mut g, net, batch, &targets)? else { return Ok(None) };
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("stage-1 loss is {value}")));
    }
    let grads = g.backward(loss)?;
    let count = batch.iter().filter(|t| t.action.is_some()).count();
    Ok(Some(LossStep { loss: value, grads, count }))
}

/// Result of a stage-1 run.
#[derive(Debug, Clone)]
pub struct Stage1Report {
    pub logs: Vec<TrainLog>,
    pub updates: usize,
}

/// Trains the encoders and the scoring head in `store` with independent
/// double Q-learning on episodes of `spec`. `on_episode` sees every log row
/// and the current parameters (for checkpointing).
pub fn stage1_train(
    net: &PolicyNet,
    store: &mut ParamStore,
    cfg: &Stage1Config,
    spec: &ScenarioSpec,
    mut on_episode: impl FnMut(&TrainLog, &ParamStore) -> Result<()>,
) -> Result<Stage1Report> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut target = store.clone();
    let mut adam = Adam::new(cfg.adam, store);
    let mask = PolicyNet::group_mask(store, ParamGroup::Stage1);
    let mut buffer = ReplayBuffer::new(cfg.buffer);
    let mut epsilon = cfg.epsilon;
    let mut logs = Vec::with_capacity(cfg.episodes);
    let mut updates = 0;

    for episode in 0..cfg.episodes {
        let seed = episode_seed(cfg.seed, episode);
        let mut world = spec.build_world(seed)?;
        let mut state = Arc::new(Features::from_observation(&world.observe()));
        let mut losses = Mean::default();
        let mut steps = 0;
        while !world.is_done() {
            let q = net.stage1_q_values(store, &state)?;
            let q = inject_exploration(&q, epsilon, cfg.boost, &mut rng);
            let action = solve_stage1(&q)?;
            let outcome = world.step(&action)?;
            let next = Arc::new(Features::from_observation(&world.observe()));
            let terminal = world.is_done();
            for (i, &w) in state.worker_ids.iter().enumerate() {
                if !state.available[i] {
                    continue;
                }
                let taken = action.order_for(w).map(|o| state.order_ids.iter().position(|&x| x == o).expect("order in state"));
                if taken.is_none() && rng.random::<f64>() >= cfg.idle_keep {
                    continue;
                }
                buffer.push(AgentTransition {
                    state: state.clone(),
                    worker: i,
                    action: taken,
                    reward: outcome.rewards[w.index()] * cfg.reward_scale,
                    next: next.clone(),
                    terminal,
                });
            }
            steps += 1;
            if steps % cfg.optimize_every == 0 {
                if let Ok(batch) = buffer.sample(cfg.batch, &mut rng) {
                    let mode = Mode::Train { seed: rng.random() };
                    if let Some(mut step) = ddqn_loss(net, store, &target, &batch, cfg.gamma, mode)? {
                        step.grads.retain(|id| mask[id.0]);
                        adam.step(store, &step.grads)?;
                        target.soft_update_from(store, cfg.tau)?;
                        losses.add(step.loss);
                        updates += 1;
                    }
                }
            }
            state = next;
        }
        world.drain();
        let mut row = TrainLog::new(episode, seed, &world.metrics());
        row.epsilon = Some(epsilon);
        row.loss = losses.get();
        on_episode(&row, store)?;
        logs.push(row);
        epsilon = (epsilon * cfg.epsilon_decay).max(cfg.epsilon_final);
        adam.decay_lr();
    }
    Ok(Stage1Report { logs, updates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyConfig;

    #[test]
    fn target_arithmetic() {
        assert_eq!(double_q_target(1.0, 0.99, false, Some(&[2.0]), &[2.0]), 1.0 + 0.99 * 2.0);
        assert_eq!(double_q_target(1.0, 0.99, true, Some(&[2.0]), &[2.0]), 1.0);
        // Unavailable next worker and an empty order list both bootstrap 0.
        assert_eq!(double_q_target(1.5, 0.99, false, None, &[9.0]), 1.5);
        assert_eq!(double_q_target(1.5, 0.99, false, Some(&[]), &[]), 1.5);
        // Only negative next values: taking no order (0) wins.
        assert_eq!(double_q_target(1.0, 0.5, false, Some(&[-1.0, -2.0]), &[7.0, 7.0]), 1.0);
    }

    #[test]
    fn online_selects_target_evaluates() {
        let online = [1.0, 5.0];
        let target = [10.0, 2.0];
        let y = double_q_target(0.0, 1.0, false, Some(&online), &target);
        assert_eq!(y, 2.0);
        assert_ne!(y, 10.0);
    }

    fn tiny() -> (PolicyNet, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        PolicyNet::new(PolicyConfig::desk(), &mut rng).unwrap()
    }

    #[test]
    fn zero_episodes_leave_parameters() {
        let (net, mut store) = tiny();
        let before = store.clone();
        let cfg = Stage1Config { episodes: 0, ..Stage1Config::desk() };
        let report = stage1_train(&net, &mut store, &cfg, &ScenarioSpec::desk(), |_, _| Ok(())).unwrap();
        assert!(report.logs.is_empty());
        assert_eq!(store, before);
    }

    #[test]
    fn terminal_transition_at_its_value_has_zero_loss() {
        let (net, store) = tiny();
        let obs = crate::policy::fixtures::observation(2, 3, 2);
        let f = Arc::new(Features::from_observation(&obs));
        let q = net.stage1_q_values(&store, &f).unwrap();
        let t = AgentTransition { state: f.clone(), worker: 0, action: Some(1), reward: q.get(0, 1), next: f, terminal: true };
        let step = ddqn_loss(&net, &store, &store, &[&t], 0.99, Mode::Eval).unwrap().unwrap();
        assert!(step.loss < 1e-24, "{}", step.loss);
    }

    #[test]
    fn discount_free_targets_are_rewards() {
        let (net, store) = tiny();
        let spec = ScenarioSpec::desk();
        let mut world = spec.build_world(4).unwrap();
        let mut batch = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..3 {
            let f = Arc::new(Features::from_observation(&world.observe()));
            let q = inject_exploration(&net.stage1_q_values(&store, &f).unwrap(), 1.0, 1e6, &mut rng);
            let a = solve_stage1(&q).unwrap();
            let out = world.step(&a).unwrap();
            let next = Arc::new(Features::from_observation(&world.observe()));
            for (w, o) in &a.pairs {
                let i = f.worker_ids.iter().position(|x| x == w).unwrap();
                let j = f.order_ids.iter().position(|x| x == o).unwrap();
                batch.push(AgentTransition {
                    state: f.clone(),
                    worker: i,
                    action: Some(j),
                    reward: out.rewards[w.index()],
                    next: next.clone(),
                    terminal: false,
                });
            }
        }
        assert!(!batch.is_empty());
        let refs: Vec<&AgentTransition> = batch.iter().collect();
        let ys = ddqn_targets(&net, &store, &store, &refs, 0.0).unwrap();
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        assert_eq!(ys, rewards);
    }
}
