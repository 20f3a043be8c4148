//! Finite-difference checks of the composed training losses.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::assignment::NoiseSpec;
use crate::error::Result;
use crate::nn::{grad_check, GradCheckConfig, GradCheckReport, Mode, ParamStore};
use crate::policy::fixtures::{observation, scramble};
use crate::policy::{Features, PolicyConfig, PolicyNet};
use crate::train::stage1::{ddqn_loss_var, AgentTransition};
use crate::train::stage2::{actor_loss_var, critic_loss_var, select_action, GlobalTransition};

fn transition(net: &PolicyNet, store: &ParamStore, seed: u64, n: usize, m: usize) -> Result<GlobalTransition> {
    let mut obs = observation(seed, n, m);
    obs.workers.iter_mut().take(2).for_each(|w| w.available = true);
    let state = Arc::new(Features::from_observation(&obs));
    let next = Arc::new(Features::from_observation(&observation(seed + 1, n, m)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let action = select_action(net, store, &state, NoiseSpec::Bsc { epsilon: 0.5 }, &mut rng)?;
    Ok(GlobalTransition { state, action, reward: 0.7, next, terminal: false })
}

/// Gradient checks of the actor surrogate, the twin-critic loss and the
/// double-Q loss on small random instances with every branch active.
pub fn composed_loss_checks(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let cfg = PolicyConfig { dropout: 0.0, ..PolicyConfig::desk() };
    let (net, mut store) = PolicyNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    scramble(&mut store, seed + 1, 0.3);
    let gc = GradCheckConfig { seed, ..GradCheckConfig::default() };
    let mut out = Vec::new();

    let pair = transition(&net, &store, seed + 10, 2, 1)?;
    let report = grad_check(&store, Mode::Eval, gc, |g| actor_loss_var(g, &net, &[&pair], &[1.7], true))?;
    out.push(("actor loss, 2 workers x 1 order".to_string(), report));

    let batch = [transition(&net, &store, seed + 20, 4, 3)?, transition(&net, &store, seed + 30, 3, 2)?];
    let refs: Vec<&GlobalTransition> = batch.iter().collect();
    let report = grad_check(&store, Mode::Eval, gc, |g| actor_loss_var(g, &net, &refs, &[0.9, -0.4], true))?;
    out.push(("actor loss with rejects, batch of 2".to_string(), report));
    let report = grad_check(&store, Mode::Eval, gc, |g| actor_loss_var(g, &net, &refs, &[0.9, -0.4], false))?;
    out.push(("actor loss without rejects, batch of 2".to_string(), report));

    let report = grad_check(&store, Mode::Eval, gc, |g| critic_loss_var(g, &net, &refs, &[0.3, 1.1], true))?;
    out.push(("twin critic loss".to_string(), report));

    let agents: Vec<AgentTransition> = batch
        .iter()
        .flat_map(|t| {
            t.action.pairs.iter().map(move |(w, o)| AgentTransition {
                state: t.state.clone(),
                worker: t.state.worker_ids.iter().position(|x| x == w).expect("worker"),
                action: Some(t.state.order_ids.iter().position(|x| x == o).expect("order")),
                reward: 0.5,
                next: t.next.clone(),
                terminal: false,
            })
        })
        .collect();
    let refs: Vec<&AgentTransition> = agents.iter().collect();
    let ys: Vec<f64> = (0..refs.len()).map(|k| 0.2 * k as f64 - 0.1).collect();
    if !refs.is_empty() {
        let report = grad_check(&store, Mode::Eval, gc, |g| {
            ddqn_loss_var(g, &net, &refs, &ys)?.ok_or_else(|| crate::Error::Config("no order-taking transitions".into()))
        })?;
        out.push(("double-Q loss".to_string(), report));
    }
    Ok(out)
}
