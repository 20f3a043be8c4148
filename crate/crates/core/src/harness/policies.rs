use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assignment::{perturb_probabilities, solve_stage1, solve_stage2, AssignmentAction, NoiseSpec};
use crate::error::Result;
use crate::nn::ParamStore;
use crate::policy::{Features, PolicyNet};
use crate::sim::{Observation, WorkerId};

/// Anything that turns an observation into a joint assignment.
pub trait Policy: Send {
    fn name(&self) -> &str;
    fn act(&mut self, obs: &Observation) -> Result<AssignmentAction>;
    /// Re-seeds any internal randomness at the start of an episode.
    fn reset(&mut self, _seed: u64) {}
}

/// Visits available workers in random order; each takes a uniformly random
/// remaining order or rejects (reject is one more option).
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    }

    fn act(&mut self, obs: &Observation) -> Result<AssignmentAction> {
        let mut workers: Vec<WorkerId> = obs.workers.iter().filter(|w| w.available).map(|w| w.id).collect();
        workers.shuffle(&mut self.rng);
        let mut open = obs.order_ids();
        let (mut pairs, mut rejecting) = (Vec::new(), Vec::new());
        for w in workers {
            let pick = self.rng.random_range(0..=open.len());
            if pick == open.len() {
                rejecting.push(w);
            } else {
                pairs.push((w, open.swap_remove(pick)));
            }
        }
        Ok(AssignmentAction::new(pairs, rejecting))
    }
}

/// Orders in id order each go to the nearest still-free available worker
/// (ties to the lower worker id).
#[derive(Debug, Clone, Default)]
pub struct GreedyNearest;

impl Policy for GreedyNearest {
    fn name(&self) -> &str {
        "greedy"
    }

    fn act(&mut self, obs: &Observation) -> Result<AssignmentAction> {
        let mut free: Vec<_> = obs.workers.iter().filter(|w| w.available).collect();
        let mut pairs = Vec::new();
        for o in &obs.orders {
            let best = free
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    a.location.distance(o.origin).total_cmp(&b.location.distance(o.origin)).then(a.id.cmp(&b.id))
                })
                .map(|(k, _)| k);
            let Some(k) = best else { break };
            pairs.push((free.swap_remove(k).id, o.id));
        }
        Ok(AssignmentAction::new(pairs, free.iter().map(|w| w.id).collect()))
    }
}

/// Greedy stage-1 matching on the Q-matrix; with `epsilon > 0` random finite
/// entries are boosted first.
#[derive(Clone)]
pub struct Stage1Policy {
    pub net: Arc<PolicyNet>,
    pub store: Arc<ParamStore>,
    pub epsilon: f64,
    pub boost: f64,
    rng: ChaCha8Rng,
}

impl Stage1Policy {
    pub fn new(net: Arc<PolicyNet>, store: Arc<ParamStore>) -> Self {
        Self { net, store, epsilon: 0.0, boost: 1e6, rng: ChaCha8Rng::seed_from_u64(0) }
    }
}

impl Policy for Stage1Policy {
    fn name(&self) -> &str {
        "stage1"
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn act(&mut self, obs: &Observation) -> Result<AssignmentAction> {
        let f = Features::from_observation(obs);
        let q = self.net.stage1_q_values(&self.store, &f)?;
        let q = if self.epsilon > 0.0 { crate::assignment::inject_exploration(&q, self.epsilon, self.boost, &mut self.rng) } else { q };
        solve_stage1(&q)
    }
}

/// Maximum-likelihood joint action of the actor's probability matrix,
/// optionally perturbed first.
#[derive(Clone)]
pub struct Stage2Policy {
    pub net: Arc<PolicyNet>,
    pub store: Arc<ParamStore>,
    pub noise: NoiseSpec,
    rng: ChaCha8Rng,
}

impl Stage2Policy {
    pub fn new(net: Arc<PolicyNet>, store: Arc<ParamStore>) -> Self {
        Self { net, store, noise: NoiseSpec::None, rng: ChaCha8Rng::seed_from_u64(0) }
    }
}

impl Policy for Stage2Policy {
    fn name(&self) -> &str {
        "stage2"
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn act(&mut self, obs: &Observation) -> Result<AssignmentAction> {
        let f = Features::from_observation(obs);
        let p = self.net.probability_matrix(&self.store, &f)?;
        let p = perturb_probabilities(&p, self.noise, &mut self.rng)?;
        solve_stage2(&p)
    }
}
