use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assignment::{perturb_probabilities, solve_stage2, NoiseSpec, ProbabilityMatrix};
use crate::error::Result;

/// A random `workers x (orders + 1)` probability matrix, all rows available.
pub fn random_probabilities(workers: usize, orders: usize, seed: u64) -> Result<ProbabilityMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = orders + 1;
    let mut probs = Vec::with_capacity(workers * width);
    for _ in 0..workers {
        let logits: Vec<f64> = (0..width).map(|_| rng.random_range(-3.0..3.0)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        probs.extend(logits.iter().map(|l| l.exp() / z));
    }
    ProbabilityMatrix::from_probs(workers, orders, probs, vec![true; workers])
}

#[derive(Debug, Clone)]
pub struct MatchBench {
    pub workers: usize,
    pub orders: usize,
    pub times: Vec<Duration>,
    pub assigned: usize,
}

impl MatchBench {
    pub fn worst(&self) -> Duration {
        self.times.iter().copied().max().unwrap_or_default()
    }

    pub fn mean(&self) -> Duration {
        self.times.iter().sum::<Duration>() / self.times.len().max(1) as u32
    }
}

/// Times perturbation plus the stage-2 matching on one thread.
pub fn match_bench(workers: usize, orders: usize, noise: NoiseSpec, trials: usize, seed: u64) -> Result<MatchBench> {
    let p = random_probabilities(workers, orders, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBE7C);
    let mut times = Vec::with_capacity(trials);
    let mut assigned = 0;
    for _ in 0..trials.max(1) {
        let start = Instant::now();
        let q = perturb_probabilities(&p, noise, &mut rng)?;
        let a = solve_stage2(&q)?;
        times.push(start.elapsed());
        assigned = a.pairs.len();
    }
    Ok(MatchBench { workers, orders, times, assigned })
}
