use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::harness::policies::Policy;
use crate::harness::scenario::ScenarioSpec;
use crate::sim::{EpisodeMetrics, World};

/// Metrics of one finished episode, tagged with where it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    pub metrics: EpisodeMetrics,
}

/// Plays `policy` until the horizon, then drains in-flight trips.
pub fn run_episode(world: &mut World, policy: &mut dyn Policy) -> Result<EpisodeMetrics> {
    while !world.is_done() {
        let obs = world.observe();
        let action = policy.act(&obs)?;
        world.step(&action)?;
    }
    world.drain();
    Ok(world.metrics())
}

/// Runs a clone of `policy` on every seed (in parallel); results keep the
/// seed order.
pub fn evaluate<P>(spec: &ScenarioSpec, policy: &P, seeds: &[u64]) -> Result<Vec<EpisodeRecord>>
where
    P: Policy + Clone + Sync,
{
    seeds
        .par_iter()
        .enumerate()
        .map(|(episode, &seed)| {
            let mut p = policy.clone();
            p.reset(seed);
            let mut world = spec.build_world(seed)?;
            let metrics = run_episode(&mut world, &mut p)?;
            Ok(EpisodeRecord { episode, seed, metrics })
        })
        .collect()
}

pub fn mean_reward(records: &[EpisodeRecord]) -> f64 {
    records.iter().map(|r| r.metrics.total_reward).sum::<f64>() / records.len().max(1) as f64
}

pub fn mean_served(records: &[EpisodeRecord]) -> f64 {
    records.iter().map(|r| r.metrics.served as f64).sum::<f64>() / records.len().max(1) as f64
}

pub const METRICS_HEADER: [&str; 10] = [
    "episode",
    "seed",
    "reward",
    "requested",
    "served",
    "service_rate",
    "mean_delivery",
    "mean_detour",
    "mean_pickup",
    "mean_confirmation",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per episode; undefined means are empty fields.
pub fn write_metrics_csv<W: Write>(records: &[EpisodeRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in records {
        let m = &r.metrics;
        w.write_record([
            r.episode.to_string(),
            r.seed.to_string(),
            m.total_reward.to_string(),
            m.requested.to_string(),
            m.served.to_string(),
            opt(m.service_rate),
            opt(m.mean_delivery),
            opt(m.mean_detour),
            opt(m.mean_pickup),
            opt(m.mean_confirmation),
        ])?;
    }
    w.flush()?;
    Ok(())
}
