use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::sim::EpisodeMetrics;

/// One training-log row per episode. Loss columns are empty for episodes
/// without an optimization step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    pub episode: usize,
    pub seed: u64,
    pub reward: f64,
    pub requested: usize,
    pub served: usize,
    pub service_rate: Option<f64>,
    pub mean_pickup: Option<f64>,
    pub mean_delivery: Option<f64>,
    pub mean_detour: Option<f64>,
    pub mean_confirmation: Option<f64>,
    pub epsilon: Option<f64>,
    pub loss: Option<f64>,
    pub actor_loss: Option<f64>,
}

impl TrainLog {
    pub(crate) fn new(episode: usize, seed: u64, m: &EpisodeMetrics) -> Self {
        Self {
            episode,
            seed,
            reward: m.total_reward,
            requested: m.requested,
            served: m.served,
            service_rate: m.service_rate,
            mean_pickup: m.mean_pickup,
            mean_delivery: m.mean_delivery,
            mean_detour: m.mean_detour,
            mean_confirmation: m.mean_confirmation,
            epsilon: None,
            loss: None,
            actor_loss: None,
        }
    }
}

pub fn write_train_log_csv<W: Write>(rows: &[TrainLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Running mean that reports `None` until it has seen a value.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    pub fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    pub fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}
