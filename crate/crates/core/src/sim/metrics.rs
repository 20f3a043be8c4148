use serde::{Deserialize, Serialize};

use crate::sim::types::{OrderState, OrderStatus};

/// Episode-level service metrics. Means over empty populations are `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub total_reward: f64,
    pub requested: usize,
    /// Confirmed (assigned) trips.
    pub served: usize,
    pub cancelled: usize,
    pub delivered: usize,
    pub service_rate: Option<f64>,
    /// Pickup to dropoff, minutes.
    pub mean_delivery: Option<f64>,
    /// Delivery time beyond the direct trip time.
    pub mean_detour: Option<f64>,
    /// Assignment to pickup.
    pub mean_pickup: Option<f64>,
    /// Request to assignment.
    pub mean_confirmation: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn collect_metrics(orders: &[OrderState], total_reward: f64) -> EpisodeMetrics {
    let requested = orders.len();
    let served = orders.iter().filter(|o| o.assign_time.is_some()).count();
    let cancelled = orders.iter().filter(|o| o.status == OrderStatus::Cancelled).count();
    let delivered: Vec<&OrderState> = orders.iter().filter(|o| o.status == OrderStatus::Delivered).collect();
    let delivery = |o: &OrderState| o.dropoff_time.unwrap_or(0.0) - o.pickup_time.unwrap_or(0.0);
    EpisodeMetrics {
        total_reward,
        requested,
        served,
        cancelled,
        delivered: delivered.len(),
        service_rate: (requested > 0).then(|| served as f64 / requested as f64),
        mean_delivery: mean(delivered.iter().map(|o| delivery(o))),
        mean_detour: mean(delivered.iter().map(|o| delivery(o) - o.direct_time)),
        mean_pickup: mean(orders.iter().filter_map(|o| Some(o.pickup_time? - o.assign_time?))),
        mean_confirmation: mean(orders.iter().filter_map(|o| Some(o.assign_time? - f64::from(o.request_time)))),
    }
}
