use serde::{Deserialize, Serialize};

use crate::geometry::{Extent, Point};
use crate::sim::types::{OrderId, WorkerId};

/// An order as seen by a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderView {
    pub id: OrderId,
    pub origin: Point,
    pub destination: Point,
    pub request_time: u32,
    pub deadline: u32,
    pub direct_time: f64,
    pub picked_up: bool,
}

/// A worker as seen by a policy. `onboard` lists picked-up orders in pickup
/// order, followed by the pickup target if there is one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerView {
    pub id: WorkerId,
    pub location: Point,
    pub capacity: usize,
    pub load: usize,
    pub onboard: Vec<OrderView>,
    pub available: bool,
    pub available_at: f64,
}

/// Full state snapshot at a decision step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: u32,
    pub horizon: u32,
    pub patience: u32,
    pub extent: Extent,
    pub workers: Vec<WorkerView>,
    /// Open orders, sorted by id.
    pub orders: Vec<OrderView>,
}

impl Observation {
    pub fn availability(&self) -> Vec<bool> {
        self.workers.iter().map(|w| w.available).collect()
    }

    pub fn worker_ids(&self) -> Vec<WorkerId> {
        self.workers.iter().map(|w| w.id).collect()
    }

    pub fn order_ids(&self) -> Vec<OrderId> {
        self.orders.iter().map(|o| o.id).collect()
    }
}
