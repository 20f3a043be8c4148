use serde::{Deserialize, Serialize};

use crate::geometry::Point;
use crate::routing::Stop;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OrderId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorkerId(pub u32);

impl OrderId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl WorkerId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OrderStatus {
    Requested,
    Assigned,
    Onboard,
    Delivered,
    Cancelled,
}

impl OrderStatus {
    /// Whether moving from `self` to `next` follows the order lifecycle.
    pub fn can_become(self, next: OrderStatus) -> bool {
        use OrderStatus::*;
        matches!(
            (self, next),
            (Requested, Assigned) | (Assigned, Onboard) | (Onboard, Delivered) | (Requested, Cancelled)
        )
    }
}

/// A trip request and its lifecycle timestamps.
///
/// `request_time` and `deadline` are step indices; the event timestamps are
/// in simulated minutes (steps are one minute long), so a pickup that happens
/// part-way through a step keeps its fractional time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderState {
    pub id: OrderId,
    pub origin: Point,
    pub destination: Point,
    pub request_time: u32,
    pub deadline: u32,
    pub assign_time: Option<f64>,
    pub pickup_time: Option<f64>,
    pub dropoff_time: Option<f64>,
    /// Origin to destination travel time, minutes.
    pub direct_time: f64,
    pub status: OrderStatus,
    pub worker: Option<WorkerId>,
}

impl OrderState {
    /// Steps the order has been waiting at step `now`.
    pub fn age(&self, now: u32) -> u32 {
        now.saturating_sub(self.request_time)
    }
}

/// A vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerState {
    pub id: WorkerId,
    pub location: Point,
    pub capacity: usize,
    /// Picked-up, undelivered orders in pickup order.
    pub onboard: Vec<OrderId>,
    pub route: Vec<Stop>,
    pub pickup_target: Option<OrderId>,
    /// Estimated minute at which the worker can take a new order again.
    pub available_at: f64,
}

impl WorkerState {
    pub fn new(id: WorkerId, location: Point, capacity: usize) -> Self {
        Self {
            id,
            location,
            capacity,
            onboard: Vec::new(),
            route: Vec::new(),
            pickup_target: None,
            available_at: 0.0,
        }
    }

    /// A worker heading to a pickup, or already full, cannot take an order.
    pub fn is_available(&self) -> bool {
        self.pickup_target.is_none() && self.onboard.len() < self.capacity
    }

    pub fn residual_capacity(&self) -> usize {
        self.capacity.saturating_sub(self.onboard.len())
    }
}
