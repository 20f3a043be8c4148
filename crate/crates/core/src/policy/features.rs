//! Fixed affine scaling of observations into network inputs: coordinates
//! by the city extent, times by the horizon.

use crate::nn::Tensor;
use crate::sim::{Observation, OrderId, OrderView, WorkerId, WorkerView};

pub const WORKER_FEATURES: usize = 6;
pub const ONBOARD_FEATURES: usize = 8;
pub const ORDER_FEATURES: usize = 8;

/// Network inputs for one observation. Row `i` of `workers` and
/// `onboard[i]` describe `worker_ids[i]`; row `j` of `orders` is
/// `order_ids[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub workers: Tensor,
    pub onboard: Vec<Tensor>,
    pub orders: Tensor,
    pub available: Vec<bool>,
    pub worker_ids: Vec<WorkerId>,
    pub order_ids: Vec<OrderId>,
}

impl Features {
    pub fn from_observation(obs: &Observation) -> Self {
        let scale = Scale::of(obs);
        let workers: Vec<f64> = obs.workers.iter().flat_map(|w| scale.worker(w)).collect();
        let onboard = obs
            .workers
            .iter()
            .map(|w| {
                let rows: Vec<f64> = w.onboard.iter().flat_map(|o| scale.onboard(o)).collect();
                Tensor::matrix(w.onboard.len(), ONBOARD_FEATURES, rows).expect("sized")
            })
            .collect();
        let orders: Vec<f64> = obs.orders.iter().flat_map(|o| scale.order(o)).collect();
        Self {
            workers: Tensor::matrix(obs.workers.len(), WORKER_FEATURES, workers).expect("sized"),
            onboard,
            orders: Tensor::matrix(obs.orders.len(), ORDER_FEATURES, orders).expect("sized"),
            available: obs.availability(),
            worker_ids: obs.worker_ids(),
            order_ids: obs.order_ids(),
        }
    }

    pub fn n_workers(&self) -> usize {
        self.worker_ids.len()
    }

    pub fn n_orders(&self) -> usize {
        self.order_ids.len()
    }

    /// Keeps only the listed workers and orders, in the given order.
    pub fn select(&self, workers: &[usize], orders: &[usize]) -> Features {
        let pick = |t: &Tensor, rows: &[usize]| {
            let data = rows.iter().flat_map(|&r| t.row_slice(r).to_vec()).collect();
            Tensor::matrix(rows.len(), t.cols(), data).expect("sized")
        };
        Features {
            workers: pick(&self.workers, workers),
            onboard: workers.iter().map(|&i| self.onboard[i].clone()).collect(),
            orders: pick(&self.orders, orders),
            available: workers.iter().map(|&i| self.available[i]).collect(),
            worker_ids: workers.iter().map(|&i| self.worker_ids[i]).collect(),
            order_ids: orders.iter().map(|&j| self.order_ids[j]).collect(),
        }
    }
}

struct Scale {
    w: f64,
    h: f64,
    horizon: f64,
    patience: f64,
    step: f64,
}

impl Scale {
    fn of(obs: &Observation) -> Self {
        Self {
            w: obs.extent.width_km.max(1e-9),
            h: obs.extent.height_km.max(1e-9),
            horizon: f64::from(obs.horizon.max(1)),
            patience: f64::from(obs.patience.max(1)),
            step: f64::from(obs.step),
        }
    }

    fn worker(&self, w: &WorkerView) -> [f64; WORKER_FEATURES] {
        [
            w.location.x / self.w,
            w.location.y / self.h,
            w.load as f64 / w.capacity.max(1) as f64,
            if w.available { 1.0 } else { 0.0 },
            (w.available_at - self.step).max(0.0) / self.horizon,
            self.step / self.horizon,
        ]
    }

    fn onboard(&self, o: &OrderView) -> [f64; ONBOARD_FEATURES] {
        [
            o.origin.x / self.w,
            o.origin.y / self.h,
            o.destination.x / self.w,
            o.destination.y / self.h,
            (f64::from(o.deadline) - self.step) / self.horizon,
            o.direct_time / self.horizon,
            if o.picked_up { 1.0 } else { 0.0 },
            (self.step - f64::from(o.request_time)) / self.horizon,
        ]
    }

    fn order(&self, o: &OrderView) -> [f64; ORDER_FEATURES] {
        [
            o.origin.x / self.w,
            o.origin.y / self.h,
            o.destination.x / self.w,
            o.destination.y / self.h,
            (f64::from(o.deadline) - self.step) / self.horizon,
            o.direct_time / self.horizon,
            (self.step - f64::from(o.request_time)) / self.patience,
            self.step / self.horizon,
        ]
    }
}
