use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::AssignmentAction;
use crate::error::{Error, Result};
use crate::geometry::{Extent, Point};
use crate::routing::{advance_route, best_insertion, stop_etas, Euclidean, StopKind, TravelModel};
use crate::sim::events::{Event, EventKind};
use crate::sim::metrics::{collect_metrics, EpisodeMetrics};
use crate::sim::observe::{Observation, OrderView, WorkerView};
use crate::sim::reward::{compute_reward, RewardBreakdown, RewardParams};
use crate::sim::types::{OrderId, OrderState, OrderStatus, WorkerId, WorkerState};

/// Static parameters of one simulated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub extent: Extent,
    pub speed_kmh: f64,
    pub workers: usize,
    pub capacity: usize,
    /// Steps a requested order waits before it is cancelled.
    pub patience: u32,
    /// Decision steps per episode; each step is one minute.
    pub horizon: u32,
    pub reward: RewardParams,
    /// Seeds the initial worker placement.
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            extent: Extent::default(),
            speed_kmh: 60.0,
            workers: 20,
            capacity: 3,
            patience: 5,
            horizon: 30,
            reward: RewardParams::default(),
            seed: 1,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(self.speed_kmh > 0.0) {
            return Err(Error::Config("speed must be positive".into()));
        }
        if self.capacity < 1 {
            return Err(Error::Config("capacity must be at least 1".into()));
        }
        if !(self.extent.width_km > 0.0 && self.extent.height_km > 0.0) {
            return Err(Error::Config("extent must be positive".into()));
        }
        self.reward.validate()
    }

    pub fn travel(&self) -> Euclidean {
        Euclidean { speed_kmh: self.speed_kmh }
    }
}

/// Deadline for an order that did not come with one.
pub fn synthesize_deadline(request_time: u32, direct_time: f64, patience: u32) -> u32 {
    request_time + (1.5 * direct_time).ceil() as u32 + patience
}

/// A trip request before it enters the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderRequest {
    pub request_time: u32,
    pub origin: Point,
    pub destination: Point,
    pub deadline: Option<u32>,
}

/// What one call to [`World::step`] produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Indexed by worker id.
    pub rewards: Vec<f64>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub global_reward: f64,
    pub events: Vec<Event>,
}

/// The discrete-time ride-pooling world.
#[derive(Clone)]
pub struct World {
    config: WorldConfig,
    travel: Arc<dyn TravelModel>,
    now: u32,
    workers: Vec<WorkerState>,
    orders: Vec<OrderState>,
    pending: VecDeque<OrderRequest>,
    events: Vec<Event>,
    total_reward: f64,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World")
            .field("now", &self.now)
            .field("workers", &self.workers.len())
            .field("orders", &self.orders.len())
            .finish()
    }
}

impl World {
    /// Builds a world with workers placed uniformly at random from
    /// `config.seed` and the given arrival stream.
    pub fn new(config: WorldConfig, requests: Vec<OrderRequest>) -> Result<Self> {
        let travel = Arc::new(config.travel());
        Self::with_travel(config, requests, travel)
    }

    pub fn with_travel(
        config: WorldConfig,
        mut requests: Vec<OrderRequest>,
        travel: Arc<dyn TravelModel>,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let workers = (0..config.workers)
            .map(|i| {
                let p = Point::new(
                    rng.random_range(0.0..=config.extent.width_km),
                    rng.random_range(0.0..=config.extent.height_km),
                );
                WorkerState::new(WorkerId(i as u32), p, config.capacity)
            })
            .collect();
        requests.sort_by_key(|r| r.request_time);
        let mut world = Self {
            config,
            travel,
            now: 0,
            workers,
            orders: Vec::new(),
            pending: requests.into(),
            events: Vec::new(),
            total_reward: 0.0,
        };
        world.reveal_arrivals();
        Ok(world)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn travel(&self) -> &dyn TravelModel {
        self.travel.as_ref()
    }

    pub fn now(&self) -> u32 {
        self.now
    }

    pub fn is_done(&self) -> bool {
        self.now >= self.config.horizon
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    pub fn orders(&self) -> &[OrderState] {
        &self.orders
    }

    pub fn order(&self, id: OrderId) -> Option<&OrderState> {
        self.orders.get(id.index())
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn total_reward(&self) -> f64 {
        self.total_reward
    }

    /// Orders waiting for a decision, by id.
    pub fn open_orders(&self) -> Vec<&OrderState> {
        self.orders.iter().filter(|o| o.status == OrderStatus::Requested).collect()
    }

    pub fn available_workers(&self) -> Vec<WorkerId> {
        self.workers.iter().filter(|w| w.is_available()).map(|w| w.id).collect()
    }

    /// Snapshot of the decision-relevant state.
    pub fn observe(&self) -> Observation {
        let view = |o: &OrderState| OrderView {
            id: o.id,
            origin: o.origin,
            destination: o.destination,
            request_time: o.request_time,
            deadline: o.deadline,
            direct_time: o.direct_time,
            picked_up: o.status == OrderStatus::Onboard,
        };
        let workers = self
            .workers
            .iter()
            .map(|w| {
                let mut onboard: Vec<OrderView> = w.onboard.iter().map(|id| view(&self.orders[id.index()])).collect();
                if let Some(target) = w.pickup_target {
                    onboard.push(view(&self.orders[target.index()]));
                }
                WorkerView {
                    id: w.id,
                    location: w.location,
                    capacity: w.capacity,
                    load: w.onboard.len(),
                    onboard,
                    available: w.is_available(),
                    available_at: w.available_at,
                }
            })
            .collect();
        let orders = self.open_orders().into_iter().map(view).collect();
        Observation { step: self.now, horizon: self.config.horizon, patience: self.config.patience, extent: self.config.extent, workers, orders }
    }

    /// Checks `action` against the current state without applying it.
    pub fn validate(&self, action: &AssignmentAction) -> Result<()> {
        action.check_structure()?;
        for (w, o) in &action.pairs {
            let worker = self
                .workers
                .get(w.index())
                .ok_or_else(|| Error::Constraint(format!("unknown worker {}", w.0)))?;
            if !worker.is_available() {
                return Err(Error::Constraint(format!("worker {} is not available", w.0)));
            }
            let order = self.orders.get(o.index()).ok_or_else(|| Error::Constraint(format!("unknown order {}", o.0)))?;
            if order.status != OrderStatus::Requested {
                return Err(Error::Constraint(format!("order {} is not open", o.0)));
            }
        }
        for w in &action.rejecting {
            match self.workers.get(w.index()) {
                Some(worker) if worker.is_available() => {}
                _ => return Err(Error::Constraint(format!("rejecting worker {} is not available", w.0))),
            }
        }
        Ok(())
    }

    /// Applies `action`, advances one minute, cancels expired orders and
    /// reveals the next arrivals.
    pub fn step(&mut self, action: &AssignmentAction) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::Constraint(format!("episode already ended at step {}", self.now)));
        }
        self.validate(action)?;
        let now = f64::from(self.now);
        let mut breakdowns = vec![RewardBreakdown::none(); self.workers.len()];
        let mut events = Vec::new();

        for &(w, o) in &action.pairs {
            let worker = &self.workers[w.index()];
            let order = &self.orders[o.index()];
            let plan = best_insertion(worker, order, now, self.travel.as_ref());
            let reward = compute_reward(order, &plan, &self.config.reward, self.travel.as_ref())?;
            breakdowns[w.index()] = reward;

            let worker = &mut self.workers[w.index()];
            worker.route = plan.stops;
            worker.pickup_target = Some(o);
            let order = &mut self.orders[o.index()];
            order.status = OrderStatus::Assigned;
            order.assign_time = Some(now);
            order.worker = Some(w);
            events.push(Event { step: self.now, kind: EventKind::Assign, order: o, worker: Some(w), time: now });
        }

        self.advance(1.0, &mut events);
        self.now += 1;
        events.extend(self.expire_orders().into_iter().map(|o| Event {
            step: self.now,
            kind: EventKind::Cancel,
            order: o,
            worker: None,
            time: f64::from(self.now),
        }));
        self.reveal_arrivals();
        self.refresh_availability();

        let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
        let global_reward = rewards.iter().sum();
        self.total_reward += global_reward;
        self.events.extend(events.iter().cloned());
        Ok(StepOutcome { rewards, breakdowns, global_reward, events })
    }

    fn advance(&mut self, minutes: f64, events: &mut Vec<Event>) {
        let start = f64::from(self.now);
        for worker in &mut self.workers {
            for fired in advance_route(worker, minutes, self.travel.as_ref()) {
                let time = start + fired.elapsed;
                let order = &mut self.orders[fired.stop.order.index()];
                let kind = match fired.stop.kind {
                    StopKind::Pickup => {
                        order.status = OrderStatus::Onboard;
                        order.pickup_time = Some(time);
                        EventKind::Pickup
                    }
                    StopKind::Dropoff => {
                        order.status = OrderStatus::Delivered;
                        order.dropoff_time = Some(time);
                        EventKind::Dropoff
                    }
                };
                events.push(Event { step: self.now, kind, order: order.id, worker: Some(worker.id), time });
            }
        }
    }

    /// Cancels every open order that has waited longer than the patience.
    pub fn expire_orders(&mut self) -> Vec<OrderId> {
        let (now, patience) = (self.now, self.config.patience);
        let mut cancelled = Vec::new();
        for o in &mut self.orders {
            if o.status == OrderStatus::Requested && o.age(now) > patience {
                o.status = OrderStatus::Cancelled;
                cancelled.push(o.id);
            }
        }
        cancelled
    }

    fn reveal_arrivals(&mut self) {
        while let Some(r) = self.pending.front() {
            if r.request_time > self.now || r.request_time >= self.config.horizon {
                if r.request_time >= self.config.horizon {
                    self.pending.pop_front();
                    continue;
                }
                break;
            }
            let r = self.pending.pop_front().expect("front exists");
            let direct_time = self.travel.travel_time(r.origin, r.destination);
            let deadline =
                r.deadline.unwrap_or_else(|| synthesize_deadline(r.request_time, direct_time, self.config.patience));
            let id = OrderId(self.orders.len() as u32);
            self.orders.push(OrderState {
                id,
                origin: r.origin,
                destination: r.destination,
                request_time: r.request_time,
                deadline,
                assign_time: None,
                pickup_time: None,
                dropoff_time: None,
                direct_time,
                status: OrderStatus::Requested,
                worker: None,
            });
        }
    }

    fn refresh_availability(&mut self) {
        let now = f64::from(self.now);
        for w in &mut self.workers {
            w.available_at = if w.is_available() {
                now
            } else {
                let etas = stop_etas(w.location, &w.route, self.travel.as_ref());
                let idx = if w.pickup_target.is_some() {
                    w.route.iter().position(|s| s.kind == StopKind::Pickup)
                } else {
                    w.route.iter().position(|s| s.kind == StopKind::Dropoff)
                };
                now + idx.map(|i| etas[i]).unwrap_or(0.0)
            };
        }
    }

    /// Drives every vehicle until its route is empty, without new decisions,
    /// so in-flight orders get delivery times.
    pub fn drain(&mut self) {
        let mut events = Vec::new();
        let limit = 10_000;
        let mut guard = 0;
        while self.workers.iter().any(|w| !w.route.is_empty()) && guard < limit {
            self.advance(1.0, &mut events);
            self.now += 1;
            guard += 1;
        }
        self.events.extend(events);
    }

    pub fn metrics(&self) -> EpisodeMetrics {
        collect_metrics(&self.orders, self.total_reward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_worker_world(requests: Vec<OrderRequest>, reward: RewardParams) -> World {
        let cfg = WorldConfig { workers: 1, reward, ..Default::default() };
        let mut w = World::new(cfg, requests).unwrap();
        w.workers[0].location = Point::new(0.0, 0.0);
        w
    }

    fn req(t: u32, o: (f64, f64), d: (f64, f64)) -> OrderRequest {
        OrderRequest { request_time: t, origin: Point::new(o.0, o.1), destination: Point::new(d.0, d.1), deadline: None }
    }

    #[test]
    fn empty_step_advances_clock() {
        let mut w = World::new(WorldConfig { workers: 3, ..Default::default() }, vec![]).unwrap();
        let out = w.step(&AssignmentAction::empty()).unwrap();
        assert_eq!(out.global_reward, 0.0);
        assert_eq!(w.now(), 1);
    }

    #[test]
    fn single_assignment_reward_matches_formula() {
        // Trip of 8 km gives income 2 + 8 = 10; the worker starts on the
        // origin so the added distance is the trip itself; payout_per_km
        // chosen so payout is exactly 3.
        let reward = RewardParams {
            beta1: 1.0,
            beta2: 1.0,
            beta3: 1.0,
            beta4: 0.0,
            beta5: 0.0,
            fare_base: 2.0,
            fare_per_km: 1.0,
            payout_per_km: 3.0 / 8.0,
        };
        let mut w = one_worker_world(vec![req(0, (0.0, 0.0), (8.0, 0.0))], reward);
        let a = AssignmentAction::new(vec![(WorkerId(0), OrderId(0))], vec![]);
        let out = w.step(&a).unwrap();
        assert!((out.rewards[0] - 8.0).abs() < 1e-12);
        assert_eq!(out.global_reward, out.rewards[0]);
    }

    #[test]
    fn global_reward_is_sum_of_workers() {
        let cfg = WorldConfig { workers: 3, ..Default::default() };
        let reqs = vec![req(0, (1.0, 1.0), (5.0, 5.0)), req(0, (9.0, 9.0), (2.0, 7.0))];
        let mut w = World::new(cfg.clone(), reqs).unwrap();
        let a = AssignmentAction::new(vec![(WorkerId(0), OrderId(0)), (WorkerId(2), OrderId(1))], vec![WorkerId(1)]);
        let before = w.clone();
        let out = w.step(&a).unwrap();
        // Independent recomputation of each worker's reward.
        let mut expected = 0.0;
        for (wid, oid) in &a.pairs {
            let plan = best_insertion(&before.workers[wid.index()], &before.orders[oid.index()], 0.0, before.travel());
            let r = compute_reward(&before.orders[oid.index()], &plan, &cfg.reward, before.travel()).unwrap();
            assert_eq!(out.rewards[wid.index()], r.total);
            expected += r.total;
        }
        assert_eq!(out.rewards[1], 0.0);
        assert!((out.global_reward - expected).abs() < 1e-12);
    }

    #[test]
    fn invalid_actions_are_rejected() {
        let mut w = one_worker_world(vec![req(0, (5.0, 0.0), (6.0, 0.0)), req(0, (1.0, 0.0), (3.0, 0.0))], RewardParams::default());
        let unknown = AssignmentAction::new(vec![(WorkerId(5), OrderId(0))], vec![]);
        assert!(matches!(w.step(&unknown), Err(Error::Constraint(_))));
        let ok = AssignmentAction::new(vec![(WorkerId(0), OrderId(0))], vec![]);
        w.step(&ok).unwrap();
        // Worker is now en route to a pickup and cannot take another order.
        let busy = AssignmentAction::new(vec![(WorkerId(0), OrderId(1))], vec![]);
        assert!(matches!(w.step(&busy), Err(Error::Constraint(_))));
        let reassign = AssignmentAction::new(vec![(WorkerId(0), OrderId(0))], vec![]);
        assert!(w.step(&reassign).is_err());
    }

    #[test]
    fn patience_boundary() {
        let cfg = WorldConfig { workers: 1, patience: 5, ..Default::default() };
        let mut w = World::new(cfg, vec![req(0, (1.0, 0.0), (2.0, 0.0))]).unwrap();
        for _ in 0..5 {
            w.step(&AssignmentAction::empty()).unwrap();
        }
        // Age 5 at step 5: still open.
        assert_eq!(w.orders()[0].status, OrderStatus::Requested);
        w.step(&AssignmentAction::empty()).unwrap();
        assert_eq!(w.orders()[0].status, OrderStatus::Cancelled);
    }

    #[test]
    fn assigned_orders_never_expire() {
        let cfg = WorldConfig { workers: 1, patience: 5, ..Default::default() };
        let mut w = World::new(cfg, vec![req(0, (9.0, 9.0), (0.0, 0.0))]).unwrap();
        w.workers[0].location = Point::new(0.0, 0.0);
        w.step(&AssignmentAction::new(vec![(WorkerId(0), OrderId(0))], vec![])).unwrap();
        for _ in 0..9 {
            w.step(&AssignmentAction::empty()).unwrap();
        }
        assert!(w.expire_orders().is_empty());
        assert_ne!(w.orders()[0].status, OrderStatus::Cancelled);
    }

    #[test]
    fn order_is_picked_and_delivered() {
        let mut w = one_worker_world(vec![req(0, (1.0, 0.0), (3.0, 0.0))], RewardParams::default());
        w.step(&AssignmentAction::new(vec![(WorkerId(0), OrderId(0))], vec![])).unwrap();
        assert_eq!(w.orders()[0].status, OrderStatus::Onboard);
        assert_eq!(w.orders()[0].pickup_time, Some(1.0));
        w.step(&AssignmentAction::empty()).unwrap();
        w.step(&AssignmentAction::empty()).unwrap();
        let o = &w.orders()[0];
        assert_eq!(o.status, OrderStatus::Delivered);
        assert!((o.dropoff_time.unwrap() - 3.0).abs() < 1e-9);
        assert!(w.workers()[0].is_available());
    }

    #[test]
    fn deadline_synthesis_rule() {
        assert_eq!(synthesize_deadline(3, 4.2, 5), 3 + 7 + 5);
        assert_eq!(synthesize_deadline(0, 0.0, 5), 5);
    }

    #[test]
    fn stepping_past_horizon_fails() {
        let cfg = WorldConfig { workers: 1, horizon: 1, ..Default::default() };
        let mut w = World::new(cfg, vec![]).unwrap();
        w.step(&AssignmentAction::empty()).unwrap();
        assert!(w.is_done());
        assert!(w.step(&AssignmentAction::empty()).is_err());
    }
}
