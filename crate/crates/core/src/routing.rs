//! Travel-time model and exact pickup-and-delivery route insertion.
//!
//! Routes are short (a vehicle holds at most a handful of passengers), so
//! insertion enumerates every precedence- and capacity-feasible stop order
//! with a depth-first search instead of using a heuristic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::Point;
use crate::sim::types::{OrderId, OrderState, WorkerState};

/// Source of point-to-point travel times and distances.
pub trait TravelModel: Send + Sync {
    /// Travel time in minutes.
    fn travel_time(&self, a: Point, b: Point) -> f64;
    /// Driven distance in kilometres.
    fn distance(&self, a: Point, b: Point) -> f64;
}

/// Straight-line travel at constant speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Euclidean {
    pub speed_kmh: f64,
}

impl Default for Euclidean {
    fn default() -> Self {
        Self { speed_kmh: 60.0 }
    }
}

impl TravelModel for Euclidean {
    fn travel_time(&self, a: Point, b: Point) -> f64 {
        a.distance(b) / self.speed_kmh * 60.0
    }

    fn distance(&self, a: Point, b: Point) -> f64 {
        a.distance(b)
    }
}

/// Table-driven travel model over a fixed set of locations, for ingested
/// datasets with precomputed road times. Points that are not in the table
/// fall back to the wrapped model.
#[derive(Debug, Clone)]
pub struct TableTravel<F> {
    points: Vec<Point>,
    minutes: Vec<f64>,
    km: Vec<f64>,
    fallback: F,
}

impl<F: TravelModel> TableTravel<F> {
    /// `minutes` and `km` are row-major `points.len()^2` matrices.
    pub fn new(points: Vec<Point>, minutes: Vec<f64>, km: Vec<f64>, fallback: F) -> Option<Self> {
        let n = points.len();
        (minutes.len() == n * n && km.len() == n * n).then_some(Self { points, minutes, km, fallback })
    }

    fn lookup(&self, p: Point) -> Option<usize> {
        self.points.iter().position(|q| *q == p)
    }
}

impl<F: TravelModel> TravelModel for TableTravel<F> {
    fn travel_time(&self, a: Point, b: Point) -> f64 {
        match (self.lookup(a), self.lookup(b)) {
            (Some(i), Some(j)) => self.minutes[i * self.points.len() + j],
            _ => self.fallback.travel_time(a, b),
        }
    }

    fn distance(&self, a: Point, b: Point) -> f64 {
        match (self.lookup(a), self.lookup(b)) {
            (Some(i), Some(j)) => self.km[i * self.points.len() + j],
            _ => self.fallback.distance(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopKind {
    Pickup,
    Dropoff,
}

/// One planned stop. `deadline` is the order's scheduled arrival minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub kind: StopKind,
    pub order: OrderId,
    pub point: Point,
    pub deadline: f64,
}

/// Result of inserting an order into a worker's route.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoutePlan {
    pub stops: Vec<Stop>,
    /// Duration of the new route from the worker's current location, minutes.
    pub total_duration: f64,
    /// Duration of the best route over the existing stops only.
    pub previous_duration: f64,
    /// Minutes from now until each order in the route is dropped off.
    pub per_order_eta: BTreeMap<OrderId, f64>,
    /// Minutes from now until the new order is picked up.
    pub pickup_eta: f64,
    pub added_duration: f64,
    pub added_distance: f64,
    /// Net extra delivery time of the previously planned orders.
    pub rho: f64,
    /// Orders (existing and new) projected to arrive after their deadline.
    pub chi: usize,
    pub feasible: bool,
}

impl RoutePlan {
    pub fn infeasible() -> Self {
        Self::default()
    }
}

/// Exact minimum-duration ordering of `stops` starting at `start` with
/// `load` passengers aboard. Returns `None` when no ordering respects
/// precedence and capacity.
pub fn optimal_route(
    start: Point,
    load: usize,
    capacity: usize,
    stops: &[Stop],
    travel: &dyn TravelModel,
) -> Option<(Vec<Stop>, f64)> {
    let mut search = RouteSearch {
        stops,
        capacity,
        travel,
        used: vec![false; stops.len()],
        path: Vec::with_capacity(stops.len()),
        best: None,
    };
    search.dfs(start, load, 0.0);
    search.best.map(|(order, duration)| (order.into_iter().map(|i| stops[i]).collect(), duration))
}

struct RouteSearch<'a> {
    stops: &'a [Stop],
    capacity: usize,
    travel: &'a dyn TravelModel,
    used: Vec<bool>,
    path: Vec<usize>,
    best: Option<(Vec<usize>, f64)>,
}

impl RouteSearch<'_> {
    fn dfs(&mut self, at: Point, load: usize, elapsed: f64) {
        if let Some((_, best)) = &self.best {
            if elapsed >= *best {
                return;
            }
        }
        if self.path.len() == self.stops.len() {
            self.best = Some((self.path.clone(), elapsed));
            return;
        }
        for i in 0..self.stops.len() {
            if self.used[i] {
                continue;
            }
            let stop = self.stops[i];
            let next_load = match stop.kind {
                StopKind::Pickup => {
                    if load + 1 > self.capacity {
                        continue;
                    }
                    load + 1
                }
                StopKind::Dropoff => {
                    // The matching pickup, if it is part of this route, must come first.
                    let pending_pickup = self.stops.iter().enumerate().any(|(k, s)| {
                        !self.used[k] && s.kind == StopKind::Pickup && s.order == stop.order
                    });
                    if pending_pickup {
                        continue;
                    }
                    load.saturating_sub(1)
                }
            };
            self.used[i] = true;
            self.path.push(i);
            let leg = self.travel.travel_time(at, stop.point);
            self.dfs(stop.point, next_load, elapsed + leg);
            self.path.pop();
            self.used[i] = false;
        }
    }
}

/// Minutes from `start` until each stop of `route` is reached.
pub fn stop_etas(start: Point, route: &[Stop], travel: &dyn TravelModel) -> Vec<f64> {
    let mut at = start;
    let mut t = 0.0;
    route
        .iter()
        .map(|s| {
            t += travel.travel_time(at, s.point);
            at = s.point;
            t
        })
        .collect()
}

fn route_distance(start: Point, route: &[Stop], travel: &dyn TravelModel) -> f64 {
    let mut at = start;
    route
        .iter()
        .map(|s| {
            let d = travel.distance(at, s.point);
            at = s.point;
            d
        })
        .sum()
}

fn dropoff_etas(start: Point, route: &[Stop], travel: &dyn TravelModel) -> BTreeMap<OrderId, f64> {
    route
        .iter()
        .zip(stop_etas(start, route, travel))
        .filter(|(s, _)| s.kind == StopKind::Dropoff)
        .map(|(s, eta)| (s.order, eta))
        .collect()
}

/// Best insertion of `order` into an available worker's route at minute `now`.
///
/// Both the old and the new route are re-optimized exactly from the worker's
/// current position, so `added_duration` is never negative under a metric
/// travel model.
pub fn best_insertion(
    worker: &WorkerState,
    order: &OrderState,
    now: f64,
    travel: &dyn TravelModel,
) -> RoutePlan {
    if !worker.is_available() {
        return RoutePlan::infeasible();
    }
    let load = worker.onboard.len();
    let Some((old_route, old_duration)) =
        optimal_route(worker.location, load, worker.capacity, &worker.route, travel)
    else {
        return RoutePlan::infeasible();
    };

    let deadline = f64::from(order.deadline);
    let mut stops = worker.route.clone();
    stops.push(Stop { kind: StopKind::Pickup, order: order.id, point: order.origin, deadline });
    stops.push(Stop { kind: StopKind::Dropoff, order: order.id, point: order.destination, deadline });
    let Some((new_route, new_duration)) =
        optimal_route(worker.location, load, worker.capacity, &stops, travel)
    else {
        return RoutePlan::infeasible();
    };

    let old_etas = dropoff_etas(worker.location, &old_route, travel);
    let new_etas = dropoff_etas(worker.location, &new_route, travel);
    let rho = old_etas.iter().map(|(id, old)| new_etas[id] - old).sum();
    let chi = new_route
        .iter()
        .filter(|s| s.kind == StopKind::Dropoff && now + new_etas[&s.order] > s.deadline)
        .count();
    let pickup_eta = new_route
        .iter()
        .zip(stop_etas(worker.location, &new_route, travel))
        .find(|(s, _)| s.kind == StopKind::Pickup && s.order == order.id)
        .map(|(_, eta)| eta)
        .unwrap_or(0.0);
    let added_distance = route_distance(worker.location, &new_route, travel)
        - route_distance(worker.location, &old_route, travel);

    RoutePlan {
        stops: new_route,
        total_duration: new_duration,
        previous_duration: old_duration,
        per_order_eta: new_etas,
        pickup_eta,
        added_duration: new_duration - old_duration,
        added_distance: added_distance.max(0.0),
        rho,
        chi,
        feasible: true,
    }
}

/// A stop reached while advancing, `elapsed` minutes into the advance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiredStop {
    pub stop: Stop,
    pub elapsed: f64,
}

const ARRIVAL_EPS: f64 = 1e-9;

/// Moves the worker along its route for `minutes`, firing every stop reached.
///
/// Pickups move the order from `pickup_target` into `onboard`; dropoffs remove
/// it from `onboard`. A worker stopped part-way along a leg sits at the
/// interpolated point, so the remaining leg time is preserved.
pub fn advance_route(worker: &mut WorkerState, minutes: f64, travel: &dyn TravelModel) -> Vec<FiredStop> {
    let mut fired = Vec::new();
    let mut elapsed = 0.0;
    while let Some(&next) = worker.route.first() {
        let remaining = minutes - elapsed;
        let leg = travel.travel_time(worker.location, next.point);
        if leg <= remaining + ARRIVAL_EPS {
            elapsed += leg;
            worker.location = next.point;
            worker.route.remove(0);
            match next.kind {
                StopKind::Pickup => {
                    if worker.pickup_target == Some(next.order) {
                        worker.pickup_target = None;
                    }
                    worker.onboard.push(next.order);
                }
                StopKind::Dropoff => worker.onboard.retain(|o| *o != next.order),
            }
            fired.push(FiredStop { stop: next, elapsed: elapsed.min(minutes) });
        } else {
            if remaining > 0.0 {
                worker.location = worker.location.lerp(next.point, remaining / leg);
            }
            break;
        }
    }
    fired
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::types::{OrderStatus, WorkerId};

    fn order(id: u32, origin: Point, destination: Point, deadline: u32) -> OrderState {
        OrderState {
            id: OrderId(id),
            origin,
            destination,
            request_time: 0,
            deadline,
            assign_time: None,
            pickup_time: None,
            dropoff_time: None,
            direct_time: origin.distance(destination),
            status: OrderStatus::Requested,
            worker: None,
        }
    }

    fn dropoff(id: u32, point: Point, deadline: f64) -> Stop {
        Stop { kind: StopKind::Dropoff, order: OrderId(id), point, deadline }
    }

    #[test]
    fn travel_time_basics() {
        let t = Euclidean::default();
        let a = Point::new(1.0, 1.0);
        assert_eq!(t.travel_time(a, a), 0.0);
        assert!((t.travel_time(Point::new(0.0, 0.0), Point::new(1.0, 0.0)) - 1.0).abs() < 1e-12);
        let (p, q, r) = (Point::new(0.0, 0.0), Point::new(3.0, 0.0), Point::new(3.0, 4.0));
        assert!(t.travel_time(p, r) <= t.travel_time(p, q) + t.travel_time(q, r));
        assert!((t.travel_time(p, r) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn single_order_on_empty_route() {
        let travel = Euclidean::default();
        let w = WorkerState::new(WorkerId(0), Point::new(0.0, 0.0), 3);
        let o = order(0, Point::new(2.0, 0.0), Point::new(2.0, 5.0), 100);
        let plan = best_insertion(&w, &o, 0.0, &travel);
        assert!(plan.feasible);
        assert_eq!(plan.stops.len(), 2);
        assert_eq!(plan.stops[0].kind, StopKind::Pickup);
        assert_eq!(plan.stops[1].kind, StopKind::Dropoff);
        assert!((plan.total_duration - 7.0).abs() < 1e-12);
        assert!((plan.added_duration - 7.0).abs() < 1e-12);
        assert_eq!(plan.rho, 0.0);
        assert_eq!(plan.chi, 0);
        assert!((plan.pickup_eta - 2.0).abs() < 1e-12);
    }

    #[test]
    fn late_new_order_counts_in_chi() {
        let travel = Euclidean::default();
        let w = WorkerState::new(WorkerId(0), Point::new(0.0, 0.0), 3);
        let o = order(0, Point::new(2.0, 0.0), Point::new(2.0, 5.0), 6);
        let plan = best_insertion(&w, &o, 0.0, &travel);
        assert_eq!(plan.chi, 1);
    }

    #[test]
    fn full_or_busy_worker_is_infeasible() {
        let travel = Euclidean::default();
        let mut w = WorkerState::new(WorkerId(0), Point::new(0.0, 0.0), 1);
        w.onboard.push(OrderId(9));
        w.route.push(dropoff(9, Point::new(1.0, 0.0), 50.0));
        let o = order(0, Point::new(2.0, 0.0), Point::new(2.0, 5.0), 100);
        assert!(!best_insertion(&w, &o, 0.0, &travel).feasible);

        let mut busy = WorkerState::new(WorkerId(1), Point::new(0.0, 0.0), 3);
        busy.pickup_target = Some(OrderId(3));
        assert!(!best_insertion(&busy, &o, 0.0, &travel).feasible);
    }

    #[test]
    fn onboard_detour_gives_positive_rho() {
        let travel = Euclidean::default();
        let mut w = WorkerState::new(WorkerId(0), Point::new(0.0, 0.0), 3);
        w.onboard.push(OrderId(7));
        w.route.push(dropoff(7, Point::new(4.0, 0.0), 100.0));
        // New order sits beside the existing leg: best plan serves it on the way.
        let o = order(1, Point::new(1.0, 1.0), Point::new(3.0, 1.0), 100);
        let plan = best_insertion(&w, &o, 0.0, &travel);
        assert!(plan.feasible);
        assert_eq!(plan.stops.len(), 3);
        assert!(plan.rho > 0.0);
        assert!((plan.previous_duration - 4.0).abs() < 1e-12);
        assert!(plan.added_duration >= 0.0);
    }

    #[test]
    fn advance_half_leg() {
        let travel = Euclidean::default();
        let mut w = WorkerState::new(WorkerId(0), Point::new(0.0, 0.0), 3);
        w.onboard.push(OrderId(1));
        w.route.push(dropoff(1, Point::new(2.0, 0.0), 10.0));
        let fired = advance_route(&mut w, 1.0, &travel);
        assert!(fired.is_empty());
        assert!((w.location.x - 1.0).abs() < 1e-12);
        assert_eq!(w.onboard.len(), 1);

        let fired = advance_route(&mut w, 1.0, &travel);
        assert_eq!(fired.len(), 1);
        assert!(w.onboard.is_empty());
        assert!(w.route.is_empty());
    }

    #[test]
    fn advance_fires_pickup_then_dropoff() {
        let travel = Euclidean::default();
        let mut w = WorkerState::new(WorkerId(0), Point::new(0.0, 0.0), 3);
        let o = order(4, Point::new(1.0, 0.0), Point::new(1.0, 2.0), 100);
        let plan = best_insertion(&w, &o, 0.0, &travel);
        w.route = plan.stops;
        w.pickup_target = Some(o.id);
        let fired = advance_route(&mut w, 1.5, &travel);
        assert_eq!(fired.len(), 1);
        assert_eq!(fired[0].stop.kind, StopKind::Pickup);
        assert!((fired[0].elapsed - 1.0).abs() < 1e-12);
        assert_eq!(w.onboard, vec![OrderId(4)]);
        assert!(w.pickup_target.is_none());
        // Remaining leg time: 2 minutes total, 0.5 already driven.
        let rest: f64 = stop_etas(w.location, &w.route, &travel).last().copied().unwrap();
        assert!((rest - 1.5).abs() < 1e-12);
    }

    #[test]
    fn advance_by_total_duration_empties_route() {
        let travel = Euclidean::default();
        let mut w = WorkerState::new(WorkerId(0), Point::new(0.0, 0.0), 3);
        w.onboard = vec![OrderId(1), OrderId(2)];
        w.route = vec![dropoff(1, Point::new(3.0, 0.0), 99.0), dropoff(2, Point::new(3.0, 4.0), 99.0)];
        let total = stop_etas(w.location, &w.route, &travel).last().copied().unwrap();
        assert!((total - 7.0).abs() < 1e-12);
        let fired = advance_route(&mut w, total, &travel);
        assert_eq!(fired.len(), 2);
        assert!(w.route.is_empty());
        assert_eq!(w.location, Point::new(3.0, 4.0));
    }

    #[test]
    fn table_travel_falls_back() {
        let pts = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)];
        let t = TableTravel::new(pts.clone(), vec![0.0, 3.0, 3.0, 0.0], vec![0.0, 2.0, 2.0, 0.0], Euclidean::default())
            .unwrap();
        assert_eq!(t.travel_time(pts[0], pts[1]), 3.0);
        assert_eq!(t.distance(pts[0], pts[1]), 2.0);
        assert!((t.travel_time(pts[0], Point::new(0.0, 2.0)) - 2.0).abs() < 1e-12);
    }
}
