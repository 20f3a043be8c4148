use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::routing::{RoutePlan, TravelModel};
use crate::sim::types::OrderState;

/// Weights and fare terms of the per-worker reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    /// Constant bonus per accepted order.
    pub beta1: f64,
    /// Weight on customer income.
    pub beta2: f64,
    /// Weight on worker payout.
    pub beta3: f64,
    /// Penalty per order projected to miss its deadline.
    pub beta4: f64,
    /// Penalty per minute of extra travel imposed on orders already planned.
    pub beta5: f64,
    pub fare_base: f64,
    pub fare_per_km: f64,
    pub payout_per_km: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            beta1: 1.0,
            beta2: 1.0,
            beta3: 1.0,
            beta4: 2.0,
            beta5: 0.1,
            fare_base: 2.0,
            fare_per_km: 1.0,
            payout_per_km: 0.6,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.beta1,
            self.beta2,
            self.beta3,
            self.beta4,
            self.beta5,
            self.fare_base,
            self.fare_per_km,
            self.payout_per_km,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("reward weights and fares must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Reward of an accepted order from its components.
    pub fn total(&self, income: f64, payout: f64, overdue: usize, added_time: f64) -> f64 {
        self.beta1 + self.beta2 * income - self.beta3 * payout - self.beta4 * overdue as f64 - self.beta5 * added_time
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub income: f64,
    pub payout: f64,
    pub overdue: usize,
    pub added_time: f64,
    pub total: f64,
}

impl RewardBreakdown {
    /// A worker that received no order earns nothing.
    pub fn none() -> Self {
        Self::default()
    }
}

/// Scores assigning `order` along the planned `insertion`.
pub fn compute_reward(
    order: &OrderState,
    insertion: &RoutePlan,
    params: &RewardParams,
    travel: &dyn TravelModel,
) -> Result<RewardBreakdown> {
    if !insertion.feasible {
        return Err(Error::Constraint(format!("infeasible insertion for order {}", order.id.0)));
    }
    let income = params.fare_base + params.fare_per_km * travel.distance(order.origin, order.destination);
    let payout = params.payout_per_km * insertion.added_distance;
    let overdue = insertion.chi;
    let added_time = insertion.rho;
    Ok(RewardBreakdown { income, payout, overdue, added_time, total: params.total(income, payout, overdue, added_time) })
}
