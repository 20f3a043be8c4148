use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::types::{OrderId, WorkerId};

/// A joint dispatch decision: matched pairs plus available workers that
/// explicitly chose no order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssignmentAction {
    /// Sorted by worker id.
    pub pairs: Vec<(WorkerId, OrderId)>,
    /// Sorted.
    pub rejecting: Vec<WorkerId>,
}

impl AssignmentAction {
    pub fn new(mut pairs: Vec<(WorkerId, OrderId)>, mut rejecting: Vec<WorkerId>) -> Self {
        pairs.sort();
        rejecting.sort();
        Self { pairs, rejecting }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn order_for(&self, worker: WorkerId) -> Option<OrderId> {
        self.pairs.iter().find(|(w, _)| *w == worker).map(|(_, o)| *o)
    }

    /// Checks the matching structure: every worker and order used at most
    /// once, and no worker both matched and rejecting.
    pub fn check_structure(&self) -> Result<()> {
        let mut workers = BTreeSet::new();
        let mut orders = BTreeSet::new();
        for (w, o) in &self.pairs {
            if !workers.insert(*w) {
                return Err(Error::Constraint(format!("worker {} matched twice", w.0)));
            }
            if !orders.insert(*o) {
                return Err(Error::Constraint(format!("order {} matched twice", o.0)));
            }
        }
        for w in &self.rejecting {
            if !workers.insert(*w) {
                return Err(Error::Constraint(format!("worker {} both matched and rejecting", w.0)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structure_checks() {
        let ok = AssignmentAction::new(vec![(WorkerId(1), OrderId(0)), (WorkerId(0), OrderId(2))], vec![WorkerId(3)]);
        assert!(ok.check_structure().is_ok());
        assert_eq!(ok.pairs[0].0, WorkerId(0));
        assert_eq!(ok.order_for(WorkerId(1)), Some(OrderId(0)));

        let dup_order = AssignmentAction::new(vec![(WorkerId(1), OrderId(0)), (WorkerId(0), OrderId(0))], vec![]);
        assert!(dup_order.check_structure().is_err());
        let both = AssignmentAction::new(vec![(WorkerId(1), OrderId(0))], vec![WorkerId(1)]);
        assert!(both.check_structure().is_err());
    }
}
