use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sim::types::{OrderId, WorkerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Assign,
    Pickup,
    Dropoff,
    Cancel,
}

/// One entry of the append-only episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: u32,
    pub kind: EventKind,
    pub order: OrderId,
    pub worker: Option<WorkerId>,
    /// Simulated minute at which the event happened.
    pub time: f64,
}

#[derive(Serialize)]
struct EventRow {
    step: u32,
    kind: EventKind,
    order: u32,
    worker: Option<u32>,
    time: f64,
}

/// Writes events as CSV with header `step,kind,order,worker,time`.
pub fn write_events_csv<W: Write>(events: &[Event], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in events {
        w.serialize(EventRow { step: e.step, kind: e.kind, order: e.order.0, worker: e.worker.map(|w| w.0), time: e.time })?;
    }
    w.flush()?;
    Ok(())
}
