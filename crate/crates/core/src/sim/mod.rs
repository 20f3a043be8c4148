//! Discrete-time ride-pooling world.

pub mod events;
pub mod metrics;
pub mod observe;
pub mod reward;
pub mod types;
pub mod world;

pub use events::{write_events_csv, Event, EventKind};
pub use metrics::{collect_metrics, EpisodeMetrics};
pub use observe::{Observation, OrderView, WorkerView};
pub use reward::{compute_reward, RewardBreakdown, RewardParams};
pub use types::{OrderId, OrderState, OrderStatus, WorkerId, WorkerState};
pub use world::{synthesize_deadline, OrderRequest, StepOutcome, World, WorldConfig};
