//! Scenarios, baseline policies and episode orchestration.

pub mod bench;
pub mod episode;
pub mod policies;
pub mod scenario;

pub use bench::{match_bench, random_probabilities, MatchBench};
pub use episode::{evaluate, mean_reward, mean_served, run_episode, write_metrics_csv, EpisodeRecord, METRICS_HEADER};
pub use policies::{GreedyNearest, Policy, RandomPolicy, Stage1Policy, Stage2Policy};
pub use scenario::{
    episode_seed, load_trip_csv, parse_trip_csv, synth_scenario, Hotspot, ScenarioSpec, TripSource, DESK_SCENARIO,
};
