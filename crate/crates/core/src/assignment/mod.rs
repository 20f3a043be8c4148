//! Bipartite assignment: value matrices, the two matching formulations,
//! exploration perturbations and action-space counting.

pub mod action;
pub mod action_space;
pub mod lsap;
pub mod matrix;
pub mod noise;
pub mod solve;

pub use action::AssignmentAction;
pub use action_space::{action_space_lower_bound, count_action_space};
pub use matrix::{write_matrix_csv, ProbabilityMatrix, QMatrix, UtilityMatrix};
pub use noise::{inject_exploration, perturb_probabilities, NoiseSpec};
pub use solve::{floored_ln, solve_stage1, solve_stage2, stage1_objective, stage2_objective, LOG_FLOOR};
