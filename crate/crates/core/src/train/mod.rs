//! Two-stage training: independent double Q-learning of the encoders and
//! scoring head, then centralized fine-tuning with twin critics and a
//! delayed policy-gradient actor.

pub mod checks;
pub mod config;
pub mod log;
pub mod replay;
pub mod stage1;
pub mod stage2;

pub use checks::composed_loss_checks;
pub use config::{Stage1Config, Stage2Config};
pub use log::{write_train_log_csv, TrainLog};
pub use replay::{ReplayBuffer, WarmingUp};
pub use stage1::{ddqn_loss, ddqn_loss_var, ddqn_targets, double_q_target, stage1_train, AgentTransition, LossStep, Stage1Report};
pub use stage2::{
    actor_due, actor_loss, actor_loss_var, critic_loss, critic_loss_var, critic_target, critic_targets, critic_values,
    select_action, stage2_train, GlobalTransition, Stage2Report,
};

/// Elasticity `x z'(x) / z(x)` of a differentiable positive function,
/// by central differences.
pub fn elasticity(z: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1e-3);
    x * (z(x + h) - z(x - h)) / (2.0 * h) / z(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_elasticity_is_its_exponent() {
        for &(a, b) in &[(2.0, 0.5), (0.3, 1.7), (5.0, 3.0)] {
            for &x in &[0.1, 1.0, 7.5] {
                let e = elasticity(|v: f64| a * v.powf(b), x);
                assert!((e - b).abs() < 1e-6, "a={a} b={b} x={x}: {e}");
            }
        }
    }
}
