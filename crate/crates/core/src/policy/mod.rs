//! Small differentiable autoregressive policy over coordinate tokens.
//!
//! The same network plays student and teacher; only the observation differs.
//! Gradients are computed by hand and checked against finite differences in
//! [`gradcheck`].

pub mod distribution;
pub mod gradcheck;
pub mod network;
pub mod optim;
pub mod params;
pub mod teacher;

pub use distribution::{Categorical, PROB_FLOOR};
pub use gradcheck::{grad_check, grad_check_active, LossEvaluator};
pub use network::{
    backward, forward_step, greedy_trajectory, sample_trajectory, teacher_forced, Logits,
    Observation, TrajectoryPass,
};
pub use optim::{optimizer_step, AdamState, LrSchedule};
pub use params::{Architecture, Gradients, Layout, PolicyParams};
pub use teacher::{ema_update, teacher_distributions, TeacherMode};
