//! On-policy self-distillation for coordinate grounding, at desk scale.
//!
//! A small autoregressive policy reads a synthetic screen and an instruction
//! and emits a click as ten coordinate tokens. The same weights act as a
//! teacher when shown a privileged view of the screen (the target outlined,
//! the surroundings faded), and the student is trained to match the teacher
//! token by token along its own samples, with significance- and
//! confidence-weighted reverse KL. Supervised and group-relative policy
//! gradient baselines share the same environment, network, and optimizer.

pub mod baselines;
pub mod distill;
pub mod error;
pub mod lab;
pub mod policy;
pub mod privilege;
pub mod screens;
pub mod tokens;

pub use error::{Error, Result};
