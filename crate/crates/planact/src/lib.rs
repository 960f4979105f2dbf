//! Coarse-to-fine language-conditioned tabletop manipulation stack.
//!
//! A frozen seq2seq backbone with tunable soft prompts plans "action
//! language" skill sentences from (instruction, depth, tactile) states; a
//! PPO-trained discrete policy executes each skill as gripper actions in a
//! deterministic symbolic simulator; a closed-loop executor composes the two
//! and an evaluation harness measures plan/task success.

pub mod coarse;
pub mod domain;
pub mod episode;
pub mod error;
pub mod eval;
pub mod fine;
pub mod nn;
pub mod scalar;
pub mod corpus;
pub mod sim;

pub use error::{Error, Result};

/// Scalar type used for training and evaluation. Gradient-fidelity tests
/// instantiate the same generic code with `f64`.
pub type Real = f32;
