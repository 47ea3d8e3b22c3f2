//! Multi-agent attention network for play trajectories and play types.
//!
//! Objects are embedded independently, mixed by self-attention within each
//! play, then decoded either into future velocities or into a play-type
//! distribution. Gradients come from a small reverse-mode tape.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;
pub mod train;

pub use config::NetsConfig;
pub use model::{HeadKind, Nets};
