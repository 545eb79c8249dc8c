//! Coarse-to-fine training of a deeply supervised convolutional network for
//! facial landmark regression.
//!
//! * [`tensor`]: dense tensors and a reverse-mode gradient tape.
//! * [`network`]: the four-block network with supervisory head pairs.
//! * [`loss`]: dual-subset inter-ocular-normalized losses.
//! * [`trainer`]: staged λ schedule, SGD with momentum, and the direct baseline.
//! * [`data`]: annotations, augmentation, cropping and a synthetic face generator.
//! * [`eval`]: normalized mean error reports and run comparison.
//! * [`run`]: dataset resolution and complete training runs for the CLI.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod network;
pub mod par;
pub mod run;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
