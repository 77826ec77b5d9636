//! Small dense networks with exact reverse-mode gradients, Adam, and step decay.

mod adam;
mod mlp;

pub use adam::{adam_step, lr_at, AdamState, LrSchedule};
pub use mlp::{sigmoid, Activation, Mlp, MlpTape};
