//! Minimal differentiable network engine: flatten-and-project preprocessing,
//! MLP trunk with an LSTM layer, reverse-mode gradients, Adam, and slow
//! target-network blending.

mod adam;
mod checkpoint;
mod net;
mod params;
#[cfg(test)]
mod tests;

pub use adam::{adam_step, polyak_update, OptState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{load_opt_state, load_params, save_opt_state, save_params};
pub use net::{backward, forward, Frame, HiddenState, SeqInput, Tape};
pub use params::{InputSpec, NetworkParams, NetworkSpec, ParamRecord};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("tape does not match this spec/batch: {0}")]
    Tape(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("checkpoint spec hash {found:#x} does not match expected {expected:#x}")]
    SpecHash { expected: u64, found: u64 },
}
