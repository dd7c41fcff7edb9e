//! Recurrent networks from first principles: a canonical RNN, the Vanilla
//! LSTM and an Augmented LSTM, each with an explicit backpropagation-through-time
//! pass, gradient-flow diagnostics and finite-difference gradient checks.

pub mod bptt;
pub mod checkpoint;
pub mod diagnostics;
pub mod error;
pub mod lstm_augmented;
pub mod lstm_vanilla;
pub mod numerics;
pub mod params;
pub mod reference;
pub mod rnn_cells;
pub mod segmentation;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{gc, gc_prime, gd, gd_prime, Matrix, Vector};
pub use params::Parameters;
