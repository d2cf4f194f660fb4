//! Minimal recurrent network: LSTM layers, a linear dense head, dropout,
//! three objectives, backpropagation through time and Adam.

mod adam;
mod io;
mod loss;
mod lstm;
mod network;

pub use adam::{adam_step, AdamState};
pub use io::{ModelFile, MODEL_FORMAT, MODEL_VERSION};
pub use loss::{evt_loss, mse_loss, svdd_loss, LossKind, LossSpec};
pub use lstm::{lstm_cell_step, LstmLayerParams};
pub use network::{DenseParams, ForwardCache, Gradients, Mode, Network};
