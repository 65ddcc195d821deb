//! Small neural-network engine: dense and LSTM layers with exact analytic
//! gradients, softmax, SGD/Adam, finite-difference gradient checking and
//! checkpoints.

mod checkpoint;
mod dense;
mod gradcheck;
mod lstm;
pub mod ops;
mod optim;
mod params;
mod softmax;

pub use checkpoint::{load_into, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::{Activation, Dense, DenseCache};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport};
pub use lstm::{Lstm, LstmState, LstmStepCache};
pub use optim::{sgd_update, Adam, AdamConfig};
pub use params::{Block, Gradients, NetworkParams, ParamId};
pub use softmax::{softmax, softmax_backward};
