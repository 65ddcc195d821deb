pub mod arm_osc;
pub mod error;
pub mod estimator;
pub mod explorer;
pub mod identifiability;
pub mod interaction;
pub mod meta;
pub mod neural;
pub mod scalar;
pub mod seeding;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ChainModel = sim::ChainModel<f64>;
pub type ChainState = sim::ChainState<f64>;
