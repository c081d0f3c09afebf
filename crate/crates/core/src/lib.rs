pub mod data;
pub mod error;
pub mod eval;
pub mod coordination;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod reliability;
pub mod rng;
pub mod trainer;

pub use coordination::CoordinationPlan;
pub use data::{DomainDataset, TargetDomain};
pub use error::{Error, Result};
pub use eval::ExperimentConfig;
pub use nn::Matrix;
pub use reliability::ReliabilityTable;
pub use rng::RngStream;
pub use trainer::{CepcModel, TrainConfig};
