//! Two-way semantic image transmission without inter-node feedback.
//!
//! Two nodes each hold a convolutional transceiver and a conditional GAN
//! channel surrogate. Receivers and surrogates are trained over the real
//! (reciprocal) channel; transmitters are trained locally through the
//! surrogate, so no gradient ever crosses the link.

pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod sp_cgan;
pub mod tensor;
pub mod training;
pub mod transceiver;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub use config::{ChannelKind, ExperimentConfig, Execution, LossMode, SystemKind};
pub use data::{Dataset, ImageBatch, ImageSet};
pub use metrics::{Direction, MetricTable, Psnr};
pub use training::{train_system, Observer, TrainRun};
pub use transceiver::{NodeId, SymbolBlock, TransceiverArch};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type TrainRun32 = TrainRun<f32>;
pub type TrainRun64 = TrainRun<f64>;
pub type Transceiver32 = transceiver::Transceiver<f32>;
pub type Transceiver64 = transceiver::Transceiver<f64>;
pub type ChannelSurrogate32 = sp_cgan::ChannelSurrogate<f32>;
pub type ChannelSurrogate64 = sp_cgan::ChannelSurrogate<f64>;
