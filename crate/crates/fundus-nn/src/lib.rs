//! Minimal CPU neural-network building blocks with hand-written backprop.
//!
//! Everything here is deterministic: weight init, dropout and data order are
//! driven by explicit seeds, and all reductions run in a fixed order, so two
//! runs with the same seeds produce bitwise-identical results. Tensors are
//! `ndarray` arrays in NCHW layout, f32 throughout; losses accumulate in f64.

pub mod adam;
pub mod blocks;
pub mod checkpoint;
pub mod conv;
pub mod dropout;
pub mod gradcheck;
pub mod init;
pub mod layer;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod param;
pub mod pool;
pub mod schedule;

pub use adam::Adam;
pub use blocks::{conv_block, Residual, SkipAdd};
pub use checkpoint::{load_checkpoint, load_checkpoint_partial, save_checkpoint};
pub use conv::Conv2d;
pub use dropout::SpatialDropout2d;
pub use layer::{Activation, Layer, Sequential};
pub use linear::Linear;
pub use norm::{BatchNorm2d, InstanceNorm2d};
pub use param::{restore_params, snapshot_params, Param, ParamSource};
pub use pool::{global_avg_pool, global_avg_pool_backward, AvgPool3x3, MaxPool2d, Upsample2x};
pub use schedule::{EarlyStopping, StepDecay};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("checkpoint io error at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {msg}")]
    Format { path: std::path::PathBuf, msg: String },
    #[error("parameter mismatch for `{name}`: {msg}")]
    ParamMismatch { name: String, msg: String },
    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },
}
