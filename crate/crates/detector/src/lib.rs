//! A small anchor-free detector used to exercise the lateral inhibition module
//! end to end: backbone, optional LIM neck, per-level heads, loss, momentum
//! SGD, decoding with NMS, checkpoints.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decode;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod optim;
pub mod targets;
pub mod train;

pub use config::{parse_key_values, DetectorConfig, TrainConfig, Variant};
pub use data::{load_split, Dataset};
pub use decode::{decode_and_nms, nms, Detection};
pub use error::{Error, Result};
pub use loss::{detection_loss, detection_loss_op, LossBreakdown};
pub use model::{backbone_forward, Detector, Phase};
pub use optim::{sgd_update, Sgd};
pub use targets::{assign_targets, GtBox, Targets};
pub use train::{evaluate_model, train, EvalPoint, TrainReport};
