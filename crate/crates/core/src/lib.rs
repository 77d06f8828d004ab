//! Core algorithms for radiation-degraded imagery: deterministic noise
//! simulation, a from-scratch autodiff tensor library, a dual-head
//! denoise + super-resolution network, image quality metrics, detection
//! evaluation, and bounding-box analytics.

pub mod analytics;
pub mod annotations;
pub mod detect;
pub mod error;
pub mod graph;
pub mod image;
pub mod imageio;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod ops;
pub mod rng;
pub mod sgd;
pub mod tensor;
pub mod train;

pub use analytics::{diagonal, flag_anomalies, quartiles, AnomalyResult, CalibrationScale, DEFAULT_IQR_K};
pub use annotations::{parse_detections, parse_ground_truths, AnnotationRecord};
pub use detect::{evaluate, BBox, Detection, EvalReport, GroundTruth};
pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use image::Image;
pub use imageio::{load_image, save_image};
pub use metrics::{distance_d, metric_report, psnr, schedule_weights, ssim, LossWeights, MetricReport};
pub use model::{build, infer, Checkpoint, DdsrNet, ModelConfig};
pub use noise::{NoiseKind, NoiseParams};
pub use tensor::{Scalar, Shape, Tensor};
pub use train::{train, EpochLog, TrainConfig, TrainOutcome};
