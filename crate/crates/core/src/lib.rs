//! Amodal detection and tracking toolkit.
//!
//! * [`geometry`]: box arithmetic, visibility, workspace clipping, deltas.
//! * [`dataset`]: annotation model, I/O, validation, statistics.
//! * [`metrics`]: occlusion-stratified federated AP and Track-AP.
//! * [`tracker`]: Kalman-filter tracker that coasts through occlusion.
//! * [`pno`]: PasteNOcclude synthetic-occlusion augmentation.
//! * [`expander`]: residual MLP turning modal proposals into amodal boxes.
//! * [`synthetic`]: seeded scenes for tests and benchmarks.

pub mod assignment;
pub mod dataset;
pub mod error;
pub mod expander;
pub mod geometry;
pub mod metrics;
pub mod pno;
pub mod synthetic;
pub mod tracker;

pub use dataset::{load_dataset, AmodalAnnotation, Dataset, StratumClosure};
pub use error::{Error, Result};
pub use geometry::{BBox, BoxDelta, FrameExtent};
pub use metrics::{DetectionResult, EvalConfig, EvalReport};
pub use tracker::{Tracker, TrackerConfig};
