//! Bounding-box regression toolkit: IoU-family metrics and MPDIoU, losses with
//! analytic gradients, verifiers for the concentric-box equalities and loss
//! bounds, a gradient-descent convergence simulator and a COCO-style detection
//! evaluator whose match metric can be switched between IoU and MPDIoU.

pub mod cli;
pub mod evaluator;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod simulator;
pub mod theorem_checks;

pub use geometry::{BBox, CenterForm, ImageDims};
pub use losses::{LossGradient, LossSpec};
pub use metrics::{MetricKind, MetricResult};
