//! Set-of-Mark / Trace-of-Mark supervision extraction.
//!
//! The crate turns raw agentic pretraining sources into action-grounding and
//! action-planning supervision:
//!
//! 1. [`geometry`]: normalized points, boxes, traces and the 256-bin quantizer.
//! 2. [`homography`]: normalized DLT and RANSAC for removing camera motion.
//! 3. [`tracking`]: grid-seeded point tracking behind the [`tracking::PointTracker`]
//!    trait, with a pyramidal Lucas-Kanade implementation.
//! 4. [`som`]: numbered mark overlays for UI screenshots and video frames.
//! 5. [`tom`]: the trace-of-mark pipeline (motion gate, stabilization,
//!    foreground/background split, clustering, first-frame marks).
//! 6. [`segmentation`]: shot detection and similarity-score filtering.
//! 7. [`codec`]: textual grounding/trace records and robot action tokens.
//! 8. [`evalkit`]: synthetic scenes with exact ground truth and the
//!    trace-precision metric.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod homography;
pub mod segmentation;
pub mod som;
pub mod tom;
pub mod tracking;

pub use error::{Error, Result, Warning};
pub use geometry::{BBox, ImageDims, Point2, QuantizedCoord, Trace};
pub use homography::{Correspondences, Homography};
pub use som::MarkSet;
pub use tom::{run_tom, TomConfig, TomResult};
pub use tracking::{FrameSequence, PointTracker, TrackerConfig};
