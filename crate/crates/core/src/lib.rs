//! Minimum-delay object detection over single-frame detector streams.
//!
//! Each candidate trajectory carries one CUSUM statistic per object class;
//! a declaration is made as soon as any statistic crosses the threshold.
//! Two trajectory estimators are provided: a cheap recursive update with
//! constant per-frame cost ([`Mode::Recursive`]) and a full MAP re-estimate
//! over the buffered history ([`Mode::Full`]).

pub mod detector;
pub mod error;
pub mod eval;
pub mod evidence;
pub mod geometry;
pub mod io;
pub mod model;
pub mod synth;
pub mod trajectory;

pub use detector::{record_paths, run_stream, Detector, Mode, PathPoint, StatisticPath};
pub use error::{Error, Result};
pub use evidence::EvidenceContext;
pub use geometry::{iou, BoundingBox};
pub use model::{ClassProbs, Declaration, Detection, DetectorConfig, FrameData, Trajectory};
pub use synth::{GroundTruth, GroundTruthObject, ScenarioSpec};
