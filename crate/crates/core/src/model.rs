//! Shared domain types: detector output per frame, trajectories, configuration
//! and declarations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

const PROB_SUM_TOL: f64 = 1e-6;

/// Class-probability vector `v(b)`; index 0 is the background class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassProbs(Vec<f64>);

impl ClassProbs {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.len() < 2 {
            return Err(Error::InvalidProbs(format!(
                "need background plus at least one object class, got {} entries",
                v.len()
            )));
        }
        if let Some(bad) = v.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidProbs(format!("component {bad} outside [0, 1]")));
        }
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidProbs(format!("components sum to {sum}")));
        }
        Ok(Self(v))
    }

    /// Uniform probabilities over `n_classes` object classes plus background.
    pub fn uniform(n_classes: usize) -> Self {
        let n = n_classes + 1;
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Number of object classes (excluding background).
    pub fn n_classes(&self) -> usize {
        self.0.len() - 1
    }

    pub fn background(&self) -> f64 {
        self.0[0]
    }

    /// Largest object-class probability and its class index (ties: lowest).
    pub fn best_object_class(&self) -> (usize, f64) {
        let mut best = (1, self.0[1]);
        for (i, &p) in self.0.iter().enumerate().skip(2) {
            if p > best.1 {
                best = (i, p);
            }
        }
        best
    }

    /// Object classes whose probability strictly beats background.
    pub fn classes_above_background(&self) -> Vec<usize> {
        let v0 = self.background();
        (1..self.0.len()).filter(|&i| self.0[i] > v0).collect()
    }
}

impl TryFrom<Vec<f64>> for ClassProbs {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ClassProbs::new(v)
    }
}

impl From<ClassProbs> for Vec<f64> {
    fn from(p: ClassProbs) -> Self {
        p.0
    }
}

/// One observed box from a single-frame detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub probs: ClassProbs,
    pub mu: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, probs: ClassProbs, mu: f64) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::InvalidProbs(format!("confidence mu = {mu} must be >= 0")));
        }
        Ok(Self { bbox, probs, mu })
    }

    /// Score used for spawning and the single-frame baseline: `max_i v_i * mu`.
    pub fn object_score(&self) -> f64 {
        self.probs.best_object_class().1 * self.mu
    }
}

/// Detector output for one frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameData {
    pub frame: u64,
    pub detections: Vec<Detection>,
}

impl FrameData {
    pub fn new(frame: u64, detections: Vec<Detection>) -> Self {
        Self { frame, detections }
    }

    pub fn empty(frame: u64) -> Self {
        Self::new(frame, Vec::new())
    }
}

/// A hypothesized object path with per-class CUSUM statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub spawn_frame: u64,
    /// Frame of the latest box.
    pub last_frame: u64,
    /// Full mode: one box per frame from `spawn_frame` on. Recursive mode:
    /// only the latest boxes the motion prior needs (at most two).
    pub boxes: Vec<BoundingBox>,
    /// `w[i - 1]` is the statistic for object class `i`.
    pub w: Vec<f64>,
    /// Per-class evidence `p_i(D_t | b_t)` at the latest box, background first.
    pub evidence: Vec<f64>,
    pub declared: bool,
}

impl Trajectory {
    pub fn current_box(&self) -> &BoundingBox {
        self.boxes.last().expect("trajectory holds at least one box")
    }

    /// Frames covered so far, including the spawn frame.
    pub fn age(&self) -> u64 {
        self.last_frame - self.spawn_frame + 1
    }

    /// `(label, statistic)` maximizing `w`; ties go to the lowest class.
    pub fn best_class(&self) -> (usize, f64) {
        let mut best = (1, self.w[0]);
        for (k, &w) in self.w.iter().enumerate().skip(1) {
            if w > best.1 {
                best = (k + 1, w);
            }
        }
        best
    }

    /// Classes with a strictly positive statistic.
    pub fn active_classes(&self) -> Vec<usize> {
        self.w
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(k, _)| k + 1)
            .collect()
    }

    pub fn is_dead(&self) -> bool {
        self.w.iter().all(|&w| w == 0.0)
    }
}

/// Detector tunables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Declaration level on the log-likelihood statistic.
    pub threshold: f64,
    pub iou_lim: f64,
    /// Mass assigned to the unobserved boxes near a trajectory.
    pub c: f64,
    /// Class priors, background first.
    pub priors: Vec<f64>,
    /// Weight of the squared second-difference prior.
    pub lambda: f64,
    pub nms_iou: f64,
    pub map_sweeps: usize,
    pub retire_on_declare: bool,
    /// Restrict the box update and CUSUM to classes with positive statistic.
    pub class_reduction: bool,
}

impl DetectorConfig {
    /// Smoothness weight for boxes in normalized units.
    pub const DEFAULT_LAMBDA: f64 = 500.0;

    /// Defaults with uniform priors over `n_classes` object classes.
    pub fn uniform(n_classes: usize) -> Self {
        Self {
            threshold: 3.0,
            iou_lim: 0.5,
            c: 2.0,
            priors: ClassProbs::uniform(n_classes).0,
            lambda: Self::DEFAULT_LAMBDA,
            nms_iou: 0.5,
            map_sweeps: 2,
            retire_on_declare: true,
            class_reduction: true,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.priors.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return bad(format!("threshold must be positive, got {}", self.threshold));
        }
        if !(self.iou_lim > 0.0 && self.iou_lim < 1.0) {
            return bad(format!("iou_lim must lie in (0, 1), got {}", self.iou_lim));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return bad(format!("nms_iou must lie in (0, 1), got {}", self.nms_iou));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad(format!("c must be positive, got {}", self.c));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.map_sweeps == 0 {
            return bad("map_sweeps must be at least 1".into());
        }
        if self.priors.len() < 2 {
            return bad("priors need background plus at least one class".into());
        }
        if self.priors.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return bad("priors must lie in (0, 1]".into());
        }
        let sum: f64 = self.priors.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return bad(format!("priors sum to {sum}"));
        }
        Ok(())
    }
}

/// A declared detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Declaration {
    pub trajectory_id: u64,
    pub frame: u64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub label: usize,
    pub statistic: f64,
    pub spawn_frame: u64,
}
