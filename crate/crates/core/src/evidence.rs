//! Per-frame class evidence around a hypothesized box.
//!
//! For a box `b_t` and class `i` the frame evidence is
//!
//! ```text
//! e_i(b_t) = sum_{b observed, IoU(b, b_t) > IoU_lim} (v_i(b) / p_i - 1) * mu(b)  +  C
//! ```
//!
//! which is `p_i(D_t | b_t)` up to factors shared by every class: the
//! marginal `p(v(b))` and the normalizer of the box measure. Those factors
//! cancel in the ratio `e_i / e_0`, so only ratios and class-independent
//! argmaxes of `e_i` are meaningful.

use crate::error::{Error, Result};
use crate::geometry::{indicator_overlap, iou, BoundingBox};
use crate::model::{DetectorConfig, FrameData};

/// A configuration paired with one frame of detector output.
#[derive(Debug, Clone, Copy)]
pub struct EvidenceContext<'a> {
    pub config: &'a DetectorConfig,
    pub frame_data: &'a FrameData,
}

impl<'a> EvidenceContext<'a> {
    /// Checks that every detection carries one probability per prior.
    pub fn new(config: &'a DetectorConfig, frame_data: &'a FrameData) -> Result<Self> {
        let expected = config.priors.len();
        for det in &frame_data.detections {
            let found = det.probs.as_slice().len();
            if found != expected {
                return Err(Error::ClassCountMismatch {
                    frame: frame_data.frame,
                    expected,
                    found,
                });
            }
        }
        Ok(Self { config, frame_data })
    }

    /// Evidence `e_i(b_t)` for class `i` (0 is background).
    pub fn frame_evidence(&self, b_t: &BoundingBox, class: usize) -> Result<f64> {
        let prior = self.config.priors[class];
        let mut sum = 0.0;
        for det in self.overlapping(b_t) {
            sum += (det.probs.as_slice()[class] / prior - 1.0) * det.mu;
        }
        self.check_positive(sum + self.config.c, class)
    }

    /// Evidence for every class at once, background first.
    pub fn evidence_vector(&self, b_t: &BoundingBox) -> Result<Vec<f64>> {
        let priors = &self.config.priors;
        let mut sums = vec![0.0; priors.len()];
        for det in self.overlapping(b_t) {
            for (k, (s, v)) in sums.iter_mut().zip(det.probs.as_slice()).enumerate() {
                *s += (v / priors[k] - 1.0) * det.mu;
            }
        }
        sums.into_iter()
            .enumerate()
            .map(|(k, s)| self.check_positive(s + self.config.c, k))
            .collect()
    }

    /// Natural-log evidence for every class, background first.
    pub fn log_evidence_vector(&self, b_t: &BoundingBox) -> Result<Vec<f64>> {
        Ok(self.evidence_vector(b_t)?.into_iter().map(f64::ln).collect())
    }

    /// `ln e_i(b_t) - ln e_0(b_t)` for object class `i`.
    pub fn log_increment(&self, b_t: &BoundingBox, class: usize) -> Result<f64> {
        Ok(self.frame_evidence(b_t, class)?.ln() - self.frame_evidence(b_t, 0)?.ln())
    }

    /// Indices of observed boxes overlapping `b_t` beyond `iou_lim`.
    pub fn overlapping_indices(&self, b_t: &BoundingBox) -> Vec<usize> {
        self.frame_data
            .detections
            .iter()
            .enumerate()
            .filter(|(_, d)| indicator_overlap(&d.bbox, b_t, self.config.iou_lim))
            .map(|(k, _)| k)
            .collect()
    }

    fn overlapping<'b>(
        &'b self,
        b_t: &'b BoundingBox,
    ) -> impl Iterator<Item = &'a crate::model::Detection> + 'b {
        let lim = self.config.iou_lim;
        self.frame_data
            .detections
            .iter()
            .filter(move |d| indicator_overlap(&d.bbox, b_t, lim))
    }

    fn check_positive(&self, value: f64, class: usize) -> Result<f64> {
        if value > 0.0 {
            Ok(value)
        } else {
            Err(Error::NonPositiveEvidence {
                frame: self.frame_data.frame,
                class,
                value,
            })
        }
    }
}

/// Converts per-class evidence (background first) into log increments for
/// classes `1..=n`.
pub fn log_increments(evidence: &[f64]) -> Vec<f64> {
    let l0 = evidence[0].ln();
    evidence[1..].iter().map(|e| e.ln() - l0).collect()
}

/// Largest confidence mass `sum mu(b)` that overlaps any single observed box
/// beyond `iou_lim`, over a whole stream.
pub fn max_overlapping_mass<'a>(frames: impl IntoIterator<Item = &'a FrameData>, iou_lim: f64) -> f64 {
    let mut best = 0.0f64;
    for frame in frames {
        for anchor in &frame.detections {
            let mass: f64 = frame
                .detections
                .iter()
                .filter(|d| iou(&d.bbox, &anchor.bbox) > iou_lim)
                .map(|d| d.mu)
                .sum();
            best = best.max(mass);
        }
    }
    best
}

/// Default `C` for a buffered stream: twice the largest overlapping mass,
/// never below 1.
pub fn default_c<'a>(frames: impl IntoIterator<Item = &'a FrameData>, iou_lim: f64) -> f64 {
    (2.0 * max_overlapping_mass(frames, iou_lim)).max(1.0)
}
