//! Trajectory estimation: the one-step recursive box update and the
//! coordinate-ascent MAP estimate over a whole buffered path.
//!
//! Both optimizers search a discrete candidate set. The evidence term is a
//! sum of IoU indicators and therefore piecewise constant in the box, so the
//! observed boxes near the path together with the smoothness-optimal
//! prediction reach every evidence level the continuous problem can.

use crate::error::Result;
use crate::evidence::EvidenceContext;
use crate::geometry::{indicator_overlap, predict_constant_velocity, smoothness_penalty, BoundingBox};
use crate::model::{DetectorConfig, FrameData};

/// Minimum objective gain for the MAP sweep to move a box.
const ASCENT_EPS: f64 = 1e-9;

/// Where a candidate box came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateSource {
    Prediction,
    /// Index into the frame's detections.
    Observed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateBox {
    pub bbox: BoundingBox,
    pub source: CandidateSource,
}

/// Prediction followed by every observed box overlapping it beyond `iou_lim`,
/// in detection order.
pub fn candidate_set(ctx: &EvidenceContext<'_>, prediction: BoundingBox) -> Vec<CandidateBox> {
    let mut out = vec![CandidateBox {
        bbox: prediction,
        source: CandidateSource::Prediction,
    }];
    for (k, det) in ctx.frame_data.detections.iter().enumerate() {
        if indicator_overlap(&det.bbox, &prediction, ctx.config.iou_lim) {
            out.push(CandidateBox {
                bbox: det.bbox,
                source: CandidateSource::Observed(k),
            });
        }
    }
    out
}

/// Result of [`recursive_box_update`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoxUpdate {
    pub chosen: CandidateBox,
    /// Class attaining the best objective.
    pub class: usize,
    pub objective: f64,
    /// `p_i(D_t | b*_t)` for every class, background first.
    pub evidence: Vec<f64>,
}

fn resolve_classes(active: &[usize], n_classes: usize) -> Vec<usize> {
    if active.is_empty() {
        (1..=n_classes).collect()
    } else {
        active.to_vec()
    }
}

/// Picks `b*_t` for a path whose previous boxes are `history`.
///
/// Maximizes `ln e_i(b) - lambda * ||b_{t-2} - 2 b_{t-1} + b||^2` jointly over
/// the candidate set and the classes in `active` (all classes if empty).
/// Ties keep the prediction, then the lowest detection index, then the
/// lowest class. A single-box history carries no smoothness term.
pub fn recursive_box_update(
    ctx: &EvidenceContext<'_>,
    history: &[BoundingBox],
    active: &[usize],
) -> Result<BoxUpdate> {
    let prediction = predict_constant_velocity(history);
    let classes = resolve_classes(active, ctx.config.n_classes());
    let lambda = ctx.config.lambda;
    let tail = match history {
        [.., a, b] => Some((*a, *b)),
        _ => None,
    };

    let mut best: Option<BoxUpdate> = None;
    for cand in candidate_set(ctx, prediction) {
        let evidence = ctx.evidence_vector(&cand.bbox)?;
        let penalty = tail.map_or(0.0, |(a, b)| smoothness_penalty(&a, &b, &cand.bbox));
        for &i in &classes {
            let objective = evidence[i].ln() - lambda * penalty;
            if best.as_ref().is_none_or(|b| objective > b.objective) {
                best = Some(BoxUpdate {
                    chosen: cand,
                    class: i,
                    objective,
                    evidence: evidence.clone(),
                });
            }
        }
    }
    Ok(best.expect("candidate set always holds the prediction"))
}

/// Result of [`full_map_estimate`].
#[derive(Debug, Clone, PartialEq)]
pub struct MapEstimate {
    pub boxes: Vec<BoundingBox>,
    /// `sum_j ln e_i(b_j) - ln e_0(b_j)` for classes `1..=n`.
    pub log_increments: Vec<f64>,
    /// Evidence at the final box, background first.
    pub last_evidence: Vec<f64>,
    pub objective: f64,
    pub sweeps: usize,
}

/// Joint MAP objective: `max_{i in active} sum_j ln e_i(b_j) - lambda * sum_k ||b_{k-1} - 2 b_k + b_{k+1}||^2`.
pub fn map_objective(
    frames: &[FrameData],
    boxes: &[BoundingBox],
    config: &DetectorConfig,
    active: &[usize],
) -> Result<f64> {
    assert_eq!(frames.len(), boxes.len(), "one box per buffered frame");
    let classes = resolve_classes(active, config.n_classes());
    let mut sums = vec![0.0; config.priors.len()];
    for (frame, b) in frames.iter().zip(boxes) {
        let ctx = EvidenceContext::new(config, frame)?;
        for (s, l) in sums.iter_mut().zip(ctx.log_evidence_vector(b)?) {
            *s += l;
        }
    }
    let best = classes.iter().map(|&i| sums[i]).fold(f64::NEG_INFINITY, f64::max);
    Ok(best - config.lambda * path_penalty(boxes))
}

fn path_penalty(boxes: &[BoundingBox]) -> f64 {
    boxes
        .windows(3)
        .map(|w| smoothness_penalty(&w[0], &w[1], &w[2]))
        .sum()
}

/// Penalty terms touching index `j` when `boxes[j]` is replaced by `b`.
fn local_penalty(boxes: &[BoundingBox], j: usize, b: &BoundingBox) -> f64 {
    let m = boxes.len();
    let mut total = 0.0;
    if j >= 2 {
        total += smoothness_penalty(&boxes[j - 2], &boxes[j - 1], b);
    }
    if j >= 1 && j + 1 < m {
        total += smoothness_penalty(&boxes[j - 1], b, &boxes[j + 1]);
    }
    if j + 2 < m {
        total += smoothness_penalty(b, &boxes[j + 1], &boxes[j + 2]);
    }
    total
}

/// Box minimizing the penalty terms touching index `j` with its neighbours
/// held fixed. Falls back to the current box when no term touches `j`.
pub fn neighbour_prediction(boxes: &[BoundingBox], j: usize) -> BoundingBox {
    let m = boxes.len();
    // Each term is a * b_j + r; the minimizer of sum ||a b + r||^2 is
    // -sum(a r) / sum(a^2).
    let mut num = [0.0; 4];
    let mut den = 0.0;
    let mut add = |a: f64, r: [f64; 4]| {
        for k in 0..4 {
            num[k] -= a * r[k];
        }
        den += a * a;
    };
    let arr = |k: usize| boxes[k].as_array();
    if j >= 2 {
        let (p2, p1) = (arr(j - 2), arr(j - 1));
        add(1.0, std::array::from_fn(|k| p2[k] - 2.0 * p1[k]));
    }
    if j >= 1 && j + 1 < m {
        let (p1, n1) = (arr(j - 1), arr(j + 1));
        add(-2.0, std::array::from_fn(|k| p1[k] + n1[k]));
    }
    if j + 2 < m {
        let (n1, n2) = (arr(j + 1), arr(j + 2));
        add(1.0, std::array::from_fn(|k| -2.0 * n1[k] + n2[k]));
    }
    if den == 0.0 {
        return boxes[j];
    }
    BoundingBox::clamped(num[0] / den, num[1] / den, num[2] / den, num[3] / den)
}

/// Coordinate-ascent MAP estimate of the path over `frames`.
///
/// `init` holds one box per frame (the previous estimate extended by the
/// constant-velocity model). Each sweep visits the frames in order and moves
/// `b_j` to the best of: the current box, the neighbour prediction, and the
/// observed boxes overlapping that prediction. A move requires a strict gain,
/// so the objective never decreases. Stops after `config.map_sweeps` sweeps or
/// the first sweep that changes nothing.
pub fn full_map_estimate(
    frames: &[FrameData],
    init: &[BoundingBox],
    config: &DetectorConfig,
    active: &[usize],
) -> Result<MapEstimate> {
    full_map_estimate_observed(frames, init, config, active, |_| {})
}

/// [`full_map_estimate`] calling `observer` with the path after every
/// coordinate update, whether or not the box moved.
pub fn full_map_estimate_observed(
    frames: &[FrameData],
    init: &[BoundingBox],
    config: &DetectorConfig,
    active: &[usize],
    mut observer: impl FnMut(&[BoundingBox]),
) -> Result<MapEstimate> {
    assert_eq!(frames.len(), init.len(), "one box per buffered frame");
    assert!(!init.is_empty(), "MAP estimate over an empty path");
    let classes = resolve_classes(active, config.n_classes());
    let lambda = config.lambda;
    let contexts = frames
        .iter()
        .map(|f| EvidenceContext::new(config, f))
        .collect::<Result<Vec<_>>>()?;

    let mut boxes = init.to_vec();
    let mut log_ev = boxes
        .iter()
        .zip(&contexts)
        .map(|(b, ctx)| ctx.log_evidence_vector(b))
        .collect::<Result<Vec<_>>>()?;

    let totals = |log_ev: &[Vec<f64>]| {
        let mut sums = vec![0.0; config.priors.len()];
        for row in log_ev {
            for (s, l) in sums.iter_mut().zip(row) {
                *s += l;
            }
        }
        sums
    };
    let best_of = |sums: &[f64]| classes.iter().map(|&i| sums[i]).fold(f64::NEG_INFINITY, f64::max);

    let mut sums = totals(&log_ev);
    let mut penalty = path_penalty(&boxes);
    let mut sweeps = 0;

    for _ in 0..config.map_sweeps {
        sweeps += 1;
        let mut changed = false;
        for j in 0..boxes.len() {
            let current_obj = best_of(&sums) - lambda * penalty;
            let current_local = local_penalty(&boxes, j, &boxes[j]);
            let prediction = neighbour_prediction(&boxes, j);

            let mut best: Option<(f64, BoundingBox, Vec<f64>, Vec<f64>, f64)> = None;
            for cand in candidate_set(&contexts[j], prediction) {
                if cand.bbox == boxes[j] {
                    continue;
                }
                let cand_ev = contexts[j].log_evidence_vector(&cand.bbox)?;
                let cand_sums: Vec<f64> = sums
                    .iter()
                    .zip(log_ev[j].iter().zip(&cand_ev))
                    .map(|(s, (old, new))| s - old + new)
                    .collect();
                let cand_penalty = penalty - current_local + local_penalty(&boxes, j, &cand.bbox);
                let obj = best_of(&cand_sums) - lambda * cand_penalty;
                let threshold = best.as_ref().map_or(current_obj + ASCENT_EPS, |b| b.0);
                if obj > threshold {
                    best = Some((obj, cand.bbox, cand_ev, cand_sums, cand_penalty));
                }
            }
            if let Some((_, bbox, ev, new_sums, new_penalty)) = best {
                boxes[j] = bbox;
                log_ev[j] = ev;
                sums = new_sums;
                penalty = new_penalty;
                changed = true;
            }
            observer(&boxes);
        }
        // Resynchronize the running totals.
        sums = totals(&log_ev);
        penalty = path_penalty(&boxes);
        if !changed {
            break;
        }
    }

    let log_increments = (1..config.priors.len()).map(|i| sums[i] - sums[0]).collect();
    let last_evidence = log_ev
        .last()
        .expect("non-empty path")
        .iter()
        .map(|l| l.exp())
        .collect();
    Ok(MapEstimate {
        objective: best_of(&sums) - lambda * penalty,
        boxes,
        log_increments,
        last_evidence,
        sweeps,
    })
}
