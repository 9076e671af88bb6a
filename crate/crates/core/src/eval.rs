//! Delay / false-alarm metrics, the single-frame baseline, and threshold
//! sweeps producing FAR-vs-delay curves.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{record_paths, run_stream, Mode, StatisticPath};
use crate::error::Result;
use crate::geometry::{iou, BoundingBox};
use crate::model::{Declaration, DetectorConfig, FrameData};
use crate::synth::GroundTruth;

/// How one declaration was scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum MatchOutcome {
    Correct { object_id: u64 },
    FalseAlarm,
    /// Matches only objects already credited; counted nowhere.
    Duplicate { object_id: u64 },
}

/// Per-declaration outcomes, aligned with the input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub outcomes: Vec<MatchOutcome>,
}

impl Matching {
    /// `(object_id, declaration frame)` for every credited object.
    pub fn credited<'a>(&'a self, declarations: &'a [Declaration]) -> impl Iterator<Item = (u64, u64)> + 'a {
        self.outcomes.iter().zip(declarations).filter_map(|(o, d)| match o {
            MatchOutcome::Correct { object_id } => Some((*object_id, d.frame)),
            _ => None,
        })
    }

    pub fn n_correct(&self) -> usize {
        self.count(|o| matches!(o, MatchOutcome::Correct { .. }))
    }

    pub fn n_false_alarms(&self) -> usize {
        self.count(|o| matches!(o, MatchOutcome::FalseAlarm))
    }

    fn count(&self, f: impl Fn(&MatchOutcome) -> bool) -> usize {
        self.outcomes.iter().filter(|o| f(o)).count()
    }
}

/// Objects visible at `frame` with the same class and IoU above `iou_lim`,
/// as `(iou, object_id)`.
fn matching_objects(truth: &GroundTruth, frame: u64, bbox: &BoundingBox, label: usize, iou_lim: f64) -> Vec<(f64, u64)> {
    truth
        .objects
        .iter()
        .filter(|o| o.class_id == label)
        .filter_map(|o| {
            let gt = o.box_at(frame)?;
            let v = iou(gt, bbox);
            (v > iou_lim).then_some((v, o.id))
        })
        .collect()
}

/// Scores declarations against ground truth.
///
/// Declarations are visited in time order (input order within a frame). A
/// declaration matching an uncredited object credits the best such object
/// (highest IoU, then lowest id). One that only matches credited objects is
/// a duplicate and ignored; one matching nothing is a false alarm.
pub fn match_declarations(declarations: &[Declaration], truth: &GroundTruth, iou_lim: f64) -> Matching {
    let mut order: Vec<usize> = (0..declarations.len()).collect();
    order.sort_by_key(|&k| declarations[k].frame);
    let mut credited = std::collections::BTreeSet::new();
    let mut outcomes = vec![MatchOutcome::FalseAlarm; declarations.len()];
    for k in order {
        let d = &declarations[k];
        let matches = matching_objects(truth, d.frame, &d.bbox, d.label, iou_lim);
        let best_free = matches
            .iter()
            .filter(|(_, id)| !credited.contains(id))
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        outcomes[k] = match (best_free, matches.first()) {
            (Some(&(_, id)), _) => {
                credited.insert(id);
                MatchOutcome::Correct { object_id: id }
            }
            (None, Some(&(_, id))) => MatchOutcome::Duplicate { object_id: id },
            (None, None) => MatchOutcome::FalseAlarm,
        };
    }
    Matching { outcomes }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectDelay {
    /// Index of the stream within a multi-stream report.
    pub stream: usize,
    pub object_id: u64,
    pub delay: u64,
    pub detected: bool,
}

/// Per-object delays: declaration frame minus appearance, or the full
/// visible span for objects never detected.
pub fn delays(matching: &Matching, declarations: &[Declaration], truth: &GroundTruth) -> Vec<ObjectDelay> {
    let credited: std::collections::BTreeMap<u64, u64> = matching.credited(declarations).collect();
    truth
        .objects
        .iter()
        .map(|o| match credited.get(&o.id) {
            Some(&frame) => ObjectDelay {
                stream: 0,
                object_id: o.id,
                delay: frame.saturating_sub(o.appear_frame),
                detected: true,
            },
            None => ObjectDelay {
                stream: 0,
                object_id: o.id,
                delay: o.max_delay(),
                detected: false,
            },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    /// Correct plus false alarms; ignored duplicates are excluded.
    pub n_declared: usize,
    pub n_correct: usize,
    pub n_false_alarms: usize,
    pub far: f64,
    pub average_delay: f64,
    pub per_object_delays: Vec<ObjectDelay>,
}

impl EvalReport {
    fn from_parts(threshold: f64, n_correct: usize, n_false_alarms: usize, per_object_delays: Vec<ObjectDelay>) -> Self {
        let n_declared = n_correct + n_false_alarms;
        let total: u64 = per_object_delays.iter().map(|d| d.delay).sum();
        let average_delay = if per_object_delays.is_empty() {
            0.0
        } else {
            total as f64 / per_object_delays.len() as f64
        };
        Self {
            threshold,
            n_declared,
            n_correct,
            n_false_alarms,
            far: n_false_alarms as f64 / n_declared.max(1) as f64,
            average_delay,
            per_object_delays,
        }
    }

    pub fn n_objects(&self) -> usize {
        self.per_object_delays.len()
    }

    /// Combines per-stream reports. Stream indices are reassigned in order.
    pub fn merge(reports: &[EvalReport]) -> EvalReport {
        let threshold = reports.first().map_or(0.0, |r| r.threshold);
        let mut delays = Vec::new();
        let (mut correct, mut fa) = (0, 0);
        for (s, r) in reports.iter().enumerate() {
            correct += r.n_correct;
            fa += r.n_false_alarms;
            delays.extend(r.per_object_delays.iter().map(|d| ObjectDelay { stream: s, ..*d }));
        }
        Self::from_parts(threshold, correct, fa, delays)
    }
}

/// Full report for one stream's declarations.
pub fn evaluate(declarations: &[Declaration], truth: &GroundTruth, iou_lim: f64, threshold: f64) -> EvalReport {
    let matching = match_declarations(declarations, truth, iou_lim);
    let per_object = delays(&matching, declarations, truth);
    EvalReport::from_parts(threshold, matching.n_correct(), matching.n_false_alarms(), per_object)
}

/// One detection above threshold in the baseline, linked into a track.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineHit {
    pub frame: u64,
    pub bbox: BoundingBox,
    pub label: usize,
    pub score: f64,
}

/// Thresholds every detection's `max_i v_i * mu` and links surviving boxes in
/// adjacent frames with IoU above `iou_lim` into tracks.
///
/// Within a frame, hits are taken by descending score (ties: detection
/// order); each extends the unextended track from the previous frame with
/// the highest IoU (ties: older track) or starts a new one.
pub fn baseline_tracks(frames: &[FrameData], score_threshold: f64, iou_lim: f64) -> Vec<Vec<BaselineHit>> {
    let mut tracks: Vec<Vec<BaselineHit>> = Vec::new();
    // Indices of tracks whose last hit is in the previous frame.
    let mut open: Vec<usize> = Vec::new();
    for f in frames {
        let mut hits: Vec<BaselineHit> = f
            .detections
            .iter()
            .filter(|d| d.object_score() > score_threshold)
            .map(|d| BaselineHit {
                frame: f.frame,
                bbox: d.bbox,
                label: d.probs.best_object_class().0,
                score: d.object_score(),
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut next_open = Vec::with_capacity(hits.len());
        let mut taken = vec![false; open.len()];
        for hit in hits {
            let mut best: Option<(f64, usize)> = None;
            for (k, &t) in open.iter().enumerate() {
                if taken[k] {
                    continue;
                }
                let v = iou(&tracks[t].last().expect("non-empty track").bbox, &hit.bbox);
                if v > iou_lim && best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, k));
                }
            }
            match best {
                Some((_, k)) => {
                    taken[k] = true;
                    tracks[open[k]].push(hit);
                    next_open.push(open[k]);
                }
                None => {
                    tracks.push(vec![hit]);
                    next_open.push(tracks.len() - 1);
                }
            }
        }
        next_open.sort_unstable();
        open = next_open;
    }
    tracks
}

/// The single-frame baseline scored like the detector.
///
/// Each track counts once, represented by its first hit that matches some
/// ground-truth object (delay is measured at the first correct detection);
/// a track that never matches is one false alarm.
pub fn baseline_single_frame(frames: &[FrameData], truth: &GroundTruth, score_threshold: f64, iou_lim: f64) -> EvalReport {
    let declarations = baseline_declarations(frames, truth, score_threshold, iou_lim);
    evaluate(&declarations, truth, iou_lim, score_threshold)
}

/// One representative declaration per baseline track (see
/// [`baseline_single_frame`]).
pub fn baseline_declarations(frames: &[FrameData], truth: &GroundTruth, score_threshold: f64, iou_lim: f64) -> Vec<Declaration> {
    baseline_tracks(frames, score_threshold, iou_lim)
        .into_iter()
        .enumerate()
        .map(|(id, track)| {
            let rep = track
                .iter()
                .find(|h| !matching_objects(truth, h.frame, &h.bbox, h.label, iou_lim).is_empty())
                .unwrap_or(&track[0]);
            Declaration {
                trajectory_id: id as u64,
                frame: rep.frame,
                bbox: rep.bbox,
                label: rep.label,
                statistic: rep.score,
                spawn_frame: track[0].frame,
            }
        })
        .collect()
}

/// A stream with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub frames: Vec<FrameData>,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStrategy {
    /// Record statistic paths once (retire off) and threshold them afterwards.
    PostHoc,
    /// Run the detector once per threshold with the given config.
    Rerun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub report: EvalReport,
    /// Wall-clock seconds per frame; not reproducible.
    pub mean_runtime_per_frame: f64,
}

fn total_frames(cases: &[Case]) -> usize {
    cases.iter().map(|c| c.frames.len()).sum::<usize>().max(1)
}

fn sorted(mut thresholds: Vec<f64>) -> Vec<f64> {
    thresholds.sort_by(f64::total_cmp);
    thresholds
}

/// Detector FAR/delay curve over `thresholds`, sorted by threshold.
///
/// `PostHoc` is only equivalent to `Rerun` with `retire_on_declare = false`:
/// retiring removes a trajectory, and with it any later statistic values.
/// Streams run in parallel; results are merged in input order, so reports
/// are reproducible regardless of scheduling.
pub fn sweep_detector(
    cases: &[Case],
    config: &DetectorConfig,
    mode: Mode,
    thresholds: &[f64],
    strategy: SweepStrategy,
    eval_iou: f64,
) -> Result<Vec<SweepPoint>> {
    let thresholds = sorted(thresholds.to_vec());
    let frames = total_frames(cases) as f64;
    match strategy {
        SweepStrategy::PostHoc => {
            let recorded: Vec<(Vec<StatisticPath>, f64)> = cases
                .par_iter()
                .map(|c| {
                    let start = Instant::now();
                    let paths = record_paths(config, mode, &c.frames)?;
                    Ok((paths, start.elapsed().as_secs_f64()))
                })
                .collect::<Result<_>>()?;
            let runtime = recorded.iter().map(|r| r.1).sum::<f64>() / frames;
            Ok(thresholds
                .iter()
                .map(|&h| {
                    let reports: Vec<EvalReport> = cases
                        .iter()
                        .zip(&recorded)
                        .map(|(c, (paths, _))| {
                            let decls = declarations_at(paths, h);
                            evaluate(&decls, &c.truth, eval_iou, h)
                        })
                        .collect();
                    SweepPoint {
                        report: EvalReport::merge(&reports),
                        mean_runtime_per_frame: runtime,
                    }
                })
                .collect())
        }
        SweepStrategy::Rerun => thresholds
            .iter()
            .map(|&h| {
                let cfg = DetectorConfig {
                    threshold: h,
                    ..config.clone()
                };
                let runs: Vec<(EvalReport, f64)> = cases
                    .par_iter()
                    .map(|c| {
                        let start = Instant::now();
                        let decls = run_stream(&cfg, mode, &c.frames)?;
                        let secs = start.elapsed().as_secs_f64();
                        Ok((evaluate(&decls, &c.truth, eval_iou, h), secs))
                    })
                    .collect::<Result<_>>()?;
                let reports: Vec<EvalReport> = runs.iter().map(|r| r.0.clone()).collect();
                Ok(SweepPoint {
                    report: EvalReport::merge(&reports),
                    mean_runtime_per_frame: runs.iter().map(|r| r.1).sum::<f64>() / frames,
                })
            })
            .collect(),
    }
}

/// Declarations a recorded run would have made at `threshold` (time order,
/// then trajectory id).
pub fn declarations_at(paths: &[StatisticPath], threshold: f64) -> Vec<Declaration> {
    let mut decls: Vec<Declaration> = paths.iter().filter_map(|p| p.first_crossing(threshold)).collect();
    decls.sort_by_key(|d| (d.frame, d.trajectory_id));
    decls
}

/// Baseline FAR/delay curve over score thresholds, sorted by threshold.
pub fn sweep_baseline(cases: &[Case], thresholds: &[f64], iou_lim: f64) -> Vec<SweepPoint> {
    let frames = total_frames(cases) as f64;
    sorted(thresholds.to_vec())
        .into_iter()
        .map(|h| {
            let runs: Vec<(EvalReport, f64)> = cases
                .par_iter()
                .map(|c| {
                    let start = Instant::now();
                    let r = baseline_single_frame(&c.frames, &c.truth, h, iou_lim);
                    (r, start.elapsed().as_secs_f64())
                })
                .collect();
            let reports: Vec<EvalReport> = runs.iter().map(|r| r.0.clone()).collect();
            SweepPoint {
                report: EvalReport::merge(&reports),
                mean_runtime_per_frame: runs.iter().map(|r| r.1).sum::<f64>() / frames,
            }
        })
        .collect()
}

/// Mean run length to the first declaration on object-free streams, per
/// threshold; streams without a declaration count their full length
/// (censored). Its reciprocal estimates the theoretical false-alarm rate.
pub fn mean_run_length(null_streams: &[Vec<FrameData>], config: &DetectorConfig, mode: Mode, thresholds: &[f64]) -> Result<Vec<f64>> {
    let recorded: Vec<Vec<StatisticPath>> = null_streams
        .par_iter()
        .map(|s| record_paths(config, mode, s))
        .collect::<Result<_>>()?;
    Ok(thresholds
        .iter()
        .map(|&h| {
            let total: f64 = null_streams
                .iter()
                .zip(&recorded)
                .map(|(s, paths)| {
                    let first = s.first().map_or(0, |f| f.frame);
                    let stop = paths.iter().filter_map(|p| p.first_crossing(h)).map(|d| d.frame).min();
                    match stop {
                        Some(t) => (t - first + 1) as f64,
                        None => s.len() as f64,
                    }
                })
                .sum();
            total / null_streams.len().max(1) as f64
        })
        .collect())
}

pub const CSV_HEADER: &str = "threshold,n_declared,n_correct,n_false_alarms,far,average_delay,mean_runtime_per_frame";

pub fn csv_row(point: &SweepPoint) -> String {
    let r = &point.report;
    format!(
        "{},{},{},{},{},{},{}",
        r.threshold, r.n_declared, r.n_correct, r.n_false_alarms, r.far, r.average_delay, point.mean_runtime_per_frame
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClassProbs, Detection};
    use crate::synth::{FrameBox, GroundTruthObject};

    fn bb(x: f64, y: f64) -> BoundingBox {
        BoundingBox::new(x, y, 0.1, 0.1).unwrap()
    }

    fn object(id: u64, class_id: usize, appear: u64, disappear: u64, x: f64) -> GroundTruthObject {
        GroundTruthObject {
            id,
            class_id,
            appear_frame: appear,
            disappear_frame: disappear,
            boxes: (appear..=disappear).map(|frame| FrameBox { frame, bbox: bb(x, 0.5) }).collect(),
        }
    }

    fn decl(frame: u64, x: f64, label: usize) -> Declaration {
        Declaration {
            trajectory_id: frame,
            frame,
            bbox: bb(x, 0.5),
            label,
            statistic: 5.0,
            spawn_frame: frame,
        }
    }

    fn truth(objects: Vec<GroundTruthObject>) -> GroundTruth {
        GroundTruth { n_frames: 40, objects }
    }

    #[test]
    fn exact_box_right_class_is_correct() {
        let gt = truth(vec![object(0, 1, 10, 30, 0.3)]);
        let r = evaluate(&[decl(13, 0.3, 1)], &gt, 0.5, 1.0);
        assert_eq!((r.n_correct, r.n_false_alarms, r.far), (1, 0, 0.0));
        assert_eq!(r.per_object_delays[0].delay, 3);
        // Wrong class is a false alarm.
        let r = evaluate(&[decl(13, 0.3, 2)], &gt, 0.5, 1.0);
        assert_eq!((r.n_correct, r.n_false_alarms), (0, 1));
        assert_eq!(r.average_delay, 20.0);
    }

    #[test]
    fn background_declaration_is_false_alarm() {
        let gt = truth(vec![object(0, 1, 10, 30, 0.3)]);
        let r = evaluate(&[decl(12, 0.8, 1)], &gt, 0.5, 1.0);
        assert_eq!((r.n_declared, r.n_false_alarms, r.far), (1, 1, 1.0));
        // Outside the visible span counts as background too.
        let r = evaluate(&[decl(31, 0.3, 1)], &gt, 0.5, 1.0);
        assert_eq!(r.n_false_alarms, 1);
    }

    /// Oracle: try every assignment of declarations to {none} U objects,
    /// keep the feasible ones (IoU and class match, object credited once,
    /// credited in time order, matched declarations that lose the credit only
    /// if every match is credited earlier) and maximize credits, then earliest
    /// credit frames.
    fn brute_force(decls: &[Declaration], gt: &GroundTruth, iou_lim: f64) -> (usize, usize, Vec<(u64, u64)>) {
        let n_obj = gt.objects.len();
        let choices = n_obj + 1;
        let mut best: Option<(usize, Vec<u64>, usize, Vec<(u64, u64)>)> = None;
        for code in 0..choices.pow(decls.len() as u32) {
            let mut c = code;
            let assign: Vec<usize> = (0..decls.len())
                .map(|_| {
                    let a = c % choices;
                    c /= choices;
                    a
                })
                .collect();
            let mut used = vec![None; n_obj];
            let mut ok = true;
            for (k, &a) in assign.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                let o = &gt.objects[a - 1];
                let d = &decls[k];
                let m = matching_objects(gt, d.frame, &d.bbox, d.label, iou_lim);
                if !m.iter().any(|(_, id)| *id == o.id) || used[a - 1].is_some() {
                    ok = false;
                    break;
                }
                used[a - 1] = Some(d.frame);
            }
            if !ok {
                continue;
            }
            // An unassigned declaration matching an object left uncredited, or
            // credited later, would have taken that credit first.
            let greedy_ok = assign.iter().enumerate().filter(|(_, &a)| a == 0).all(|(k, _)| {
                let d = &decls[k];
                matching_objects(gt, d.frame, &d.bbox, d.label, iou_lim)
                    .iter()
                    .all(|(_, id)| used[*id as usize].is_some_and(|f| f <= d.frame))
            });
            if !greedy_ok {
                continue;
            }
            let credits = used.iter().filter(|u| u.is_some()).count();
            let frames: Vec<u64> = used.iter().flatten().copied().collect();
            let fa = assign
                .iter()
                .enumerate()
                .filter(|(k, &a)| {
                    a == 0 && matching_objects(gt, decls[*k].frame, &decls[*k].bbox, decls[*k].label, iou_lim).is_empty()
                })
                .count();
            let credited: Vec<(u64, u64)> = used
                .iter()
                .enumerate()
                .filter_map(|(i, u)| u.map(|f| (i as u64, f)))
                .collect();
            let better = match &best {
                None => true,
                Some((bc, bf, _, _)) => credits > *bc || (credits == *bc && frames < *bf),
            };
            if better {
                best = Some((credits, frames, fa, credited));
            }
        }
        let (c, _, fa, credited) = best.unwrap();
        (c, fa, credited)
    }

    #[test]
    fn duplicate_on_same_object_is_ignored() {
        let gt = truth(vec![object(0, 1, 3, 30, 0.3), object(1, 1, 3, 30, 0.7)]);
        let decls = [decl(9, 0.3, 1), decl(5, 0.3, 1)];
        let m = match_declarations(&decls, &gt, 0.5);
        assert_eq!(m.outcomes[1], MatchOutcome::Correct { object_id: 0 });
        assert_eq!(m.outcomes[0], MatchOutcome::Duplicate { object_id: 0 });
        let (credits, fa, credited) = brute_force(&decls, &gt, 0.5);
        assert_eq!((credits, fa), (m.n_correct(), m.n_false_alarms()));
        assert_eq!(credited, vec![(0, 5)]);
        let r = evaluate(&decls, &gt, 0.5, 1.0);
        assert_eq!((r.n_declared, r.n_correct, r.far), (1, 1, 0.0));
        assert_eq!(r.average_delay, (2.0 + 27.0) / 2.0);
    }

    #[test]
    fn greedy_matching_agrees_with_brute_force_on_toy_cases() {
        let gt = truth(vec![object(0, 1, 3, 30, 0.3), object(1, 2, 6, 20, 0.33)]);
        let xs = [0.3, 0.33, 0.315, 0.7];
        let mut n = 0;
        for a in 0..4 {
            for b in 0..4 {
                for (fa, fb) in [(5, 9), (9, 5), (7, 7), (4, 25)] {
                    for (la, lb) in [(1, 1), (1, 2), (2, 2)] {
                        let decls = [decl(fa, xs[a], la), decl(fb, xs[b], lb)];
                        let m = match_declarations(&decls, &gt, 0.5);
                        let (credits, false_alarms, credited) = brute_force(&decls, &gt, 0.5);
                        let mut got: Vec<(u64, u64)> = m.credited(&decls).collect();
                        got.sort_unstable();
                        assert_eq!((m.n_correct(), m.n_false_alarms()), (credits, false_alarms), "{decls:?}");
                        assert_eq!(got, credited, "{decls:?}");
                        n += 1;
                    }
                }
            }
        }
        assert_eq!(n, 192);
    }

    #[test]
    fn undetected_object_has_maximal_delay() {
        let gt = truth(vec![object(0, 1, 10, 30, 0.3)]);
        let r = evaluate(&[], &gt, 0.5, 1.0);
        assert_eq!(r.average_delay, 20.0);
        assert_eq!((r.n_declared, r.far), (0, 0.0));
    }

    #[test]
    fn all_declared_on_appearance_gives_zero_delay() {
        let gt = truth(vec![object(0, 1, 10, 30, 0.3), object(1, 2, 4, 8, 0.7)]);
        let r = evaluate(&[decl(10, 0.3, 1), decl(4, 0.7, 2)], &gt, 0.5, 1.0);
        assert_eq!(r.average_delay, 0.0);
    }

    #[test]
    fn merge_is_associative() {
        let gt = truth(vec![object(0, 1, 10, 30, 0.3)]);
        let a = evaluate(&[decl(12, 0.3, 1)], &gt, 0.5, 1.0);
        let b = evaluate(&[decl(12, 0.8, 1)], &gt, 0.5, 1.0);
        let c = evaluate(&[], &gt, 0.5, 1.0);
        let left = EvalReport::merge(&[EvalReport::merge(&[a.clone(), b.clone()]), c.clone()]);
        let flat = EvalReport::merge(&[a, b, c]);
        assert_eq!(
            (left.n_declared, left.n_correct, left.far, left.average_delay),
            (flat.n_declared, flat.n_correct, flat.far, flat.average_delay)
        );
        assert_eq!(flat.average_delay, (2.0 + 20.0 + 20.0) / 3.0);
        assert_eq!(flat.far, 0.5);
    }

    fn det(x: f64, v: &[f64]) -> Detection {
        Detection::new(bb(x, 0.5), ClassProbs::new(v.to_vec()).unwrap(), 1.0).unwrap()
    }

    fn perfect(appear: u64, disappear: u64) -> Vec<FrameData> {
        (0..40)
            .map(|t| {
                let d = if (appear..=disappear).contains(&t) {
                    vec![det(0.3, &[0.1, 0.9, 0.0])]
                } else {
                    vec![]
                };
                FrameData::new(t, d)
            })
            .collect()
    }

    #[test]
    fn baseline_perfect_detector_has_zero_delay() {
        let gt = truth(vec![object(0, 1, 10, 30, 0.3)]);
        let frames = perfect(10, 30);
        let r = baseline_single_frame(&frames, &gt, 0.5, 0.5);
        assert_eq!((r.n_declared, r.n_correct, r.average_delay), (1, 1, 0.0));
        assert_eq!(baseline_tracks(&frames, 0.5, 0.5).len(), 1);
    }

    #[test]
    fn baseline_above_all_scores_declares_nothing() {
        let gt = truth(vec![object(0, 1, 10, 30, 0.3)]);
        let r = baseline_single_frame(&perfect(10, 30), &gt, 0.95, 0.5);
        assert_eq!((r.n_declared, r.average_delay), (0, 20.0));
    }

    #[test]
    fn baseline_on_clutter_only_is_all_false_alarms() {
        use crate::synth::{null_stream, ClutterProbs, ScenarioSpec};
        let spec = ScenarioSpec {
            n_classes: 2,
            n_frames: 200,
            objects: vec![],
            clutter_rate: 1.0,
            clutter_probs: ClutterProbs::default(),
            clutter_size: [0.05, 0.2],
            clutter_mu_range: [0.5, 1.0],
            seed: 3,
        };
        let frames = null_stream(&spec).unwrap();
        let gt = GroundTruth { n_frames: 200, objects: vec![] };
        for h in [0.2, 0.4, 0.6] {
            let r = baseline_single_frame(&frames, &gt, h, 0.5);
            assert!(r.n_declared > 0);
            assert_eq!(r.far, 1.0);
        }
    }

    #[test]
    fn baseline_track_breaks_on_gap() {
        let mut frames = perfect(10, 30);
        frames[20].detections.clear();
        assert_eq!(baseline_tracks(&frames, 0.5, 0.5).len(), 2);
        // The second track matches the already credited object: ignored.
        let gt = truth(vec![object(0, 1, 10, 30, 0.3)]);
        let r = baseline_single_frame(&frames, &gt, 0.5, 0.5);
        assert_eq!((r.n_declared, r.n_correct), (1, 1));
    }

    fn config() -> DetectorConfig {
        DetectorConfig {
            threshold: 2.0,
            c: 3.0,
            retire_on_declare: false,
            ..DetectorConfig::uniform(2)
        }
    }

    #[test]
    fn single_threshold_sweep_reproduces_report() {
        let gt = truth(vec![object(0, 1, 10, 30, 0.3)]);
        let case = Case { frames: perfect(10, 30), truth: gt.clone() };
        let pts = sweep_detector(std::slice::from_ref(&case), &config(), Mode::Recursive, &[2.0], SweepStrategy::Rerun, 0.5).unwrap();
        let decls = run_stream(&config(), Mode::Recursive, &case.frames).unwrap();
        let direct = evaluate(&decls, &gt, 0.5, 2.0);
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].report, EvalReport::merge(&[direct]));
        assert_eq!(pts[0].report.average_delay, 2.0);
    }

    fn noisy_cases() -> Vec<Case> {
        use crate::synth::{generate, ClutterProbs, ObjectSpec, ScenarioSpec};
        (0..6)
            .map(|seed| {
                let spec = ScenarioSpec {
                    n_classes: 2,
                    n_frames: 60,
                    objects: vec![ObjectSpec {
                        class_id: 1 + (seed as usize % 2),
                        appear_frame: 10,
                        disappear_frame: 50,
                        initial: BoundingBox::new(0.4, 0.5, 0.12, 0.12).unwrap(),
                        velocity: [0.002, 0.0, 0.0, 0.0],
                        miss_prob: 0.3,
                        box_jitter_sigma: 0.01,
                        prob_concentration: Some(8.0),
                        peak_prob: 0.7,
                        mu_range: [0.6, 1.0],
                        proposals: 1,
                    }],
                    clutter_rate: 1.0,
                    clutter_probs: ClutterProbs::default(),
                    clutter_size: [0.05, 0.2],
                    clutter_mu_range: [0.3, 1.0],
                    seed,
                };
                let (frames, truth) = generate(&spec).unwrap();
                Case { frames, truth }
            })
            .collect()
    }

    #[test]
    fn post_hoc_equals_rerun_without_retire() {
        let cases = noisy_cases();
        let grid = [0.5, 1.0, 2.0, 3.0, 5.0];
        for mode in [Mode::Recursive, Mode::Full] {
            let a = sweep_detector(&cases, &config(), mode, &grid, SweepStrategy::PostHoc, 0.5).unwrap();
            let b = sweep_detector(&cases, &config(), mode, &grid, SweepStrategy::Rerun, 0.5).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.report, y.report, "{mode:?}");
            }
        }
    }

    #[test]
    fn delay_is_monotone_in_threshold() {
        let cases = noisy_cases();
        let pts = sweep_detector(&cases, &config(), Mode::Recursive, &[4.0, 1.0], SweepStrategy::PostHoc, 0.5).unwrap();
        assert_eq!(pts[0].report.threshold, 1.0);
        assert!(pts[0].report.average_delay <= pts[1].report.average_delay);
    }

    #[test]
    fn null_run_length_grows_with_threshold() {
        let cases = noisy_cases();
        let null: Vec<Vec<FrameData>> = cases
            .iter()
            .map(|c| c.frames.iter().map(|f| FrameData::new(f.frame, f.detections.clone())).collect())
            .collect();
        let arl = mean_run_length(&null, &config(), Mode::Recursive, &[0.5, 1.0, 2.0, 4.0, 8.0]).unwrap();
        assert!(arl.windows(2).all(|w| w[0] <= w[1]), "{arl:?}");
    }

    #[test]
    fn csv_row_has_every_column() {
        let gt = truth(vec![object(0, 1, 10, 30, 0.3)]);
        let p = SweepPoint {
            report: evaluate(&[decl(12, 0.3, 1)], &gt, 0.5, 2.5),
            mean_runtime_per_frame: 0.0,
        };
        assert_eq!(csv_row(&p), "2.5,1,1,0,0,2,0");
        assert_eq!(CSV_HEADER.split(',').count(), csv_row(&p).split(',').count());
    }
}
