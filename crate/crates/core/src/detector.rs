//! Online detection state machine.
//!
//! Each frame the detector (1) moves every live trajectory into the new
//! frame, (2) spawns trajectories from detections whose best object class
//! beats background and survive NMS against the live boxes, (3) advances the
//! per-class statistics, (4) drops trajectories whose statistics are all zero
//! and (5) declares trajectories whose best statistic exceeds the threshold.
//!
//! [`Mode::Recursive`] keeps only the live trajectories and updates each
//! statistic by CUSUM. [`Mode::Full`] buffers frames back to the oldest live
//! spawn and re-estimates every path by coordinate ascent each frame, scoring
//! it with the non-recursive sum of log increments since spawn.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{log_increments, EvidenceContext};
use crate::geometry::{iou, predict_constant_velocity, BoundingBox};
use crate::model::{Declaration, DetectorConfig, FrameData, Trajectory};
use crate::trajectory::{full_map_estimate, recursive_box_update};

/// Boxes a recursive-mode trajectory keeps: enough for the velocity prior.
const RECURSIVE_HISTORY: usize = 2;

/// `[w + increment]^+`.
pub fn cusum_update(w: f64, increment: f64) -> f64 {
    (w + increment).max(0.0)
}

/// Indices of detections whose best object class strictly beats background.
pub fn spawn_candidates(frame: &FrameData) -> Vec<usize> {
    frame
        .detections
        .iter()
        .enumerate()
        .filter(|(_, d)| {
            let (_, best) = d.probs.best_object_class();
            best > d.probs.background()
        })
        .map(|(k, _)| k)
        .collect()
}

/// Greedy NMS of new candidates against live trajectory boxes.
///
/// Live boxes are never suppressed and suppress every new box overlapping
/// them beyond `nms_iou`. Remaining new boxes are visited by descending score
/// (ties: lower index first) and each kept box suppresses the later ones it
/// overlaps. Returns the surviving indices into `new` in ascending order.
pub fn nms(existing: &[BoundingBox], new: &[(BoundingBox, f64)], nms_iou: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..new.len())
        .filter(|&k| existing.iter().all(|e| iou(e, &new[k].0) <= nms_iou))
        .collect();
    order.sort_by(|&a, &b| new[b].1.total_cmp(&new[a].1).then(a.cmp(&b)));

    let mut kept: Vec<usize> = Vec::new();
    for k in order {
        if kept.iter().all(|&j| iou(&new[j].0, &new[k].0) <= nms_iou) {
            kept.push(k);
        }
    }
    kept.sort_unstable();
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Recursive,
    Full,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recursive" => Ok(Mode::Recursive),
            "full" => Ok(Mode::Full),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

/// One recorded frame of a trajectory's statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub frame: u64,
    pub bbox: BoundingBox,
    /// Log increments applied this frame, classes `1..=n`.
    pub increments: Vec<f64>,
    /// Statistics after the update, classes `1..=n`.
    pub w: Vec<f64>,
}

impl PathPoint {
    /// `(label, statistic)` with ties resolved to the lowest class.
    pub fn best(&self) -> (usize, f64) {
        let mut best = (1, self.w[0]);
        for (k, &w) in self.w.iter().enumerate().skip(1) {
            if w > best.1 {
                best = (k + 1, w);
            }
        }
        best
    }
}

/// Statistic history of one trajectory, from spawn until it was pruned,
/// retired or the stream ended.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticPath {
    pub trajectory_id: u64,
    pub spawn_frame: u64,
    pub points: Vec<PathPoint>,
}

impl StatisticPath {
    /// The declaration a detector at `threshold` would have emitted, given the
    /// path was recorded with `retire_on_declare = false`.
    pub fn first_crossing(&self, threshold: f64) -> Option<Declaration> {
        self.points.iter().find_map(|p| {
            let (label, statistic) = p.best();
            (statistic > threshold).then_some(Declaration {
                trajectory_id: self.trajectory_id,
                frame: p.frame,
                bbox: p.bbox,
                label,
                statistic,
                spawn_frame: self.spawn_frame,
            })
        })
    }
}

/// Per-stream detector state. Calls to [`Detector::step`] must be sequential
/// and frame indices consecutive.
#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    mode: Mode,
    trajectories: Vec<Trajectory>,
    next_id: u64,
    declarations: Vec<Declaration>,
    last_frame: Option<u64>,
    /// Full mode only: frames from the oldest live spawn onwards.
    buffer: Vec<FrameData>,
    paths: Option<Vec<StatisticPath>>,
}

struct Pending {
    bbox: BoundingBox,
    evidence: Vec<f64>,
    /// Full mode replaces the whole path.
    path: Option<Vec<BoundingBox>>,
    /// Full mode: per-class sums since spawn.
    totals: Option<Vec<f64>>,
}

impl Detector {
    pub fn new(config: DetectorConfig, mode: Mode) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            mode,
            trajectories: Vec::new(),
            next_id: 0,
            declarations: Vec::new(),
            last_frame: None,
            buffer: Vec::new(),
            paths: None,
        })
    }

    /// Keep a [`StatisticPath`] for every trajectory (evaluation only; the
    /// memory grows with the stream).
    pub fn with_recording(mut self) -> Self {
        self.paths = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn declarations(&self) -> &[Declaration] {
        &self.declarations
    }

    pub fn buffered_frames(&self) -> usize {
        self.buffer.len()
    }

    pub fn recorded_paths(&self) -> Option<&[StatisticPath]> {
        self.paths.as_deref()
    }

    pub fn into_recorded_paths(self) -> Option<Vec<StatisticPath>> {
        self.paths
    }

    /// Consumes one frame and returns the declarations it triggered.
    ///
    /// On error the state is left as it was before the call.
    pub fn step(&mut self, frame: &FrameData) -> Result<Vec<Declaration>> {
        if let Some(last) = self.last_frame {
            if frame.frame != last + 1 {
                return Err(Error::FrameGap {
                    expected: last + 1,
                    found: frame.frame,
                });
            }
        }
        let ctx = EvidenceContext::new(&self.config, frame)?;

        if self.mode == Mode::Full {
            self.buffer.push(frame.clone());
        }
        let updates = match self.mode {
            Mode::Recursive => self.update_recursive(&ctx),
            Mode::Full => self.update_full(),
        };
        let updates = match updates {
            Ok(u) => u,
            Err(e) => {
                if self.mode == Mode::Full {
                    self.buffer.pop();
                }
                return Err(e);
            }
        };
        let spawns = match self.spawn(&ctx, &updates) {
            Ok(s) => s,
            Err(e) => {
                if self.mode == Mode::Full {
                    self.buffer.pop();
                }
                return Err(e);
            }
        };

        self.last_frame = Some(frame.frame);
        for (traj, up) in self.trajectories.iter_mut().zip(updates) {
            apply_update(traj, up, &self.config, self.mode, None);
            traj.last_frame = frame.frame;
        }
        for (spawn_classes, up) in spawns {
            let mut traj = Trajectory {
                id: self.next_id,
                spawn_frame: frame.frame,
                last_frame: frame.frame,
                boxes: Vec::new(),
                w: vec![0.0; self.config.n_classes()],
                evidence: Vec::new(),
                declared: false,
            };
            self.next_id += 1;
            apply_update(&mut traj, up, &self.config, self.mode, Some(&spawn_classes));
            if let Some(paths) = self.paths.as_mut() {
                paths.push(StatisticPath {
                    trajectory_id: traj.id,
                    spawn_frame: traj.spawn_frame,
                    points: Vec::new(),
                });
            }
            self.trajectories.push(traj);
        }
        if let Some(paths) = self.paths.as_mut() {
            for traj in &self.trajectories {
                let point = PathPoint {
                    frame: frame.frame,
                    bbox: *traj.current_box(),
                    increments: last_increments(traj),
                    w: traj.w.clone(),
                };
                paths[traj.id as usize].points.push(point);
            }
        }

        self.trajectories.retain(|t| !t.is_dead());

        let mut fired = Vec::new();
        let threshold = self.config.threshold;
        let retire = self.config.retire_on_declare;
        self.trajectories.retain_mut(|traj| {
            let (label, statistic) = traj.best_class();
            if traj.declared || statistic <= threshold {
                return true;
            }
            fired.push(Declaration {
                trajectory_id: traj.id,
                frame: frame.frame,
                bbox: *traj.current_box(),
                label,
                statistic,
                spawn_frame: traj.spawn_frame,
            });
            traj.declared = true;
            !retire
        });
        self.declarations.extend(fired.iter().cloned());

        if self.mode == Mode::Full {
            self.trim_buffer(frame.frame);
        }
        Ok(fired)
    }

    fn active_for(&self, traj: &Trajectory) -> Vec<usize> {
        if self.config.class_reduction {
            traj.active_classes()
        } else {
            (1..=self.config.n_classes()).collect()
        }
    }

    fn update_recursive(&self, ctx: &EvidenceContext<'_>) -> Result<Vec<Pending>> {
        self.trajectories
            .iter()
            .map(|traj| {
                let up = recursive_box_update(ctx, &traj.boxes, &self.active_for(traj))?;
                Ok(Pending {
                    bbox: up.chosen.bbox,
                    evidence: up.evidence,
                    path: None,
                    totals: None,
                })
            })
            .collect()
    }

    fn update_full(&self) -> Result<Vec<Pending>> {
        let start = self.buffer[0].frame;
        self.trajectories
            .iter()
            .map(|traj| {
                let from = (traj.spawn_frame - start) as usize;
                let frames = &self.buffer[from..];
                let mut init = traj.boxes.clone();
                init.push(predict_constant_velocity(&traj.boxes));
                let est = full_map_estimate(frames, &init, &self.config, &self.active_for(traj))?;
                Ok(Pending {
                    bbox: *est.boxes.last().expect("non-empty path"),
                    evidence: est.last_evidence,
                    path: Some(est.boxes),
                    totals: Some(est.log_increments),
                })
            })
            .collect()
    }

    fn spawn(
        &self,
        ctx: &EvidenceContext<'_>,
        updates: &[Pending],
    ) -> Result<Vec<(Vec<usize>, Pending)>> {
        let frame = ctx.frame_data;
        let candidates = spawn_candidates(frame);
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let existing: Vec<BoundingBox> = updates.iter().map(|u| u.bbox).collect();
        let scored: Vec<(BoundingBox, f64)> = candidates
            .iter()
            .map(|&k| {
                let d = &frame.detections[k];
                (d.bbox, d.object_score())
            })
            .collect();
        let survivors = nms(&existing, &scored, self.config.nms_iou);

        let mut out = Vec::with_capacity(survivors.len());
        for s in survivors {
            let det = &frame.detections[candidates[s]];
            let spawn_classes = det.probs.classes_above_background();
            let active = if self.config.class_reduction {
                spawn_classes.clone()
            } else {
                (1..=self.config.n_classes()).collect()
            };
            let pending = match self.mode {
                Mode::Recursive => {
                    let up = recursive_box_update(ctx, &[det.bbox], &active)?;
                    Pending {
                        bbox: up.chosen.bbox,
                        evidence: up.evidence,
                        path: None,
                        totals: None,
                    }
                }
                Mode::Full => {
                    let est = full_map_estimate(
                        std::slice::from_ref(frame),
                        &[det.bbox],
                        &self.config,
                        &active,
                    )?;
                    Pending {
                        bbox: est.boxes[0],
                        evidence: est.last_evidence,
                        path: Some(est.boxes),
                        totals: Some(est.log_increments),
                    }
                }
            };
            out.push((spawn_classes, pending));
        }
        Ok(out)
    }

    fn trim_buffer(&mut self, current: u64) {
        let keep_from = self
            .trajectories
            .iter()
            .map(|t| t.spawn_frame)
            .min()
            .unwrap_or(current + 1);
        let start = self.buffer.first().map_or(keep_from, |f| f.frame);
        let drop = (keep_from.saturating_sub(start) as usize).min(self.buffer.len());
        self.buffer.drain(..drop);
    }
}

fn last_increments(traj: &Trajectory) -> Vec<f64> {
    log_increments(&traj.evidence)
}

/// Writes a pending update into `traj`. `spawn_classes` is set for fresh
/// spawns, whose statistics are all zero.
fn apply_update(
    traj: &mut Trajectory,
    up: Pending,
    config: &DetectorConfig,
    mode: Mode,
    spawn_classes: Option<&[usize]>,
) {
    let increments = log_increments(&up.evidence);
    match (mode, up.path, up.totals) {
        (Mode::Full, Some(path), Some(totals)) => {
            traj.boxes = path;
            for (w, total) in traj.w.iter_mut().zip(totals) {
                *w = total.max(0.0);
            }
        }
        _ => {
            if traj.boxes.len() == RECURSIVE_HISTORY {
                traj.boxes.remove(0);
            }
            traj.boxes.push(up.bbox);
            for (k, (w, inc)) in traj.w.iter_mut().zip(&increments).enumerate() {
                let class = k + 1;
                let active = match spawn_classes {
                    _ if !config.class_reduction => true,
                    Some(classes) => classes.contains(&class),
                    None => *w > 0.0,
                };
                if active {
                    *w = cusum_update(*w, *inc);
                }
            }
        }
    }
    traj.evidence = up.evidence;
}

/// Runs a fresh detector over `frames` and returns every declaration.
pub fn run_stream<'a>(
    config: &DetectorConfig,
    mode: Mode,
    frames: impl IntoIterator<Item = &'a FrameData>,
) -> Result<Vec<Declaration>> {
    let mut det = Detector::new(config.clone(), mode)?;
    for frame in frames {
        det.step(frame)?;
    }
    Ok(det.declarations)
}

/// Runs a recording detector (`retire_on_declare` forced off) and returns
/// the statistic path of every trajectory.
pub fn record_paths<'a>(
    config: &DetectorConfig,
    mode: Mode,
    frames: impl IntoIterator<Item = &'a FrameData>,
) -> Result<Vec<StatisticPath>> {
    let config = DetectorConfig {
        retire_on_declare: false,
        ..config.clone()
    };
    let mut det = Detector::new(config, mode)?.with_recording();
    for frame in frames {
        det.step(frame)?;
    }
    Ok(det.into_recorded_paths().unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClassProbs, Detection};

    fn bb(x: f64, y: f64, lx: f64, ly: f64) -> BoundingBox {
        BoundingBox::new(x, y, lx, ly).unwrap()
    }

    fn det(b: BoundingBox, v: &[f64]) -> Detection {
        Detection::new(b, ClassProbs::new(v.to_vec()).unwrap(), 1.0).unwrap()
    }

    /// One box per frame from `appear` on, drifting 0.002 per frame in x:
    /// slow enough to stay above the overlap limit of the spawn box.
    fn perfect_stream(frames: u64, appear: u64, v: &[f64]) -> Vec<FrameData> {
        (0..frames)
            .map(|t| {
                if t < appear {
                    FrameData::empty(t)
                } else {
                    let x = 0.3 + 0.002 * (t - appear) as f64;
                    FrameData::new(t, vec![det(bb(x, 0.5, 0.1, 0.1), v)])
                }
            })
            .collect()
    }

    fn config() -> DetectorConfig {
        DetectorConfig {
            c: 3.0,
            threshold: 2.0,
            ..DetectorConfig::uniform(2)
        }
    }

    #[test]
    fn cusum_examples() {
        assert_eq!(cusum_update(0.0, -1.0), 0.0);
        assert!((cusum_update(0.5, 0.3) - 0.8).abs() < 1e-15);
        let mut w = 0.0;
        let mut trace = Vec::new();
        for inc in [1.0, -3.0, 2.0, 0.5] {
            w = cusum_update(w, inc);
            trace.push(w);
        }
        assert_eq!(trace, vec![1.0, 0.0, 2.0, 2.5]);
    }

    #[test]
    fn spawn_gating_is_strict() {
        let b = bb(0.5, 0.5, 0.1, 0.1);
        let frame = FrameData::new(
            0,
            vec![det(b, &[0.6, 0.3, 0.1]), det(b, &[0.3, 0.6, 0.1]), det(b, &[0.4, 0.4, 0.2])],
        );
        assert_eq!(spawn_candidates(&frame), vec![1]);
    }

    #[test]
    fn nms_examples() {
        let b = bb(0.5, 0.5, 0.2, 0.2);
        assert!(nms(&[b], &[(b, 0.9)], 0.5).is_empty());
        let far = bb(0.1, 0.1, 0.1, 0.1);
        assert_eq!(nms(&[], &[(b, 0.4), (far, 0.3)], 0.5), vec![0, 1]);
    }

    /// Every permutation order of greedy suppression, used as an oracle for
    /// which box survives among mutually overlapping candidates.
    fn brute_force_survivors(new: &[(BoundingBox, f64)], nms_iou: f64) -> Vec<usize> {
        fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(i);
                for mut p in permutations(rest) {
                    p.insert(0, head);
                    out.push(p);
                }
            }
            out
        }
        // Keep the order whose kept set has the best lexicographic score profile.
        let mut best: Option<(Vec<f64>, Vec<usize>)> = None;
        for order in permutations((0..new.len()).collect()) {
            let mut kept: Vec<usize> = Vec::new();
            for k in order {
                if kept.iter().all(|&j| iou(&new[j].0, &new[k].0) <= nms_iou) {
                    kept.push(k);
                }
            }
            let mut scores: Vec<f64> = kept.iter().map(|&k| new[k].1).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            kept.sort_unstable();
            if best.as_ref().is_none_or(|(s, _)| scores > *s) {
                best = Some((scores, kept));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn nms_keeps_top_of_overlapping_triple() {
        // Pairwise IoU 0.8: horizontal shifts of a 0.2 box by 0.0222...
        let d = 0.2 * (1.0 - 0.8) / (1.0 + 0.8);
        let a = bb(0.5, 0.5, 0.2, 0.2);
        let b = bb(0.5 + d, 0.5, 0.2, 0.2);
        let c = bb(0.5, 0.5 + d, 0.2, 0.2);
        assert!((iou(&a, &b) - 0.8).abs() < 1e-9);
        let new = [(a, 0.3), (b, 0.9), (c, 0.6)];
        let got = nms(&[], &new, 0.5);
        assert_eq!(got, vec![1]);
        assert_eq!(got, brute_force_survivors(&new, 0.5));
    }

    #[test]
    fn no_detections_no_trajectories() {
        let frames: Vec<FrameData> = (0..20).map(FrameData::empty).collect();
        for mode in [Mode::Recursive, Mode::Full] {
            let mut d = Detector::new(config(), mode).unwrap();
            for f in &frames {
                assert!(d.step(f).unwrap().is_empty());
                assert!(d.trajectories().is_empty());
            }
        }
    }

    #[test]
    fn perfect_detector_declares_two_frames_after_spawn() {
        let inc = (4.7f64 / 2.3).ln();
        assert!((inc - 0.7147).abs() < 1e-4);
        // First k with k * inc > 2: k = 3, i.e. spawn frame + 2.
        let k = (2.0 / inc).floor() as u64 + 1;
        assert_eq!(k, 3);

        let frames = perfect_stream(15, 4, &[0.1, 0.9, 0.0]);
        for mode in [Mode::Recursive, Mode::Full] {
            let decls = run_stream(&config(), mode, &frames).unwrap();
            // Retiring frees the object to respawn and be declared again.
            assert_eq!(decls.len(), 3, "{mode:?}");
            assert_eq!(decls[1].spawn_frame, 7);
            let d = &decls[0];
            assert_eq!((d.spawn_frame, d.frame, d.label), (4, 4 + k - 1, 1));
            assert!((d.statistic - 3.0 * inc).abs() < 1e-9);
        }
    }

    #[test]
    fn uninformative_boxes_never_spawn() {
        let third = 1.0 / 3.0;
        let frames = perfect_stream(15, 0, &[third, third, third]);
        let mut d = Detector::new(config(), Mode::Recursive).unwrap();
        for f in &frames {
            d.step(f).unwrap();
            assert!(d.trajectories().is_empty());
        }
    }

    #[test]
    fn frame_gap_is_rejected() {
        let mut d = Detector::new(config(), Mode::Recursive).unwrap();
        d.step(&FrameData::empty(3)).unwrap();
        assert_eq!(
            d.step(&FrameData::empty(5)),
            Err(Error::FrameGap { expected: 4, found: 5 })
        );
        d.step(&FrameData::empty(4)).unwrap();
    }

    #[test]
    fn misconfigured_c_aborts_and_keeps_state() {
        let cfg = DetectorConfig { c: 0.5, ..config() };
        let mut d = Detector::new(cfg, Mode::Full).unwrap();
        let f = FrameData::new(0, vec![det(bb(0.5, 0.5, 0.1, 0.1), &[0.1, 0.9, 0.0])]);
        assert!(matches!(d.step(&f), Err(Error::NonPositiveEvidence { frame: 0, .. })));
        assert_eq!(d.buffered_frames(), 0);
        assert!(d.trajectories().is_empty());
        d.step(&FrameData::empty(0)).unwrap();
    }

    #[test]
    fn keeps_declared_trajectory_when_not_retiring() {
        let cfg = DetectorConfig {
            retire_on_declare: false,
            ..config()
        };
        let frames = perfect_stream(12, 2, &[0.1, 0.9, 0.0]);
        let mut d = Detector::new(cfg, Mode::Recursive).unwrap();
        let mut total = 0;
        for f in &frames {
            total += d.step(f).unwrap().len();
        }
        assert_eq!(total, 1);
        assert_eq!(d.trajectories().len(), 1);
        let t = &d.trajectories()[0];
        assert_eq!((t.age(), t.boxes.len()), (10, 2));
    }

    #[test]
    fn recursive_state_holds_no_frames() {
        let frames = perfect_stream(30, 0, &[0.1, 0.9, 0.0]);
        let cfg = DetectorConfig {
            retire_on_declare: false,
            ..config()
        };
        let mut rec = Detector::new(cfg.clone(), Mode::Recursive).unwrap();
        let mut full = Detector::new(cfg, Mode::Full).unwrap();
        for f in &frames {
            rec.step(f).unwrap();
            full.step(f).unwrap();
        }
        assert_eq!(rec.buffered_frames(), 0);
        assert_eq!(full.buffered_frames(), 30);
    }

    #[test]
    fn recorded_paths_reproduce_declarations() {
        let frames = perfect_stream(20, 3, &[0.1, 0.9, 0.0]);
        let cfg = DetectorConfig {
            retire_on_declare: false,
            ..config()
        };
        let paths = record_paths(&cfg, Mode::Recursive, &frames).unwrap();
        let decls = run_stream(&cfg, Mode::Recursive, &frames).unwrap();
        let replayed: Vec<Declaration> = paths.iter().filter_map(|p| p.first_crossing(2.0)).collect();
        assert_eq!(replayed, decls);
    }

    #[test]
    fn mode_parses() {
        assert_eq!("full".parse::<Mode>().unwrap(), Mode::Full);
        assert!("fast".parse::<Mode>().is_err());
    }
}
