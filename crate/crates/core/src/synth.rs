//! Seeded synthetic detector streams with ground truth.
//!
//! Class probabilities are drawn from a Dirichlet distribution with
//! parameters `concentration * m + 1`, where `m` is a mean vector putting
//! `peak` on the dominant class and `1 - peak` on background (or, for a
//! background-dominant box, spreading `1 - peak` over the object classes).
//! As the concentration grows the draw converges to `m`; a missing
//! concentration means the noise-free limit `v = m`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::model::{ClassProbs, Detection, FrameData};

const MIN_SCALE: f64 = 1e-3;

fn default_peak() -> f64 {
    0.9
}

fn default_mu_range() -> [f64; 2] {
    [1.0, 1.0]
}

/// One ground-truth object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class_id: usize,
    /// First visible frame (the change time).
    pub appear_frame: u64,
    /// Last visible frame.
    pub disappear_frame: u64,
    #[serde(rename = "initial_box")]
    pub initial: BoundingBox,
    /// Per-frame change of `(x, y, lx, ly)`.
    #[serde(default)]
    pub velocity: [f64; 4],
    #[serde(default)]
    pub miss_prob: f64,
    #[serde(default)]
    pub box_jitter_sigma: f64,
    /// `None` is the noise-free limit.
    #[serde(default)]
    pub prob_concentration: Option<f64>,
    #[serde(default = "default_peak")]
    pub peak_prob: f64,
    #[serde(default = "default_mu_range")]
    pub mu_range: [f64; 2],
    /// Boxes emitted per visible frame, each jittered and labelled
    /// independently (a proposal cloud, as from a detector before NMS).
    #[serde(default = "default_proposals")]
    pub proposals: usize,
}

fn default_proposals() -> usize {
    1
}

/// How clutter boxes are labelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClutterProbs {
    /// Half background-dominant, half dominated by a random object class.
    Noisy {
        concentration: Option<f64>,
        #[serde(default = "default_peak")]
        peak_prob: f64,
    },
    /// `v` equals the uniform prior.
    Uninformative,
}

impl Default for ClutterProbs {
    fn default() -> Self {
        ClutterProbs::Noisy {
            concentration: Some(5.0),
            peak_prob: default_peak(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_classes: usize,
    pub n_frames: u64,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    /// Expected clutter boxes per frame.
    #[serde(default)]
    pub clutter_rate: f64,
    #[serde(default)]
    pub clutter_probs: ClutterProbs,
    /// Clutter box side lengths are drawn uniformly from this range.
    #[serde(default = "default_clutter_size")]
    pub clutter_size: [f64; 2],
    #[serde(default = "default_mu_range")]
    pub clutter_mu_range: [f64; 2],
    pub seed: u64,
}

fn default_clutter_size() -> [f64; 2] {
    [0.05, 0.2]
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n_classes == 0 {
            return bad("n_classes must be at least 1".into());
        }
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1".into());
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite()) {
            return bad(format!("clutter_rate {} must be >= 0", self.clutter_rate));
        }
        check_range("clutter_size", self.clutter_size, f64::MIN_POSITIVE)?;
        check_range("clutter_mu_range", self.clutter_mu_range, 0.0)?;
        if let ClutterProbs::Noisy {
            concentration,
            peak_prob,
        } = &self.clutter_probs
        {
            check_noise(*concentration, *peak_prob)?;
        }
        for (k, obj) in self.objects.iter().enumerate() {
            if !(1..=self.n_classes).contains(&obj.class_id) {
                return bad(format!("object {k}: class_id {} outside 1..={}", obj.class_id, self.n_classes));
            }
            if obj.appear_frame >= obj.disappear_frame {
                return bad(format!("object {k}: appear_frame must precede disappear_frame"));
            }
            if obj.disappear_frame >= self.n_frames {
                return bad(format!("object {k}: disappear_frame must be < n_frames"));
            }
            if !(0.0..1.0).contains(&obj.miss_prob) {
                return bad(format!("object {k}: miss_prob must lie in [0, 1)"));
            }
            if !(obj.box_jitter_sigma >= 0.0 && obj.box_jitter_sigma.is_finite()) {
                return bad(format!("object {k}: box_jitter_sigma must be >= 0"));
            }
            if obj.velocity.iter().any(|v| !v.is_finite()) {
                return bad(format!("object {k}: non-finite velocity"));
            }
            check_noise(obj.prob_concentration, obj.peak_prob)?;
            check_range("mu_range", obj.mu_range, 0.0)?;
            if obj.proposals == 0 {
                return bad(format!("object {k}: proposals must be at least 1"));
            }
        }
        Ok(())
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if r[0] >= min && r[0] <= r[1] && r[1].is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("{name} must be an ordered range >= {min}, got {r:?}")))
    }
}

fn check_noise(concentration: Option<f64>, peak: f64) -> Result<()> {
    if let Some(c) = concentration {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidSpec(format!("concentration {c} must be > 0")));
        }
    }
    if !(peak > 0.0 && peak <= 1.0) {
        return Err(Error::InvalidSpec(format!("peak_prob {peak} must lie in (0, 1]")));
    }
    Ok(())
}

/// Ground-truth track of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub id: u64,
    pub class_id: usize,
    pub appear_frame: u64,
    pub disappear_frame: u64,
    pub boxes: Vec<FrameBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameBox {
    pub frame: u64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

impl GroundTruthObject {
    pub fn box_at(&self, frame: u64) -> Option<&BoundingBox> {
        if frame < self.appear_frame || frame > self.disappear_frame {
            return None;
        }
        self.boxes
            .binary_search_by_key(&frame, |fb| fb.frame)
            .ok()
            .map(|k| &self.boxes[k].bbox)
    }

    /// Delay charged when the object is never detected.
    pub fn max_delay(&self) -> u64 {
        self.disappear_frame - self.appear_frame
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub n_frames: u64,
    pub objects: Vec<GroundTruthObject>,
}

/// Dirichlet draw around `mean` (see the module docs).
fn draw_probs(rng: &mut ChaCha8Rng, mean: &[f64], concentration: Option<f64>) -> ClassProbs {
    let v = match concentration {
        None => mean.to_vec(),
        Some(c) => {
            let g: Vec<f64> = mean
                .iter()
                .map(|m| Gamma::new(c * m + 1.0, 1.0).expect("positive shape").sample(rng))
                .collect();
            let s: f64 = g.iter().sum();
            g.into_iter().map(|x| x / s).collect()
        }
    };
    normalized(v)
}

/// Renormalizes so the components sum to 1 within rounding.
fn normalized(mut v: Vec<f64>) -> ClassProbs {
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x = (*x / s).clamp(0.0, 1.0);
    }
    ClassProbs::new(v).expect("normalized probability vector")
}

fn object_mean(n_classes: usize, class_id: usize, peak: f64) -> Vec<f64> {
    let mut m = vec![0.0; n_classes + 1];
    m[class_id] = peak;
    m[0] += 1.0 - peak;
    m
}

fn background_mean(n_classes: usize, peak: f64) -> Vec<f64> {
    let mut m = vec![(1.0 - peak) / n_classes as f64; n_classes + 1];
    m[0] = peak;
    m
}

fn uniform_in(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn true_box(obj: &ObjectSpec, frame: u64) -> BoundingBox {
    let dt = (frame - obj.appear_frame) as f64;
    let b = obj.initial;
    let v = obj.velocity;
    BoundingBox {
        x: (b.x + v[0] * dt).clamp(0.0, 1.0),
        y: (b.y + v[1] * dt).clamp(0.0, 1.0),
        lx: (b.lx + v[2] * dt).max(MIN_SCALE),
        ly: (b.ly + v[3] * dt).max(MIN_SCALE),
    }
}

fn jittered(rng: &mut ChaCha8Rng, b: &BoundingBox, sigma: f64) -> BoundingBox {
    if sigma == 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    BoundingBox {
        x: b.x + n.sample(rng),
        y: b.y + n.sample(rng),
        lx: (b.lx + n.sample(rng)).max(MIN_SCALE),
        ly: (b.ly + n.sample(rng)).max(MIN_SCALE),
    }
}

fn clutter(rng: &mut ChaCha8Rng, spec: &ScenarioSpec, frame: &mut Vec<Detection>) {
    if spec.clutter_rate == 0.0 {
        return;
    }
    let count = Poisson::new(spec.clutter_rate)
        .expect("positive rate")
        .sample(rng) as usize;
    for _ in 0..count {
        let bbox = BoundingBox {
            x: rng.random_range(0.0..1.0),
            y: rng.random_range(0.0..1.0),
            lx: uniform_in(rng, spec.clutter_size),
            ly: uniform_in(rng, spec.clutter_size),
        };
        let probs = match &spec.clutter_probs {
            ClutterProbs::Uninformative => ClassProbs::uniform(spec.n_classes),
            ClutterProbs::Noisy {
                concentration,
                peak_prob,
            } => {
                let mean = if rng.random_bool(0.5) {
                    background_mean(spec.n_classes, *peak_prob)
                } else {
                    let class = rng.random_range(1..=spec.n_classes);
                    object_mean(spec.n_classes, class, *peak_prob)
                };
                draw_probs(rng, &mean, *concentration)
            }
        };
        let mu = uniform_in(rng, spec.clutter_mu_range);
        frame.push(Detection { bbox, probs, mu });
    }
}

/// Generates the detector stream and ground truth for `spec`.
///
/// Identical specs (including the seed) produce identical streams.
pub fn generate(spec: &ScenarioSpec) -> Result<(Vec<FrameData>, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = spec
        .objects
        .iter()
        .map(|o| object_mean(spec.n_classes, o.class_id, o.peak_prob))
        .collect();
    let mut truth = GroundTruth {
        n_frames: spec.n_frames,
        objects: spec
            .objects
            .iter()
            .enumerate()
            .map(|(k, o)| GroundTruthObject {
                id: k as u64,
                class_id: o.class_id,
                appear_frame: o.appear_frame,
                disappear_frame: o.disappear_frame,
                boxes: Vec::new(),
            })
            .collect(),
    };

    let mut frames = Vec::with_capacity(spec.n_frames as usize);
    for t in 0..spec.n_frames {
        let mut detections = Vec::new();
        for (k, obj) in spec.objects.iter().enumerate() {
            if t < obj.appear_frame || t > obj.disappear_frame {
                continue;
            }
            let truth_box = true_box(obj, t);
            truth.objects[k].boxes.push(FrameBox {
                frame: t,
                bbox: truth_box,
            });
            if obj.miss_prob > 0.0 && rng.random_bool(obj.miss_prob) {
                continue;
            }
            for _ in 0..obj.proposals {
                let bbox = jittered(&mut rng, &truth_box, obj.box_jitter_sigma);
                let probs = draw_probs(&mut rng, &means[k], obj.prob_concentration);
                let mu = uniform_in(&mut rng, obj.mu_range);
                detections.push(Detection { bbox, probs, mu });
            }
        }
        clutter(&mut rng, spec, &mut detections);
        frames.push(FrameData::new(t, detections));
    }
    Ok((frames, truth))
}

/// Clutter-only stream for run-length and false-alarm calibration.
pub fn null_stream(spec: &ScenarioSpec) -> Result<Vec<FrameData>> {
    let spec = ScenarioSpec {
        objects: Vec::new(),
        ..spec.clone()
    };
    Ok(generate(&spec)?.0)
}

/// Named scenario families used by the sweep command and the acceptance
/// suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    /// 1-4 objects of 3 classes with varied noise, plus noisy clutter.
    Mixed,
    /// One object per scenario: miss 0.3, jitter 0.01, concentration 10,
    /// one clutter box per frame.
    SingleObject,
}

impl std::str::FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(Benchmark::Mixed),
            "single-object" | "single_object" => Ok(Benchmark::SingleObject),
            other => Err(Error::InvalidSpec(format!("unknown benchmark {other:?}"))),
        }
    }
}

impl Benchmark {
    /// `count` scenario specs; scenario `k` is seeded from `(seed, k)` only,
    /// so prefixes of a larger benchmark are stable.
    pub fn scenarios(self, seed: u64, count: usize) -> Vec<ScenarioSpec> {
        (0..count as u64)
            .map(|k| {
                let scenario_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
                let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed);
                match self {
                    Benchmark::Mixed => mixed_scenario(&mut rng, scenario_seed),
                    Benchmark::SingleObject => single_object_scenario(&mut rng, scenario_seed),
                }
            })
            .collect()
    }
}

fn random_object(rng: &mut ChaCha8Rng, class_id: usize, n_frames: u64, appear: [u64; 2], duration: [u64; 2]) -> ObjectSpec {
    let appear_frame = rng.random_range(appear[0]..=appear[1]);
    let disappear_frame = (appear_frame + rng.random_range(duration[0]..=duration[1])).min(n_frames - 1);
    let side = |rng: &mut ChaCha8Rng| rng.random_range(0.08..0.2);
    let speed = |rng: &mut ChaCha8Rng| rng.random_range(-0.002..0.002);
    ObjectSpec {
        class_id,
        appear_frame,
        disappear_frame,
        initial: BoundingBox {
            x: rng.random_range(0.2..0.8),
            y: rng.random_range(0.2..0.8),
            lx: side(rng),
            ly: side(rng),
        },
        velocity: [speed(rng), speed(rng), 0.0, 0.0],
        miss_prob: 0.0,
        box_jitter_sigma: 0.01,
        prob_concentration: None,
        peak_prob: 0.7,
        mu_range: [0.4, 1.0],
        proposals: 1,
    }
}

fn mixed_scenario(rng: &mut ChaCha8Rng, seed: u64) -> ScenarioSpec {
    let n_classes = 3;
    let n_frames = 120;
    let n_objects = rng.random_range(1..=4);
    let objects = (0..n_objects)
        .map(|_| {
            let class_id = rng.random_range(1..=n_classes);
            let mut o = random_object(rng, class_id, n_frames, [5, 70], [25, 50]);
            o.miss_prob = rng.random_range(0.1..0.4);
            o.box_jitter_sigma = rng.random_range(0.005..0.015);
            o.prob_concentration = Some(rng.random_range(3.0..15.0));
            o.peak_prob = rng.random_range(0.55..0.8);
            o.proposals = rng.random_range(2..=4);
            o
        })
        .collect();
    ScenarioSpec {
        n_classes,
        n_frames,
        objects,
        clutter_rate: rng.random_range(0.5..2.0),
        clutter_probs: ClutterProbs::Noisy {
            concentration: Some(4.0),
            peak_prob: 0.6,
        },
        clutter_size: default_clutter_size(),
        clutter_mu_range: [0.2, 0.9],
        seed,
    }
}

fn single_object_scenario(rng: &mut ChaCha8Rng, seed: u64) -> ScenarioSpec {
    let n_classes = 2;
    let n_frames = 60;
    let class_id = rng.random_range(1..=n_classes);
    let mut o = random_object(rng, class_id, n_frames, [10, 20], [25, 35]);
    o.miss_prob = 0.3;
    o.box_jitter_sigma = 0.01;
    o.prob_concentration = Some(10.0);
    o.peak_prob = 0.7;
    o.proposals = 3;
    ScenarioSpec {
        n_classes,
        n_frames,
        objects: vec![o],
        clutter_rate: 1.0,
        clutter_probs: ClutterProbs::default(),
        clutter_size: default_clutter_size(),
        clutter_mu_range: [0.2, 0.9],
        seed,
    }
}
