//! Synthetic dialogue corpus with planted form, referent, speaker, and
//! dialogue structure.
//!
//! Every referent has a prototype form (five categorical attributes plus a
//! smooth path signature). Each dialogue entrains on its own version of the
//! prototype, each speaker realizes that version with personal deviations
//! and style, and each gesture adds its own variation. Pair annotations
//! compare the realized attributes of cross-speaker same-referent gestures,
//! so their form-similarity flags are ground truth by construction. Speech
//! features encode the realized referent and form, concentrated in one
//! layer.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::pose::{
    Corpus, CorpusRates, FormFeature, GestureRecord, Keypoints, PairAnnotation, SpeechFeatures,
    WindowIndex, WindowSpec, CHANNELS, JOINTS, LEFT_ELBOW, LEFT_EYE, LEFT_HAND,
    LEFT_SHOULDER, NOSE, RIGHT_ELBOW, RIGHT_EYE, RIGHT_HAND, RIGHT_SHOULDER,
};
use crate::rng::{derive_seed, derive_seed_path, rng_from};
use crate::stats::{mann_whitney_u, UMethod};

/// Category counts per form feature, in [`FormFeature::ALL`] order:
/// handedness {left, right, both}, shape, movement, rotation, position.
pub const CATEGORIES: [usize; 5] = [3, 5, 5, 4, 4];

/// Prior over each feature's categories. Skewed so that a single dominant
/// value makes sharing a feature partly predictable from either gesture.
const PRIORS: [&[f64]; 5] = [
    &[0.15, 0.30, 0.55],
    &[0.45, 0.20, 0.15, 0.10, 0.10],
    &[0.40, 0.25, 0.15, 0.10, 0.10],
    &[0.55, 0.20, 0.15, 0.10],
    &[0.65, 0.15, 0.10, 0.10],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_dialogues: usize,
    pub speakers_per_dialogue: usize,
    pub referents: usize,
    pub gestures_per_speaker: usize,
    pub fps: u32,
    pub speech_fps: u32,
    pub speech_layers: usize,
    pub speech_dim: usize,
    /// Layer index carrying the full speech signal.
    pub speech_signal_layer: usize,
    /// Probability that a dialogue replaces a prototype attribute.
    pub dialogue_resample: f64,
    /// Probability that a speaker replaces a dialogue attribute.
    pub speaker_resample: f64,
    /// Probability, scaled by `noise`, that a gesture replaces an attribute.
    pub gesture_resample: f64,
    /// Global multiplier on every per-gesture random perturbation.
    pub noise: f64,
    /// Multiplier on speaker and dialogue style offsets.
    pub style_scale: f64,
    /// Keypoint detection noise in pixels, scaled by `noise`.
    pub pixel_noise: f64,
    /// Standard deviation of additive speech feature noise.
    pub speech_noise: f64,
    /// Multiplier on per-speaker camera stretch, shear, and roll.
    pub camera_scale: f64,
    /// Hand length relative to the shoulder distance.
    pub hand_scale: f64,
    /// Typical stroke movement amplitude in shoulder units.
    pub movement_amplitude: f64,
    /// Norm of each referent's speech code.
    pub speech_referent_norm: f64,
    /// Norm of each form attribute's speech code.
    pub speech_form_norm: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_dialogues: 8,
            speakers_per_dialogue: 2,
            referents: 16,
            gestures_per_speaker: 32,
            fps: 25,
            speech_fps: 10,
            speech_layers: 4,
            speech_dim: 16,
            speech_signal_layer: 1,
            dialogue_resample: 0.3,
            speaker_resample: 0.35,
            gesture_resample: 0.15,
            noise: 1.0,
            style_scale: 1.0,
            pixel_noise: 1.5,
            speech_noise: 0.5,
            camera_scale: 1.0,
            hand_scale: 0.6,
            movement_amplitude: 0.22,
            speech_referent_norm: 1.5,
            speech_form_norm: 1.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_dialogues,
            self.speakers_per_dialogue,
            self.referents,
            self.gestures_per_speaker,
            self.speech_layers,
            self.speech_dim,
        ];
        if counts.contains(&0) || self.fps == 0 || self.speech_fps == 0 {
            return Err(Error::Config("synthetic corpus counts and rates must be positive".into()));
        }
        if self.speech_signal_layer >= self.speech_layers {
            return Err(Error::Config(format!(
                "speech signal layer {} outside {} layers",
                self.speech_signal_layer, self.speech_layers
            )));
        }
        for (name, p) in [
            ("dialogue_resample", self.dialogue_resample),
            ("speaker_resample", self.speaker_resample),
            ("gesture_resample", self.gesture_resample),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("noise", self.noise),
            ("style_scale", self.style_scale),
            ("pixel_noise", self.pixel_noise),
            ("speech_noise", self.speech_noise),
            ("camera_scale", self.camera_scale),
            ("hand_scale", self.hand_scale),
            ("movement_amplitude", self.movement_amplitude),
            ("speech_referent_norm", self.speech_referent_norm),
            ("speech_form_norm", self.speech_form_norm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be nonnegative")));
            }
        }
        Ok(())
    }
}

/// Realized form of one gesture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureTruth {
    pub gesture_id: String,
    /// Category per feature, in [`FormFeature::ALL`] order.
    pub attributes: [usize; 5],
}

/// A generated corpus and the realized form of every gesture.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub truth: Vec<GestureTruth>,
}

/// Continuous part of a form: path signature and target offset.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Signature {
    harmonics: [(f64, f64, f64); 2],
    target: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Form {
    attrs: [usize; 5],
    signature: Signature,
}

/// How a speaker gestures, in shoulder units.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Style {
    amplitude: f64,
    tempo: f64,
    height: f64,
    width: f64,
    stroke_frames: usize,
}

fn draw_category<R: Rng + ?Sized>(feature: usize, rng: &mut R) -> usize {
    let prior = PRIORS[feature];
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in prior.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    prior.len() - 1
}

fn draw_signature<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Signature {
    let mut h = [(0.0, 0.0, 0.0); 2];
    for (k, slot) in h.iter_mut().enumerate() {
        *slot = (
            scale * rng.random_range(-1.0..1.0),
            scale * rng.random_range(-1.0..1.0),
            (k + 1) as f64 + rng.random_range(0.0..1.0),
        );
    }
    Signature {
        harmonics: h,
        target: (scale * rng.random_range(-1.0..1.0), scale * rng.random_range(-1.0..1.0)),
    }
}

fn perturb_signature<R: Rng + ?Sized>(s: &Signature, rng: &mut R, scale: f64) -> Signature {
    let d = draw_signature(rng, scale);
    let mut out = *s;
    for (o, e) in out.harmonics.iter_mut().zip(&d.harmonics) {
        o.0 += e.0;
        o.1 += e.1;
    }
    out.target.0 += d.target.0;
    out.target.1 += d.target.1;
    out
}

fn resample<R: Rng + ?Sized>(form: &Form, p: f64, rng: &mut R) -> Form {
    let mut out = *form;
    for (f, a) in out.attrs.iter_mut().enumerate() {
        if p > 0.0 && rng.random::<f64>() < p {
            *a = draw_category(f, rng);
        }
    }
    out
}

/// Wrist target per position category, for the hand on the positive side.
const POSITIONS: [(f64, f64); 4] = [(0.35, 0.75), (0.40, -0.15), (0.35, 1.35), (1.05, 0.55)];

/// Fingertip and base layout per shape in hand coordinates (along, across),
/// ordered thumb base/tip, index base/tip, middle base/tip, ring base/tip,
/// pinky tip.
const SHAPES: [[(f64, f64); 9]; 5] = [
    // Fist.
    [(0.08, -0.10), (0.15, -0.06), (0.19, -0.06), (0.14, -0.05), (0.20, 0.0), (0.14, 0.0), (0.19, 0.05), (0.13, 0.05), (0.12, 0.08)],
    // Flat hand.
    [(0.08, -0.10), (0.24, -0.16), (0.19, -0.06), (0.40, -0.07), (0.20, 0.0), (0.43, 0.0), (0.19, 0.05), (0.40, 0.07), (0.33, 0.12)],
    // Pointing index.
    [(0.08, -0.10), (0.17, -0.03), (0.19, -0.06), (0.45, -0.06), (0.20, 0.0), (0.15, 0.01), (0.19, 0.05), (0.14, 0.05), (0.13, 0.08)],
    // Spread fingers.
    [(0.08, -0.10), (0.18, -0.30), (0.19, -0.06), (0.38, -0.22), (0.20, 0.0), (0.42, 0.0), (0.19, 0.05), (0.37, 0.20), (0.28, 0.30)],
    // Curved C.
    [(0.08, -0.10), (0.22, -0.22), (0.19, -0.06), (0.32, -0.12), (0.20, 0.0), (0.34, 0.02), (0.19, 0.05), (0.31, 0.12), (0.26, 0.16)],
];

/// Relaxed hand at rest.
const REST_SHAPE: usize = 0;

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Offset of the wrist from its target at stroke phase `u ∈ [0, 1]`.
fn movement_path(movement: usize, u: f64, amp: f64, tempo: f64, sig: &Signature) -> (f64, f64) {
    let w = 2.0 * PI * tempo;
    let (mut x, mut y) = match movement {
        0 => (0.04 * amp * (w * u).sin(), 0.04 * amp * (w * u).cos()),
        1 => (amp * (1.5 * w * u).sin(), 0.0),
        2 => (0.0, amp * (1.5 * w * u).sin()),
        3 => (amp * (w * u).cos() - amp, amp * (w * u).sin()),
        _ => {
            let s = 2.0 * u - 1.0;
            (amp * s, -amp * s)
        }
    };
    for (ax, ay, f) in sig.harmonics {
        x += ax * (2.0 * PI * f * u).sin();
        y += ay * (2.0 * PI * f * u + 0.7).sin();
    }
    (x, y)
}

/// Pose of one hand in shoulder units (x away from the body midline on
/// the positive side, y downwards), before side mirroring.
#[derive(Debug, Clone, Copy)]
struct HandPose {
    wrist: (f64, f64),
    /// Hand direction angle in radians; 0 points up.
    angle: f64,
    shape: [(f64, f64); 9],
}

fn rest_pose() -> HandPose {
    HandPose {
        wrist: (0.55, 1.65),
        angle: PI,
        shape: SHAPES[REST_SHAPE],
    }
}

fn lerp(a: f64, b: f64, u: f64) -> f64 {
    a + (b - a) * u
}

fn blend(a: &HandPose, b: &HandPose, u: f64) -> HandPose {
    let mut shape = a.shape;
    for (s, t) in shape.iter_mut().zip(&b.shape) {
        s.0 = lerp(s.0, t.0, u);
        s.1 = lerp(s.1, t.1, u);
    }
    HandPose {
        wrist: (lerp(a.wrist.0, b.wrist.0, u), lerp(a.wrist.1, b.wrist.1, u)),
        angle: lerp(a.angle, b.angle, u),
        shape,
    }
}

/// Everything needed to draw one gesture's frames.
#[derive(Debug, Clone)]
struct GesturePlan {
    attrs: [usize; 5],
    signature: Signature,
    style: Style,
    amplitude: f64,
    target_jitter: (f64, f64),
    angle_jitter: f64,
    lean_degrees: f64,
    prep: usize,
    stroke: usize,
    retract: usize,
}

impl GesturePlan {
    fn frames(&self) -> usize {
        self.prep + self.stroke + self.retract
    }

    fn active_pose(&self, u: f64) -> HandPose {
        let [_, shape, movement, rotation, position] = self.attrs;
        let base = POSITIONS[position];
        let (dx, dy) = movement_path(movement, u, self.amplitude, self.style.tempo, &self.signature);
        HandPose {
            wrist: (
                base.0 * self.style.width + self.signature.target.0 + self.target_jitter.0 + dx,
                base.1 + self.style.height + self.signature.target.1 + self.target_jitter.1 + dy,
            ),
            angle: rotation as f64 * PI / 2.0 + self.angle_jitter,
            shape: SHAPES[shape],
        }
    }

    /// Hand poses (positive side, negative side) at frame `t` of the plan.
    fn hands(&self, t: usize) -> (HandPose, HandPose) {
        let rest = rest_pose();
        let pose = if t < self.prep {
            let u = smoothstep((t + 1) as f64 / (self.prep + 1) as f64);
            blend(&rest, &self.active_pose(0.0), u)
        } else if t < self.prep + self.stroke {
            let u = (t - self.prep) as f64 / (self.stroke.max(2) - 1) as f64;
            self.active_pose(u)
        } else {
            let k = t - self.prep - self.stroke;
            let u = smoothstep((k + 1) as f64 / (self.retract + 1) as f64);
            blend(&self.active_pose(1.0), &rest, u)
        };
        match self.attrs[0] {
            0 => (pose, rest),
            1 => (rest, pose),
            _ => (pose, pose),
        }
    }
}

/// Renders one frame into `out` (27 × (x, y, conf)) given body geometry in
/// pixels: mid-shoulder centre and shoulder distance.
fn render_frame(
    out: &mut [f64],
    centre: (f64, f64),
    unit: f64,
    lean_degrees: f64,
    hand_scale: f64,
    hands: (HandPose, HandPose),
) {
    let (s, c) = lean_degrees.to_radians().sin_cos();
    let mut put = |j: usize, x: f64, y: f64| {
        // Lean about the mid-shoulder point, then convert to pixels.
        let (rx, ry) = (c * x - s * y, s * x + c * y);
        out[j * CHANNELS] = centre.0 + rx * unit;
        out[j * CHANNELS + 1] = centre.1 + ry * unit;
        out[j * CHANNELS + 2] = 1.0;
    };
    put(NOSE, 0.0, -0.55);
    put(LEFT_EYE, 0.1, -0.65);
    put(RIGHT_EYE, -0.1, -0.65);
    put(LEFT_SHOULDER, 0.5, 0.0);
    put(RIGHT_SHOULDER, -0.5, 0.0);
    // The positive side is the left-hand block.
    for (side, pose, shoulder, elbow, wrist) in [
        (1.0, hands.0, 0.5, LEFT_ELBOW, LEFT_HAND),
        (-1.0, hands.1, -0.5, RIGHT_ELBOW, RIGHT_HAND),
    ] {
        let (wx, wy) = (side * pose.wrist.0, pose.wrist.1);
        let ex = 0.5 * (shoulder + wx) + side * 0.22;
        let ey = 0.5 * wy + 0.25;
        put(elbow, ex, ey);
        put(wrist, wx, wy);
        let (sa, ca) = pose.angle.sin_cos();
        // Hand axis: angle 0 points up (negative y); across axis is the
        // perpendicular, mirrored on the negative side.
        let along = (sa, -ca);
        let across = (side * ca, side * sa);
        for (k, (a, b)) in pose.shape.iter().enumerate() {
            let x = wx + hand_scale * (a * along.0 + b * across.0);
            let y = wy + hand_scale * (a * along.1 + b * across.1);
            put(wrist + 1 + k, x, y);
        }
    }
}

/// Per-speaker viewpoint: vertical stretch, horizontal shear, and roll
/// about the body centre.
#[derive(Debug, Clone, Copy)]
struct Camera {
    aspect: f64,
    shear: f64,
    roll: f64,
}

impl Camera {
    fn draw<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Self {
        Camera {
            aspect: 1.0 + 0.15 * scale * rng.random_range(-1.0..1.0),
            shear: 0.25 * scale * rng.random_range(-1.0..1.0),
            roll: (10.0 * scale * rng.random_range(-1.0..1.0)).to_radians(),
        }
    }

    fn apply(&self, centre: (f64, f64), x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - centre.0, (y - centre.1) * self.aspect);
        let dx = dx + self.shear * dy;
        let (s, c) = self.roll.sin_cos();
        (centre.0 + c * dx - s * dy, centre.1 + s * dx + c * dy)
    }
}

struct SpeakerTrack {
    keypoints: Keypoints,
    speech: SpeechFeatures,
    records: Vec<GestureRecord>,
    truth: Vec<GestureTruth>,
}

#[allow(clippy::too_many_arguments)]
fn generate_speaker(
    cfg: &SynthConfig,
    dialogue: usize,
    speaker: usize,
    dialogue_forms: &[Form],
    dialogue_style: &Style,
    speech_codes: &[Vec<f64>],
    feature_codes: &[Vec<Vec<f64>>],
) -> SpeakerTrack {
    let noise = cfg.noise;
    let mut rng = rng_from(derive_seed_path(cfg.seed, &[2, dialogue as u64, speaker as u64]));
    let style_sd = 0.5 * cfg.style_scale;
    let style = Style {
        amplitude: (dialogue_style.amplitude * (1.0 + 0.15 * style_sd * rng.random_range(-1.0..1.0))).max(0.02),
        tempo: (dialogue_style.tempo * (1.0 + 0.15 * style_sd * rng.random_range(-1.0..1.0))).max(0.2),
        height: dialogue_style.height + 0.12 * style_sd * rng.random_range(-1.0..1.0),
        width: (dialogue_style.width * (1.0 + 0.12 * style_sd * rng.random_range(-1.0..1.0))).max(0.3),
        stroke_frames: (dialogue_style.stroke_frames as i64 + rng.random_range(-2i64..=2)).max(16) as usize,
    };
    let speaker_forms: Vec<Form> = dialogue_forms
        .iter()
        .map(|f| {
            let mut out = resample(f, cfg.speaker_resample, &mut rng);
            out.signature = perturb_signature(&f.signature, &mut rng, 0.03);
            out
        })
        .collect();
    let body_unit = 110.0 * (1.0 + 0.15 * rng.random_range(-1.0..1.0));
    let centre = (320.0 + 40.0 * rng.random_range(-1.0..1.0), 230.0 + 20.0 * rng.random_range(-1.0..1.0));
    let camera = Camera::draw(cfg.camera_scale, &mut rng);

    let per_ref = cfg.gestures_per_speaker.div_ceil(cfg.referents);
    let mut order: Vec<usize> = (0..cfg.gestures_per_speaker).map(|k| k % cfg.referents).collect();
    order.shuffle(&mut rng);
    debug_assert!(per_ref >= 1);

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut plans = Vec::with_capacity(order.len());
    for &r in &order {
        let base = &speaker_forms[r];
        let form = resample(base, cfg.gesture_resample * noise, &mut rng);
        let jitter = |rng: &mut ChaCha8Rng, s: f64| noise * s * normal.sample(rng);
        let stroke = (style.stroke_frames as f64 + noise * rng.random_range(-2.0..=2.0)).round() as usize;
        plans.push(GesturePlan {
            attrs: form.attrs,
            signature: form.signature,
            style,
            amplitude: style.amplitude * (1.0 + jitter(&mut rng, 0.1)),
            target_jitter: (jitter(&mut rng, 0.04), jitter(&mut rng, 0.04)),
            angle_jitter: jitter(&mut rng, 0.08),
            lean_degrees: jitter(&mut rng, 4.0),
            prep: 8,
            stroke: stroke.max(14),
            retract: 8,
        });
    }

    // Timeline: a rest gap before each gesture and after the last one.
    let gaps: Vec<usize> = (0..=plans.len()).map(|_| rng.random_range(10..=20)).collect();
    let total: usize = plans.iter().map(GesturePlan::frames).sum::<usize>() + gaps.iter().sum::<usize>();
    let mut values = vec![0.0; total * JOINTS * CHANNELS];
    let mut owner: Vec<Option<usize>> = vec![None; total];
    let mut records = Vec::with_capacity(plans.len());
    let mut truth = Vec::with_capacity(plans.len());
    let speaker_id = format!("d{dialogue:02}_s{speaker}");
    let dialogue_id = format!("d{dialogue:02}");
    let mut t = 0;
    for (k, plan) in plans.iter().enumerate() {
        for _ in 0..gaps[k] {
            render_frame(frame_mut(&mut values, t), centre, body_unit, 0.0, cfg.hand_scale, (rest_pose(), rest_pose()));
            t += 1;
        }
        let start = t;
        for f in 0..plan.frames() {
            let ramp = if f < plan.prep {
                smoothstep((f + 1) as f64 / (plan.prep + 1) as f64)
            } else if f >= plan.prep + plan.stroke {
                1.0 - smoothstep((f - plan.prep - plan.stroke + 1) as f64 / (plan.retract + 1) as f64)
            } else {
                1.0
            };
            render_frame(frame_mut(&mut values, t), centre, body_unit, ramp * plan.lean_degrees, cfg.hand_scale, plan.hands(f));
            owner[t] = Some(k);
            t += 1;
        }
        let gesture_id = format!("{speaker_id}_g{k:02}");
        records.push(GestureRecord {
            gesture_id: gesture_id.clone(),
            speaker_id: speaker_id.clone(),
            dialogue_id: dialogue_id.clone(),
            referent_id: format!("r{:02}", order[k]),
            stroke_start_frame: start + plan.prep,
            stroke_end_frame: start + plan.prep + plan.stroke - 1,
        });
        truth.push(GestureTruth {
            gesture_id,
            attributes: plan.attrs,
        });
    }
    for _ in 0..gaps[plans.len()] {
        render_frame(frame_mut(&mut values, t), centre, body_unit, 0.0, cfg.hand_scale, (rest_pose(), rest_pose()));
        t += 1;
    }

    // Camera view, detection noise, and confidence, rounded to what the
    // CSV stores.
    let px = cfg.pixel_noise * noise;
    for frame in values.chunks_mut(JOINTS * CHANNELS) {
        for joint in frame.chunks_mut(CHANNELS) {
            (joint[0], joint[1]) = camera.apply(centre, joint[0], joint[1]);
            if px > 0.0 {
                joint[0] += px * normal.sample(&mut rng);
                joint[1] += px * normal.sample(&mut rng);
            }
            joint[0] = (joint[0] * 100.0).round() / 100.0;
            joint[1] = (joint[1] * 100.0).round() / 100.0;
            let conf = 0.97 - noise * rng.random_range(0.0..0.1);
            joint[2] = (conf.clamp(0.0, 1.0) * 1000.0).round() / 1000.0;
        }
    }
    let keypoints = Keypoints::new(cfg.fps, total, values).expect("sized above");

    // Speech: the realized gesture's code while it is being produced,
    // background noise otherwise.
    let s_frames = (total as f64 / cfg.fps as f64 * cfg.speech_fps as f64).ceil() as usize;
    let (layers, dims) = (cfg.speech_layers, cfg.speech_dim);
    let mut speech = vec![0f32; layers * s_frames * dims];
    let codes: Vec<Vec<f64>> = plans
        .iter()
        .zip(&order)
        .map(|(plan, &r)| {
            let mut code = speech_codes[r].clone();
            for (f, &a) in plan.attrs.iter().enumerate() {
                for (c, e) in code.iter_mut().zip(&feature_codes[f][a]) {
                    *c += e;
                }
            }
            code
        })
        .collect();
    for st in 0..s_frames {
        let frame = ((st as f64 + 0.5) / cfg.speech_fps as f64 * cfg.fps as f64) as usize;
        let active = owner.get(frame.min(total - 1)).copied().flatten();
        for l in 0..layers {
            let gain = if l == cfg.speech_signal_layer { 1.0 } else { 0.2 };
            for d in 0..dims {
                let signal = active.map_or(0.0, |k| gain * codes[k][d]);
                let v = signal + cfg.speech_noise * normal.sample(&mut rng);
                speech[(l * s_frames + st) * dims + d] = v as f32;
            }
        }
    }
    let speech = SpeechFeatures::new(layers, s_frames, dims, speech).expect("sized above");
    SpeakerTrack {
        keypoints,
        speech,
        records,
        truth,
    }
}

fn frame_mut(values: &mut [f64], t: usize) -> &mut [f64] {
    &mut values[t * JOINTS * CHANNELS..(t + 1) * JOINTS * CHANNELS]
}

fn unit_code<R: Rng + ?Sized>(dims: usize, norm: f64, rng: &mut R) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let v: Vec<f64> = (0..dims).map(|_| normal.sample(rng)).collect();
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|a| a * norm / n).collect()
}

/// Generates a corpus. Dialogues are generated independently from derived
/// seeds, so the result does not depend on `exec`.
pub fn generate(cfg: &SynthConfig, exec: Exec) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = rng_from(derive_seed(cfg.seed, 1));
    let prototypes: Vec<Form> = (0..cfg.referents)
        .map(|_| Form {
            attrs: std::array::from_fn(|f| draw_category(f, &mut rng)),
            signature: draw_signature(&mut rng, 0.06),
        })
        .collect();
    let referent_codes: Vec<Vec<f64>> = (0..cfg.referents).map(|_| unit_code(cfg.speech_dim, cfg.speech_referent_norm, &mut rng)).collect();
    let feature_codes: Vec<Vec<Vec<f64>>> = CATEGORIES
        .iter()
        .map(|&n| (0..n).map(|_| unit_code(cfg.speech_dim, cfg.speech_form_norm, &mut rng)).collect())
        .collect();

    let tracks: Vec<Vec<SpeakerTrack>> = exec.map(cfg.n_dialogues, |d| {
        let mut rng = rng_from(derive_seed_path(cfg.seed, &[3, d as u64]));
        let forms: Vec<Form> = prototypes
            .iter()
            .map(|p| {
                let mut f = resample(p, cfg.dialogue_resample, &mut rng);
                f.signature = perturb_signature(&p.signature, &mut rng, 0.04);
                f
            })
            .collect();
        let codes: Vec<Vec<f64>> = referent_codes
            .iter()
            .map(|c| {
                let e = unit_code(cfg.speech_dim, 0.5, &mut rng);
                c.iter().zip(&e).map(|(a, b)| a + b).collect()
            })
            .collect();
        let s = cfg.style_scale;
        let style = Style {
            amplitude: cfg.movement_amplitude * (1.0 + 0.3 * s * rng.random_range(-1.0..1.0)).max(0.1),
            tempo: 1.0 + 0.3 * s * rng.random_range(-1.0..1.0),
            height: 0.15 * s * rng.random_range(-1.0..1.0),
            width: 1.0 + 0.2 * s * rng.random_range(-1.0..1.0),
            stroke_frames: rng.random_range(17..=22),
        };
        (0..cfg.speakers_per_dialogue)
            .map(|sp| generate_speaker(cfg, d, sp, &forms, &style, &codes, &feature_codes))
            .collect()
    });

    let mut records = Vec::new();
    let mut truth = Vec::new();
    let mut keypoints = BTreeMap::new();
    let mut speech = BTreeMap::new();
    for track in tracks.into_iter().flatten() {
        let speaker = track.records[0].speaker_id.clone();
        records.extend(track.records);
        truth.extend(track.truth);
        keypoints.insert(speaker.clone(), track.keypoints);
        speech.insert(speaker, track.speech);
    }
    let annotations = annotate(&records, &truth);
    let corpus = Corpus::from_parts(
        CorpusRates {
            fps: cfg.fps,
            speech_fps: cfg.speech_fps,
        },
        records,
        annotations,
        keypoints,
        speech,
        WindowSpec::default(),
    )?;
    Ok(SyntheticCorpus { corpus, truth })
}

/// Every cross-speaker same-referent pair within a dialogue, flagged by
/// equality of the realized attributes.
fn annotate(records: &[GestureRecord], truth: &[GestureTruth]) -> Vec<PairAnnotation> {
    let mut out = Vec::new();
    for i in 0..records.len() {
        for j in i + 1..records.len() {
            let (a, b) = (&records[i], &records[j]);
            if a.dialogue_id == b.dialogue_id && a.speaker_id != b.speaker_id && a.referent_id == b.referent_id {
                let features = std::array::from_fn(|f| truth[i].attributes[f] == truth[j].attributes[f]);
                out.push(PairAnnotation {
                    pair_id: format!("p{:04}", out.len()),
                    gesture_a: a.gesture_id.clone(),
                    gesture_b: b.gesture_id.clone(),
                    features,
                });
            }
        }
    }
    out
}

/// Shared-count histogram (0–5) of a pair list.
pub fn shared_count_histogram(annotations: &[PairAnnotation]) -> [usize; 6] {
    let mut h = [0; 6];
    for a in annotations {
        h[a.shared_count()] += 1;
    }
    h
}

/// Flag rate per feature, in [`FormFeature::ALL`] order.
pub fn flag_rates(annotations: &[PairAnnotation]) -> [f64; 5] {
    let n = annotations.len().max(1) as f64;
    std::array::from_fn(|f| annotations.iter().filter(|a| a.has(FormFeature::ALL[f])).count() as f64 / n)
}

/// Whether raw normalized keypoints already separate referents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub same_referent_pairs: usize,
    pub different_referent_pairs: usize,
    pub same_referent_mean: f64,
    pub different_referent_mean: f64,
    pub u_statistic: f64,
    pub p_value: f64,
    pub passed: bool,
}

/// Central window of each gesture's stroke, if one was sampled.
pub fn central_windows(corpus: &Corpus) -> BTreeMap<usize, WindowIndex> {
    let mut out = BTreeMap::new();
    for (record, ws) in corpus.windows_by_record() {
        out.insert(record, corpus.windows[ws[ws.len() / 2]]);
    }
    out
}

/// Compares mean per-joint distances between normalized central stroke
/// windows of same-referent and different-referent gesture pairs within
/// each dialogue (Mann-Whitney, p < 0.01, same-referent smaller).
pub fn planted_geometry_check(corpus: &Corpus) -> Result<GeometryReport> {
    let central = central_windows(corpus);
    let mut flat: Vec<(usize, Vec<f64>)> = Vec::new();
    for (&record, w) in &central {
        let win = corpus.normalized_window(w)?;
        let mut v = win.channel(0).to_vec();
        v.extend_from_slice(win.channel(1));
        flat.push((record, v));
    }
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for i in 0..flat.len() {
        for j in i + 1..flat.len() {
            let (a, b) = (&corpus.records[flat[i].0], &corpus.records[flat[j].0]);
            if a.dialogue_id != b.dialogue_id {
                continue;
            }
            let half = flat[i].1.len() / 2;
            let d: f64 = (0..half)
                .map(|k| {
                    let dx = flat[i].1[k] - flat[j].1[k];
                    let dy = flat[i].1[half + k] - flat[j].1[half + k];
                    (dx * dx + dy * dy).sqrt()
                })
                .sum::<f64>()
                / half as f64;
            if a.referent_id == b.referent_id {
                same.push(d);
            } else {
                diff.push(d);
            }
        }
    }
    if same.is_empty() || diff.is_empty() {
        return Err(Error::Degenerate("geometry check needs both pair kinds".into()));
    }
    let test = mann_whitney_u(&same, &diff, UMethod::Normal)?;
    let same_mean = crate::stats::mean(&same);
    let diff_mean = crate::stats::mean(&diff);
    Ok(GeometryReport {
        same_referent_pairs: same.len(),
        different_referent_pairs: diff.len(),
        same_referent_mean: same_mean,
        different_referent_mean: diff_mean,
        u_statistic: test.statistic,
        p_value: test.p_value,
        passed: test.p_value < 0.01 && same_mean < diff_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SynthConfig {
        SynthConfig {
            n_dialogues: 2,
            gestures_per_speaker: 8,
            referents: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn records_and_tracks_are_consistent() {
        let s = generate(&tiny(), Exec::Sequential).unwrap();
        assert_eq!(s.corpus.records.len(), 2 * 2 * 8);
        assert_eq!(s.corpus.keypoints.len(), 4);
        assert!(s.corpus.skipped.is_empty());
        for a in &s.corpus.annotations {
            assert!(a.shared_count() <= 5);
        }
        // 4 referents × 2 × 2 gestures per dialogue.
        assert_eq!(s.corpus.annotations.len(), 2 * 4 * 4);
        let by_record = s.corpus.windows_by_record();
        assert_eq!(by_record.len(), s.corpus.records.len());
    }

    #[test]
    fn parallel_generation_matches_sequential() {
        let a = generate(&tiny(), Exec::Sequential).unwrap();
        let b = generate(&tiny(), Exec::Parallel).unwrap();
        assert_eq!(a.corpus.keypoints, b.corpus.keypoints);
        assert_eq!(a.corpus.speech, b.corpus.speech);
        assert_eq!(a.truth, b.truth);
    }
}
