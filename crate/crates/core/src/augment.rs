//! Skeletal augmentations and the stochastic two-view pipeline.
//!
//! Augmentations act on normalized windows: coordinates are in shoulder
//! units with the frame-0 mid-shoulder point at the origin. Pixel-valued
//! parameters are converted through the window's `pixels_per_unit`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{SkeletonWindow, JOINTS};
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentationKind {
    Mirror,
    ShiftPoses,
    ScalePoses,
    RandomMove,
    Jitter,
    AxisScale,
    Rotation,
    Shear,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 8] = [
        AugmentationKind::Mirror,
        AugmentationKind::ShiftPoses,
        AugmentationKind::ScalePoses,
        AugmentationKind::RandomMove,
        AugmentationKind::Jitter,
        AugmentationKind::AxisScale,
        AugmentationKind::Rotation,
        AugmentationKind::Shear,
    ];

    /// The kinds enabled by default.
    pub const DEFAULT: [AugmentationKind; 5] = [
        AugmentationKind::Mirror,
        AugmentationKind::ScalePoses,
        AugmentationKind::RandomMove,
        AugmentationKind::Jitter,
        AugmentationKind::Shear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentationKind::Mirror => "mirror",
            AugmentationKind::ShiftPoses => "shift",
            AugmentationKind::ScalePoses => "scale",
            AugmentationKind::RandomMove => "random-move",
            AugmentationKind::Jitter => "jitter",
            AugmentationKind::AxisScale => "axis-scale",
            AugmentationKind::Rotation => "rotation",
            AugmentationKind::Shear => "shear",
        }
    }
}

impl fmt::Display for AugmentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugmentationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        AugmentationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown augmentation {s:?}"))
    }
}

/// One keyframe of a random move: rotation, uniform scale, translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveKeyframe {
    pub degrees: f64,
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Drawn parameters for a single augmentation.
#[derive(Debug, Clone, PartialEq)]
pub enum AugmentParams {
    /// Flip about the vertical line through the median frame-0 x.
    Mirror,
    /// Global translation in input pixels.
    ShiftPoses { dx_pixels: f64, dy_pixels: f64 },
    ScalePoses { factor: f64 },
    /// Two or three keyframes interpolated linearly across the window.
    RandomMove { keyframes: Vec<MoveKeyframe> },
    Jitter { sigma: f64, seed: u64 },
    AxisScale { sx: f64, sy: f64 },
    /// Rotation about the frame-0 position of `anchor`.
    Rotation { degrees: f64, anchor: usize },
    /// `(x, y) -> (x + sx y, sy x + y)`.
    Shear { sx: f64, sy: f64 },
}

impl AugmentParams {
    pub fn kind(&self) -> AugmentationKind {
        match self {
            AugmentParams::Mirror => AugmentationKind::Mirror,
            AugmentParams::ShiftPoses { .. } => AugmentationKind::ShiftPoses,
            AugmentParams::ScalePoses { .. } => AugmentationKind::ScalePoses,
            AugmentParams::RandomMove { .. } => AugmentationKind::RandomMove,
            AugmentParams::Jitter { .. } => AugmentationKind::Jitter,
            AugmentParams::AxisScale { .. } => AugmentationKind::AxisScale,
            AugmentParams::Rotation { .. } => AugmentationKind::Rotation,
            AugmentParams::Shear { .. } => AugmentationKind::Shear,
        }
    }
}

/// Parameter ranges for drawing and validating augmentations.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentRanges {
    pub shift_pixels: f64,
    pub scale: (f64, f64),
    pub move_degrees: f64,
    pub move_scale: (f64, f64),
    pub move_translation: f64,
    pub jitter_sigma: f64,
    pub axis_scale: (f64, f64),
    pub rotation_degrees: f64,
    pub rotation_step: f64,
    pub rotation_anchor: usize,
    pub shear: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            shift_pixels: 30.0,
            scale: (0.5, 1.5),
            move_degrees: 10.0,
            move_scale: (0.9, 1.1),
            move_translation: 0.2,
            jitter_sigma: 0.1,
            axis_scale: (0.7, 1.2),
            rotation_degrees: 15.0,
            rotation_step: 2.0,
            rotation_anchor: 0,
            shear: 0.2,
        }
    }
}

const SLACK: f64 = 1e-12;

fn check(kind: AugmentationKind, name: &str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value.is_finite() && value >= lo - SLACK && value <= hi + SLACK {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{kind} {name} = {value} outside [{lo}, {hi}]")))
    }
}

impl AugmentRanges {
    /// The rotation grid: odd steps from `-max` to `max`, plus zero.
    pub fn rotation_grid(&self) -> Vec<f64> {
        let n = (2.0 * self.rotation_degrees / self.rotation_step).round() as usize;
        let mut grid: Vec<f64> = (0..=n)
            .map(|i| -self.rotation_degrees + i as f64 * self.rotation_step)
            .collect();
        if !grid.iter().any(|g| g.abs() < SLACK) {
            grid.push(0.0);
            grid.sort_by(f64::total_cmp);
        }
        grid
    }

    pub fn validate(&self, params: &AugmentParams) -> Result<()> {
        let kind = params.kind();
        match params {
            AugmentParams::Mirror => Ok(()),
            AugmentParams::ShiftPoses { dx_pixels, dy_pixels } => {
                let r = self.shift_pixels;
                check(kind, "dx", *dx_pixels, -r, r)?;
                check(kind, "dy", *dy_pixels, -r, r)
            }
            AugmentParams::ScalePoses { factor } => check(kind, "factor", *factor, self.scale.0, self.scale.1),
            AugmentParams::RandomMove { keyframes } => {
                if !(2..=3).contains(&keyframes.len()) {
                    return Err(Error::Parameter(format!(
                        "{kind} needs 2 or 3 keyframes, got {}",
                        keyframes.len()
                    )));
                }
                for k in keyframes {
                    check(kind, "degrees", k.degrees, -self.move_degrees, self.move_degrees)?;
                    check(kind, "scale", k.scale, self.move_scale.0, self.move_scale.1)?;
                    let t = self.move_translation;
                    check(kind, "dx", k.dx, -t, t)?;
                    check(kind, "dy", k.dy, -t, t)?;
                }
                Ok(())
            }
            AugmentParams::Jitter { sigma, .. } => check(kind, "sigma", *sigma, 0.0, self.jitter_sigma),
            AugmentParams::AxisScale { sx, sy } => {
                check(kind, "sx", *sx, self.axis_scale.0, self.axis_scale.1)?;
                check(kind, "sy", *sy, self.axis_scale.0, self.axis_scale.1)
            }
            AugmentParams::Rotation { degrees, anchor } => {
                if *anchor >= JOINTS {
                    return Err(Error::Parameter(format!("{kind} anchor joint {anchor} out of range")));
                }
                if self.rotation_grid().iter().any(|g| (g - degrees).abs() < 1e-9) {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!(
                        "{kind} angle {degrees} not on the {}-degree grid within ±{}",
                        self.rotation_step, self.rotation_degrees
                    )))
                }
            }
            AugmentParams::Shear { sx, sy } => {
                check(kind, "sx", *sx, -self.shear, self.shear)?;
                check(kind, "sy", *sy, -self.shear, self.shear)
            }
        }
    }

    /// Draws parameters for `kind` inside these ranges.
    pub fn draw<R: Rng + ?Sized>(&self, kind: AugmentationKind, rng: &mut R) -> AugmentParams {
        let sym = |rng: &mut R, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let span = |rng: &mut R, (lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        match kind {
            AugmentationKind::Mirror => AugmentParams::Mirror,
            AugmentationKind::ShiftPoses => AugmentParams::ShiftPoses {
                dx_pixels: sym(rng, self.shift_pixels),
                dy_pixels: sym(rng, self.shift_pixels),
            },
            AugmentationKind::ScalePoses => AugmentParams::ScalePoses {
                factor: span(rng, self.scale),
            },
            AugmentationKind::RandomMove => {
                let count = if rng.random_bool(0.5) { 2 } else { 3 };
                let keyframes = (0..count)
                    .map(|_| MoveKeyframe {
                        degrees: sym(rng, self.move_degrees),
                        scale: span(rng, self.move_scale),
                        dx: sym(rng, self.move_translation),
                        dy: sym(rng, self.move_translation),
                    })
                    .collect();
                AugmentParams::RandomMove { keyframes }
            }
            AugmentationKind::Jitter => AugmentParams::Jitter {
                sigma: self.jitter_sigma,
                seed: rng.random(),
            },
            AugmentationKind::AxisScale => AugmentParams::AxisScale {
                sx: span(rng, self.axis_scale),
                sy: span(rng, self.axis_scale),
            },
            AugmentationKind::Rotation => {
                let grid = self.rotation_grid();
                AugmentParams::Rotation {
                    degrees: grid[rng.random_range(0..grid.len())],
                    anchor: self.rotation_anchor,
                }
            }
            AugmentationKind::Shear => AugmentParams::Shear {
                sx: sym(rng, self.shear),
                sy: sym(rng, self.shear),
            },
        }
    }

    /// Validates `params` against these ranges and applies them.
    pub fn apply(&self, params: &AugmentParams, window: &SkeletonWindow) -> Result<SkeletonWindow> {
        self.validate(params)?;
        Ok(transform(params, window))
    }
}

/// Applies one augmentation with the default ranges.
pub fn apply_augmentation(params: &AugmentParams, window: &SkeletonWindow) -> Result<SkeletonWindow> {
    AugmentRanges::default().apply(params, window)
}

fn transform(params: &AugmentParams, window: &SkeletonWindow) -> SkeletonWindow {
    let mut out = window.clone();
    match params {
        AugmentParams::Mirror => {
            let axis = mirror_axis(window);
            out.map_xy(|_, x, y| (2.0 * axis - x, y));
        }
        AugmentParams::ShiftPoses { dx_pixels, dy_pixels } => {
            let (dx, dy) = (dx_pixels / window.pixels_per_unit, dy_pixels / window.pixels_per_unit);
            out.map_xy(|_, x, y| (x + dx, y + dy));
        }
        AugmentParams::ScalePoses { factor } => out.map_xy(|_, x, y| (x * factor, y * factor)),
        AugmentParams::RandomMove { keyframes } => {
            let frames = window.frames();
            let segments = keyframes.len() - 1;
            let lerp = |a: f64, b: f64, u: f64| a + (b - a) * u;
            let per_frame: Vec<MoveKeyframe> = (0..frames)
                .map(|t| {
                    let u = if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.0 };
                    let pos = u * segments as f64;
                    let seg = (pos.floor() as usize).min(segments - 1);
                    let (a, b) = (keyframes[seg], keyframes[seg + 1]);
                    let f = pos - seg as f64;
                    MoveKeyframe {
                        degrees: lerp(a.degrees, b.degrees, f),
                        scale: lerp(a.scale, b.scale, f),
                        dx: lerp(a.dx, b.dx, f),
                        dy: lerp(a.dy, b.dy, f),
                    }
                })
                .collect();
            out.map_xy(|t, x, y| {
                let k = per_frame[t];
                let (s, c) = k.degrees.to_radians().sin_cos();
                (k.scale * (c * x - s * y) + k.dx, k.scale * (s * x + c * y) + k.dy)
            });
        }
        AugmentParams::Jitter { sigma, seed } => {
            if *sigma > 0.0 {
                let mut rng = rng_from(*seed);
                let normal = Normal::new(0.0, *sigma).expect("sigma is positive and finite");
                out.map_xy(|_, x, y| (x + normal.sample(&mut rng), y + normal.sample(&mut rng)));
            }
        }
        AugmentParams::AxisScale { sx, sy } => out.map_xy(|_, x, y| (x * sx, y * sy)),
        AugmentParams::Rotation { degrees, anchor } => {
            let centre = (window.x(0, *anchor), window.y(0, *anchor));
            return rotate_about(window, *degrees, centre);
        }
        AugmentParams::Shear { sx, sy } => out.map_xy(|_, x, y| (x + sx * y, sy * x + y)),
    }
    out
}

/// Median x coordinate of the frame-0 joints.
pub fn mirror_axis(window: &SkeletonWindow) -> f64 {
    let mut xs: Vec<f64> = (0..JOINTS).map(|j| window.x(0, j)).collect();
    xs.sort_by(f64::total_cmp);
    let mid = JOINTS / 2;
    if JOINTS % 2 == 1 {
        xs[mid]
    } else {
        (xs[mid - 1] + xs[mid]) / 2.0
    }
}

/// Reflects every joint across the vertical line `x = axis`.
pub fn mirror_about(window: &SkeletonWindow, axis: f64) -> SkeletonWindow {
    let mut out = window.clone();
    out.map_xy(|_, x, y| (2.0 * axis - x, y));
    out
}

/// Rotates every joint counterclockwise by `degrees` about `centre`, with
/// no range restriction.
pub fn rotate_about(window: &SkeletonWindow, degrees: f64, centre: (f64, f64)) -> SkeletonWindow {
    let (s, c) = degrees.to_radians().sin_cos();
    let mut out = window.clone();
    out.map_xy(|_, x, y| {
        let (px, py) = (x - centre.0, y - centre.1);
        (centre.0 + c * px - s * py, centre.1 + s * px + c * py)
    });
    out
}

/// Draws two augmented views of a window, each kind applied independently
/// with its probability, in the listed order.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPipeline {
    pub kinds: Vec<(AugmentationKind, f64)>,
    pub ranges: AugmentRanges,
    pub seed: u64,
}

impl Default for AugmentationPipeline {
    fn default() -> Self {
        AugmentationPipeline::new(&AugmentationKind::DEFAULT, 0.5, 0)
    }
}

impl AugmentationPipeline {
    pub fn new(kinds: &[AugmentationKind], probability: f64, seed: u64) -> Self {
        AugmentationPipeline {
            kinds: kinds.iter().map(|k| (*k, probability)).collect(),
            ranges: AugmentRanges::default(),
            seed,
        }
    }

    /// Draws the transform sequence for one view.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<AugmentParams> {
        let mut out = Vec::new();
        for &(kind, p) in &self.kinds {
            if p > 0.0 && rng.random::<f64>() < p {
                out.push(self.ranges.draw(kind, rng));
            }
        }
        out
    }

    pub fn apply_all(&self, params: &[AugmentParams], window: &SkeletonWindow) -> Result<SkeletonWindow> {
        let mut out = window.clone();
        for p in params {
            out = self.ranges.apply(p, &out)?;
        }
        Ok(out)
    }

    /// Two independently augmented views. `stream` distinguishes draws made
    /// under the same pipeline seed, e.g. per window and epoch.
    pub fn sample_views(&self, window: &SkeletonWindow, stream: u64) -> Result<(SkeletonWindow, SkeletonWindow)> {
        let mut rng = rng_from(derive_seed(self.seed, stream));
        let first = self.draw(&mut rng);
        let second = self.draw(&mut rng);
        Ok((self.apply_all(&first, window)?, self.apply_all(&second, window)?))
    }
}

/// Two views from `pipeline` using its own seed as the stream.
pub fn sample_pipeline(pipeline: &AugmentationPipeline, window: &SkeletonWindow) -> Result<(SkeletonWindow, SkeletonWindow)> {
    pipeline.sample_views(window, 0)
}
