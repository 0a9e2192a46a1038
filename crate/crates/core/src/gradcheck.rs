//! Finite-difference checks of the contrastive losses composed with both
//! towers and projection heads, with respect to every parameter tensor.

use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::diff::{check_gradients_ladder, CoordSample, GradCheck, Graph, Tensor, Var};
use crate::error::Result;
use crate::objectives::{combined, multimodal_info_nce, unimodal_nt_xent, LossConfig, Objective};
use crate::pose::{SkeletonWindow, SpeechFeatures, CHANNELS, JOINTS};
use crate::rng::{derive_seed_path, rng_from};
use crate::towers::{GestureEncoderConfig, Head, Model, ModelConfig, SpeechHeadConfig};

/// Checked coordinates per parameter tensor.
pub const COORDS_PER_TENSOR: usize = 4;
/// Finite-difference steps tried per coordinate.
pub const STEPS: [f64; 4] = [1e-3, 1e-4, 1e-5, 1e-6];

/// A narrow two-block model that keeps a full check cheap.
pub fn check_model_config() -> ModelConfig {
    ModelConfig {
        gesture: GestureEncoderConfig {
            widths: vec![4, 6],
            kernel: 3,
            strides: vec![1, 2],
            output_dim: 8,
            residual: true,
            self_partition: true,
            min_frames: 4,
        },
        speech: SpeechHeadConfig {
            layers: 3,
            input_dim: 5,
            hidden: 6,
            output_dim: 7,
        },
        projection_dim: 4,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TowerCheck {
    pub objective: Objective,
    pub batch: usize,
    pub result: GradCheck,
    pub wall_ms: u128,
}

fn random_window<R: Rng>(rng: &mut R, frames: usize) -> SkeletonWindow {
    let plane = frames * JOINTS;
    let data = (0..CHANNELS * plane)
        .map(|i| if i < 2 * plane { rng.random_range(-1.0..1.0) } else { rng.random_range(0.0..1.0) })
        .collect();
    SkeletonWindow::new("check", 25, frames, data).expect("sized above")
}

fn random_speech<R: Rng>(rng: &mut R, cfg: &SpeechHeadConfig) -> SpeechFeatures {
    let frames = rng.random_range(2..=5);
    let data = (0..cfg.layers * frames * cfg.input_dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    SpeechFeatures::new(cfg.layers, frames, cfg.input_dim, data).expect("sized above")
}

/// Loss of `objective` on `batch` random instances, as a function of the
/// model's parameters bound to `vars`.
fn loss_on(
    g: &mut Graph,
    model: &Model,
    vars: &[Var],
    objective: Objective,
    windows: &[SkeletonWindow],
    speech: &[SpeechFeatures],
    cfg: &LossConfig,
) -> Result<Var> {
    let p = model.params.bind_vars(vars)?;
    let n = speech.len();
    let refs: Vec<&SkeletonWindow> = windows.iter().collect();
    let x = g.constant(Model::gesture_input(&refs)?);
    let h = model.encode_gesture(g, &p, x)?;
    let z = model.project(g, &p, Head::Gesture, h)?;
    let uni = if objective.uses_views() {
        let views = g.slice_rows(z, 0, 2 * n)?;
        Some(unimodal_nt_xent(g, views, cfg)?)
    } else {
        None
    };
    let multi = if objective.uses_speech() {
        let offset = if objective.uses_views() { 2 * n } else { 0 };
        let gz = g.slice_rows(z, offset, offset + n)?;
        let feats: Vec<&SpeechFeatures> = speech.iter().collect();
        let s = model.encode_speech(g, &p, &feats)?;
        let sz = model.project(g, &p, Head::Speech, s)?;
        Some(multimodal_info_nce(g, gz, sz, cfg)?)
    } else {
        None
    };
    match (uni, multi) {
        (Some(u), Some(m)) => combined(g, u, m),
        (Some(u), None) => Ok(u),
        (None, Some(m)) => Ok(m),
        (None, None) => unreachable!("every objective uses views or speech"),
    }
}

/// Checks one objective on a random batch of `batch` instances through a
/// randomly initialized model. `sample` limits the coordinates per tensor.
pub fn tower_gradient_check(
    config: &ModelConfig,
    objective: Objective,
    batch: usize,
    seed: u64,
    sample: Option<usize>,
) -> Result<TowerCheck> {
    let start = Instant::now();
    let mut model = Model::init(config.clone(), seed)?;
    let mut rng = rng_from(derive_seed_path(seed, &[1, batch as u64]));
    // Zero biases put padded positions exactly on a ReLU kink.
    for (name, t) in model.params.iter_mut() {
        if name.ends_with(".b") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    }
    let frames = 8.max(config.gesture.min_frames);
    let gesture_rows = match objective {
        Objective::Unimodal => 2 * batch,
        Objective::Multimodal => batch,
        Objective::Combined => 3 * batch,
    };
    let windows: Vec<SkeletonWindow> = (0..gesture_rows).map(|_| random_window(&mut rng, frames)).collect();
    let speech: Vec<SpeechFeatures> = (0..batch).map(|_| random_speech(&mut rng, &config.speech)).collect();
    let points: Vec<Tensor> = model.params.iter().map(|(_, t)| t.clone()).collect();
    let cfg = LossConfig::default();
    let result = check_gradients_ladder(
        |g, vars| loss_on(g, &model, vars, objective, &windows, &speech, &cfg),
        &points,
        &STEPS,
        sample.map(|per_input| CoordSample {
            per_input,
            seed: derive_seed_path(seed, &[2, batch as u64]),
        }),
    )?;
    Ok(TowerCheck {
        objective,
        batch,
        result,
        wall_ms: start.elapsed().as_millis(),
    })
}

/// Every objective at batch sizes 2, 3, and 4.
pub fn full_gradient_check(config: &ModelConfig, seed: u64) -> Result<Vec<TowerCheck>> {
    let mut out = Vec::new();
    for objective in [Objective::Unimodal, Objective::Multimodal, Objective::Combined] {
        for batch in 2..=4 {
            out.push(tower_gradient_check(config, objective, batch, seed, Some(COORDS_PER_TENSOR))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_objectives_pass_on_the_check_model() {
        for c in full_gradient_check(&check_model_config(), 3).unwrap() {
            assert!(
                c.result.max_rel_error < 1e-4,
                "{:?} N={}: {:?}",
                c.objective,
                c.batch,
                c.result
            );
        }
    }
}
