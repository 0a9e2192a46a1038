//! The gesture encoder, the speech head, and the two projection heads.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{he_uniform, Bound, ParamStore};
use crate::pose::{SkeletonGraph, SkeletonWindow, SpeechFeatures, CHANNELS, JOINTS};
use crate::rng::rng_from;

/// Spatio-temporal graph encoder. Each block mixes joints through the
/// normalized adjacency, maps channels pointwise, applies ReLU, convolves
/// along time, adds a residual when shapes allow, and applies ReLU again.
/// With `self_partition` the unmixed input gets its own pointwise map that
/// is added before the first ReLU, so blocks can form joint differences.
/// Blocks are followed by mean pooling over frames and joints, and by a
/// linear head when the last width differs from `output_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureEncoderConfig {
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub strides: Vec<usize>,
    pub output_dim: usize,
    pub residual: bool,
    pub self_partition: bool,
    pub min_frames: usize,
}

impl Default for GestureEncoderConfig {
    fn default() -> Self {
        GestureEncoderConfig {
            widths: vec![32, 64, 128, 256],
            kernel: 9,
            strides: vec![1, 2, 1, 2],
            output_dim: 256,
            residual: true,
            self_partition: true,
            min_frames: 4,
        }
    }
}

impl GestureEncoderConfig {
    fn has_head(&self) -> bool {
        self.widths.last() != Some(&self.output_dim)
    }
}

/// Softmax-weighted layer mixing followed by two pointwise convolutions
/// and mean pooling over frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechHeadConfig {
    pub layers: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
}

impl Default for SpeechHeadConfig {
    fn default() -> Self {
        SpeechHeadConfig {
            layers: 4,
            input_dim: 16,
            hidden: 256,
            output_dim: 128,
        }
    }
}

/// Linear, ReLU, linear; the hidden width equals the input width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionHeadConfig {
    pub input_dim: usize,
    pub output_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gesture: GestureEncoderConfig,
    pub speech: SpeechHeadConfig,
    pub projection_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            gesture: GestureEncoderConfig::default(),
            speech: SpeechHeadConfig::default(),
            projection_dim: 128,
        }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    pub fn gesture_projection(&self) -> ProjectionHeadConfig {
        ProjectionHeadConfig {
            input_dim: self.gesture.output_dim,
            output_dim: self.projection_dim,
        }
    }

    pub fn speech_projection(&self) -> ProjectionHeadConfig {
        ProjectionHeadConfig {
            input_dim: self.speech.output_dim,
            output_dim: self.projection_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.gesture;
        if g.widths.is_empty() || g.widths.len() != g.strides.len() {
            return Err(Error::Config(format!(
                "encoder needs one stride per block: {} widths, {} strides",
                g.widths.len(),
                g.strides.len()
            )));
        }
        if g.kernel % 2 == 0 || g.strides.contains(&0) || g.widths.contains(&0) || g.output_dim == 0 {
            return Err(Error::Config("encoder kernel must be odd and sizes positive".into()));
        }
        let s = &self.speech;
        if s.layers == 0 || s.input_dim == 0 || s.hidden == 0 || s.output_dim == 0 || self.projection_dim == 0 {
            return Err(Error::Config("speech head and projection sizes must be positive".into()));
        }
        Ok(())
    }

    /// `key = value` lines, also used as the checkpoint config record.
    pub fn to_text(&self) -> String {
        let g = &self.gesture;
        let s = &self.speech;
        format!(
            "model.widths = {}\nmodel.kernel = {}\nmodel.strides = {}\nmodel.output_dim = {}\n\
model.residual = {}\nmodel.self_partition = {}\nmodel.min_frames = {}\nmodel.speech_layers = {}\nmodel.speech_dim = {}\n\
model.speech_hidden = {}\nmodel.speech_output_dim = {}\nmodel.projection_dim = {}\n",
            join(&g.widths),
            g.kernel,
            join(&g.strides),
            g.output_dim,
            g.residual,
            g.self_partition,
            g.min_frames,
            s.layers,
            s.input_dim,
            s.hidden,
            s.output_dim,
            self.projection_dim
        )
    }

    /// Overrides fields from `model.*` keys, consuming them.
    pub fn apply(&mut self, kv: &mut KeyValues) -> Result<()> {
        let g = &mut self.gesture;
        if let Some(v) = kv.take_list("model.widths")? {
            g.widths = v;
        }
        if let Some(v) = kv.take("model.kernel")? {
            g.kernel = v;
        }
        if let Some(v) = kv.take_list("model.strides")? {
            g.strides = v;
        }
        if let Some(v) = kv.take("model.output_dim")? {
            g.output_dim = v;
        }
        if let Some(v) = kv.take("model.residual")? {
            g.residual = v;
        }
        if let Some(v) = kv.take("model.self_partition")? {
            g.self_partition = v;
        }
        if let Some(v) = kv.take("model.min_frames")? {
            g.min_frames = v;
        }
        let s = &mut self.speech;
        if let Some(v) = kv.take("model.speech_layers")? {
            s.layers = v;
        }
        if let Some(v) = kv.take("model.speech_dim")? {
            s.input_dim = v;
        }
        if let Some(v) = kv.take("model.speech_hidden")? {
            s.hidden = v;
        }
        if let Some(v) = kv.take("model.speech_output_dim")? {
            s.output_dim = v;
        }
        if let Some(v) = kv.take("model.projection_dim")? {
            self.projection_dim = v;
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text, "model config")?;
        let mut cfg = ModelConfig::default();
        cfg.apply(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }
}

/// Which gesture embedding to read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    /// Output of the gesture projection head.
    Projection,
    /// Output of the gesture encoder.
    Encoder,
}

impl std::str::FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "projection" => Ok(Layer::Projection),
            "encoder" => Ok(Layer::Encoder),
            other => Err(format!("unknown layer {other:?} (projection or encoder)")),
        }
    }
}

/// Which projection head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Gesture,
    Speech,
}

impl Head {
    fn prefix(self) -> &'static str {
        match self {
            Head::Gesture => "proj_gesture",
            Head::Speech => "proj_speech",
        }
    }
}

/// Parameters and architecture of the two towers and heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub adjacency: Arc<Tensor>,
    pub params: ParamStore,
}

impl Model {
    /// Randomly initialized model over the default skeleton graph.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        Model::init_with_adjacency(config, SkeletonGraph::new().normalized_adjacency, seed)
    }

    pub fn init_with_adjacency(config: ModelConfig, adjacency: Arc<Tensor>, seed: u64) -> Result<Self> {
        config.validate()?;
        let a = adjacency.shape();
        if a.len() != 2 || a[0] != a[1] {
            return Err(Error::Shape(format!("adjacency must be square, got {a:?}")));
        }
        let mut rng = rng_from(seed);
        let mut params = ParamStore::new();
        let g = &config.gesture;
        let k = g.kernel;
        let mut c_in = CHANNELS;
        for (i, &c_out) in g.widths.iter().enumerate() {
            let fan_in = if g.self_partition { 2 * c_in } else { c_in };
            params.insert(format!("gesture.block{i}.channel.w"), he_uniform(&[c_out, c_in], fan_in, &mut rng));
            if g.self_partition {
                params.insert(format!("gesture.block{i}.self.w"), he_uniform(&[c_out, c_in], fan_in, &mut rng));
            }
            params.insert(format!("gesture.block{i}.channel.b"), Tensor::zeros(&[c_out]));
            params.insert(
                format!("gesture.block{i}.temporal.w"),
                he_uniform(&[c_out, c_out, k], c_out * k, &mut rng),
            );
            params.insert(format!("gesture.block{i}.temporal.b"), Tensor::zeros(&[c_out]));
            c_in = c_out;
        }
        if g.has_head() {
            params.insert("gesture.head.w", he_uniform(&[c_in, g.output_dim], c_in, &mut rng));
            params.insert("gesture.head.b", Tensor::zeros(&[g.output_dim]));
        }
        let s = &config.speech;
        params.insert("speech.layer_logits", Tensor::zeros(&[s.layers]));
        params.insert("speech.conv1.w", he_uniform(&[s.input_dim, s.hidden], s.input_dim, &mut rng));
        params.insert("speech.conv1.b", Tensor::zeros(&[s.hidden]));
        params.insert("speech.conv2.w", he_uniform(&[s.hidden, s.output_dim], s.hidden, &mut rng));
        params.insert("speech.conv2.b", Tensor::zeros(&[s.output_dim]));
        for (head, cfg) in [
            (Head::Gesture, config.gesture_projection()),
            (Head::Speech, config.speech_projection()),
        ] {
            let p = head.prefix();
            let d = cfg.input_dim;
            params.insert(format!("{p}.l1.w"), he_uniform(&[d, d], d, &mut rng));
            params.insert(format!("{p}.l1.b"), Tensor::zeros(&[d]));
            params.insert(format!("{p}.l2.w"), he_uniform(&[d, cfg.output_dim], d, &mut rng));
            params.insert(format!("{p}.l2.b"), Tensor::zeros(&[cfg.output_dim]));
        }
        Ok(Model {
            config,
            adjacency,
            params,
        })
    }

    /// Stacks windows into a `(batch, channels, frames, joints)` tensor.
    pub fn gesture_input(windows: &[&SkeletonWindow]) -> Result<Tensor> {
        let first = windows
            .first()
            .ok_or_else(|| Error::Contract("empty gesture batch".into()))?;
        let frames = first.frames();
        let mut data = Vec::with_capacity(windows.len() * CHANNELS * frames * JOINTS);
        for w in windows {
            if w.frames() != frames {
                return Err(Error::Shape(format!(
                    "batch mixes {frames}-frame and {}-frame windows",
                    w.frames()
                )));
            }
            data.extend_from_slice(w.data());
        }
        Tensor::new(&[windows.len(), CHANNELS, frames, JOINTS], data)
    }

    /// `(batch, channels, frames, joints)` to `(batch, output_dim)`.
    pub fn encode_gesture(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let cfg = &self.config.gesture;
        let s = g.shape(x).to_vec();
        if s.len() != 4 || s[1] != CHANNELS || s[3] != self.adjacency.shape()[0] {
            return Err(Error::Shape(format!(
                "gesture encoder expects (batch, {CHANNELS}, frames, {}), got {s:?}",
                self.adjacency.shape()[0]
            )));
        }
        if s[2] < cfg.min_frames {
            return Err(Error::InputTooShort {
                frames: s[2],
                min: cfg.min_frames,
            });
        }
        let mut h = x;
        let mut c_in = CHANNELS;
        for (i, (&c_out, &stride)) in cfg.widths.iter().zip(&cfg.strides).enumerate() {
            let input = h;
            let mixed = g.graph_mix(h, &self.adjacency)?;
            let mut mapped = g.channel_map(mixed, p.var(&format!("gesture.block{i}.channel.w"))?)?;
            if cfg.self_partition {
                let own = g.channel_map(h, p.var(&format!("gesture.block{i}.self.w"))?)?;
                mapped = g.add(mapped, own)?;
            }
            let mapped = g.add_bias(mapped, p.var(&format!("gesture.block{i}.channel.b"))?, 1)?;
            let act = g.relu(mapped);
            let conv = g.temporal_conv(act, p.var(&format!("gesture.block{i}.temporal.w"))?, stride)?;
            let mut out = g.add_bias(conv, p.var(&format!("gesture.block{i}.temporal.b"))?, 1)?;
            if cfg.residual && c_in == c_out && stride == 1 {
                out = g.add(out, input)?;
            }
            h = g.relu(out);
            c_in = c_out;
        }
        let pooled = g.mean_axis(h, 3)?;
        let mut pooled = g.mean_axis(pooled, 2)?;
        if cfg.has_head() {
            let z = g.matmul(pooled, p.var("gesture.head.w")?)?;
            pooled = g.add_bias(z, p.var("gesture.head.b")?, 1)?;
        }
        Ok(pooled)
    }

    /// Speech features of one batch to `(batch, speech output_dim)`. Samples
    /// may differ in frame count.
    pub fn encode_speech(&self, g: &mut Graph, p: &Bound, features: &[&SpeechFeatures]) -> Result<Var> {
        let cfg = &self.config.speech;
        if features.is_empty() {
            return Err(Error::Contract("empty speech batch".into()));
        }
        let total: usize = features.iter().map(|f| f.frames).sum();
        for f in features {
            if f.layers != cfg.layers || f.dims != cfg.input_dim {
                return Err(Error::Shape(format!(
                    "speech head expects {} layers × {} dims, got {} × {}",
                    cfg.layers, cfg.input_dim, f.layers, f.dims
                )));
            }
            if f.frames == 0 {
                return Err(Error::Shape("speech window without frames".into()));
            }
        }
        let d = cfg.input_dim;
        // (layers, total_frames × dims): every sample's frames side by side.
        let mut stacked = vec![0.0; cfg.layers * total * d];
        for l in 0..cfg.layers {
            let mut offset = l * total * d;
            for f in features {
                let src = &f.data[l * f.frames * d..(l + 1) * f.frames * d];
                for (dst, v) in stacked[offset..offset + src.len()].iter_mut().zip(src) {
                    *dst = *v as f64;
                }
                offset += src.len();
            }
        }
        let stacked = g.constant(Tensor::new(&[cfg.layers, total * d], stacked)?);
        let logits = p.var("speech.layer_logits")?;
        let weights = g.softmax(logits);
        let weights = g.reshape(weights, &[1, cfg.layers])?;
        let mixed = g.matmul(weights, stacked)?;
        let frames = g.reshape(mixed, &[total, d])?;
        let h = g.matmul(frames, p.var("speech.conv1.w")?)?;
        let h = g.add_bias(h, p.var("speech.conv1.b")?, 1)?;
        let h = g.relu(h);
        let h = g.matmul(h, p.var("speech.conv2.w")?)?;
        let h = g.add_bias(h, p.var("speech.conv2.b")?, 1)?;
        // Per-sample mean over frames as a (batch × total_frames) averaging matrix.
        let mut pool = vec![0.0; features.len() * total];
        let mut start = 0;
        for (b, f) in features.iter().enumerate() {
            let w = 1.0 / f.frames as f64;
            pool[b * total + start..b * total + start + f.frames].fill(w);
            start += f.frames;
        }
        let pool = g.constant(Tensor::new(&[features.len(), total], pool)?);
        g.matmul(pool, h)
    }

    /// `(batch, input_dim)` to `(batch, projection_dim)`.
    pub fn project(&self, g: &mut Graph, p: &Bound, head: Head, x: Var) -> Result<Var> {
        let cfg = match head {
            Head::Gesture => self.config.gesture_projection(),
            Head::Speech => self.config.speech_projection(),
        };
        let s = g.shape(x);
        if s.len() != 2 || s[1] != cfg.input_dim {
            return Err(Error::Shape(format!(
                "projection head expects (batch, {}), got {s:?}",
                cfg.input_dim
            )));
        }
        let pre = head.prefix();
        let h = g.matmul(x, p.var(&format!("{pre}.l1.w"))?)?;
        let h = g.add_bias(h, p.var(&format!("{pre}.l1.b"))?, 1)?;
        let h = g.relu(h);
        let h = g.matmul(h, p.var(&format!("{pre}.l2.w"))?)?;
        g.add_bias(h, p.var(&format!("{pre}.l2.b"))?, 1)
    }

    /// Window embeddings at `layer`, computed in chunks of `batch` windows.
    pub fn embed_windows(
        &self,
        windows: &[SkeletonWindow],
        layer: Layer,
        batch: usize,
        exec: crate::Exec,
    ) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(batch.max(1)) {
            let mut g = Graph::with_exec(exec);
            let p = self.params.bind(&mut g, false);
            let refs: Vec<&SkeletonWindow> = chunk.iter().collect();
            let x = g.constant(Model::gesture_input(&refs)?);
            let mut z = self.encode_gesture(&mut g, &p, x)?;
            if layer == Layer::Projection {
                z = self.project(&mut g, &p, Head::Gesture, z)?;
            }
            let v = g.value(z);
            let dim = v.shape()[1];
            out.extend(v.data().chunks(dim).map(|r| r.to_vec()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            gesture: GestureEncoderConfig {
                widths: vec![4, 4],
                kernel: 3,
                strides: vec![1, 2],
                output_dim: 6,
                residual: true,
                self_partition: true,
                min_frames: 4,
            },
            speech: SpeechHeadConfig {
                layers: 2,
                input_dim: 3,
                hidden: 5,
                output_dim: 4,
            },
            projection_dim: 3,
        }
    }

    fn random_window(seed: u64, frames: usize) -> SkeletonWindow {
        let mut rng = rng_from(seed);
        let mut data: Vec<f64> = (0..CHANNELS * frames * JOINTS).map(|_| rng.random_range(-1.0..1.0)).collect();
        for v in &mut data[2 * frames * JOINTS..] {
            *v = rng.random_range(0.0..1.0);
        }
        SkeletonWindow::new("g", 25, frames, data).unwrap()
    }

    #[test]
    fn output_dims() {
        let m = Model::init(small(), 1).unwrap();
        let w = [random_window(1, 8), random_window(2, 8)];
        let enc = m.embed_windows(&w, Layer::Encoder, 8, crate::Exec::Sequential).unwrap();
        let proj = m.embed_windows(&w, Layer::Projection, 8, crate::Exec::Sequential).unwrap();
        assert_eq!(enc[0].len(), 6);
        assert_eq!(proj[1].len(), 3);
        assert!(enc.iter().flatten().chain(proj.iter().flatten()).all(|v| v.is_finite()));
    }

    #[test]
    fn short_input_rejected() {
        let m = Model::init(small(), 1).unwrap();
        let err = m.embed_windows(&[random_window(1, 3)], Layer::Encoder, 8, crate::Exec::Sequential);
        assert!(matches!(err, Err(Error::InputTooShort { frames: 3, min: 4 })));
    }

    #[test]
    fn speech_layer_count_checked() {
        let m = Model::init(small(), 1).unwrap();
        let f = SpeechFeatures::new(3, 2, 3, vec![0.0; 18]).unwrap();
        let mut g = Graph::new();
        let p = m.params.bind(&mut g, false);
        assert!(matches!(m.encode_speech(&mut g, &p, &[&f]), Err(Error::Shape(_))));
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = small();
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }
}
