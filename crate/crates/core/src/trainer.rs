//! Batch assembly, the training loop, validation, and checkpoints.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{AugmentationKind, AugmentationPipeline};
use crate::diff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::objectives::{combined, multimodal_info_nce, unimodal_nt_xent, LossConfig, Objective};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::pose::{Corpus, SkeletonWindow, SpeechFeatures};
use crate::rng::{derive_seed, derive_seed_path, rng_from};
use crate::towers::{Head, Model, ModelConfig};

/// Seed streams derived from the run seed.
pub const SPLIT_STREAM: u64 = 1;
pub const INIT_STREAM: u64 = 2;
pub const ORDER_STREAM: u64 = 3;
pub const AUGMENT_STREAM: u64 = 4;
pub const VALIDATION_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub loss: LossConfig,
    pub val_fraction: f64,
    pub seed: u64,
    pub augmentations: Vec<AugmentationKind>,
    pub augment_probability: f64,
    /// Forces single-threaded batch materialization.
    pub strict_deterministic: bool,
    #[serde(skip, default)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Combined,
            adam: AdamConfig::default(),
            batch_size: 128,
            max_epochs: 200,
            loss: LossConfig::default(),
            val_fraction: 0.1,
            seed: 0,
            augmentations: AugmentationKind::DEFAULT.to_vec(),
            augment_probability: 0.5,
            strict_deterministic: false,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: batch 32, 30 epochs.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 30,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "contrastive training needs batches of at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be nonnegative", self.adam.lr)));
        }
        if !(0.0..=1.0).contains(&self.augment_probability) {
            return Err(Error::Config(format!(
                "augmentation probability {} outside [0, 1]",
                self.augment_probability
            )));
        }
        if !(self.loss.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", self.loss.temperature)));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> AugmentationPipeline {
        AugmentationPipeline::new(
            &self.augmentations,
            self.augment_probability,
            derive_seed(self.seed, AUGMENT_STREAM),
        )
    }

    fn loader_exec(&self) -> Exec {
        if self.strict_deterministic {
            Exec::Sequential
        } else {
            self.exec
        }
    }
}

/// Hex SHA-256 over the training and model configuration.
pub fn config_hash(train: &TrainConfig, model: &ModelConfig) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(train).expect("serializable"));
    h.update(model.to_text().as_bytes());
    hex::encode(h.finalize())
}

/// Normalized windows with their speech context, ready for batching.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub windows: Vec<SkeletonWindow>,
    /// Present when the dataset was built with speech.
    pub speech: Option<Vec<SpeechFeatures>>,
    /// Corpus record index per window.
    pub records: Vec<usize>,
}

impl Dataset {
    /// Materializes every sampled window of `corpus`, or at most
    /// `per_gesture` evenly spaced windows of each gesture.
    pub fn from_corpus(corpus: &Corpus, with_speech: bool, per_gesture: Option<usize>, exec: Exec) -> Result<Self> {
        let mut chosen = Vec::new();
        for positions in corpus.windows_by_record().values() {
            match per_gesture {
                Some(k) if k < positions.len() => {
                    let n = positions.len();
                    chosen.extend((0..k).map(|i| positions[(2 * i + 1) * n / (2 * k)]));
                }
                _ => chosen.extend_from_slice(positions),
            }
        }
        let items = exec.map(chosen.len(), |i| {
            let w = &corpus.windows[chosen[i]];
            let window = corpus.normalized_window(w)?;
            let speech = if with_speech { Some(corpus.speech_window(w)?) } else { None };
            Ok((window, speech, w.record))
        });
        let mut windows = Vec::with_capacity(items.len());
        let mut speech = Vec::new();
        let mut records = Vec::with_capacity(items.len());
        for item in items {
            let (w, s, r) = item?;
            windows.push(w);
            speech.extend(s);
            records.push(r);
        }
        Ok(Dataset {
            windows,
            speech: with_speech.then_some(speech),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Seeded uniform shuffle, then the first `floor(n · train_fraction)`
/// indices train and the rest validate. Both parts are kept nonempty.
pub fn split_dataset(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Contract(format!("cannot split {n} windows")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Contract(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed));
    let train = ((n as f64 * train_fraction).floor() as usize).clamp(1, n - 1);
    let val = idx.split_off(train);
    Ok((idx, val))
}

/// Where augmentation draws come from for one batch.
#[derive(Debug, Clone, Copy)]
enum ViewStreams {
    /// Training: keyed by epoch and step.
    Train { epoch: u64, step: u64 },
    /// Validation: keyed by window only, identical every epoch.
    Validation,
}

/// Forward pass of one batch. Returns the graph, the loss node, and the
/// loss value.
fn batch_loss(
    model: &Model,
    data: &Dataset,
    batch: &[usize],
    cfg: &TrainConfig,
    pipeline: &AugmentationPipeline,
    streams: ViewStreams,
    trainable: bool,
) -> Result<(Graph, crate::diff::Var, crate::params::Bound)> {
    let n = batch.len();
    let obj = cfg.objective;
    let mut g = Graph::with_exec(cfg.exec);
    let p = model.params.bind(&mut g, trainable);

    let mut inputs: Vec<SkeletonWindow> = Vec::new();
    if obj.uses_views() {
        let views = cfg.loader_exec().map(n, |i| {
            let stream = match streams {
                ViewStreams::Train { epoch, step } => derive_seed_path(cfg.seed, &[epoch, step, i as u64]),
                ViewStreams::Validation => derive_seed(derive_seed(cfg.seed, VALIDATION_STREAM), batch[i] as u64),
            };
            pipeline.sample_views(&data.windows[batch[i]], stream)
        });
        let mut second = Vec::with_capacity(n);
        for v in views {
            let (a, b) = v?;
            inputs.push(a);
            second.push(b);
        }
        inputs.extend(second);
    }
    if obj.uses_speech() {
        inputs.extend(batch.iter().map(|&i| data.windows[i].clone()));
    }
    let refs: Vec<&SkeletonWindow> = inputs.iter().collect();
    let x = g.constant(Model::gesture_input(&refs)?);
    let h = model.encode_gesture(&mut g, &p, x)?;
    let z = model.project(&mut g, &p, Head::Gesture, h)?;

    let uni = if obj.uses_views() {
        let views = g.slice_rows(z, 0, 2 * n)?;
        Some(unimodal_nt_xent(&mut g, views, &cfg.loss)?)
    } else {
        None
    };
    let multi = if obj.uses_speech() {
        let speech = data
            .speech
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{} training needs speech features", obj.name())))?;
        let offset = if obj.uses_views() { 2 * n } else { 0 };
        let gz = g.slice_rows(z, offset, offset + n)?;
        let feats: Vec<&SpeechFeatures> = batch.iter().map(|&i| &speech[i]).collect();
        let s = model.encode_speech(&mut g, &p, &feats)?;
        let sz = model.project(&mut g, &p, Head::Speech, s)?;
        Some(multimodal_info_nce(&mut g, gz, sz, &cfg.loss)?)
    } else {
        None
    };
    let loss = match (uni, multi) {
        (Some(u), Some(m)) => combined(&mut g, u, m)?,
        (Some(u), None) => u,
        (None, Some(m)) => m,
        (None, None) => unreachable!("every objective uses views or speech"),
    };
    Ok((g, loss, p))
}

/// One optimization step on `batch`. Returns the loss before the update.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    data: &Dataset,
    batch: &[usize],
    cfg: &TrainConfig,
    epoch: u64,
    step: u64,
) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::Contract(format!("training batch of {} windows", batch.len())));
    }
    let pipeline = cfg.pipeline();
    let (mut g, loss, p) = batch_loss(model, data, batch, cfg, &pipeline, ViewStreams::Train { epoch, step }, true)?;
    let value = g.value(loss).item()?;
    g.backward(loss)?;
    let grads = p.gradients(&g);
    if !value.is_finite() || grads.iter().any(|t| !t.is_finite()) {
        let norms: Vec<String> = model
            .params
            .iter()
            .zip(&grads)
            .map(|((name, _), t)| format!("{name}={:.3e}", t.norm()))
            .collect();
        return Err(Error::Numeric(format!(
            "non-finite training loss at epoch {epoch} step {step}: loss {value}, gradient norms [{}]",
            norms.join(", ")
        )));
    }
    adam.step(&mut model.params, &grads)?;
    Ok(value)
}

/// Mean loss over `indices` in batches, without touching parameters.
/// Augmented views are keyed by window, so repeated evaluations see the
/// same views. A trailing batch of one is folded into the previous batch.
pub fn evaluate(model: &Model, data: &Dataset, indices: &[usize], cfg: &TrainConfig) -> Result<f64> {
    if indices.len() < 2 {
        return Err(Error::Contract(format!("cannot evaluate {} windows", indices.len())));
    }
    let pipeline = cfg.pipeline();
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in eval_chunks(indices, cfg.batch_size) {
        let (g, loss, _) = batch_loss(model, data, chunk, cfg, &pipeline, ViewStreams::Validation, false)?;
        total += g.value(loss).item()? * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

fn eval_chunks(indices: &[usize], batch: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    while start < indices.len() {
        let mut end = (start + batch).min(indices.len());
        if indices.len() - end == 1 {
            end = indices.len();
        }
        out.push(&indices[start..end]);
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_ms: u64,
}

/// Parameter snapshot with its training history.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub epoch: usize,
    pub train_history: Vec<f64>,
    pub val_history: Vec<f64>,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    /// Selected (minimum validation loss) checkpoint.
    pub best: Checkpoint,
    /// Parameters after the last epoch.
    pub last: Model,
    pub metrics: Vec<EpochMetrics>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    /// Loss of every optimization step, in order.
    pub step_losses: Vec<f64>,
}

/// Trains `init` on `data`. Epoch 0 records the losses of the initial
/// parameters; each later epoch shuffles the training indices, drops the
/// last incomplete batch, and evaluates the validation loss.
pub fn fit(data: &Dataset, init: Model, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("empty training dataset".into()));
    }
    let (train, val) = split_dataset(data.len(), 1.0 - cfg.val_fraction, derive_seed(cfg.seed, SPLIT_STREAM))?;
    if train.len() < cfg.batch_size {
        return Err(Error::Contract(format!(
            "{} training windows cannot fill a batch of {}",
            train.len(),
            cfg.batch_size
        )));
    }
    let hash = config_hash(cfg, &init.config);
    let mut model = init;
    let mut adam = Adam::new(cfg.adam, &model.params);

    let clock = Instant::now();
    let train_loss = evaluate(&model, data, &train, cfg)?;
    let val_loss = evaluate(&model, data, &val, cfg)?;
    let mut metrics = vec![EpochMetrics {
        epoch: 0,
        train_loss,
        val_loss,
        wall_ms: clock.elapsed().as_millis() as u64,
    }];
    log::info!("epoch 0: train {train_loss:.5} val {val_loss:.5}");
    let mut best = Checkpoint {
        model: model.clone(),
        epoch: 0,
        train_history: vec![train_loss],
        val_history: vec![val_loss],
        config_hash: hash.clone(),
    };
    let mut step_losses = Vec::new();
    let mut order = train.clone();
    let mut order_rng = rng_from(derive_seed(cfg.seed, ORDER_STREAM));
    for epoch in 1..=cfg.max_epochs {
        let clock = Instant::now();
        order.shuffle(&mut order_rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for (step, batch) in order.chunks_exact(cfg.batch_size).enumerate() {
            let loss = train_step(&mut model, &mut adam, data, batch, cfg, epoch as u64, step as u64)?;
            step_losses.push(loss);
            sum += loss;
            steps += 1;
        }
        let train_loss = sum / steps as f64;
        let val_loss = evaluate(&model, data, &val, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss {val_loss} at epoch {epoch}")));
        }
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            wall_ms: clock.elapsed().as_millis() as u64,
        });
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5}");
        if val_loss < *best.val_history.iter().min_by(|a, b| a.total_cmp(b)).expect("nonempty") {
            best.model = model.clone();
            best.epoch = epoch;
        }
        best.train_history.push(train_loss);
        best.val_history.push(val_loss);
    }
    Ok(TrainRun {
        best,
        last: model,
        metrics,
        train_indices: train,
        val_indices: val,
        step_losses,
    })
}

/// Writes one JSON object per epoch.
pub fn write_metrics(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut out = Vec::new();
    for m in metrics {
        serde_json::to_writer(&mut out, m).map_err(|e| Error::Format(e.to_string()))?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"GCKP";
const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    /// Encodes the checkpoint: magic, version, then length-prefixed fields,
    /// all little-endian, with parameters as named f64 tensors.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.config_hash);
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        put_f64s(&mut out, &self.train_history);
        put_f64s(&mut out, &self.val_history);
        put_str(&mut out, &self.model.config.to_text());
        out.extend_from_slice(&(self.model.params.len() as u32).to_le_bytes());
        for (name, t) in self.model.params.iter() {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config_hash = r.string()?;
        let epoch = r.u64()? as usize;
        let train_history = r.f64s()?;
        let val_history = r.f64s()?;
        let config = ModelConfig::from_text(&r.string()?)?;
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(Error::Format(format!("tensor {name} claims {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.filter(|&l| l <= r.remaining() / 8).ok_or_else(|| {
                Error::Format(format!("tensor {name} of shape {shape:?} exceeds the file"))
            })?;
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<f64>>>()?;
            params.insert(name, Tensor::new(&shape, data)?);
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", r.remaining())));
        }
        let mut model = Model::init(config, 0)?;
        let expected: Vec<(String, Vec<usize>)> =
            model.params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
        let found: Vec<(String, Vec<usize>)> =
            params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
        if expected != found {
            return Err(Error::Format("checkpoint parameters do not match its model configuration".into()));
        }
        model.params = params;
        Ok(Checkpoint {
            model,
            epoch,
            train_history,
            val_history,
            config_hash,
        })
    }

    /// Hex SHA-256 of the encoded checkpoint.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Logs and returns a warning when the checkpoint was trained under a
    /// different configuration hash.
    pub fn check_config(&self, expected_hash: &str) -> Option<String> {
        if self.config_hash == expected_hash {
            return None;
        }
        let msg = format!(
            "checkpoint configuration hash {} differs from the current {}",
            self.config_hash, expected_hash
        );
        log::warn!("{msg}");
        Some(msg)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_atomic(path, &checkpoint.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        if n > self.remaining() / 8 {
            return Err(Error::Format(format!("history of {n} entries exceeds the file")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}
