//! Flat `section.key = value` configuration files and the run
//! configuration assembled from them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationKind;
use crate::error::{Error, Result};
use crate::pose::WindowSpec;
use crate::probing::{EpochSelection, ProbeConfig};
use crate::stats::Variance;
use crate::synth::SynthConfig;
use crate::towers::{GestureEncoderConfig, Layer, ModelConfig};
use crate::trainer::TrainConfig;

/// Parsed key-value pairs. Consumers [`take`](KeyValues::take) the keys they
/// understand and then call [`finish`](KeyValues::finish), which rejects
/// anything left over.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    origin: String,
    entries: BTreeMap<String, (String, u64)>,
}

impl KeyValues {
    /// Parses `key = value` lines. Blank lines and lines starting with `#`
    /// are ignored; repeated keys are an error.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i as u64 + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Parse {
                file: origin.to_string(),
                line,
                message: format!("expected `key = value`, got {trimmed:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    file: origin.to_string(),
                    line,
                    message: format!("invalid key {key:?}"),
                });
            }
            if entries
                .insert(key.to_string(), (value.trim().to_string(), line))
                .is_some()
            {
                return Err(Error::Parse {
                    file: origin.to_string(),
                    line,
                    message: format!("key {key} given twice"),
                });
            }
        }
        Ok(KeyValues {
            origin: origin.to_string(),
            entries,
        })
    }

    /// Adds or replaces a value, as a command-line override would.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (value.into(), 0));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Removes and parses `key`.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((value, line)) => value.parse::<T>().map(Some).map_err(|e| Error::Parse {
                file: self.origin.clone(),
                line,
                message: format!("{key} = {value:?}: {e}"),
            }),
        }
    }

    /// Removes `key` and splits its value on commas.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((value, line)) => value
                .split(',')
                .map(|p| p.trim())
                .filter(|p| !p.is_empty())
                .map(|p| {
                    p.parse::<T>().map_err(|e| Error::Parse {
                        file: self.origin.clone(),
                        line,
                        message: format!("{key} = {value:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Fails on the first key nobody consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (_, line))) => Err(Error::Config(format!(
                "unknown key {key} in {} (line {line})",
                self.origin
            ))),
        }
    }
}


/// Preset defaults the file and flags start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Published hyperparameters and the full-width encoder.
    #[default]
    Full,
    /// Batch 32, 30 epochs, a narrow encoder, and one window per gesture.
    Desk,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            other => Err(format!("unknown profile {other:?} (expected full or desk)")),
        }
    }
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Full => "full",
            Profile::Desk => "desk",
        }
    }

    pub fn model(self) -> ModelConfig {
        match self {
            Profile::Full => ModelConfig::default(),
            Profile::Desk => ModelConfig {
                gesture: GestureEncoderConfig {
                    widths: vec![8, 16, 16, 32],
                    ..GestureEncoderConfig::default()
                },
                ..ModelConfig::default()
            },
        }
    }

    pub fn train(self) -> TrainConfig {
        match self {
            Profile::Full => TrainConfig::default(),
            Profile::Desk => TrainConfig::desk(),
        }
    }

    /// Training windows per gesture; `None` keeps every window.
    pub fn per_gesture(self) -> Option<usize> {
        match self {
            Profile::Full => None,
            Profile::Desk => Some(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Corpus directory, resolved against the config file's directory.
    pub corpus: Option<PathBuf>,
    pub window: WindowSpec,
    pub per_gesture: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub layer: Layer,
    pub variance: Variance,
    pub alpha: f64,
    /// Cap on pairs per hypothesis-battery set.
    pub max_pairs: Option<usize>,
    pub embed_batch: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            layer: Layer::Projection,
            variance: Variance::Welch,
            alpha: 0.05,
            max_pairs: None,
            embed_batch: 64,
        }
    }
}

/// Everything a command needs, resolved from a profile, an optional
/// config file, and overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    /// `None` asks the caller to draw and log an entropy seed.
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub probe: ProbeConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

/// Every key [`RunConfig::resolve`] consumes, besides the `model.*` keys
/// of [`ModelConfig::apply`].
pub const RUN_KEYS: &[&str] = &[
    "run.profile",
    "run.seed",
    "train.objective",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.batch_size",
    "train.epochs",
    "train.temperature",
    "train.val_fraction",
    "train.strict_deterministic",
    "augment.kinds",
    "augment.probability",
    "data.corpus",
    "data.window_seconds",
    "data.offset_frames",
    "data.min_overlap",
    "data.per_gesture",
    "eval.layer",
    "eval.variance",
    "eval.alpha",
    "eval.max_pairs",
    "eval.embed_batch",
    "probe.hidden",
    "probe.epochs",
    "probe.lr",
    "probe.batch_size",
    "probe.fractions",
    "probe.seeds",
    "probe.alpha",
    "probe.shared_weights",
    "probe.standardize",
    "probe.selection",
    "probe.max_split_retries",
    "synth.n_dialogues",
    "synth.speakers_per_dialogue",
    "synth.referents",
    "synth.gestures_per_speaker",
    "synth.fps",
    "synth.speech_fps",
    "synth.speech_layers",
    "synth.speech_dim",
    "synth.speech_signal_layer",
    "synth.dialogue_resample",
    "synth.speaker_resample",
    "synth.gesture_resample",
    "synth.noise",
    "synth.style_scale",
    "synth.pixel_noise",
    "synth.speech_noise",
    "synth.camera_scale",
    "synth.hand_scale",
    "synth.movement_amplitude",
    "synth.speech_referent_norm",
    "synth.speech_form_norm",
];

macro_rules! take_into {
    ($kv:expr, $($key:literal => $target:expr),* $(,)?) => {
        $(if let Some(v) = $kv.take($key)? {
            $target = v;
        })*
    };
}

fn parse_variance(s: &str) -> std::result::Result<Variance, String> {
    match s {
        "welch" => Ok(Variance::Welch),
        "pooled" => Ok(Variance::Pooled),
        other => Err(format!("unknown variance {other:?} (expected welch or pooled)")),
    }
}

fn parse_selection(s: &str) -> std::result::Result<EpochSelection, String> {
    match s {
        "best-validation" => Ok(EpochSelection::BestValidation),
        "final" => Ok(EpochSelection::Final),
        other => Err(format!("unknown epoch selection {other:?} (expected best-validation or final)")),
    }
}

/// `0` and `all` mean no limit.
fn parse_limit(s: &str) -> std::result::Result<Option<usize>, String> {
    match s {
        "all" | "0" => Ok(None),
        n => n.parse::<usize>().map(Some).map_err(|e| e.to_string()),
    }
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        RunConfig {
            profile,
            seed: None,
            model: profile.model(),
            train: profile.train(),
            synth: SynthConfig::default(),
            probe: ProbeConfig::default(),
            data: DataConfig {
                corpus: None,
                window: WindowSpec::default(),
                per_gesture: profile.per_gesture(),
            },
            eval: EvalConfig::default(),
        }
    }

    /// Starts from `profile` (or `run.profile`, or full), then applies
    /// every key of `kv`. Unknown keys are errors.
    pub fn resolve(mut kv: KeyValues, profile: Option<Profile>, base_dir: Option<&Path>) -> Result<Self> {
        let file_profile: Option<Profile> = kv.take("run.profile")?;
        let mut cfg = RunConfig::for_profile(profile.or(file_profile).unwrap_or_default());
        cfg.seed = kv.take("run.seed")?;
        cfg.model.apply(&mut kv)?;

        let t = &mut cfg.train;
        take_into!(kv,
            "train.objective" => t.objective,
            "train.lr" => t.adam.lr,
            "train.beta1" => t.adam.beta1,
            "train.beta2" => t.adam.beta2,
            "train.eps" => t.adam.eps,
            "train.batch_size" => t.batch_size,
            "train.epochs" => t.max_epochs,
            "train.temperature" => t.loss.temperature,
            "train.val_fraction" => t.val_fraction,
            "train.strict_deterministic" => t.strict_deterministic,
            "augment.probability" => t.augment_probability,
        );
        if let Some(kinds) = kv.take_list::<AugmentationKind>("augment.kinds")? {
            t.augmentations = kinds;
        }

        let d = &mut cfg.data;
        if let Some(path) = kv.take::<PathBuf>("data.corpus")? {
            d.corpus = Some(match base_dir {
                Some(base) if path.is_relative() => base.join(path),
                _ => path,
            });
        }
        take_into!(kv,
            "data.window_seconds" => d.window.window_seconds,
            "data.offset_frames" => d.window.offset_frames,
            "data.min_overlap" => d.window.min_overlap,
        );
        if let Some(v) = kv.take::<String>("data.per_gesture")? {
            d.per_gesture = parse_limit(&v).map_err(|e| Error::Config(format!("data.per_gesture: {e}")))?;
        }

        let e = &mut cfg.eval;
        take_into!(kv,
            "eval.layer" => e.layer,
            "eval.alpha" => e.alpha,
            "eval.embed_batch" => e.embed_batch,
        );
        if let Some(v) = kv.take::<String>("eval.variance")? {
            e.variance = parse_variance(&v).map_err(Error::Config)?;
        }
        if let Some(v) = kv.take::<String>("eval.max_pairs")? {
            e.max_pairs = parse_limit(&v).map_err(|e| Error::Config(format!("eval.max_pairs: {e}")))?;
        }

        let p = &mut cfg.probe;
        take_into!(kv,
            "probe.hidden" => p.hidden,
            "probe.epochs" => p.epochs,
            "probe.lr" => p.lr,
            "probe.batch_size" => p.batch_size,
            "probe.seeds" => p.seeds,
            "probe.alpha" => p.alpha,
            "probe.shared_weights" => p.shared_weights,
            "probe.standardize" => p.standardize,
            "probe.max_split_retries" => p.max_split_retries,
        );
        if let Some(v) = kv.take_list::<f64>("probe.fractions")? {
            p.fractions = v
                .try_into()
                .map_err(|v: Vec<f64>| Error::Config(format!("probe.fractions needs 3 values, got {}", v.len())))?;
        }
        if let Some(v) = kv.take::<String>("probe.selection")? {
            p.selection = parse_selection(&v).map_err(Error::Config)?;
        }

        let s = &mut cfg.synth;
        take_into!(kv,
            "synth.n_dialogues" => s.n_dialogues,
            "synth.speakers_per_dialogue" => s.speakers_per_dialogue,
            "synth.referents" => s.referents,
            "synth.gestures_per_speaker" => s.gestures_per_speaker,
            "synth.fps" => s.fps,
            "synth.speech_fps" => s.speech_fps,
            "synth.speech_layers" => s.speech_layers,
            "synth.speech_dim" => s.speech_dim,
            "synth.speech_signal_layer" => s.speech_signal_layer,
            "synth.dialogue_resample" => s.dialogue_resample,
            "synth.speaker_resample" => s.speaker_resample,
            "synth.gesture_resample" => s.gesture_resample,
            "synth.noise" => s.noise,
            "synth.style_scale" => s.style_scale,
            "synth.pixel_noise" => s.pixel_noise,
            "synth.speech_noise" => s.speech_noise,
            "synth.camera_scale" => s.camera_scale,
            "synth.hand_scale" => s.hand_scale,
            "synth.movement_amplitude" => s.movement_amplitude,
            "synth.speech_referent_norm" => s.speech_referent_norm,
            "synth.speech_form_norm" => s.speech_form_norm,
        );

        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (if any) and applies `overrides` on top of it.
    pub fn load(path: Option<&Path>, profile: Option<Profile>, overrides: &[(String, String)]) -> Result<Self> {
        let mut kv = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                KeyValues::parse(&text, &p.display().to_string())?
            }
            None => KeyValues::default(),
        };
        for (k, v) in overrides {
            kv.set(k, v.clone());
        }
        RunConfig::resolve(kv, profile, path.and_then(Path::parent))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        self.probe.validate()?;
        if self.data.per_gesture == Some(0) || self.eval.embed_batch == 0 {
            return Err(Error::Config("windows per gesture and embedding batch must be positive".into()));
        }
        if !(self.data.window.window_seconds > 0.0) || self.data.window.offset_frames == 0 {
            return Err(Error::Config("window length and offset must be positive".into()));
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(Error::Config(format!("eval.alpha = {} outside (0, 1)", self.eval.alpha)));
        }
        Ok(())
    }
}
#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_profile_and_overrides() {
        let kv = KeyValues::parse("run.profile = desk\ntrain.epochs = 5\nprobe.fractions = 0.5,0.25,0.25\ndata.corpus = c\n", "t").unwrap();
        let cfg = RunConfig::resolve(kv, None, Some(Path::new("/base"))).unwrap();
        assert_eq!(cfg.profile, Profile::Desk);
        assert_eq!((cfg.train.batch_size, cfg.train.max_epochs), (32, 5));
        assert_eq!(cfg.model.gesture.widths, vec![8, 16, 16, 32]);
        assert_eq!(cfg.model.gesture.output_dim, 256);
        assert_eq!(cfg.data.per_gesture, Some(1));
        assert_eq!(cfg.probe.fractions, [0.5, 0.25, 0.25]);
        assert_eq!(cfg.data.corpus.as_deref(), Some(Path::new("/base/c")));
    }

    #[test]
    fn explicit_profile_wins_and_bad_values_fail() {
        let kv = KeyValues::parse("run.profile = desk\n", "t").unwrap();
        assert_eq!(RunConfig::resolve(kv, Some(Profile::Full), None).unwrap().train.batch_size, 128);
        let kv = KeyValues::parse("probe.fractions = 0.5,0.5\n", "t").unwrap();
        assert!(matches!(RunConfig::resolve(kv, None, None), Err(Error::Config(_))));
        let kv = KeyValues::parse("train.lrr = 1\n", "t").unwrap();
        assert!(RunConfig::resolve(kv, None, None).unwrap_err().to_string().contains("train.lrr"));
    }

    #[test]
    fn every_documented_key_is_consumed() {
        for key in RUN_KEYS {
            let kv = KeyValues::parse(&format!("{key} = ?\n"), "t").unwrap();
            let err = RunConfig::resolve(kv, None, None).err();
            let msg = err.map(|e| e.to_string()).unwrap_or_default();
            assert!(!msg.contains("unknown key"), "{key}: {msg}");
        }
    }

    #[test]
    fn parses_and_consumes() {
        let mut kv = KeyValues::parse("# comment\ntrain.lr = 0.001\n\naugment.kinds = mirror, jitter\n", "t").unwrap();
        assert_eq!(kv.take::<f64>("train.lr").unwrap(), Some(0.001));
        assert_eq!(
            kv.take_list::<String>("augment.kinds").unwrap(),
            Some(vec!["mirror".to_string(), "jitter".to_string()])
        );
        kv.finish().unwrap();
    }

    #[test]
    fn unknown_key_is_reported() {
        let kv = KeyValues::parse("train.lrr = 1\n", "t").unwrap();
        let err = kv.finish().unwrap_err().to_string();
        assert!(err.contains("train.lrr"), "{err}");
    }

    #[test]
    fn malformed_line_and_bad_value() {
        assert!(matches!(KeyValues::parse("a\n", "t"), Err(Error::Parse { line: 1, .. })));
        let mut kv = KeyValues::parse("x = 1\ny = abc\n", "t").unwrap();
        assert!(matches!(kv.take::<u32>("y"), Err(Error::Parse { line: 2, .. })));
    }
}
