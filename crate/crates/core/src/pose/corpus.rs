use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::keypoints::{load_keypoints, write_keypoints, Keypoints};
use super::records::{
    load_gesture_records, load_pair_annotations, validate_annotations, validate_records,
    write_gesture_records, write_pair_annotations, GestureRecord, PairAnnotation,
};
use super::skeleton::{SkeletonWindow, CHANNELS, JOINTS};
use super::speech::{read_speech_features, write_speech_features, SpeechFeatures};
use super::windows::{normalize_window, pair_speech_window, sample_windows, WindowIndex, WindowSpec};
use crate::config::KeyValues;
use crate::error::{Error, Result};

pub const GESTURES_FILE: &str = "gestures.csv";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const CORPUS_CONFIG_FILE: &str = "corpus.cfg";
pub const KEYPOINT_DIR: &str = "keypoints";
pub const SPEECH_DIR: &str = "speech";

/// Frame rates shared by every recording in a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusRates {
    pub fps: u32,
    pub speech_fps: u32,
}

impl Default for CorpusRates {
    fn default() -> Self {
        CorpusRates { fps: 25, speech_fps: 50 }
    }
}

/// A loaded dialogue corpus: one keypoint track and optionally one speech
/// feature track per speaker, plus gesture metadata and pair annotations.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub rates: CorpusRates,
    pub records: Vec<GestureRecord>,
    pub annotations: Vec<PairAnnotation>,
    pub keypoints: BTreeMap<String, Keypoints>,
    pub speech: BTreeMap<String, SpeechFeatures>,
    pub spec: WindowSpec,
    /// Sampled windows, sorted by `(record, start)`.
    pub windows: Vec<WindowIndex>,
    /// Records skipped during window sampling.
    pub skipped: Vec<usize>,
}

impl Corpus {
    pub fn from_parts(
        rates: CorpusRates,
        records: Vec<GestureRecord>,
        annotations: Vec<PairAnnotation>,
        keypoints: BTreeMap<String, Keypoints>,
        speech: BTreeMap<String, SpeechFeatures>,
        spec: WindowSpec,
    ) -> Result<Self> {
        validate_records(&records)?;
        validate_annotations(&annotations, &records)?;
        let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_speaker.entry(r.speaker_id.as_str()).or_default().push(i);
        }
        let mut windows = Vec::new();
        let mut skipped = Vec::new();
        for (speaker, idx) in &by_speaker {
            let track = keypoints
                .get(*speaker)
                .ok_or_else(|| Error::Integrity(format!("no keypoint track for speaker {speaker}")))?;
            if track.fps != rates.fps {
                return Err(Error::Integrity(format!(
                    "keypoints of {speaker} at {} fps, corpus at {}",
                    track.fps, rates.fps
                )));
            }
            let subset: Vec<GestureRecord> = idx.iter().map(|&i| records[i].clone()).collect();
            let sample = sample_windows(&subset, track.frames(), rates.fps, spec)?;
            windows.extend(sample.windows.into_iter().map(|w| WindowIndex {
                record: idx[w.record],
                start_frame: w.start_frame,
            }));
            skipped.extend(sample.skipped.into_iter().map(|k| idx[k]));
        }
        windows.sort_unstable();
        skipped.sort_unstable();
        Ok(Corpus {
            rates,
            records,
            annotations,
            keypoints,
            speech,
            spec,
            windows,
            skipped,
        })
    }

    /// Loads a corpus directory.
    pub fn load(dir: &Path, spec: WindowSpec) -> Result<Self> {
        let rates = read_rates(&dir.join(CORPUS_CONFIG_FILE))?;
        let records = load_gesture_records(&dir.join(GESTURES_FILE))?;
        let pairs_path = dir.join(PAIRS_FILE);
        let annotations = if pairs_path.exists() {
            load_pair_annotations(&pairs_path, &records)?
        } else {
            Vec::new()
        };
        let mut keypoints = BTreeMap::new();
        let mut speech = BTreeMap::new();
        let speakers: std::collections::BTreeSet<&str> =
            records.iter().map(|r| r.speaker_id.as_str()).collect();
        for speaker in speakers {
            let kp = load_keypoints(&keypoint_path(dir, speaker), rates.fps)?;
            keypoints.insert(speaker.to_string(), kp);
            let sp = speech_path(dir, speaker);
            if sp.exists() {
                speech.insert(speaker.to_string(), read_speech_features(&sp)?);
            }
        }
        Corpus::from_parts(rates, records, annotations, keypoints, speech, spec)
    }

    /// Writes the corpus in the directory layout [`Corpus::load`] reads.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for sub in [dir.to_path_buf(), dir.join(KEYPOINT_DIR), dir.join(SPEECH_DIR)] {
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        }
        let cfg = dir.join(CORPUS_CONFIG_FILE);
        let text = format!(
            "data.fps = {}\ndata.speech_fps = {}\n",
            self.rates.fps, self.rates.speech_fps
        );
        std::fs::write(&cfg, text).map_err(|e| Error::io(&cfg, e))?;
        write_gesture_records(&dir.join(GESTURES_FILE), &self.records)?;
        write_pair_annotations(&dir.join(PAIRS_FILE), &self.annotations)?;
        for (speaker, kp) in &self.keypoints {
            write_keypoints(&keypoint_path(dir, speaker), kp)?;
        }
        for (speaker, sp) in &self.speech {
            write_speech_features(&speech_path(dir, speaker), sp)?;
        }
        Ok(())
    }

    pub fn window_frames(&self) -> usize {
        self.spec.window_frames(self.rates.fps)
    }

    pub fn record(&self, w: &WindowIndex) -> &GestureRecord {
        &self.records[w.record]
    }

    /// Materializes a raw (pixel-space) window.
    pub fn window(&self, w: &WindowIndex) -> Result<SkeletonWindow> {
        let rec = self.record(w);
        let track = &self.keypoints[&rec.speaker_id];
        let frames = self.window_frames();
        if w.start_frame + frames > track.frames() {
            return Err(Error::Shape(format!(
                "window at {} runs past the {}-frame track of {}",
                w.start_frame,
                track.frames(),
                rec.speaker_id
            )));
        }
        let mut data = vec![0.0; CHANNELS * frames * JOINTS];
        for t in 0..frames {
            for j in 0..JOINTS {
                let v = track.joint(w.start_frame + t, j);
                for c in 0..CHANNELS {
                    data[(c * frames + t) * JOINTS + j] = v[c];
                }
            }
        }
        SkeletonWindow::new(rec.gesture_id.clone(), self.rates.fps, frames, data)
    }

    pub fn normalized_window(&self, w: &WindowIndex) -> Result<SkeletonWindow> {
        normalize_window(&self.window(w)?)
    }

    /// Speech features for the window plus half a second on each side,
    /// clamped to the recording.
    pub fn speech_window(&self, w: &WindowIndex) -> Result<SpeechFeatures> {
        let rec = self.record(w);
        let track = self
            .speech
            .get(&rec.speaker_id)
            .ok_or_else(|| Error::Integrity(format!("no speech features for speaker {}", rec.speaker_id)))?;
        let fps = self.rates.fps as f64;
        let sfps = self.rates.speech_fps as f64;
        let start = w.start_frame as f64 / fps;
        let end = (w.start_frame + self.window_frames()) as f64 / fps;
        let (a, b) = pair_speech_window(start, end, track.frames as f64 / sfps);
        let first = ((a * sfps).round() as usize).min(track.frames);
        let last = ((b * sfps).round() as usize).min(track.frames);
        if last <= first {
            return Err(Error::Shape(format!(
                "empty speech window for gesture {} at frame {}",
                rec.gesture_id, w.start_frame
            )));
        }
        track.slice_frames(first, last)
    }

    /// Window positions grouped by record index, in record order.
    pub fn windows_by_record(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, w) in self.windows.iter().enumerate() {
            out.entry(w.record).or_default().push(k);
        }
        out
    }
}

fn keypoint_path(dir: &Path, speaker: &str) -> PathBuf {
    dir.join(KEYPOINT_DIR).join(format!("{speaker}.csv"))
}

fn speech_path(dir: &Path, speaker: &str) -> PathBuf {
    dir.join(SPEECH_DIR).join(format!("{speaker}.gspf"))
}

fn read_rates(path: &Path) -> Result<CorpusRates> {
    let mut rates = CorpusRates::default();
    if !path.exists() {
        return Ok(rates);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kv = KeyValues::parse(&text, &path.display().to_string())?;
    if let Some(v) = kv.take::<u32>("data.fps")? {
        rates.fps = v;
    }
    if let Some(v) = kv.take::<u32>("data.speech_fps")? {
        rates.speech_fps = v;
    }
    kv.finish()?;
    if rates.fps == 0 || rates.speech_fps == 0 {
        return Err(Error::Config("frame rates must be positive".into()));
    }
    Ok(rates)
}
