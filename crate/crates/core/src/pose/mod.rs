//! Skeleton windows, gesture metadata, pair annotations, speech features,
//! and window sampling around annotated strokes.

mod corpus;
mod keypoints;
mod records;
mod skeleton;
mod speech;
mod windows;

pub use corpus::{
    Corpus, CorpusRates, CORPUS_CONFIG_FILE, GESTURES_FILE, KEYPOINT_DIR, PAIRS_FILE, SPEECH_DIR,
};
pub use keypoints::{load_keypoints, write_keypoints, Keypoints};
pub use records::{
    load_gesture_records, load_pair_annotations, validate_annotations, validate_records,
    write_gesture_records, write_pair_annotations, FormFeature, GestureRecord, PairAnnotation,
};
pub use skeleton::*;
pub use speech::{read_speech_features, write_speech_features, SpeechFeatureWindow, SpeechFeatures};
pub use windows::{
    normalize_window, pair_speech_window, sample_windows, WindowIndex, WindowSample, WindowSpec,
};
