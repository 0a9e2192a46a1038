//! Contrastive representation learning for co-speech gesture skeletons.
//!
//! The crate trains a spatio-temporal graph encoder for skeleton windows
//! together with a speech head over precomputed layer features, using
//! unimodal, multimodal, or combined contrastive objectives, and evaluates
//! the resulting embeddings against form-feature annotations, referent and
//! speaker structure, and diagnostic probes.

pub mod augment;
pub mod config;
pub mod diff;
pub mod error;
pub mod eval;
pub mod exec;
pub mod gradcheck;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod pose;
pub mod probing;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod towers;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
