use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GSPF";
const HEADER_BYTES: usize = 16;

/// Per-layer speech features laid out as `(layer, frame, dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechFeatures {
    pub layers: usize,
    pub frames: usize,
    pub dims: usize,
    pub data: Vec<f32>,
}

impl SpeechFeatures {
    pub fn new(layers: usize, frames: usize, dims: usize, data: Vec<f32>) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Shape("speech features need at least one layer".into()));
        }
        if data.len() != layers * frames * dims {
            return Err(Error::Shape(format!(
                "speech features need {layers}×{frames}×{dims} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("speech features contain NaN".into()));
        }
        Ok(SpeechFeatures { layers, frames, dims, data })
    }

    pub fn value(&self, layer: usize, frame: usize, dim: usize) -> f32 {
        self.data[(layer * self.frames + frame) * self.dims + dim]
    }

    /// Frames `[start, end)` of every layer.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<SpeechFeatures> {
        if start > end || end > self.frames {
            return Err(Error::Shape(format!(
                "frame range {start}..{end} outside 0..{}",
                self.frames
            )));
        }
        let mut data = Vec::with_capacity(self.layers * (end - start) * self.dims);
        for l in 0..self.layers {
            let base = l * self.frames * self.dims;
            data.extend_from_slice(&self.data[base + start * self.dims..base + end * self.dims]);
        }
        SpeechFeatures::new(self.layers, end - start, self.dims, data)
    }

    /// Expected file size in bytes for these dimensions.
    pub fn encoded_len(&self) -> usize {
        HEADER_BYTES + 4 * self.data.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        for n in [self.layers, self.frames, self.dims] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a GSPF speech feature file".into()));
        }
        let header = |i: usize| {
            u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4-byte slice")) as usize
        };
        let (layers, frames, dims) = (header(0), header(1), header(2));
        let expected = layers
            .checked_mul(frames)
            .and_then(|n| n.checked_mul(dims))
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_BYTES))
            .ok_or_else(|| Error::Format("GSPF header dimensions overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "GSPF file with L={layers}, T={frames}, D={dims} must be {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let data = bytes[HEADER_BYTES..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        SpeechFeatures::new(layers, frames, dims, data)
    }
}

pub fn read_speech_features(path: &Path) -> Result<SpeechFeatures> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    SpeechFeatures::from_bytes(&bytes)
}

pub fn write_speech_features(path: &Path, features: &SpeechFeatures) -> Result<()> {
    std::fs::write(path, features.to_bytes()).map_err(|e| Error::io(path, e))
}

/// A speech feature window tied to one gesture window.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechFeatureWindow {
    pub gesture_id: String,
    pub features: SpeechFeatures,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SpeechFeatures {
        let data = (0..2 * 3 * 4).map(|i| i as f32 * 0.5 - 3.0).collect();
        SpeechFeatures::new(2, 3, 4, data).unwrap()
    }

    #[test]
    fn round_trip_and_size() {
        let f = sample();
        let bytes = f.to_bytes();
        assert_eq!(bytes.len(), 16 + 4 * 2 * 3 * 4);
        assert_eq!(SpeechFeatures::from_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn bad_magic_and_truncation_rejected() {
        let mut bytes = sample().to_bytes();
        bytes.pop();
        assert!(matches!(SpeechFeatures::from_bytes(&bytes), Err(Error::Format(_))));
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(SpeechFeatures::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn nan_rejected() {
        let mut f = sample();
        f.data[5] = f32::NAN;
        assert!(SpeechFeatures::from_bytes(&f.to_bytes()).is_err());
    }

    #[test]
    fn slicing_keeps_layer_layout() {
        let f = sample();
        let s = f.slice_frames(1, 3).unwrap();
        assert_eq!(s.frames, 2);
        for l in 0..2 {
            for t in 0..2 {
                for d in 0..4 {
                    assert_eq!(s.value(l, t, d), f.value(l, t + 1, d));
                }
            }
        }
    }
}
