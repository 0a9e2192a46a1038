use std::io::Write;
use std::path::Path;

use super::skeleton::{CHANNELS, JOINTS};
use crate::error::{Error, Result};

/// A per-frame keypoint track for one recording, stored frame-major as
/// `[frame][joint][x, y, conf]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoints {
    pub fps: u32,
    frames: usize,
    values: Vec<f64>,
}

impl Keypoints {
    pub fn new(fps: u32, frames: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * JOINTS * CHANNELS {
            return Err(Error::Shape(format!(
                "keypoints need {frames}×{JOINTS}×{CHANNELS} values, got {}",
                values.len()
            )));
        }
        Ok(Keypoints { fps, frames, values })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames as f64 / self.fps as f64
    }

    /// `(x, y, conf)` of joint `j` at frame `t`.
    pub fn joint(&self, t: usize, j: usize) -> [f64; 3] {
        let k = (t * JOINTS + j) * CHANNELS;
        [self.values[k], self.values[k + 1], self.values[k + 2]]
    }
}

/// Reads a keypoint CSV: one row per frame, `frame_index` followed by
/// 27 × (x, y, conf). Confidence is clamped to `[0, 1]`.
pub fn load_keypoints(path: &Path, fps: u32) -> Result<Keypoints> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut values = Vec::new();
    let mut frames = 0usize;
    let expected = 1 + JOINTS * CHANNELS;
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| Error::Parse {
            file: file.clone(),
            line,
            message,
        };
        if row.len() != expected {
            return Err(parse_err(format!(
                "expected frame index plus {} values ({JOINTS} joints), got {} values ({} joints)",
                JOINTS * CHANNELS,
                row.len().saturating_sub(1),
                row.len().saturating_sub(1) as f64 / CHANNELS as f64
            )));
        }
        let index: usize = row[0]
            .parse()
            .map_err(|_| parse_err(format!("bad frame index {:?}", &row[0])))?;
        if index != frames {
            return Err(parse_err(format!("frame index {index}, expected {frames}")));
        }
        for (k, field) in row.iter().skip(1).enumerate() {
            let mut v: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("bad number {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value {field:?}")));
            }
            if k % CHANNELS == 2 {
                v = v.clamp(0.0, 1.0);
            }
            values.push(v);
        }
        frames += 1;
    }
    Keypoints::new(fps, frames, values)
}

pub fn write_keypoints(path: &Path, keypoints: &Keypoints) -> Result<()> {
    let mut out = String::with_capacity(keypoints.frames * JOINTS * CHANNELS * 8);
    for t in 0..keypoints.frames {
        out.push_str(&t.to_string());
        for v in &keypoints.values[t * JOINTS * CHANNELS..(t + 1) * JOINTS * CHANNELS] {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            file: path.display().to_string(),
            line,
            message: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(frame: usize, joints: usize, first: (f64, f64, f64)) -> String {
        let mut s = frame.to_string();
        for j in 0..joints {
            let (x, y, c) = if j == 0 { first } else { (1.0, 2.0, 0.5) };
            s.push_str(&format!(",{x},{y},{c}"));
        }
        s
    }

    #[test]
    fn loads_two_frames() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.csv");
        std::fs::write(
            &p,
            format!("{}\n{}\n", row(0, 27, (100.0, 200.0, 0.9)), row(1, 27, (100.0, 200.0, 0.9))),
        )
        .unwrap();
        let k = load_keypoints(&p, 25).unwrap();
        assert_eq!(k.frames(), 2);
        assert_eq!(k.joint(0, 0), [100.0, 200.0, 0.9]);
        assert_eq!(k.joint(1, 0), [100.0, 200.0, 0.9]);
    }

    #[test]
    fn short_row_is_a_parse_error_naming_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.csv");
        std::fs::write(&p, format!("{}\n{}\n", row(0, 27, (0.0, 0.0, 1.0)), row(1, 26, (0.0, 0.0, 1.0)))).unwrap();
        match load_keypoints(&p, 25) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("26 joints"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn confidence_is_clamped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.csv");
        std::fs::write(&p, format!("{}\n", row(0, 27, (1.0, 1.0, 1.3)))).unwrap();
        assert_eq!(load_keypoints(&p, 25).unwrap().joint(0, 0)[2], 1.0);
    }

    #[test]
    fn missing_file_is_io_error() {
        let r = load_keypoints(Path::new("/nonexistent/k.csv"), 25);
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
