use serde::{Deserialize, Serialize};

use super::records::GestureRecord;
use super::skeleton::{SkeletonWindow, LEFT_SHOULDER, RIGHT_SHOULDER};
use crate::error::{Error, Result};

/// A lazily materialized window: a gesture record plus a start frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowIndex {
    /// Position of the gesture in the record list the index was built from.
    pub record: usize,
    pub start_frame: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub window_seconds: f64,
    pub offset_frames: usize,
    pub min_overlap: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            window_seconds: 1.0,
            offset_frames: 2,
            min_overlap: 0.5,
        }
    }
}

impl WindowSpec {
    pub fn window_frames(&self, fps: u32) -> usize {
        (fps as f64 * self.window_seconds).round() as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowSample {
    pub windows: Vec<WindowIndex>,
    /// Records whose stroke lies outside the recording.
    pub skipped: Vec<usize>,
}

/// Slides a window of `fps × window_seconds` frames in steps of
/// `offset_frames` over `[0, total_frames)` and keeps every start whose
/// overlap with a stroke covers more than `min_overlap` of the window.
///
/// `records` are all taken to belong to one recording of `total_frames`
/// frames. Windows are sorted by `(record, start)`.
pub fn sample_windows(
    records: &[GestureRecord],
    total_frames: usize,
    fps: u32,
    spec: WindowSpec,
) -> Result<WindowSample> {
    if spec.offset_frames == 0 {
        return Err(Error::Contract("window offset must be at least one frame".into()));
    }
    if !(spec.min_overlap > 0.0 && spec.min_overlap <= 1.0) {
        return Err(Error::Contract(format!(
            "minimum overlap {} outside (0, 1]",
            spec.min_overlap
        )));
    }
    let w = spec.window_frames(fps);
    if w == 0 {
        return Err(Error::Contract("window must span at least one frame".into()));
    }
    let mut out = WindowSample::default();
    for (i, r) in records.iter().enumerate() {
        if r.stroke_end_frame >= total_frames {
            log::warn!(
                "gesture {} stroke [{}, {}] lies outside a {total_frames}-frame recording; skipped",
                r.gesture_id,
                r.stroke_start_frame,
                r.stroke_end_frame
            );
            out.skipped.push(i);
            continue;
        }
        if w > total_frames {
            continue;
        }
        let (a, b) = (r.stroke_start_frame, r.stroke_end_frame);
        // Only starts within w frames of the stroke can overlap it.
        let first = a.saturating_sub(w - 1);
        let first = first.div_ceil(spec.offset_frames) * spec.offset_frames;
        let mut s = first;
        while s <= b && s + w <= total_frames {
            let lo = s.max(a);
            let hi = (s + w - 1).min(b);
            if hi >= lo && (hi - lo + 1) as f64 / w as f64 > spec.min_overlap {
                out.windows.push(WindowIndex { record: i, start_frame: s });
            }
            s += spec.offset_frames;
        }
    }
    Ok(out)
}

/// The speech interval for a gesture window `[start, end]` in seconds:
/// half a second of context on each side, clamped to the recording.
pub fn pair_speech_window(start_seconds: f64, end_seconds: f64, recording_seconds: f64) -> (f64, f64) {
    (
        (start_seconds - 0.5).max(0.0),
        (end_seconds + 0.5).min(recording_seconds),
    )
}

/// Translates the frame-0 mid-shoulder point to the origin and scales so the
/// frame-0 shoulder distance is 1. Confidence is left untouched.
pub fn normalize_window(window: &SkeletonWindow) -> Result<SkeletonWindow> {
    if window.frames() == 0 {
        return Err(Error::DegeneratePose(format!("window for {} has no frames", window.gesture_id)));
    }
    if window.conf(0, LEFT_SHOULDER) <= 0.0 || window.conf(0, RIGHT_SHOULDER) <= 0.0 {
        return Err(Error::DegeneratePose(format!(
            "shoulders of {} undetected in the first frame",
            window.gesture_id
        )));
    }
    let (lx, ly) = (window.x(0, LEFT_SHOULDER), window.y(0, LEFT_SHOULDER));
    let (rx, ry) = (window.x(0, RIGHT_SHOULDER), window.y(0, RIGHT_SHOULDER));
    let dist = (lx - rx).hypot(ly - ry);
    if !(dist > 0.0) {
        return Err(Error::DegeneratePose(format!(
            "shoulders of {} coincide in the first frame",
            window.gesture_id
        )));
    }
    let (cx, cy) = ((lx + rx) / 2.0, (ly + ry) / 2.0);
    let mut out = window.clone();
    out.map_xy(|_, x, y| ((x - cx) / dist, (y - cy) / dist));
    out.pixels_per_unit = window.pixels_per_unit * dist;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::skeleton::{CHANNELS, JOINTS};

    fn record(a: usize, b: usize) -> GestureRecord {
        GestureRecord {
            gesture_id: "g".into(),
            speaker_id: "s".into(),
            dialogue_id: "d".into(),
            referent_id: "r".into(),
            stroke_start_frame: a,
            stroke_end_frame: b,
        }
    }

    fn brute_force(a: usize, b: usize, w: usize, offset: usize, total: usize, min: f64) -> Vec<usize> {
        (0..total)
            .filter(|s| s % offset == 0 && s + w <= total)
            .filter(|&s| {
                let n = (s..s + w).filter(|f| (a..=b).contains(f)).count();
                n as f64 / w as f64 > min
            })
            .collect()
    }

    fn spec(offset: usize) -> WindowSpec {
        WindowSpec {
            window_seconds: 1.0,
            offset_frames: offset,
            min_overlap: 0.5,
        }
    }

    #[test]
    fn short_stroke_matches_exhaustive_count() {
        let got: Vec<usize> = sample_windows(&[record(10, 20)], 40, 10, spec(2))
            .unwrap()
            .windows
            .iter()
            .map(|w| w.start_frame)
            .collect();
        // Start 16 covers frames 16..=20 of the stroke, exactly half the
        // window, which does not exceed the threshold.
        assert_eq!(got, brute_force(10, 20, 10, 2, 40, 0.5));
        assert_eq!(got, vec![6, 8, 10, 12, 14]);
    }

    #[test]
    fn full_recording_stroke_takes_every_aligned_start() {
        let got = sample_windows(&[record(0, 39)], 40, 10, spec(2)).unwrap();
        let starts: Vec<usize> = got.windows.iter().map(|w| w.start_frame).collect();
        assert_eq!(starts, (0..=30).step_by(2).collect::<Vec<_>>());
    }

    #[test]
    fn stroke_past_the_end_is_skipped() {
        let got = sample_windows(&[record(10, 20), record(35, 45)], 40, 10, spec(2)).unwrap();
        assert_eq!(got.skipped, vec![1]);
        assert!(got.windows.iter().all(|w| w.record == 0));
    }

    #[test]
    fn bad_spec_rejected() {
        assert!(sample_windows(&[], 40, 10, spec(0)).is_err());
        let mut s = spec(2);
        s.min_overlap = 0.0;
        assert!(sample_windows(&[], 40, 10, s).is_err());
    }

    #[test]
    fn speech_window_rules() {
        assert_eq!(pair_speech_window(3.0, 4.0, 100.0), (2.5, 4.5));
        let (a, b) = pair_speech_window(0.2, 1.2, 100.0);
        assert_eq!(a, 0.0);
        assert!((b - 1.7).abs() < 1e-12);
        assert_eq!(pair_speech_window(10.0, 11.0, 11.2), (9.5, 11.2));
    }

    fn window_with(shoulders: [(f64, f64); 2], joint: (f64, f64)) -> SkeletonWindow {
        let frames = 2;
        let mut data = vec![0.0; CHANNELS * frames * JOINTS];
        for v in &mut data[2 * frames * JOINTS..] {
            *v = 0.8;
        }
        let mut w = SkeletonWindow::new("g", 25, frames, data).unwrap();
        for t in 0..frames {
            for j in 0..JOINTS {
                w.set_xy(t, j, joint.0, joint.1);
            }
            w.set_xy(t, LEFT_SHOULDER, shoulders[0].0, shoulders[0].1);
            w.set_xy(t, RIGHT_SHOULDER, shoulders[1].0, shoulders[1].1);
        }
        w
    }

    #[test]
    fn normalization_example() {
        let w = window_with([(0.0, 0.0), (2.0, 0.0)], (1.0, 1.0));
        let n = normalize_window(&w).unwrap();
        assert_eq!((n.x(0, 0), n.y(0, 0)), (0.0, 0.5));
        assert_eq!(n.pixels_per_unit, 2.0);
        assert_eq!(n.channel(2), w.channel(2));
    }

    #[test]
    fn normalization_is_idempotent() {
        let w = window_with([(3.0, 7.0), (11.0, 1.0)], (5.0, -2.0));
        let once = normalize_window(&w).unwrap();
        let twice = normalize_window(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_shoulders_rejected() {
        let w = window_with([(1.0, 1.0), (1.0, 1.0)], (0.0, 0.0));
        assert!(matches!(normalize_window(&w), Err(Error::DegeneratePose(_))));
    }
}
