use std::sync::Arc;

use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Number of tracked joints: 7 upper-body keypoints and 10 per hand.
pub const JOINTS: usize = 27;
/// x, y, detection confidence.
pub const CHANNELS: usize = 3;

pub const NOSE: usize = 0;
pub const LEFT_EYE: usize = 1;
pub const RIGHT_EYE: usize = 2;
pub const LEFT_SHOULDER: usize = 3;
pub const RIGHT_SHOULDER: usize = 4;
pub const LEFT_ELBOW: usize = 5;
pub const RIGHT_ELBOW: usize = 6;
/// First joint (wrist) of the left hand block 7–16.
pub const LEFT_HAND: usize = 7;
/// First joint (wrist) of the right hand block 17–26.
pub const RIGHT_HAND: usize = 17;
/// Joints per hand block: wrist, thumb base/tip, index base/tip,
/// middle base/tip, ring base/tip, pinky tip.
pub const HAND_JOINTS: usize = 10;

/// Undirected bones of the 27-joint skeleton.
pub fn spatial_edges() -> Vec<(usize, usize)> {
    let mut edges = vec![
        (NOSE, LEFT_EYE),
        (NOSE, RIGHT_EYE),
        (NOSE, LEFT_SHOULDER),
        (NOSE, RIGHT_SHOULDER),
        (LEFT_SHOULDER, RIGHT_SHOULDER),
        (LEFT_SHOULDER, LEFT_ELBOW),
        (RIGHT_SHOULDER, RIGHT_ELBOW),
        (LEFT_ELBOW, LEFT_HAND),
        (RIGHT_ELBOW, RIGHT_HAND),
    ];
    for wrist in [LEFT_HAND, RIGHT_HAND] {
        for finger in 0..4 {
            let base = wrist + 1 + 2 * finger;
            edges.push((wrist, base));
            edges.push((base, base + 1));
        }
        edges.push((wrist, wrist + 9));
    }
    edges
}

/// The joint graph with its symmetric normalized adjacency
/// `D^-1/2 (A + I) D^-1/2`.
#[derive(Debug, Clone)]
pub struct SkeletonGraph {
    pub joint_count: usize,
    pub spatial_edges: Vec<(usize, usize)>,
    pub normalized_adjacency: Arc<Tensor>,
}

impl SkeletonGraph {
    pub fn new() -> Self {
        Self::from_edges(JOINTS, spatial_edges()).expect("built-in skeleton is valid")
    }

    pub fn from_edges(joint_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut a = vec![0.0; joint_count * joint_count];
        for &(u, v) in &edges {
            if u >= joint_count || v >= joint_count || u == v {
                return Err(Error::Contract(format!("invalid edge ({u}, {v})")));
            }
            a[u * joint_count + v] = 1.0;
            a[v * joint_count + u] = 1.0;
        }
        for i in 0..joint_count {
            a[i * joint_count + i] = 1.0;
        }
        let deg: Vec<f64> = (0..joint_count)
            .map(|i| a[i * joint_count..(i + 1) * joint_count].iter().sum())
            .collect();
        for i in 0..joint_count {
            for j in 0..joint_count {
                a[i * joint_count + j] /= (deg[i] * deg[j]).sqrt();
            }
        }
        Ok(SkeletonGraph {
            joint_count,
            spatial_edges: edges,
            normalized_adjacency: Arc::new(Tensor::new(&[joint_count, joint_count], a)?),
        })
    }

    /// Identity adjacency (no joint mixing), used for ablations and tests.
    pub fn identity(joint_count: usize) -> Self {
        let mut a = vec![0.0; joint_count * joint_count];
        for i in 0..joint_count {
            a[i * joint_count + i] = 1.0;
        }
        SkeletonGraph {
            joint_count,
            spatial_edges: Vec::new(),
            normalized_adjacency: Arc::new(
                Tensor::new(&[joint_count, joint_count], a).expect("square"),
            ),
        }
    }

    pub fn is_connected(&self) -> bool {
        let n = self.joint_count;
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(a, b) in &self.spatial_edges {
                let next = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

impl Default for SkeletonGraph {
    fn default() -> Self {
        Self::new()
    }
}

/// One gesture window laid out as `(channel, frame, joint)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonWindow {
    frames: usize,
    data: Vec<f64>,
    pub fps: u32,
    pub gesture_id: String,
    /// Pixels per coordinate unit; 1 for raw windows, the frame-0 shoulder
    /// distance after normalization.
    pub pixels_per_unit: f64,
}

impl SkeletonWindow {
    pub fn new(gesture_id: impl Into<String>, fps: u32, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != CHANNELS * frames * JOINTS {
            return Err(Error::Shape(format!(
                "skeleton window needs {CHANNELS}×{frames}×{JOINTS} values, got {}",
                data.len()
            )));
        }
        if fps == 0 {
            return Err(Error::Contract("fps must be positive".into()));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite keypoint value {bad}")));
        }
        let conf = &data[2 * frames * JOINTS..];
        if let Some(bad) = conf.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Domain(format!("confidence {bad} outside [0, 1]")));
        }
        Ok(SkeletonWindow {
            frames,
            data,
            fps,
            gesture_id: gesture_id.into(),
            pixels_per_unit: 1.0,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn idx(&self, c: usize, t: usize, j: usize) -> usize {
        (c * self.frames + t) * JOINTS + j
    }

    pub fn x(&self, t: usize, j: usize) -> f64 {
        self.data[self.idx(0, t, j)]
    }

    pub fn y(&self, t: usize, j: usize) -> f64 {
        self.data[self.idx(1, t, j)]
    }

    pub fn conf(&self, t: usize, j: usize) -> f64 {
        self.data[self.idx(2, t, j)]
    }

    pub fn set_xy(&mut self, t: usize, j: usize, x: f64, y: f64) {
        let ix = self.idx(0, t, j);
        let iy = self.idx(1, t, j);
        self.data[ix] = x;
        self.data[iy] = y;
    }

    /// One channel as a `frames × joints` slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.frames * JOINTS..(c + 1) * self.frames * JOINTS]
    }

    /// Mutable x and y planes.
    pub fn xy_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let plane = self.frames * JOINTS;
        let (x, rest) = self.data.split_at_mut(plane);
        (x, &mut rest[..plane])
    }

    /// Applies `f(t, x, y) -> (x', y')` to every joint position.
    pub fn map_xy(&mut self, mut f: impl FnMut(usize, f64, f64) -> (f64, f64)) {
        let frames = self.frames;
        let (xs, ys) = self.xy_mut();
        for t in 0..frames {
            for j in 0..JOINTS {
                let k = t * JOINTS + j;
                let (nx, ny) = f(t, xs[k], ys[k]);
                xs[k] = nx;
                ys[k] = ny;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeleton_is_connected_and_symmetric() {
        let g = SkeletonGraph::new();
        assert_eq!(g.joint_count, JOINTS);
        assert!(g.is_connected());
        let a = g.normalized_adjacency.data();
        for i in 0..JOINTS {
            for j in 0..JOINTS {
                assert_eq!(a[i * JOINTS + j], a[j * JOINTS + i]);
                assert!(a[i * JOINTS + j] >= 0.0 && a[i * JOINTS + j].is_finite());
            }
        }
    }

    #[test]
    fn normalized_adjacency_matches_formula() {
        let g = SkeletonGraph::new();
        let mut deg = vec![1.0f64; JOINTS];
        for &(u, v) in &g.spatial_edges {
            deg[u] += 1.0;
            deg[v] += 1.0;
        }
        let a = g.normalized_adjacency.data();
        for &(u, v) in &g.spatial_edges {
            let expected = 1.0 / (deg[u] * deg[v]).sqrt();
            assert!((a[u * JOINTS + v] - expected).abs() < 1e-15);
        }
        assert!((a[0] - 1.0 / deg[0]).abs() < 1e-15);
    }

    #[test]
    fn window_rejects_bad_confidence_and_nan() {
        let mut data = vec![0.0; CHANNELS * 2 * JOINTS];
        data[2 * 2 * JOINTS] = 1.5;
        assert!(SkeletonWindow::new("g", 25, 2, data.clone()).is_err());
        data[2 * 2 * JOINTS] = 0.5;
        data[0] = f64::NAN;
        assert!(SkeletonWindow::new("g", 25, 2, data).is_err());
    }
}
