use serde::{Deserialize, Serialize};

/// Row-major `H × W × 3` RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KvafFrame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl KvafFrame {
    pub fn black(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    /// Panics if `data.len() != width * height * 3`; values are clamped to `[0, 1]`.
    pub fn from_data(width: usize, height: usize, mut data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * 3, "frame buffer size");
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self { width, height, data }
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), width * height * 3, "frame buffer size");
        Self {
            width,
            height,
            data: bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        }
    }

    /// Rounds each channel to the nearest of 256 levels.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Writes `rgb` if `(x, y)` is on the canvas; off-canvas writes are dropped.
    #[inline]
    pub fn put(&mut self, x: i64, y: i64, rgb: [f64; 3]) {
        if self.contains(x, y) {
            let i = (y as usize * self.width + x as usize) * 3;
            for (d, v) in self.data[i..i + 3].iter_mut().zip(rgb) {
                *d = v.clamp(0.0, 1.0);
            }
        }
    }

    /// Per-channel max with `value` on the channels selected by `mask`.
    #[inline]
    pub fn max_into(&mut self, x: i64, y: i64, value: f64, mask: [bool; 3]) {
        if self.contains(x, y) {
            let i = (y as usize * self.width + x as usize) * 3;
            for (d, on) in self.data[i..i + 3].iter_mut().zip(mask) {
                if on {
                    *d = d.max(value.clamp(0.0, 1.0));
                }
            }
        }
    }

    pub fn is_black(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn non_black_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.get(x, y) != [0.0; 3])
    }
}

/// Ordered frames of uniform size.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KvafSequence {
    pub frames: Vec<KvafFrame>,
}

impl KvafSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Where each end-effector and its axis tips landed in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedArm {
    pub arm: crate::kinematics::Arm,
    pub ee_pixel: Option<[f64; 2]>,
    pub ee_depth: f64,
    pub axis_tips: [Option<[f64; 2]>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLog {
    pub t: u64,
    pub arms: Vec<ProjectedArm>,
}
