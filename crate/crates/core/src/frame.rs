//! Image, flow and mask value types.
//!
//! Pixel centers sit at integer coordinates, `(0, 0)` is the top-left pixel and
//! samples are stored row-major with interleaved channels.

use crate::error::{check_dims, param, Result};

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// A floating-point image with 1 or 3 channels and samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Frame {
    /// Wraps `data`, clamping every sample into `[0, 1]`.
    ///
    /// Fails on a zero dimension, a channel count other than 1 or 3, a length
    /// mismatch or a non-finite sample.
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(param(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(param(format!(
                "frame must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(param(format!(
                "frame data has {} samples, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(param("frame samples must be finite"));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Frame {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Frame::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    /// Builds a single-channel frame from a per-pixel function, called in raster order.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Frame::new(width, height, 1, data)
    }

    /// Internal constructor for buffers already known to be valid.
    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        let data = data
            .into_iter()
            .map(|v| {
                if v.is_finite() {
                    v.clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        Frame {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Extracts channel `c` as a contiguous plane.
    pub fn plane(&self, c: usize) -> Vec<f32> {
        assert!(c < self.channels, "channel {c} out of range");
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Reassembles a frame from per-channel planes of equal size.
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f32>]) -> Result<Self> {
        let channels = planes.len();
        if planes.iter().any(|p| p.len() != width * height) {
            return Err(param("plane length does not match frame size"));
        }
        let mut data = vec![0.0; width * height * channels];
        for (c, plane) in planes.iter().enumerate() {
            for (i, &v) in plane.iter().enumerate() {
                data[i * channels + c] = v;
            }
        }
        Frame::new(width, height, channels, data)
    }

    /// Bilinear sample of channel `c` with coordinates clamped to the image.
    #[inline]
    pub fn sample_channel(&self, x: f32, y: f32, c: usize) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let top = (1.0 - fx) * self.get(x0, y0, c) + fx * self.get(x1, y0, c);
        let bottom = (1.0 - fx) * self.get(x0, y1, c) + fx * self.get(x1, y1, c);
        (1.0 - fy) * top + fy * bottom
    }

    /// Bilinear sample of every channel at `(x, y)`.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> Vec<f32> {
        (0..self.channels)
            .map(|c| self.sample_channel(x, y, c))
            .collect()
    }

    /// Luma conversion; single-channel frames are returned unchanged.
    pub fn to_grayscale(&self) -> Frame {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
            .collect();
        Frame::from_raw(self.width, self.height, 1, data)
    }

    /// Rounds every sample to the nearest 8-bit level.
    pub fn quantize(&self) -> Frame {
        let data = self
            .data
            .iter()
            .map(|&v| quantize(v) as f32 / 255.0)
            .collect();
        Frame::from_raw(self.width, self.height, self.channels, data)
    }

    /// Copies the `w`×`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Frame> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(param(format!(
                "crop {w}x{h} at ({x0},{y0}) exceeds {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Frame::from_raw(w, h, c, data))
    }

    /// Integer translation by `(dx, dy)`: `out(x, y) = self(x - dx, y - dy)`, clamped at the border.
    pub fn translate(&self, dx: i64, dy: i64) -> Frame {
        let (w, h, c) = (self.width as i64, self.height as i64, self.channels);
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..h {
            let sy = (y - dy).clamp(0, h - 1) as usize;
            for x in 0..w {
                let sx = (x - dx).clamp(0, w - 1) as usize;
                for ch in 0..c {
                    data.push(self.get(sx, sy, ch));
                }
            }
        }
        Frame::from_raw(self.width, self.height, c, data)
    }
}

/// Maps a `[0, 1]` sample to its 8-bit level.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Dense backward flow: `(x, y)` in the current frame matches `(x + u, y + v)` in the reference.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(param("flow dimensions must be positive"));
        }
        if u.len() != width * height || v.len() != width * height {
            return Err(param("flow component length does not match dimensions"));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(param("flow vectors must be finite"));
        }
        Ok(FlowField {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        FlowField {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> (f32, f32),
    ) -> Result<Self> {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        FlowField::new(width, height, u, v)
    }

    pub(crate) fn from_raw(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Self {
        let fix = |x: f32| if x.is_finite() { x } else { 0.0 };
        FlowField {
            width,
            height,
            u: u.into_iter().map(fix).collect(),
            v: v.into_iter().map(fix).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Mean vector magnitude.
    pub fn mean_magnitude(&self) -> f64 {
        let sum: f64 = self
            .u
            .iter()
            .zip(&self.v)
            .map(|(&a, &b)| ((a as f64).powi(2) + (b as f64).powi(2)).sqrt())
            .sum();
        sum / self.u.len() as f64
    }

    pub(crate) fn check_matches(&self, what: &'static str, dims: (usize, usize)) -> Result<()> {
        check_dims(what, dims, self.dims())
    }
}

/// Per-pixel boolean map, usually marking valid samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    valid: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != width * height {
            return Err(param("mask length does not match dimensions"));
        }
        Ok(Mask {
            width,
            height,
            valid,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            valid: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    /// Keeps only pixels at least `border` away from every edge.
    pub fn with_border(&self, border: usize) -> Mask {
        let mut valid = self.valid.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if x < border || y < border || x + border >= self.width || y + border >= self.height
                {
                    valid[y * self.width + x] = false;
                }
            }
        }
        Mask {
            width: self.width,
            height: self.height,
            valid,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grayscale_identity_and_weights() {
        let g = Frame::new(2, 1, 1, vec![0.2, 0.7]).unwrap();
        assert_eq!(g.to_grayscale(), g);

        let rgb = Frame::new(2, 1, 3, vec![0.5, 0.5, 0.5, 1.0, 0.0, 0.0]).unwrap();
        let gray = rgb.to_grayscale();
        assert_eq!(gray.channels(), 1);
        assert!((gray.get(0, 0, 0) - 0.5).abs() < 1e-6);
        assert!((gray.get(1, 0, 0) - 0.299).abs() < 1e-6);
    }

    #[test]
    fn bilinear_grid_midpoint_and_clamp() {
        let f = Frame::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(f.sample_channel(0.0, 0.0, 0), 0.0);
        assert_eq!(f.sample_channel(1.0, 0.0, 0), 1.0);
        assert!((f.sample_channel(0.5, 0.0, 0) - 0.5).abs() < 1e-7);
        assert_eq!(f.sample_channel(-3.0, 0.0, 0), 0.0);
        assert_eq!(f.sample_channel(7.5, 4.0, 0), 1.0);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(Frame::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Frame::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Frame::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(FlowField::new(1, 1, vec![f32::INFINITY], vec![0.0]).is_err());
        // out-of-range samples are clamped
        let f = Frame::new(1, 2, 1, vec![-1.0, 2.0]).unwrap();
        assert_eq!(f.data(), &[0.0, 1.0]);
    }

    #[test]
    fn translate_moves_content() {
        let f = Frame::from_fn(4, 3, |x, y| (x + 4 * y) as f32 / 16.0).unwrap();
        let t = f.translate(1, 1);
        assert_eq!(t.get(2, 2, 0), f.get(1, 1, 0));
        assert_eq!(t.get(0, 0, 0), f.get(0, 0, 0));
    }

    fn frame_strategy(w: usize, h: usize) -> impl Strategy<Value = Frame> {
        prop::collection::vec(0.0f32..=1.0, w * h)
            .prop_map(move |d| Frame::new(w, h, 1, d).unwrap())
    }

    proptest! {
        #[test]
        fn bilinear_is_linear(
            f1 in frame_strategy(6, 5),
            f2 in frame_strategy(6, 5),
            a in 0.0f32..0.5,
            b in 0.0f32..0.5,
            x in -2.0f32..8.0,
            y in -2.0f32..7.0,
        ) {
            let mix: Vec<f32> = f1.data().iter().zip(f2.data()).map(|(p, q)| a * p + b * q).collect();
            let mixed = Frame::new(6, 5, 1, mix).unwrap();
            let lhs = mixed.sample_channel(x, y, 0);
            let rhs = a * f1.sample_channel(x, y, 0) + b * f2.sample_channel(x, y, 0);
            prop_assert!((lhs - rhs).abs() < 1e-6);
        }

        #[test]
        fn grayscale_preserves_constants(c in 0.0f32..=1.0) {
            let f = Frame::filled(3, 3, 3, c).unwrap();
            for &v in f.to_grayscale().data() {
                prop_assert!((v - c).abs() < 1e-6);
            }
        }
    }
}
