//! Pixel volumes: k² matching candidates per pixel.
//!
//! For pixel `p` and window offset `(dx, dy)` the candidate is the reference sampled at
//! `p + flow(p + (dx, dy))`: the pixel is displaced by the flow vector of its neighbor. When
//! the neighborhood moves coherently most candidates coincide, which gives the majority cue.
//! The naive variant instead samples the `k×k` window around `p + flow(p)`.
//!
//! Candidates whose neighbor lies outside the image, or whose sample position does, are kept
//! (with clamped values) but flagged invalid and excluded from voting.

use rayon::prelude::*;

use crate::error::{check_dims, param, Result};
use crate::filter::sample_plane;
use crate::frame::{quantize, FlowField, Frame, Mask};
use crate::warp::in_bounds;

/// A `width × height × k²` stack of candidate values, slice-major in `(dy, dx)` raster order.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelVolume {
    width: usize,
    height: usize,
    k: usize,
    samples: Vec<f32>,
    valid: Vec<bool>,
}

impl PixelVolume {
    pub fn from_parts(
        width: usize,
        height: usize,
        k: usize,
        samples: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        check_k(k)?;
        let n = width * height * k * k;
        if width == 0 || height == 0 || samples.len() != n || valid.len() != n {
            return Err(param("pixel volume buffers do not match dimensions"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(param("pixel volume samples must be finite"));
        }
        Ok(PixelVolume {
            width,
            height,
            k,
            samples,
            valid,
        })
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

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn radius(&self) -> i64 {
        (self.k / 2) as i64
    }

    pub fn slice_count(&self) -> usize {
        self.k * self.k
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    /// Index of the slice for offset `(dx, dy)`.
    pub fn slice_index(&self, dx: i64, dy: i64) -> usize {
        let r = self.radius();
        assert!(
            dx.abs() <= r && dy.abs() <= r,
            "offset ({dx},{dy}) outside window"
        );
        ((dy + r) as usize) * self.k + (dx + r) as usize
    }

    /// Offset `(dx, dy)` of slice `s`.
    pub fn slice_offset(&self, s: usize) -> (i64, i64) {
        let r = self.radius();
        ((s % self.k) as i64 - r, (s / self.k) as i64 - r)
    }

    pub fn slice(&self, dx: i64, dy: i64) -> &[f32] {
        let n = self.width * self.height;
        let s = self.slice_index(dx, dy);
        &self.samples[s * n..(s + 1) * n]
    }

    pub fn slice_validity(&self, dx: i64, dy: i64) -> &[bool] {
        let n = self.width * self.height;
        let s = self.slice_index(dx, dy);
        &self.valid[s * n..(s + 1) * n]
    }

    /// All candidates of pixel `(x, y)` as `(value, valid, dx, dy)`.
    pub fn candidates(
        &self,
        x: usize,
        y: usize,
    ) -> impl Iterator<Item = (f32, bool, i64, i64)> + '_ {
        let n = self.width * self.height;
        let i = y * self.width + x;
        (0..self.slice_count()).map(move |s| {
            let (dx, dy) = self.slice_offset(s);
            (self.samples[s * n + i], self.valid[s * n + i], dx, dy)
        })
    }

    fn check_frame(&self, what: &'static str, frame: &Frame) -> Result<()> {
        check_dims(what, self.dims(), frame.dims())?;
        if frame.channels() != 1 {
            return Err(param(format!("{what} must be grayscale")));
        }
        Ok(())
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(param(format!(
            "window size k must be odd and positive, got {k}"
        )));
    }
    Ok(())
}

fn require_gray(frame: &Frame) -> Result<()> {
    if frame.channels() != 1 {
        return Err(param("pixel volumes are built from grayscale frames"));
    }
    Ok(())
}

/// Pixel volume of a grayscale reference under `flow`.
pub fn build_pixel_volume(reference: &Frame, flow: &FlowField, k: usize) -> Result<PixelVolume> {
    require_gray(reference)?;
    build_plane(
        reference.data(),
        reference.width(),
        reference.height(),
        flow,
        k,
        false,
    )
}

/// Naive pixel volume: the `k×k` window around each pixel's own flow match.
pub fn build_naive_pixel_volume(
    reference: &Frame,
    flow: &FlowField,
    k: usize,
) -> Result<PixelVolume> {
    require_gray(reference)?;
    build_plane(
        reference.data(),
        reference.width(),
        reference.height(),
        flow,
        k,
        true,
    )
}

/// One pixel volume per channel of `reference`, all sharing the same flow.
pub fn build_channel_volumes(
    reference: &Frame,
    flow: &FlowField,
    k: usize,
) -> Result<Vec<PixelVolume>> {
    (0..reference.channels())
        .map(|c| {
            build_plane(
                &reference.plane(c),
                reference.width(),
                reference.height(),
                flow,
                k,
                false,
            )
        })
        .collect()
}

fn build_plane(
    plane: &[f32],
    width: usize,
    height: usize,
    flow: &FlowField,
    k: usize,
    naive: bool,
) -> Result<PixelVolume> {
    check_k(k)?;
    flow.check_matches("flow", (width, height))?;
    let n = width * height;
    let r = (k / 2) as i64;
    let mut samples = vec![0f32; n * k * k];
    let mut valid = vec![false; n * k * k];
    samples
        .par_chunks_mut(n)
        .zip(valid.par_chunks_mut(n))
        .enumerate()
        .for_each(|(s, (slice, vslice))| {
            let dx = (s % k) as i64 - r;
            let dy = (s / k) as i64 - r;
            for y in 0..height {
                for x in 0..width {
                    let (sx, sy, neighbor_ok) = if naive {
                        let (u, v) = flow.at(x, y);
                        (x as f32 + u + dx as f32, y as f32 + v + dy as f32, true)
                    } else {
                        let qx = x as i64 + dx;
                        let qy = y as i64 + dy;
                        let inside = qx >= 0 && qy >= 0 && qx < width as i64 && qy < height as i64;
                        let (u, v) = flow.at(
                            qx.clamp(0, width as i64 - 1) as usize,
                            qy.clamp(0, height as i64 - 1) as usize,
                        );
                        (x as f32 + u, y as f32 + v, inside)
                    };
                    let i = y * width + x;
                    slice[i] = sample_plane(plane, width, height, sx, sy);
                    vslice[i] = neighbor_ok && in_bounds(sx, sy, width, height);
                }
            }
        });
    Ok(PixelVolume {
        width,
        height,
        k,
        samples,
        valid,
    })
}

/// The `(0, 0)` slice, which equals the plain backward warp.
pub fn center_slice(pv: &PixelVolume) -> Frame {
    Frame::from_raw(pv.width, pv.height, 1, pv.slice(0, 0).to_vec())
}

/// Validity of the `(0, 0)` slice, i.e. the backward-warp mask.
pub fn center_validity(pv: &PixelVolume) -> Mask {
    Mask::new(pv.width, pv.height, pv.slice_validity(0, 0).to_vec())
        .expect("slice validity has frame size")
}

#[inline]
fn chebyshev(dx: i64, dy: i64) -> u32 {
    dx.unsigned_abs().max(dy.unsigned_abs()) as u32
}

/// Per-pixel vote over quantized candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Vote {
    /// Winning 8-bit level, `None` when no candidate is valid.
    pub level: Option<u8>,
    pub count: u32,
    pub valid: u32,
}

impl Vote {
    /// Strict majority: more than half of the valid candidates agree.
    pub fn is_majority(&self) -> bool {
        self.level.is_some() && 2 * self.count > self.valid
    }
}

pub(crate) fn vote(pv: &PixelVolume, x: usize, y: usize) -> Vote {
    // (level, count, smallest chebyshev offset)
    let mut bins: Vec<(u8, u32, u32)> = Vec::with_capacity(pv.slice_count());
    let mut valid = 0;
    for (value, ok, dx, dy) in pv.candidates(x, y) {
        if !ok {
            continue;
        }
        valid += 1;
        let level = quantize(value);
        let cheb = chebyshev(dx, dy);
        match bins.iter_mut().find(|b| b.0 == level) {
            Some(b) => {
                b.1 += 1;
                b.2 = b.2.min(cheb);
            }
            None => bins.push((level, 1, cheb)),
        }
    }
    let best = bins
        .iter()
        .copied()
        .min_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)).then(a.0.cmp(&b.0)));
    match best {
        Some((level, count, _)) => Vote {
            level: Some(level),
            count,
            valid,
        },
        None => Vote {
            level: None,
            count: 0,
            valid: 0,
        },
    }
}

/// Majority-based warp: the per-pixel mode of the 8-bit quantized valid candidates.
///
/// Ties prefer the level holding the candidate closest to the window center (Chebyshev
/// distance), then the smaller level. Pixels without valid candidates fall back to the center
/// slice. The returned mask marks pixels whose mode is a strict majority.
pub fn majority_warp(pv: &PixelVolume) -> (Frame, Mask) {
    let (w, h) = pv.dims();
    let center = pv.slice(0, 0);
    let mut data = vec![0f32; w * h];
    let mut flags = vec![false; w * h];
    data.par_chunks_mut(w)
        .zip(flags.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, frow))| {
            for x in 0..w {
                let v = vote(pv, x, y);
                row[x] = match v.level {
                    Some(level) => level as f32 / 255.0,
                    None => center[y * w + x],
                };
                frow[x] = v.is_majority();
            }
        });
    (
        Frame::from_raw(w, h, 1, data),
        Mask::new(w, h, flags).expect("flag buffer has frame size"),
    )
}

/// Oracle warp: per pixel, the candidate closest to the ground truth.
///
/// The search runs over the valid candidates plus the center slice, so the result is never
/// farther from `gt` than the plain warp. Ties prefer the smaller Chebyshev offset, then the
/// smaller value.
pub fn ideal_warp(pv: &PixelVolume, gt: &Frame) -> Result<Frame> {
    pv.check_frame("ground truth", gt)?;
    let (w, h) = pv.dims();
    let mut data = vec![0f32; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let target = gt.get(x, y, 0);
            let mut best: Option<(f32, u32, f32)> = None;
            for (value, ok, dx, dy) in pv.candidates(x, y) {
                let cheb = chebyshev(dx, dy);
                if !ok && cheb != 0 {
                    continue;
                }
                let key = ((value - target).abs(), cheb, value);
                let better = match best {
                    None => true,
                    Some(b) => {
                        key.0 < b.0
                            || (key.0 == b.0 && (key.1 < b.1 || (key.1 == b.1 && key.2 < b.2)))
                    }
                };
                if better {
                    best = Some(key);
                }
            }
            *out = best
                .map(|b| b.2)
                .expect("center candidate always considered");
        }
    });
    Ok(Frame::from_raw(w, h, 1, data))
}

/// Candidate statistics against a ground-truth frame.
///
/// Fractions are over the evaluated pixels, i.e. those whose center candidate (the plain warp
/// sample) is valid. Tolerances are in 8-bit levels.
#[derive(Clone, Debug, PartialEq)]
pub struct PvStats {
    pub total_pixels: usize,
    pub evaluated_pixels: usize,
    pub majority_fraction: f64,
    /// `(c, fraction of majority pixels within ±c of the ground truth)`, ascending in `c`.
    pub majority_accuracy: Vec<(u32, f64)>,
    /// Tolerance used for the region breakdown (the smallest requested `c`).
    pub region_tolerance: u32,
    pub correct_majority: f64,
    pub wrong_majority: f64,
    pub no_majority: f64,
}

impl PvStats {
    pub fn accuracy_at(&self, c: u32) -> Option<f64> {
        self.majority_accuracy
            .iter()
            .find(|(t, _)| *t == c)
            .map(|&(_, a)| a)
    }
}

pub fn pv_statistics(pv: &PixelVolume, gt: &Frame, tolerances: &[u32]) -> Result<PvStats> {
    pv.check_frame("ground truth", gt)?;
    let mut tolerances = tolerances.to_vec();
    if tolerances.is_empty() {
        tolerances.push(0);
    }
    tolerances.sort_unstable();
    tolerances.dedup();
    let (w, h) = pv.dims();
    let center_valid = pv.slice_validity(0, 0);

    // per row: (evaluated, majority, per-tolerance hits)
    let rows: Vec<(usize, usize, Vec<usize>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut evaluated = 0;
            let mut majority = 0;
            let mut hits = vec![0usize; tolerances.len()];
            for x in 0..w {
                if !center_valid[y * w + x] {
                    continue;
                }
                evaluated += 1;
                let v = vote(pv, x, y);
                if !v.is_majority() {
                    continue;
                }
                majority += 1;
                let level = v.level.expect("majority implies a level") as i32;
                let truth = quantize(gt.get(x, y, 0)) as i32;
                let diff = (level - truth).unsigned_abs();
                for (hit, &c) in hits.iter_mut().zip(&tolerances) {
                    if diff <= c {
                        *hit += 1;
                    }
                }
            }
            (evaluated, majority, hits)
        })
        .collect();

    let mut evaluated = 0;
    let mut majority = 0;
    let mut hits = vec![0usize; tolerances.len()];
    for (e, m, hs) in rows {
        evaluated += e;
        majority += m;
        for (a, b) in hits.iter_mut().zip(hs) {
            *a += b;
        }
    }
    let frac = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let majority_accuracy: Vec<(u32, f64)> = tolerances
        .iter()
        .zip(&hits)
        .map(|(&c, &n)| (c, frac(n, majority)))
        .collect();
    let correct = hits[0];
    Ok(PvStats {
        total_pixels: w * h,
        evaluated_pixels: evaluated,
        majority_fraction: frac(majority, evaluated),
        majority_accuracy,
        region_tolerance: tolerances[0],
        correct_majority: frac(correct, evaluated),
        wrong_majority: frac(majority - correct, evaluated),
        no_majority: frac(evaluated - majority, evaluated),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::backward_warp;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> Frame {
        Frame::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 17) as f32 / 16.0).unwrap()
    }

    /// A volume with one pixel whose candidates are supplied directly.
    fn single_pixel(k: usize, values: &[f32]) -> PixelVolume {
        PixelVolume::from_parts(1, 1, k, values.to_vec(), vec![true; k * k]).unwrap()
    }

    #[test]
    fn rejects_even_or_zero_k() {
        let f = ramp(4, 4);
        let flow = FlowField::zeros(4, 4);
        assert!(build_pixel_volume(&f, &flow, 2).is_err());
        assert!(build_pixel_volume(&f, &flow, 0).is_err());
        assert!(build_naive_pixel_volume(&f, &flow, 4).is_err());
        assert!(build_pixel_volume(&f, &FlowField::zeros(3, 4), 3).is_err());
    }

    #[test]
    fn zero_flow_candidates_equal_reference() {
        let f = ramp(6, 5);
        let pv = build_pixel_volume(&f, &FlowField::zeros(6, 5), 3).unwrap();
        for y in 1..4 {
            for x in 1..5 {
                for (v, ok, _, _) in pv.candidates(x, y) {
                    assert!(ok);
                    assert_eq!(v, f.get(x, y, 0));
                }
            }
        }
    }

    #[test]
    fn constant_flow_slices_equal_warp() {
        let f = ramp(10, 8);
        let flow = FlowField::constant(10, 8, 2.0, 0.0);
        let pv = build_pixel_volume(&f, &flow, 3).unwrap();
        let (warped, _) = backward_warp(&f, &flow).unwrap();
        for s in 0..9 {
            let (dx, dy) = pv.slice_offset(s);
            let slice = pv.slice(dx, dy);
            for y in 1..7 {
                for x in 1..9 {
                    assert_eq!(slice[y * 10 + x], warped.get(x, y, 0));
                }
            }
        }
    }

    /// Candidate for `p` from neighbor `q = p + d`: `q` moves to its match `q + W(q)` and is then
    /// shifted back by `d`.
    fn oracle_candidates(f: &Frame, flow: &FlowField, x: usize, y: usize, k: usize) -> Vec<f32> {
        let r = (k / 2) as i64;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let qx = (x as i64 + dx).clamp(0, f.width() as i64 - 1);
                let qy = (y as i64 + dy).clamp(0, f.height() as i64 - 1);
                let (u, v) = flow.at(qx as usize, qy as usize);
                let mx = qx as f32 + u;
                let my = qy as f32 + v;
                out.push(f.sample_channel(mx - dx as f32, my - dy as f32, 0));
            }
        }
        out
    }

    #[test]
    fn outlier_neighbor_contributes_one_bad_candidate() {
        let f = Frame::from_fn(5, 5, |x, y| (x + 5 * y) as f32 / 24.0).unwrap();
        let flow = FlowField::from_fn(5, 5, |x, y| {
            if (x, y) == (2, 2) {
                (5.0, 5.0)
            } else {
                (1.0, 0.0)
            }
        })
        .unwrap();
        let pv = build_pixel_volume(&f, &flow, 3).unwrap();
        let got: Vec<f32> = pv.candidates(2, 2).map(|c| c.0).collect();
        let expected = oracle_candidates(&f, &flow, 2, 2, 3);
        assert_eq!(got, expected);
        let correct = f.get(3, 2, 0);
        let outlier = f.get(4, 4, 0);
        assert_eq!(got.iter().filter(|&&v| v == correct).count(), 8);
        assert_eq!(got.iter().filter(|&&v| v == outlier).count(), 1);
    }

    #[test]
    fn naive_volume_is_window_around_match() {
        let f = ramp(7, 7);
        let pv = build_naive_pixel_volume(&f, &FlowField::zeros(7, 7), 3).unwrap();
        for (v, _, dx, dy) in pv.candidates(3, 3) {
            assert_eq!(v, f.get((3 + dx) as usize, (3 + dy) as usize, 0));
        }
        let flow = FlowField::constant(7, 7, 1.0, 0.0);
        let pv = build_naive_pixel_volume(&f, &flow, 3).unwrap();
        let left = pv.slice(-1, 0);
        let center = pv.slice(0, 0);
        for y in 0..7 {
            for x in 1..5 {
                assert_eq!(left[y * 7 + x + 1], center[y * 7 + x]);
            }
        }
    }

    #[test]
    fn k1_volumes_agree_with_warp() {
        let f = ramp(9, 6);
        let flow = FlowField::from_fn(9, 6, |x, y| (0.3 * x as f32 - 1.0, 0.1 * y as f32)).unwrap();
        let regular = build_pixel_volume(&f, &flow, 1).unwrap();
        let naive = build_naive_pixel_volume(&f, &flow, 1).unwrap();
        let (warped, mask) = backward_warp(&f, &flow).unwrap();
        assert_eq!(regular, naive);
        assert_eq!(center_slice(&regular), warped);
        assert_eq!(center_validity(&regular), mask);
        for (a, b) in majority_warp(&regular).0.data().iter().zip(warped.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
        }
        assert_eq!(ideal_warp(&regular, &f).unwrap(), warped);
    }

    #[test]
    fn strict_majority_of_25() {
        let mut values = vec![128.0 / 255.0; 13];
        values.extend((0..12).map(|i| (10 + i) as f32 / 255.0));
        let (out, flags) = majority_warp(&single_pixel(5, &values));
        assert_eq!(out.get(0, 0, 0), 128.0 / 255.0);
        assert!(flags.is_valid(0, 0));
    }

    #[test]
    fn plurality_without_majority() {
        let mut values = vec![200.0 / 255.0; 5];
        values.extend(vec![50.0 / 255.0; 4]);
        values.extend((0..16).map(|i| (60 + i) as f32 / 255.0));
        let (out, flags) = majority_warp(&single_pixel(5, &values));
        assert_eq!(out.get(0, 0, 0), 200.0 / 255.0);
        assert!(!flags.is_valid(0, 0));
    }

    #[test]
    fn tie_prefers_center() {
        // slice 12 is (0, 0) for k = 5
        let mut values = vec![0.0f32; 25];
        for (i, v) in values.iter_mut().enumerate() {
            *v = if i < 12 { 40.0 / 255.0 } else { 90.0 / 255.0 };
        }
        values[24] = 7.0 / 255.0;
        let (out, flags) = majority_warp(&single_pixel(5, &values));
        assert_eq!(out.get(0, 0, 0), 90.0 / 255.0);
        assert!(!flags.is_valid(0, 0));
    }

    #[test]
    fn no_valid_candidates_falls_back_to_center() {
        let pv = PixelVolume::from_parts(1, 1, 3, vec![0.3; 9], vec![false; 9]).unwrap();
        let (out, flags) = majority_warp(&pv);
        assert_eq!(out.get(0, 0, 0), 0.3);
        assert!(!flags.is_valid(0, 0));
    }

    #[test]
    fn ideal_picks_closest() {
        let mut values = vec![90.0 / 255.0; 9];
        values[0] = 101.0 / 255.0;
        values[8] = 250.0 / 255.0;
        let pv = single_pixel(3, &values);
        let gt = Frame::filled(1, 1, 1, 100.0 / 255.0).unwrap();
        assert_eq!(ideal_warp(&pv, &gt).unwrap().get(0, 0, 0), 101.0 / 255.0);
        let exact = Frame::filled(1, 1, 1, 250.0 / 255.0).unwrap();
        assert_eq!(ideal_warp(&pv, &exact).unwrap().get(0, 0, 0), 250.0 / 255.0);
        assert!(ideal_warp(&pv, &Frame::filled(2, 1, 1, 0.0).unwrap()).is_err());
    }

    #[test]
    fn stats_on_exact_translation() {
        let f = Frame::from_fn(24, 20, |x, y| ((x * 31 + y * 17) % 256) as f32 / 255.0).unwrap();
        let flow = FlowField::constant(24, 20, 2.0, -1.0);
        let pv = build_pixel_volume(&f, &flow, 5).unwrap();
        let (gt, _) = backward_warp(&f, &flow).unwrap();
        let stats = pv_statistics(&pv, &gt, &[0, 2]).unwrap();
        assert_eq!(stats.majority_fraction, 1.0);
        assert_eq!(stats.accuracy_at(0), Some(1.0));
        assert_eq!(stats.correct_majority, 1.0);
        assert_eq!(stats.no_majority, 0.0);
        assert_eq!(stats.evaluated_pixels, 22 * 19);
    }

    fn case() -> impl Strategy<Value = (Frame, FlowField, usize)> {
        (4usize..12, 4usize..12, 0usize..4).prop_flat_map(|(w, h, kk)| {
            let n = w * h;
            (
                prop::collection::vec(0.0f32..=1.0, n),
                prop::collection::vec(-4.0f32..4.0, 2 * n),
            )
                .prop_map(move |(d, fl)| {
                    (
                        Frame::new(w, h, 1, d).unwrap(),
                        FlowField::new(w, h, fl[..n].to_vec(), fl[n..].to_vec()).unwrap(),
                        2 * kk + 1,
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn center_slice_is_backward_warp((f, flow, k) in case()) {
            let pv = build_pixel_volume(&f, &flow, k).unwrap();
            let (warped, mask) = backward_warp(&f, &flow).unwrap();
            let center = center_slice(&pv);
            for (a, b) in center.data().iter().zip(warped.data()) {
                prop_assert!((a - b).abs() <= 1e-6);
            }
            prop_assert_eq!(center_validity(&pv), mask);
        }

        #[test]
        fn ideal_never_worse_than_center((f, flow, k) in case(), seed in 0u32..1000) {
            let pv = build_pixel_volume(&f, &flow, k).unwrap();
            let gt = Frame::from_fn(f.width(), f.height(), |x, y| ((x as u32 * 7 + y as u32 * 3 + seed) % 29) as f32 / 28.0).unwrap();
            let ideal = ideal_warp(&pv, &gt).unwrap();
            let center = center_slice(&pv);
            for i in 0..gt.data().len() {
                prop_assert!((ideal.data()[i] - gt.data()[i]).abs() <= (center.data()[i] - gt.data()[i]).abs());
            }
        }

        #[test]
        fn accuracy_monotone_in_tolerance((f, flow, k) in case()) {
            let pv = build_pixel_volume(&f, &flow, k).unwrap();
            let stats = pv_statistics(&pv, &f, &[0, 1, 2, 4, 8, 255]).unwrap();
            for pair in stats.majority_accuracy.windows(2) {
                prop_assert!(pair[0].1 <= pair[1].1);
            }
            let parts = stats.correct_majority + stats.wrong_majority + stats.no_majority;
            prop_assert!(stats.evaluated_pixels == 0 || (parts - 1.0).abs() < 1e-9);
            for v in [stats.majority_fraction, stats.correct_majority, stats.wrong_majority, stats.no_majority] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
