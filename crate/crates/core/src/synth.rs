//! Synthetic sequences with ground truth, blur by frame averaging, the blur-invariant and
//! blur-variant warping losses, and calibration of flow parameters against the former.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{check_dims, param, Error, Result};
use crate::filter::{gaussian_blur, sample_plane};
use crate::frame::{FlowField, Frame};
use crate::metrics::psnr_from_mse;
use crate::tvl1::{estimate_flow, FlowParams};
use crate::warp::{backward_warp, masked_mse};

/// Largest canvas side the renderer will allocate.
const MAX_CANVAS_SIDE: usize = 8192;
/// Pixel-volume window accounted for in the canvas margin.
const MARGIN_WINDOW: usize = 5;

/// Band-limited noise: seeded white noise blurred with `sigma` and stretched to `[0.05, 0.95]`.
pub fn gen_texture(seed: u64, width: usize, height: usize, sigma: f64) -> Result<Frame> {
    if width == 0 || height == 0 {
        return Err(param("texture dimensions must be positive"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(param(format!(
            "texture sigma must be non-negative, got {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f32> = (0..width * height).map(|_| rng.random::<f32>()).collect();
    let smooth = gaussian_blur(&noise, width, height, sigma);
    let (lo, hi) = smooth
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = hi - lo;
    let data = smooth
        .iter()
        .map(|&v| {
            if span > 0.0 {
                0.05 + 0.9 * (v - lo) / span
            } else {
                0.5
            }
        })
        .collect();
    Frame::new(width, height, 1, data)
}

/// Scene description for [`render_sequence`].
///
/// The camera translates by `velocity` (plus a seeded per-frame perturbation of up to
/// `jitter` px) and rotates by `rotation_deg` about the frame center every frame. A blurred
/// frame averages `substeps` samples taken `1 / substeps` of a frame apart and centered on the
/// sharp frame's time, so blur grows with `substeps`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub texture_sigma: f64,
    pub substeps: usize,
    pub velocity: (f64, f64),
    pub rotation_deg: f64,
    pub jitter: f64,
    /// Gaussian noise added to blurred frames only.
    pub noise_sigma: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            width: 128,
            height: 128,
            frames: 8,
            texture_sigma: 1.5,
            substeps: 1,
            velocity: (0.0, 0.0),
            rotation_deg: 0.0,
            jitter: 0.0,
            noise_sigma: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(param(format!(
                "scene must be at least 32x32, got {}x{}",
                self.width, self.height
            )));
        }
        if self.substeps == 0 {
            return Err(param("substeps must be at least 1"));
        }
        if self.frames == 0 {
            return Err(param("scene needs at least one frame"));
        }
        let finite = [
            self.texture_sigma,
            self.velocity.0,
            self.velocity.1,
            self.rotation_deg,
            self.jitter,
            self.noise_sigma,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(param("scene parameters must be finite"));
        }
        if self.texture_sigma < 0.0 || self.jitter < 0.0 || self.noise_sigma < 0.0 {
            return Err(param(
                "texture_sigma, jitter and noise_sigma must be non-negative",
            ));
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SceneSpec::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                format: "scene",
                reason: format!("line {}: expected key=value", lineno + 1),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn fmt::Display| Error::Format {
                format: "scene",
                reason: format!("line {}: {key}: {e}", lineno + 1),
            };
            fn num<T: FromStr>(v: &str) -> std::result::Result<T, String>
            where
                T::Err: fmt::Display,
            {
                v.parse::<T>().map_err(|e| e.to_string())
            }
            match key {
                "seed" => spec.seed = num(value).map_err(|e| bad(&e))?,
                "width" => spec.width = num(value).map_err(|e| bad(&e))?,
                "height" => spec.height = num(value).map_err(|e| bad(&e))?,
                "frames" => spec.frames = num(value).map_err(|e| bad(&e))?,
                "texture_sigma" => spec.texture_sigma = num(value).map_err(|e| bad(&e))?,
                "substeps" => spec.substeps = num(value).map_err(|e| bad(&e))?,
                "velocity_x" => spec.velocity.0 = num(value).map_err(|e| bad(&e))?,
                "velocity_y" => spec.velocity.1 = num(value).map_err(|e| bad(&e))?,
                "rotation_deg" => spec.rotation_deg = num(value).map_err(|e| bad(&e))?,
                "jitter" => spec.jitter = num(value).map_err(|e| bad(&e))?,
                "noise_sigma" => spec.noise_sigma = num(value).map_err(|e| bad(&e))?,
                _ => return Err(bad(&"unknown key")),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Serializes to the `key=value` form accepted by [`SceneSpec::parse`].
    pub fn to_config_string(&self) -> String {
        format!(
            "seed={}\nwidth={}\nheight={}\nframes={}\ntexture_sigma={}\nsubsteps={}\n\
             velocity_x={}\nvelocity_y={}\nrotation_deg={}\njitter={}\nnoise_sigma={}\n",
            self.seed,
            self.width,
            self.height,
            self.frames,
            self.texture_sigma,
            self.substeps,
            self.velocity.0,
            self.velocity.1,
            self.rotation_deg,
            self.jitter,
            self.noise_sigma
        )
    }
}

/// Camera pose: translation in px and rotation in radians, both relative to frame 0.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Pose {
    tx: f64,
    ty: f64,
    angle: f64,
}

/// Piecewise-linear camera path through one keyframe per frame index, with one extra
/// keyframe on each side so sub-steps of the first and last frames are defined.
struct CameraPath {
    keys: Vec<Pose>,
}

impl CameraPath {
    fn new(spec: &SceneSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9E37_79B9_7F4A_7C15);
        let omega = spec.rotation_deg.to_radians();
        // keys[i] is frame i - 1
        let mut keys = vec![
            Pose {
                tx: 0.0,
                ty: 0.0,
                angle: 0.0
            };
            spec.frames + 2
        ];
        let mut steps = Vec::with_capacity(spec.frames + 1);
        for _ in 0..=spec.frames {
            let (jx, jy) = if spec.jitter > 0.0 {
                (
                    rng.random_range(-spec.jitter..=spec.jitter),
                    rng.random_range(-spec.jitter..=spec.jitter),
                )
            } else {
                (0.0, 0.0)
            };
            steps.push((spec.velocity.0 + jx, spec.velocity.1 + jy));
        }
        // frame 0 sits at the origin; keys[0] = frame -1
        keys[0] = Pose {
            tx: -steps[0].0,
            ty: -steps[0].1,
            angle: -omega,
        };
        for i in 2..keys.len() {
            let prev = keys[i - 1];
            keys[i] = Pose {
                tx: prev.tx + steps[i - 1].0,
                ty: prev.ty + steps[i - 1].1,
                angle: prev.angle + omega,
            };
        }
        CameraPath { keys }
    }

    /// Pose at time `t` in frame units, `t ∈ [-1, frames]`.
    fn pose(&self, t: f64) -> Pose {
        let pos = (t + 1.0).clamp(0.0, (self.keys.len() - 1) as f64);
        let i = (pos.floor() as usize).min(self.keys.len() - 2);
        let f = pos - i as f64;
        let (a, b) = (self.keys[i], self.keys[i + 1]);
        Pose {
            tx: a.tx + f * (b.tx - a.tx),
            ty: a.ty + f * (b.ty - a.ty),
            angle: a.angle + f * (b.angle - a.angle),
        }
    }
}

/// Sub-step times of frame `t`: `substeps` samples at a pitch of `1 / substeps` frame,
/// centered on `t`, like consecutive frames of a capture running `substeps` times faster.
fn substep_times(t: usize, substeps: usize) -> Vec<f64> {
    let center = (substeps - 1) as f64 / 2.0;
    (0..substeps)
        .map(|j| t as f64 + (j as f64 - center) / substeps as f64)
        .collect()
}

/// Frame pixel `(x, y)` under `pose`, in frame-0 coordinates.
fn world_point(pose: Pose, cx: f64, cy: f64, x: f64, y: f64) -> (f64, f64) {
    let (s, c) = pose.angle.sin_cos();
    let (dx, dy) = (x - cx, y - cy);
    (
        cx + c * dx - s * dy + pose.tx,
        cy + s * dx + c * dy + pose.ty,
    )
}

/// Inverse of [`world_point`].
fn frame_point(pose: Pose, cx: f64, cy: f64, wx: f64, wy: f64) -> (f64, f64) {
    let (s, c) = pose.angle.sin_cos();
    let (dx, dy) = (wx - pose.tx - cx, wy - pose.ty - cy);
    (cx + c * dx + s * dy, cy - s * dx + c * dy)
}

/// Output of [`render_sequence`]. `flows[i]` maps frame `i + 1` onto frame `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedSequence {
    pub sharp: Vec<Frame>,
    pub blurred: Vec<Frame>,
    pub flows: Vec<FlowField>,
}

/// Renders sharp frames, blurred frames and ground-truth flows for `spec`.
///
/// Frames are sampled from a quantized canvas texture, so integer translations produce
/// 8-bit-exact frames. Blurred frames are quantized after averaging and noise.
pub fn render_sequence(spec: &SceneSpec) -> Result<RenderedSequence> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let path = CameraPath::new(spec);

    let times: Vec<Vec<f64>> = (0..spec.frames)
        .map(|t| substep_times(t, spec.substeps))
        .collect();
    let mut excursion = 0f64;
    for &t in times.iter().flatten().chain(
        (0..spec.frames)
            .map(|t| t as f64)
            .collect::<Vec<_>>()
            .iter(),
    ) {
        let pose = path.pose(t);
        for (x, y) in [
            (0.0, 0.0),
            (w as f64 - 1.0, 0.0),
            (0.0, h as f64 - 1.0),
            (w as f64 - 1.0, h as f64 - 1.0),
        ] {
            let (wx, wy) = world_point(pose, cx, cy, x, y);
            excursion = excursion.max((wx - x).abs()).max((wy - y).abs());
        }
    }
    let margin = excursion.ceil() as usize + MARGIN_WINDOW + 4;
    let (canvas_w, canvas_h) = (w + 2 * margin, h + 2 * margin);
    if canvas_w > MAX_CANVAS_SIDE || canvas_h > MAX_CANVAS_SIDE {
        return Err(param(format!(
            "camera path needs a {canvas_w}x{canvas_h} canvas, limit is {MAX_CANVAS_SIDE}"
        )));
    }
    let canvas = gen_texture(spec.seed, canvas_w, canvas_h, spec.texture_sigma)?.quantize();
    let canvas_data = canvas.data();
    let off = margin as f64;

    let render_at = |t: f64| -> Vec<f32> {
        let pose = path.pose(t);
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (wx, wy) = world_point(pose, cx, cy, x as f64, y as f64);
                out.push(sample_plane(
                    canvas_data,
                    canvas_w,
                    canvas_h,
                    (wx + off) as f32,
                    (wy + off) as f32,
                ));
            }
        }
        out
    };

    let rendered: Vec<(Frame, Frame)> = (0..spec.frames)
        .into_par_iter()
        .map(|t| {
            let sharp = Frame::from_raw(w, h, 1, render_at(t as f64));
            let subs: Vec<Frame> = times[t]
                .iter()
                .map(|&tt| Frame::from_raw(w, h, 1, render_at(tt)))
                .collect();
            let mut blurred = synth_blur_average(&subs).expect("non-empty sub-steps");
            if spec.noise_sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    spec.seed.wrapping_mul(1_000_003).wrapping_add(t as u64),
                );
                let normal = Normal::new(0.0f32, spec.noise_sigma as f32).expect("finite sigma");
                let noisy = blurred
                    .data()
                    .iter()
                    .map(|v| v + normal.sample(&mut rng))
                    .collect();
                blurred = Frame::from_raw(w, h, 1, noisy);
            }
            (sharp.quantize(), blurred.quantize())
        })
        .collect();
    let (sharp, blurred): (Vec<Frame>, Vec<Frame>) = rendered.into_iter().unzip();

    let flows = (1..spec.frames)
        .map(|t| {
            let cur = path.pose(t as f64);
            let prev = path.pose(t as f64 - 1.0);
            FlowField::from_fn(w, h, |x, y| {
                let (wx, wy) = world_point(cur, cx, cy, x as f64, y as f64);
                let (px, py) = frame_point(prev, cx, cy, wx, wy);
                ((px - x as f64) as f32, (py - y as f64) as f32)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RenderedSequence {
        sharp,
        blurred,
        flows,
    })
}

/// Per-sample arithmetic mean of equally sized frames.
pub fn synth_blur_average(substeps: &[Frame]) -> Result<Frame> {
    let first = substeps
        .first()
        .ok_or_else(|| param("blur synthesis needs at least one frame"))?;
    let mut acc = vec![0f64; first.data().len()];
    for f in substeps {
        check_dims("sub-step frame", first.dims(), f.dims())?;
        if f.channels() != first.channels() {
            return Err(param("sub-step frames differ in channel count"));
        }
        for (a, &v) in acc.iter_mut().zip(f.data()) {
            *a += v as f64;
        }
    }
    let n = substeps.len() as f64;
    Ok(Frame::from_raw(
        first.width(),
        first.height(),
        first.channels(),
        acc.into_iter().map(|v| (v / n) as f32).collect(),
    ))
}

/// Blur-invariant loss: the sharp previous frame warped by `flow`, against the sharp current
/// frame, whichever pair produced the flow.
pub fn bim_loss(flow: &FlowField, prev_sharp: &Frame, cur_sharp: &Frame) -> Result<f64> {
    warp_loss(flow, prev_sharp, cur_sharp)
}

/// Blur-variant loss: the pair's own previous frame warped by `flow`, against its current frame.
pub fn blur_variant_loss(flow: &FlowField, prev: &Frame, cur: &Frame) -> Result<f64> {
    warp_loss(flow, prev, cur)
}

fn warp_loss(flow: &FlowField, prev: &Frame, cur: &Frame) -> Result<f64> {
    check_dims("current frame", prev.dims(), cur.dims())?;
    let (warped, mask) = backward_warp(prev, flow)?;
    masked_mse(&warped, cur, &mask)
}

/// Which frames of a consecutive pair are sharp or blurred: `(previous, current)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairKind {
    SharpSharp,
    BlurBlur,
    BlurSharp,
    SharpBlur,
}

impl PairKind {
    pub const ALL: [PairKind; 4] = [
        PairKind::SharpSharp,
        PairKind::BlurBlur,
        PairKind::BlurSharp,
        PairKind::SharpBlur,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PairKind::SharpSharp => "ss",
            PairKind::BlurBlur => "bb",
            PairKind::BlurSharp => "bs",
            PairKind::SharpBlur => "sb",
        }
    }

    fn index(self) -> usize {
        PairKind::ALL
            .iter()
            .position(|&k| k == self)
            .expect("listed")
    }
}

/// One consecutive frame pair with both sharp and blurred versions and ground-truth flow.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub prev_sharp: Frame,
    pub cur_sharp: Frame,
    pub prev_blurred: Frame,
    pub cur_blurred: Frame,
    pub gt_flow: FlowField,
}

impl PairSample {
    /// `(previous, current)` frames for the given pair kind.
    pub fn frames(&self, kind: PairKind) -> (&Frame, &Frame) {
        match kind {
            PairKind::SharpSharp => (&self.prev_sharp, &self.cur_sharp),
            PairKind::BlurBlur => (&self.prev_blurred, &self.cur_blurred),
            PairKind::BlurSharp => (&self.prev_blurred, &self.cur_sharp),
            PairKind::SharpBlur => (&self.prev_sharp, &self.cur_blurred),
        }
    }

    /// Flow from the current to the previous frame of the chosen pair.
    pub fn estimate(&self, kind: PairKind, params: &FlowParams) -> Result<FlowField> {
        let (prev, cur) = self.frames(kind);
        estimate_flow(cur, prev, params)
    }
}

/// Every consecutive pair of one or more sequences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<PairSample>,
}

impl PairSet {
    pub fn from_sequence(seq: &RenderedSequence) -> Self {
        let mut set = PairSet::default();
        set.extend_from_sequence(seq);
        set
    }

    pub fn extend_from_sequence(&mut self, seq: &RenderedSequence) {
        for t in 1..seq.sharp.len() {
            self.pairs.push(PairSample {
                prev_sharp: seq.sharp[t - 1].clone(),
                cur_sharp: seq.sharp[t].clone(),
                prev_blurred: seq.blurred[t - 1].clone(),
                cur_blurred: seq.blurred[t].clone(),
                gt_flow: seq.flows[t - 1].clone(),
            });
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// One grid cell of a calibration run.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationCell {
    pub params: FlowParams,
    /// Mean blur-invariant loss over all evaluated pairs and pair kinds.
    pub mean_loss: f64,
    /// Mean loss per pair kind, in [`PairKind::ALL`] order; `None` for kinds not evaluated.
    pub per_kind: [Option<f64>; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub best_index: usize,
    pub best: FlowParams,
    pub table: Vec<CalibrationCell>,
}

/// Picks the grid cell with the lowest mean blur-invariant loss over all four pair kinds.
pub fn calibrate_blur_invariant(pairs: &PairSet, grid: &[FlowParams]) -> Result<Calibration> {
    calibrate(pairs, grid, &PairKind::ALL)
}

/// Calibration restricted to the given pair kinds. Ties go to the earlier grid cell.
pub fn calibrate(pairs: &PairSet, grid: &[FlowParams], kinds: &[PairKind]) -> Result<Calibration> {
    if grid.is_empty() {
        return Err(param("calibration grid is empty"));
    }
    if pairs.is_empty() {
        return Err(param("calibration needs at least one frame pair"));
    }
    if kinds.is_empty() {
        return Err(param("calibration needs at least one pair kind"));
    }
    let jobs: Vec<(usize, usize, PairKind)> = (0..grid.len())
        .flat_map(|c| (0..pairs.len()).flat_map(move |p| kinds.iter().map(move |&k| (c, p, k))))
        .collect();
    let losses: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, p, kind)| {
            let pair = &pairs.pairs[p];
            let flow = pair.estimate(kind, &grid[c])?;
            bim_loss(&flow, &pair.prev_sharp, &pair.cur_sharp)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = Vec::with_capacity(grid.len());
    for (c, params) in grid.iter().enumerate() {
        let mut sums = [0f64; 4];
        let mut counts = [0usize; 4];
        for (&(jc, _, kind), &loss) in jobs.iter().zip(&losses) {
            if jc == c {
                sums[kind.index()] += loss;
                counts[kind.index()] += 1;
            }
        }
        let total: f64 = sums.iter().sum();
        let n: usize = counts.iter().sum();
        let mut per_kind = [None; 4];
        for i in 0..4 {
            if counts[i] > 0 {
                per_kind[i] = Some(sums[i] / counts[i] as f64);
            }
        }
        table.push(CalibrationCell {
            params: params.clone(),
            mean_loss: total / n as f64,
            per_kind,
        });
    }
    let best_index = table.iter().enumerate().fold(0, |best, (i, cell)| {
        if cell.mean_loss < table[best].mean_loss {
            i
        } else {
            best
        }
    });
    Ok(Calibration {
        best_index,
        best: grid[best_index].clone(),
        table,
    })
}

/// Mean PSNR of the sharp previous frame warped by flow estimated on `kind` pairs, against the
/// sharp current frame, over valid warp pixels.
pub fn warping_psnr(pairs: &PairSet, params: &FlowParams, kind: PairKind) -> Result<f64> {
    if pairs.is_empty() {
        return Err(param("no frame pairs"));
    }
    let scores = pairs
        .pairs
        .par_iter()
        .map(|pair| {
            let flow = pair.estimate(kind, params)?;
            Ok(psnr_from_mse(bim_loss(
                &flow,
                &pair.prev_sharp,
                &pair.cur_sharp,
            )?))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
