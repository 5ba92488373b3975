//! Recurrent deblurring loop.
//!
//! For every frame `t` the previous estimate is motion-compensated into a pixel volume and
//! handed, together with three consecutive blurry frames, to a [`Deblurrer`]. The flow is
//! estimated between the blurry frames `t` and `t - 1` and applied only to the previous
//! estimate. At the sequence start the current blurry frame stands in for both the previous
//! estimate and the previous blurry frame; at the end it stands in for the next blurry frame.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{check_dims, param, Result};
use crate::frame::{FlowField, Frame};
use crate::metrics::MetricReport;
use crate::tvl1::{estimate_flow, FlowParams};
use crate::volume::{build_channel_volumes, vote, PixelVolume};

/// Inputs of one deblurring step.
pub struct DeblurInput<'a> {
    pub prev_blurry: &'a Frame,
    pub cur_blurry: &'a Frame,
    pub next_blurry: &'a Frame,
    /// Pixel volume of the previous estimate, one per channel.
    pub volumes: &'a [PixelVolume],
}

/// A deblurring step. Output must match the current frame's shape and lie in `[0, 1]`.
pub trait Deblurrer: Send + Sync {
    fn deblur(&self, input: &DeblurInput<'_>) -> Result<Frame>;
}

/// Returns the current blurry frame.
#[derive(Clone, Copy, Debug, Default)]
pub struct Passthrough;

impl Deblurrer for Passthrough {
    fn deblur(&self, input: &DeblurInput<'_>) -> Result<Frame> {
        Ok(input.cur_blurry.clone())
    }
}

/// Consensus-weighted average of the pixel-volume candidates and the current pixel.
#[derive(Clone, Copy, Debug)]
pub struct Aggregate {
    pub sigma_c: f32,
}

impl Deblurrer for Aggregate {
    fn deblur(&self, input: &DeblurInput<'_>) -> Result<Frame> {
        aggregate_deblur(
            input.prev_blurry,
            input.cur_blurry,
            input.next_blurry,
            input.volumes,
            self.sigma_c,
        )
    }
}

/// Per pixel and channel: with `m` the majority-warp value of the candidates and
/// `w(c) = exp(-(c - m)² / 2σ²)`, returns `(Σ w(cᵢ) cᵢ + w(b) b) / (Σ w(cᵢ) + w(b))` where `b`
/// is the current blurry pixel and the sum runs over valid candidates. Pixels without valid
/// candidates keep `b`.
///
/// The neighboring blurry frames are accepted for interface parity but not used.
pub fn aggregate_deblur(
    prev_blurry: &Frame,
    cur_blurry: &Frame,
    next_blurry: &Frame,
    volumes: &[PixelVolume],
    sigma_c: f32,
) -> Result<Frame> {
    if !(sigma_c > 0.0 && sigma_c.is_finite()) {
        return Err(param(format!(
            "consensus bandwidth must be positive, got {sigma_c}"
        )));
    }
    check_dims(
        "previous blurry frame",
        cur_blurry.dims(),
        prev_blurry.dims(),
    )?;
    check_dims("next blurry frame", cur_blurry.dims(), next_blurry.dims())?;
    if volumes.len() != cur_blurry.channels() {
        return Err(param(format!(
            "expected {} pixel volumes, got {}",
            cur_blurry.channels(),
            volumes.len()
        )));
    }
    for pv in volumes {
        check_dims("pixel volume", cur_blurry.dims(), pv.dims())?;
    }
    let (w, h, ch) = (
        cur_blurry.width(),
        cur_blurry.height(),
        cur_blurry.channels(),
    );
    let inv = 1.0 / (2.0 * sigma_c as f64 * sigma_c as f64);
    let weight = |v: f64, m: f64| (-(v - m) * (v - m) * inv).exp();
    let mut data = vec![0f32; w * h * ch];
    data.par_chunks_mut(w * ch)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                for (c, pv) in volumes.iter().enumerate() {
                    let current = cur_blurry.get(x, y, c) as f64;
                    let v = vote(pv, x, y);
                    let out = match v.level {
                        None => current,
                        Some(level) => {
                            let m = level as f64 / 255.0;
                            let w0 = weight(current, m);
                            let (mut num, mut den) = (w0 * current, w0);
                            for (value, ok, _, _) in pv.candidates(x, y) {
                                if ok {
                                    let wi = weight(value as f64, m);
                                    num += wi * value as f64;
                                    den += wi;
                                }
                            }
                            if den > 0.0 {
                                num / den
                            } else {
                                current
                            }
                        }
                    };
                    row[x * ch + c] = out as f32;
                }
            }
        });
    Ok(Frame::from_raw(w, h, ch, data))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeblurrerKind {
    Passthrough,
    Aggregate,
}

impl std::str::FromStr for DeblurrerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "passthrough" => Ok(DeblurrerKind::Passthrough),
            "aggregate" => Ok(DeblurrerKind::Aggregate),
            other => Err(format!(
                "unknown deblurrer '{other}' (expected passthrough or aggregate)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub k: usize,
    pub flow: FlowParams,
    pub deblurrer: DeblurrerKind,
    pub sigma_c: f32,
    /// Search radius of the aligned metrics in reports.
    pub align_radius: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 5,
            flow: FlowParams::default(),
            deblurrer: DeblurrerKind::Aggregate,
            sigma_c: 0.08,
            align_radius: crate::metrics::DEFAULT_ALIGN_RADIUS,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k.is_multiple_of(2) {
            return Err(param(format!("k must be odd and positive, got {}", self.k)));
        }
        if !(self.sigma_c > 0.0 && self.sigma_c.is_finite()) {
            return Err(param(format!(
                "sigma_c must be positive, got {}",
                self.sigma_c
            )));
        }
        self.flow.validate()
    }

    pub fn deblurrer(&self) -> Box<dyn Deblurrer> {
        match self.deblurrer {
            DeblurrerKind::Passthrough => Box::new(Passthrough),
            DeblurrerKind::Aggregate => Box::new(Aggregate {
                sigma_c: self.sigma_c,
            }),
        }
    }
}

/// Runs the recurrence with the deblurrer selected in `config`.
pub fn deblur_sequence(blurry: &[Frame], config: &PipelineConfig) -> Result<Vec<Frame>> {
    deblur_sequence_with(blurry, config, config.deblurrer().as_ref())
}

/// Runs the recurrence with a caller-supplied deblurrer.
pub fn deblur_sequence_with(
    blurry: &[Frame],
    config: &PipelineConfig,
    deblurrer: &dyn Deblurrer,
) -> Result<Vec<Frame>> {
    config.validate()?;
    let first = blurry
        .first()
        .ok_or_else(|| param("cannot deblur an empty sequence"))?;
    for f in blurry {
        check_dims("blurry frame", first.dims(), f.dims())?;
        if f.channels() != first.channels() {
            return Err(param("blurry frames differ in channel count"));
        }
    }
    let (w, h) = first.dims();
    let mut estimates: Vec<Frame> = Vec::with_capacity(blurry.len());
    for t in 0..blurry.len() {
        let cur = &blurry[t];
        let prev = if t == 0 { cur } else { &blurry[t - 1] };
        let next = blurry.get(t + 1).unwrap_or(cur);
        let prev_est = if t == 0 { cur } else { &estimates[t - 1] };
        let flow = if t == 0 {
            FlowField::zeros(w, h)
        } else {
            estimate_flow(&cur.to_grayscale(), &prev.to_grayscale(), &config.flow)?
        };
        let volumes = build_channel_volumes(prev_est, &flow, config.k)?;
        let est = deblurrer.deblur(&DeblurInput {
            prev_blurry: prev,
            cur_blurry: cur,
            next_blurry: next,
            volumes: &volumes,
        })?;
        check_dims("deblurred frame", cur.dims(), est.dims())?;
        if est.channels() != cur.channels() {
            return Err(param("deblurrer changed the channel count"));
        }
        estimates.push(est);
    }
    Ok(estimates)
}

/// Per-frame reports of `frames` against ground-truth sharp frames.
pub fn evaluate_sequence(
    frames: &[Frame],
    sharp: &[Frame],
    radius: usize,
) -> Result<Vec<MetricReport>> {
    if frames.len() != sharp.len() {
        return Err(param(format!(
            "{} frames but {} ground-truth frames",
            frames.len(),
            sharp.len()
        )));
    }
    frames
        .par_iter()
        .zip(sharp.par_iter())
        .enumerate()
        .map(|(i, (f, s))| MetricReport::evaluate(i, f, s, radius))
        .collect()
}

/// One point of the stabilization curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub frame_index: usize,
    pub mean_aligned_psnr: f64,
    /// Number of sequences that reach this frame index.
    pub sequences: usize,
}

/// Mean aligned PSNR per time step across sequences of possibly different lengths.
pub fn stabilization_curve(sequences: &[Vec<MetricReport>]) -> Result<Vec<CurvePoint>> {
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(param("stabilization curve needs at least one report"));
    }
    let len = sequences.iter().map(Vec::len).max().unwrap_or(0);
    Ok((0..len)
        .map(|t| {
            let values: Vec<f64> = sequences
                .iter()
                .filter_map(|s| s.get(t).map(|r| r.aligned_psnr))
                .collect();
            CurvePoint {
                frame_index: t,
                mean_aligned_psnr: values.iter().sum::<f64>() / values.len() as f64,
                sequences: values.len(),
            }
        })
        .collect())
}

pub fn write_curve_csv<W: Write>(writer: W, curve: &[CurvePoint]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["frame_index", "mean_aligned_psnr", "sequences"])?;
    for p in curve {
        csv.write_record([
            p.frame_index.to_string(),
            format!("{:.6}", p.mean_aligned_psnr),
            p.sequences.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Gnuplot script plotting a stabilization CSV to `png_name`.
pub fn gnuplot_script(csv_name: &str, png_name: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set terminal pngcairo size 800,500\n\
         set output '{png_name}'\n\
         set xlabel 'frame index'\n\
         set ylabel 'mean aligned PSNR (dB)'\n\
         set grid\n\
         plot '{csv_name}' using 1:2 every ::1 with linespoints title 'deblurred'\n"
    )
}
