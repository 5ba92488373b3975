//! Pyramidal TV-L1 optical flow (primal-dual, Zach/Pock/Bischof style).
//!
//! The solver estimates a backward flow from `target` to `reference`: on return,
//! `reference(x + u, y + v) ≈ target(x, y)`. Each pyramid level linearizes the data term
//! around the current flow `warps` times and runs `inner_iterations` Jacobi primal-dual steps
//! per linearization. A warp that would raise the TV-L1 energy is shortened or undone, so the
//! energy never increases within a level. All updates are whole-array sweeps, so the result
//! does not depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::{check_dims, param, Result};
use crate::filter::{gaussian_blur, median_filter, resize_bilinear, sample_plane};
use crate::frame::{FlowField, Frame};
use crate::warp::in_bounds;

/// Solver settings. `lambda` weighs the L1 data term for intensities on the 0–255 scale.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowParams {
    pub lambda: f32,
    pub theta: f32,
    pub tau: f32,
    pub warps: usize,
    pub inner_iterations: usize,
    /// Upper bound on pyramid depth; levels whose smaller side drops below 16 px are dropped.
    pub pyramid_levels: usize,
    pub zoom: f32,
    pub median_radius: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            lambda: 0.15,
            theta: 0.3,
            tau: 0.25,
            warps: 5,
            inner_iterations: 30,
            pyramid_levels: 10,
            zoom: 0.5,
            median_radius: 1,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(param(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(param(format!("theta must be positive, got {}", self.theta)));
        }
        if !(self.tau > 0.0 && self.tau <= 0.25) {
            return Err(param(format!(
                "tau must lie in (0, 0.25], got {}",
                self.tau
            )));
        }
        if self.warps == 0 || self.inner_iterations == 0 || self.pyramid_levels == 0 {
            return Err(param(
                "warps, inner_iterations and pyramid_levels must be at least 1",
            ));
        }
        if !(self.zoom > 0.0 && self.zoom < 1.0) {
            return Err(param(format!("zoom must lie in (0, 1), got {}", self.zoom)));
        }
        if self.median_radius > 2 {
            return Err(param(format!(
                "median radius must be 0, 1 or 2, got {}",
                self.median_radius
            )));
        }
        Ok(())
    }
}

const INTENSITY_SCALE: f32 = 255.0;
const GRAD_EPS: f32 = 1e-10;
const MIN_FLOW_LEVEL: usize = 16;
const MIN_PYRAMID_LEVEL: usize = 8;
const BACKTRACK_STEPS: usize = 4;

/// Anti-aliasing blur used before each downsampling step.
fn pyramid_sigma(zoom: f32) -> f64 {
    0.6 * ((1.0 / (zoom as f64 * zoom as f64)) - 1.0).sqrt()
}

fn next_size(n: usize, zoom: f32) -> usize {
    (n as f32 * zoom).round() as usize
}

fn pyramid_planes(
    plane: &[f32],
    width: usize,
    height: usize,
    levels: usize,
    zoom: f32,
    min_side: usize,
) -> Vec<(Vec<f32>, usize, usize)> {
    let mut out = vec![(plane.to_vec(), width, height)];
    let sigma = pyramid_sigma(zoom);
    while out.len() < levels {
        let (prev, w, h) = out.last().expect("pyramid is never empty");
        let (nw, nh) = (next_size(*w, zoom), next_size(*h, zoom));
        if nw.min(nh) < min_side {
            break;
        }
        let blurred = gaussian_blur(prev, *w, *h, sigma);
        let down = resize_bilinear(&blurred, *w, *h, nw, nh);
        out.push((down, nw, nh));
    }
    out
}

/// Gaussian pyramid, finest level first. Levels that would drop below 8×8 are not produced.
pub fn gaussian_pyramid(frame: &Frame, levels: usize, zoom: f32) -> Result<Vec<Frame>> {
    if levels == 0 {
        return Err(param("pyramid needs at least one level"));
    }
    if !(zoom > 0.0 && zoom < 1.0) {
        return Err(param(format!("zoom must lie in (0, 1), got {zoom}")));
    }
    if frame.width().min(frame.height()) < MIN_PYRAMID_LEVEL {
        return Err(param(format!(
            "frame {}x{} is smaller than {MIN_PYRAMID_LEVEL}x{MIN_PYRAMID_LEVEL}",
            frame.width(),
            frame.height()
        )));
    }
    let planes: Vec<Vec<(Vec<f32>, usize, usize)>> = (0..frame.channels())
        .map(|c| {
            pyramid_planes(
                &frame.plane(c),
                frame.width(),
                frame.height(),
                levels,
                zoom,
                MIN_PYRAMID_LEVEL,
            )
        })
        .collect();
    let depth = planes[0].len();
    (0..depth)
        .map(|l| {
            let (w, h) = (planes[0][l].1, planes[0][l].2);
            let chans: Vec<Vec<f32>> = planes.iter().map(|p| p[l].0.clone()).collect();
            Frame::from_planes(w, h, &chans)
        })
        .collect()
}

/// Energies recorded while solving one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelTrace {
    pub width: usize,
    pub height: usize,
    /// TV-L1 energy of the incoming flow followed by the energy after each warp.
    pub energies: Vec<f64>,
}

/// Estimates the backward flow from `target` to `reference`.
pub fn estimate_flow(target: &Frame, reference: &Frame, params: &FlowParams) -> Result<FlowField> {
    solve(target, reference, params, false).map(|(f, _)| f)
}

/// As [`estimate_flow`], also returning per-level energy traces (coarsest level first).
pub fn estimate_flow_traced(
    target: &Frame,
    reference: &Frame,
    params: &FlowParams,
) -> Result<(FlowField, Vec<LevelTrace>)> {
    solve(target, reference, params, true)
}

fn scaled_gray(frame: &Frame) -> Vec<f32> {
    frame
        .to_grayscale()
        .data()
        .iter()
        .map(|v| v * INTENSITY_SCALE)
        .collect()
}

fn solve(
    target: &Frame,
    reference: &Frame,
    params: &FlowParams,
    trace: bool,
) -> Result<(FlowField, Vec<LevelTrace>)> {
    params.validate()?;
    check_dims("reference", target.dims(), reference.dims())?;
    let (w, h) = target.dims();
    let levels = params.pyramid_levels;
    let min_side = MIN_FLOW_LEVEL.min(w.min(h));
    let p0 = pyramid_planes(&scaled_gray(target), w, h, levels, params.zoom, min_side);
    let p1 = pyramid_planes(&scaled_gray(reference), w, h, levels, params.zoom, min_side);

    let mut traces = Vec::new();
    let coarsest = p0.len() - 1;
    let (cw, ch) = (p0[coarsest].1, p0[coarsest].2);
    let mut u1 = vec![0f32; cw * ch];
    let mut u2 = vec![0f32; cw * ch];
    for level in (0..=coarsest).rev() {
        let (i0, lw, lh) = (&p0[level].0, p0[level].1, p0[level].2);
        let i1 = &p1[level].0;
        let energies = solve_level(i0, i1, lw, lh, &mut u1, &mut u2, params, trace);
        if trace {
            traces.push(LevelTrace {
                width: lw,
                height: lh,
                energies,
            });
        }
        if params.median_radius > 0 {
            u1 = median_filter(&u1, lw, lh, params.median_radius);
            u2 = median_filter(&u2, lw, lh, params.median_radius);
        }
        if level > 0 {
            let (fw, fh) = (p0[level - 1].1, p0[level - 1].2);
            let sx = fw as f32 / lw as f32;
            let sy = fh as f32 / lh as f32;
            u1 = resize_bilinear(&u1, lw, lh, fw, fh)
                .into_iter()
                .map(|v| v * sx)
                .collect();
            u2 = resize_bilinear(&u2, lw, lh, fw, fh)
                .into_iter()
                .map(|v| v * sy)
                .collect();
        }
    }
    Ok((FlowField::from_raw(w, h, u1, u2), traces))
}

/// Backward-warps `plane` by `(u1, u2)` and returns the samples and validity.
fn warp_plane(plane: &[f32], w: usize, h: usize, u1: &[f32], u2: &[f32]) -> (Vec<f32>, Vec<bool>) {
    let mut out = vec![0f32; w * h];
    let mut valid = vec![false; w * h];
    out.par_chunks_mut(w)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, vrow))| {
            for x in 0..w {
                let i = y * w + x;
                let sx = x as f32 + u1[i];
                let sy = y as f32 + u2[i];
                row[x] = sample_plane(plane, w, h, sx, sy);
                vrow[x] = in_bounds(sx, sy, w, h);
            }
        });
    (out, valid)
}

/// Central differences (one-sided at the border).
fn central_gradient(plane: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0f32; w * h];
    let mut gy = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = if w == 1 {
                0.0
            } else if x == 0 {
                plane[i + 1] - plane[i]
            } else if x == w - 1 {
                plane[i] - plane[i - 1]
            } else {
                0.5 * (plane[i + 1] - plane[i - 1])
            };
            gy[i] = if h == 1 {
                0.0
            } else if y == 0 {
                plane[i + w] - plane[i]
            } else if y == h - 1 {
                plane[i] - plane[i - w]
            } else {
                0.5 * (plane[i + w] - plane[i - w])
            };
        }
    }
    (gx, gy)
}

/// Forward differences with zero at the last row/column.
#[inline]
fn forward_diff(u: &[f32], w: usize, h: usize, x: usize, y: usize) -> (f32, f32) {
    let i = y * w + x;
    let dx = if x + 1 < w { u[i + 1] - u[i] } else { 0.0 };
    let dy = if y + 1 < h { u[i + w] - u[i] } else { 0.0 };
    (dx, dy)
}

/// Divergence, the negative adjoint of [`forward_diff`].
#[inline]
fn divergence(px: &[f32], py: &[f32], w: usize, h: usize, x: usize, y: usize) -> f32 {
    let i = y * w + x;
    let ax = if x == 0 {
        px[i]
    } else if x == w - 1 {
        -px[i - 1]
    } else {
        px[i] - px[i - 1]
    };
    let ay = if y == 0 {
        py[i]
    } else if y == h - 1 {
        -py[i - w]
    } else {
        py[i] - py[i - w]
    };
    ax + ay
}

/// `Σ |∇u1| + |∇u2| + λ Σ_valid |I1(x + u) − I0(x)|` on the 0–255 intensity scale.
pub fn flow_energy(
    target: &Frame,
    reference: &Frame,
    flow: &FlowField,
    lambda: f32,
) -> Result<f64> {
    check_dims("reference", target.dims(), reference.dims())?;
    flow.check_matches("flow", target.dims())?;
    let (w, h) = target.dims();
    Ok(energy(
        &scaled_gray(target),
        &scaled_gray(reference),
        w,
        h,
        flow.u(),
        flow.v(),
        lambda,
    ))
}

fn energy(i0: &[f32], i1: &[f32], w: usize, h: usize, u1: &[f32], u2: &[f32], lambda: f32) -> f64 {
    let (warped, valid) = warp_plane(i1, w, h, u1, u2);
    let mut tv = 0.0f64;
    let mut data = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let (ax, ay) = forward_diff(u1, w, h, x, y);
            let (bx, by) = forward_diff(u2, w, h, x, y);
            tv += ((ax * ax + ay * ay) as f64).sqrt() + ((bx * bx + by * by) as f64).sqrt();
            let i = y * w + x;
            if valid[i] {
                data += (warped[i] - i0[i]).abs() as f64;
            }
        }
    }
    tv + lambda as f64 * data
}

#[allow(clippy::too_many_arguments)]
fn solve_level(
    i0: &[f32],
    i1: &[f32],
    w: usize,
    h: usize,
    u1: &mut [f32],
    u2: &mut [f32],
    params: &FlowParams,
    trace: bool,
) -> Vec<f64> {
    let n = w * h;
    let lt = params.lambda * params.theta;
    let step = params.tau / params.theta;
    let theta = params.theta;
    let mut p11 = vec![0f32; n];
    let mut p12 = vec![0f32; n];
    let mut p21 = vec![0f32; n];
    let mut p22 = vec![0f32; n];
    let mut v1 = vec![0f32; n];
    let mut v2 = vec![0f32; n];
    let mut energies = Vec::new();
    let mut current = energy(i0, i1, w, h, u1, u2, params.lambda);
    if trace {
        energies.push(current);
    }

    for _ in 0..params.warps {
        let start1 = u1.to_vec();
        let start2 = u2.to_vec();
        let (warped, valid) = warp_plane(i1, w, h, u1, u2);
        let (gx, gy) = central_gradient(&warped, w, h);
        let grad2: Vec<f32> = gx.iter().zip(&gy).map(|(a, b)| a * a + b * b).collect();
        let rho_c: Vec<f32> = (0..n)
            .map(|i| warped[i] - gx[i] * u1[i] - gy[i] * u2[i] - i0[i])
            .collect();

        for _ in 0..params.inner_iterations {
            // thresholding of the data term
            v1.par_iter_mut()
                .zip(v2.par_iter_mut())
                .enumerate()
                .for_each(|(i, (a, b))| {
                    let (cu, cv) = (u1[i], u2[i]);
                    if !valid[i] {
                        *a = cu;
                        *b = cv;
                        return;
                    }
                    let g2 = grad2[i];
                    let rho = rho_c[i] + gx[i] * cu + gy[i] * cv;
                    let (d1, d2) = if rho < -lt * g2 {
                        (lt * gx[i], lt * gy[i])
                    } else if rho > lt * g2 {
                        (-lt * gx[i], -lt * gy[i])
                    } else if g2 > GRAD_EPS {
                        let f = -rho / g2;
                        (f * gx[i], f * gy[i])
                    } else {
                        (0.0, 0.0)
                    };
                    *a = cu + d1;
                    *b = cv + d2;
                });

            // primal update
            u1.par_chunks_mut(w)
                .zip(u2.par_chunks_mut(w))
                .enumerate()
                .for_each(|(y, (r1, r2))| {
                    for x in 0..w {
                        let i = y * w + x;
                        r1[x] = v1[i] + theta * divergence(&p11, &p12, w, h, x, y);
                        r2[x] = v2[i] + theta * divergence(&p21, &p22, w, h, x, y);
                    }
                });

            // dual update
            let (u1r, u2r) = (&*u1, &*u2);
            p11.par_chunks_mut(w)
                .zip(p12.par_chunks_mut(w))
                .zip(p21.par_chunks_mut(w).zip(p22.par_chunks_mut(w)))
                .enumerate()
                .for_each(|(y, ((a1, a2), (b1, b2)))| {
                    for x in 0..w {
                        let (ux, uy) = forward_diff(u1r, w, h, x, y);
                        let (vx, vy) = forward_diff(u2r, w, h, x, y);
                        let nu = 1.0 + step * (ux * ux + uy * uy).sqrt();
                        let nv = 1.0 + step * (vx * vx + vy * vy).sqrt();
                        a1[x] = (a1[x] + step * ux) / nu;
                        a2[x] = (a2[x] + step * uy) / nu;
                        b1[x] = (b1[x] + step * vx) / nv;
                        b2[x] = (b2[x] + step * vy) / nv;
                    }
                });
        }
        current = backtrack(
            i0,
            i1,
            w,
            h,
            u1,
            u2,
            &start1,
            &start2,
            current,
            params.lambda,
        );
        if trace {
            energies.push(current);
        }
    }
    energies
}

/// Keeps the energy non-increasing across warps: if the new flow is worse than the flow the
/// warp started from, halve the step toward it a few times and fall back to the start flow.
#[allow(clippy::too_many_arguments)]
fn backtrack(
    i0: &[f32],
    i1: &[f32],
    w: usize,
    h: usize,
    u1: &mut [f32],
    u2: &mut [f32],
    start1: &[f32],
    start2: &[f32],
    start_energy: f64,
    lambda: f32,
) -> f64 {
    let e = energy(i0, i1, w, h, u1, u2, lambda);
    if e <= start_energy {
        return e;
    }
    let end1 = u1.to_vec();
    let end2 = u2.to_vec();
    let mut t = 0.5f32;
    for _ in 0..BACKTRACK_STEPS {
        for i in 0..u1.len() {
            u1[i] = start1[i] + t * (end1[i] - start1[i]);
            u2[i] = start2[i] + t * (end2[i] - start2[i]);
        }
        let e = energy(i0, i1, w, h, u1, u2, lambda);
        if e <= start_energy {
            return e;
        }
        t *= 0.5;
    }
    u1.copy_from_slice(start1);
    u2.copy_from_slice(start2);
    start_energy
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: usize, h: usize) -> Frame {
        Frame::from_fn(w, h, |x, y| {
            let (x, y) = (x as f32, y as f32);
            0.5 + 0.2 * (0.31 * x).sin() * (0.23 * y).cos() + 0.15 * (0.17 * x + 0.29 * y).sin()
        })
        .unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(FlowParams::default().validate().is_ok());
        for bad in [
            FlowParams {
                lambda: 0.0,
                ..Default::default()
            },
            FlowParams {
                tau: 0.3,
                ..Default::default()
            },
            FlowParams {
                warps: 0,
                ..Default::default()
            },
            FlowParams {
                zoom: 1.0,
                ..Default::default()
            },
            FlowParams {
                median_radius: 3,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn pyramid_shapes() {
        let f = texture(64, 64);
        let one = gaussian_pyramid(&f, 1, 0.5).unwrap();
        assert_eq!(one, vec![f.clone()]);
        let sizes: Vec<_> = gaussian_pyramid(&f, 3, 0.5)
            .unwrap()
            .iter()
            .map(|l| l.dims())
            .collect();
        assert_eq!(sizes, vec![(64, 64), (32, 32), (16, 16)]);
        // truncated at 8x8
        assert_eq!(gaussian_pyramid(&f, 10, 0.5).unwrap().len(), 4);
        assert!(gaussian_pyramid(&texture(7, 20), 2, 0.5).is_err());
    }

    #[test]
    fn pyramid_keeps_constants() {
        let f = Frame::filled(40, 30, 1, 0.37).unwrap();
        for level in gaussian_pyramid(&f, 4, 0.5).unwrap() {
            assert!(level.data().iter().all(|v| (v - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn identical_frames_give_near_zero_flow() {
        let f = texture(48, 40);
        let flow = estimate_flow(&f, &f, &FlowParams::default()).unwrap();
        assert!(flow.mean_magnitude() < 0.05);
    }

    #[test]
    fn energy_never_increases_across_warps() {
        let a = texture(64, 64);
        let b = a.translate(2, -1);
        let rot = Frame::from_fn(64, 64, |x, y| {
            a.sample_channel(
                x as f32 * 0.999 + y as f32 * 0.02,
                y as f32 - x as f32 * 0.02,
                0,
            )
        })
        .unwrap();
        for (t, r) in [(&b, &a), (&rot, &a), (&a, &b)] {
            let (_, traces) = estimate_flow_traced(t, r, &FlowParams::default()).unwrap();
            assert!(!traces.is_empty());
            for level in &traces {
                assert_eq!(level.energies.len(), FlowParams::default().warps + 1);
                for pair in level.energies.windows(2) {
                    assert!(
                        pair[1] <= pair[0] + 1e-6,
                        "{}x{}: {:?}",
                        level.width,
                        level.height,
                        level.energies
                    );
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let err = estimate_flow(&texture(20, 20), &texture(21, 20), &FlowParams::default());
        assert!(err.is_err());
    }
}
