//! Image quality and flow accuracy metrics.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{check_dims, param, Error, Result};
use crate::filter::gaussian_kernel_with_radius;
use crate::frame::{FlowField, Frame, Mask};
use crate::warp::mse;

/// PSNR reported for (near-)identical images.
pub const PSNR_CAP: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;
/// Smallest overlap, per side, an aligned comparison accepts.
pub const MIN_OVERLAP: usize = 16;
pub const DEFAULT_ALIGN_RADIUS: usize = 10;

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// PSNR on the `[0, 1]` scale for a given MSE, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// PSNR over all channels jointly.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows (σ = 1.5). Color frames are
/// compared in luma.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_dims("second frame", a.dims(), b.dims())?;
    let side = 2 * SSIM_RADIUS + 1;
    if a.width() < side || a.height() < side {
        return Err(param(format!(
            "SSIM needs frames of at least {side}x{side}, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    let ga = a.to_grayscale();
    let gb = b.to_grayscale();
    let (w, h) = a.dims();
    let x: Vec<f64> = ga.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = gb.data().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let kernel = gaussian_kernel_with_radius(SSIM_SIGMA, SSIM_RADIUS);
    let mu_x = filter_valid(&x, w, h, &kernel);
    let mu_y = filter_valid(&y, w, h, &kernel);
    let e_xx = filter_valid(&xx, w, h, &kernel);
    let e_yy = filter_valid(&yy, w, h, &kernel);
    let e_xy = filter_valid(&xy, w, h, &kernel);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut sum = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let s =
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        sum += s;
    }
    Ok((sum / mu_x.len() as f64).clamp(-1.0, 1.0))
}

/// Separable correlation keeping only fully contained windows.
fn filter_valid(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * plane[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Psnr,
    Ssim,
}

/// Best score over global integer translations and the offset achieving it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aligned {
    pub score: f64,
    pub dx: i64,
    pub dy: i64,
}

/// Compares `a(x, y)` with `b(x + dx, y + dy)` on their overlap for every offset in
/// `[-radius, radius]²` and keeps the best score.
///
/// Ties prefer the offset closest to the origin, then the lexicographically smallest
/// `(dx, dy)`. Offsets whose overlap is smaller than 16×16 are skipped.
pub fn aligned_metric(a: &Frame, b: &Frame, radius: usize, which: Metric) -> Result<Aligned> {
    check_dims("second frame", a.dims(), b.dims())?;
    if a.channels() != b.channels() {
        return Err(param("channel mismatch"));
    }
    let r = radius as i64;
    let (w, h) = (a.width() as i64, a.height() as i64);
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| {
            w - dx.abs() >= MIN_OVERLAP as i64 && h - dy.abs() >= MIN_OVERLAP as i64
        })
        .collect();
    if offsets.is_empty() {
        return Err(Error::Degenerate(format!(
            "no offset within radius {radius} leaves a {MIN_OVERLAP}x{MIN_OVERLAP} overlap"
        )));
    }
    let scores: Vec<f64> = offsets
        .par_iter()
        .map(|&(dx, dy)| metric_at(a, b, dx, dy, which))
        .collect::<Result<Vec<_>>>()?;
    let mut best = Aligned {
        score: scores[0],
        dx: offsets[0].0,
        dy: offsets[0].1,
    };
    for (&(dx, dy), &score) in offsets.iter().zip(&scores).skip(1) {
        let key = |dx: i64, dy: i64| (dx * dx + dy * dy, dx, dy);
        if score > best.score || (score == best.score && key(dx, dy) < key(best.dx, best.dy)) {
            best = Aligned { score, dx, dy };
        }
    }
    Ok(best)
}

/// Compares `a(x, y)` with `b(x + dx, y + dy)` on their overlap.
pub fn metric_at(a: &Frame, b: &Frame, dx: i64, dy: i64, which: Metric) -> Result<f64> {
    check_dims("second frame", a.dims(), b.dims())?;
    let (w, h) = (a.width() as i64, a.height() as i64);
    if w - dx.abs() < MIN_OVERLAP as i64 || h - dy.abs() < MIN_OVERLAP as i64 {
        return Err(Error::Degenerate(format!(
            "offset ({dx}, {dy}) leaves less than a {MIN_OVERLAP}x{MIN_OVERLAP} overlap"
        )));
    }
    let ow = (w - dx.abs()) as usize;
    let oh = (h - dy.abs()) as usize;
    let ca = a.crop((-dx).max(0) as usize, (-dy).max(0) as usize, ow, oh)?;
    let cb = b.crop(dx.max(0) as usize, dy.max(0) as usize, ow, oh)?;
    match which {
        Metric::Psnr => psnr(&ca, &cb),
        Metric::Ssim => ssim(&ca, &cb),
    }
}

/// Mean endpoint error over the pixels marked valid.
pub fn endpoint_error(flow: &FlowField, gt: &FlowField, mask: &Mask) -> Result<f64> {
    check_dims("ground-truth flow", flow.dims(), gt.dims())?;
    check_dims("mask", flow.dims(), mask.dims())?;
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for (i, &ok) in mask.values().iter().enumerate() {
        if ok {
            let du = (flow.u()[i] - gt.u()[i]) as f64;
            let dv = (flow.v()[i] - gt.v()[i]) as f64;
            sum += (du * du + dv * dv).sqrt();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate(
            "endpoint error over an empty mask".into(),
        ));
    }
    Ok(sum / n as f64)
}

/// Mask keeping the central `fraction` of the frame along each axis.
pub fn interior_mask(width: usize, height: usize, fraction: f64) -> Mask {
    let bx = ((1.0 - fraction) / 2.0 * width as f64).round() as usize;
    let by = ((1.0 - fraction) / 2.0 * height as f64).round() as usize;
    let valid = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| x >= bx && x + bx < width && y >= by && y + by < height)
        .collect();
    Mask::new(width, height, valid).expect("mask has frame size")
}

/// Quality of one estimated frame against its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub frame_index: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub aligned_psnr: f64,
    pub aligned_ssim: f64,
    /// Offset found by the aligned PSNR search; `aligned_ssim` is measured at this offset.
    pub dx: i64,
    pub dy: i64,
    pub epe: Option<f64>,
}

impl MetricReport {
    pub fn evaluate(
        frame_index: usize,
        estimate: &Frame,
        truth: &Frame,
        radius: usize,
    ) -> Result<Self> {
        let aligned_psnr = aligned_metric(estimate, truth, radius, Metric::Psnr)?;
        let aligned_ssim = metric_at(
            estimate,
            truth,
            aligned_psnr.dx,
            aligned_psnr.dy,
            Metric::Ssim,
        )?;
        Ok(MetricReport {
            frame_index,
            psnr: psnr(estimate, truth)?,
            ssim: ssim(estimate, truth)?,
            aligned_psnr: aligned_psnr.score,
            aligned_ssim,
            dx: aligned_psnr.dx,
            dy: aligned_psnr.dy,
            epe: None,
        })
    }
}

pub const REPORT_HEADER: [&str; 8] = [
    "frame_index",
    "psnr",
    "ssim",
    "aligned_psnr",
    "aligned_ssim",
    "dx",
    "dy",
    "epe",
];

/// Writes reports as CSV with the fixed [`REPORT_HEADER`]; a missing EPE is an empty field.
pub fn write_reports_csv<W: Write>(writer: W, reports: &[MetricReport]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(REPORT_HEADER)?;
    for r in reports {
        csv.write_record([
            r.frame_index.to_string(),
            format!("{:.6}", r.psnr),
            format!("{:.6}", r.ssim),
            format!("{:.6}", r.aligned_psnr),
            format!("{:.6}", r.aligned_ssim),
            r.dx.to_string(),
            r.dy.to_string(),
            r.epe.map(|e| format!("{e:.6}")).unwrap_or_default(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_texture;
    use proptest::prelude::*;

    #[test]
    fn psnr_closed_forms() {
        let f = gen_texture(1, 20, 20, 1.0).unwrap();
        assert_eq!(psnr(&f, &f).unwrap(), PSNR_CAP);
        let zero = Frame::filled(8, 8, 1, 0.0).unwrap();
        let ten = Frame::filled(8, 8, 1, 10.0 / 255.0).unwrap();
        assert!((psnr(&zero, &ten).unwrap() - 28.1308).abs() < 1e-3);
        let one = Frame::filled(8, 8, 1, 1.0).unwrap();
        assert!(psnr(&zero, &one).unwrap().abs() < 1e-12);
        assert!(psnr(&zero, &Frame::filled(8, 9, 1, 0.0).unwrap()).is_err());
    }

    #[test]
    fn ssim_cases() {
        let f = gen_texture(2, 32, 32, 1.0).unwrap();
        assert!((ssim(&f, &f).unwrap() - 1.0).abs() < 1e-9);

        let inverted = Frame::new(32, 32, 1, f.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&f, &inverted).unwrap() <= 1e-6);

        let c = 0.4f64;
        let a = Frame::filled(16, 16, 1, c as f32).unwrap();
        let b = Frame::filled(16, 16, 1, (c + 0.1) as f32).unwrap();
        let (m1, m2) = (a.get(0, 0, 0) as f64, b.get(0, 0, 0) as f64);
        let c1 = 0.0001;
        let expected = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);

        assert!(ssim(
            &Frame::filled(10, 30, 1, 0.0).unwrap(),
            &Frame::filled(10, 30, 1, 0.0).unwrap()
        )
        .is_err());
    }

    #[test]
    fn aligned_recovers_translation() {
        let f = gen_texture(3, 48, 40, 1.5).unwrap();
        let same = aligned_metric(&f, &f, 4, Metric::Psnr).unwrap();
        assert_eq!((same.score, same.dx, same.dy), (PSNR_CAP, 0, 0));

        let moved = f.translate(3, -2);
        let found = aligned_metric(&f, &moved, 5, Metric::Psnr).unwrap();
        assert_eq!((found.score, found.dx, found.dy), (PSNR_CAP, 3, -2));
        let found = aligned_metric(&f, &moved, 5, Metric::Ssim).unwrap();
        assert_eq!((found.dx, found.dy), (3, -2));
        assert!((found.score - 1.0).abs() < 1e-9);

        let g = gen_texture(4, 48, 40, 1.5).unwrap();
        let zero = aligned_metric(&f, &g, 0, Metric::Psnr).unwrap();
        assert_eq!(zero.score, psnr(&f, &g).unwrap());
        let tiny = Frame::filled(12, 12, 1, 0.5).unwrap();
        assert!(matches!(
            aligned_metric(&tiny, &tiny, 2, Metric::Psnr),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn epe_cases() {
        let gt = FlowField::from_fn(4, 2, |x, y| (x as f32, -(y as f32))).unwrap();
        let full = Mask::full(4, 2);
        assert_eq!(endpoint_error(&gt, &gt, &full).unwrap(), 0.0);
        let shifted = FlowField::from_fn(4, 2, |x, y| (x as f32 + 1.0, -(y as f32))).unwrap();
        assert!((endpoint_error(&shifted, &gt, &full).unwrap() - 1.0).abs() < 1e-12);
        let half = FlowField::from_fn(4, 2, |x, y| {
            (x as f32, -(y as f32) + if y == 0 { 2.0 } else { 0.0 })
        })
        .unwrap();
        assert!((endpoint_error(&half, &gt, &full).unwrap() - 1.0).abs() < 1e-12);
        let empty = Mask::new(4, 2, vec![false; 8]).unwrap();
        assert!(endpoint_error(&gt, &gt, &empty).is_err());
    }

    #[test]
    fn report_measures_ssim_at_psnr_offset() {
        let f = gen_texture(6, 40, 40, 1.5).unwrap();
        let r = MetricReport::evaluate(2, &f, &f.translate(-2, 1), 4).unwrap();
        assert_eq!((r.dx, r.dy, r.aligned_psnr), (-2, 1, PSNR_CAP));
        assert!((r.aligned_ssim - 1.0).abs() < 1e-9);
        assert!(r.psnr < r.aligned_psnr && r.ssim < r.aligned_ssim);
        assert!(matches!(
            metric_at(&f, &f, 30, 0, Metric::Psnr),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn report_csv_layout() {
        let f = gen_texture(5, 24, 24, 1.0).unwrap();
        let mut r = MetricReport::evaluate(0, &f, &f, 2).unwrap();
        r.epe = Some(0.5);
        let mut out = Vec::new();
        write_reports_csv(&mut out, &[r]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "frame_index,psnr,ssim,aligned_psnr,aligned_ssim,dx,dy,epe"
        );
        assert_eq!(
            lines.next().unwrap(),
            "0,99.000000,1.000000,99.000000,1.000000,0,0,0.500000"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn symmetric_bounded_and_monotone(seed_a in 0u64..500, seed_b in 0u64..500, noise in 0.0f32..0.3) {
            let a = gen_texture(seed_a, 24, 20, 1.0).unwrap();
            let other = gen_texture(seed_b, 24, 20, 1.0).unwrap();
            let b = Frame::new(24, 20, 1, a.data().iter().zip(other.data()).map(|(p, q)| p + noise * (q - 0.5)).collect()).unwrap();
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            let s_ab = ssim(&a, &b).unwrap();
            prop_assert!((s_ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s_ab));
            let mut last = f64::NEG_INFINITY;
            for r in 0..3 {
                let s = aligned_metric(&a, &b, r, Metric::Psnr).unwrap().score;
                prop_assert!(s >= last);
                last = s;
            }
        }
    }
}
