//! Backward warping and masked mean squared error.

use rayon::prelude::*;

use crate::error::{check_dims, Error, Result};
use crate::frame::{FlowField, Frame, Mask};

/// True when `(x, y)` lies inside `[0, w-1] × [0, h-1]`.
#[inline]
pub(crate) fn in_bounds(x: f32, y: f32, width: usize, height: usize) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (width - 1) as f32 && y <= (height - 1) as f32
}

/// Resamples `reference` at `(x + u, y + v)` for every pixel of the flow grid.
///
/// Values outside the image are clamped; the returned mask is false wherever the
/// un-clamped sample position fell outside the reference.
pub fn backward_warp(reference: &Frame, flow: &FlowField) -> Result<(Frame, Mask)> {
    flow.check_matches("flow", reference.dims())?;
    let (w, h, c) = (reference.width(), reference.height(), reference.channels());
    let mut data = vec![0f32; w * h * c];
    let mut valid = vec![false; w * h];
    data.par_chunks_mut(w * c)
        .zip(valid.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, vrow))| {
            for x in 0..w {
                let (u, v) = flow.at(x, y);
                let sx = x as f32 + u;
                let sy = y as f32 + v;
                vrow[x] = in_bounds(sx, sy, w, h);
                for ch in 0..c {
                    row[x * c + ch] = reference.sample_channel(sx, sy, ch);
                }
            }
        });
    Ok((Frame::from_raw(w, h, c, data), Mask::new(w, h, valid)?))
}

/// Mean squared error over all channels of the pixels marked valid.
pub fn masked_mse(a: &Frame, b: &Frame, mask: &Mask) -> Result<f64> {
    check_dims("second frame", a.dims(), b.dims())?;
    check_dims("mask", a.dims(), mask.dims())?;
    if a.channels() != b.channels() {
        return Err(Error::Parameter(format!(
            "channel mismatch: {} vs {}",
            a.channels(),
            b.channels()
        )));
    }
    let c = a.channels();
    let w = a.width();
    let row_sums: Vec<(f64, usize)> = (0..a.height())
        .into_par_iter()
        .map(|y| {
            let mut sum = 0.0f64;
            let mut n = 0usize;
            for x in 0..w {
                if !mask.is_valid(x, y) {
                    continue;
                }
                let base = (y * w + x) * c;
                for i in base..base + c {
                    let d = a.data()[i] as f64 - b.data()[i] as f64;
                    sum += d * d;
                }
                n += c;
            }
            (sum, n)
        })
        .collect();
    let (sum, n) = row_sums
        .iter()
        .fold((0.0, 0), |(s, k), &(rs, rn)| (s + rs, k + rn));
    if n == 0 {
        return Err(Error::Degenerate("mask has no valid pixels".into()));
    }
    Ok(sum / n as f64)
}

/// Full-frame mean squared error.
pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    masked_mse(a, b, &Mask::full(a.width(), a.height()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(values: &[f32]) -> Frame {
        Frame::new(values.len(), 1, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn zero_flow_is_identity() {
        let f = Frame::from_fn(7, 5, |x, y| ((x * 3 + y * 5) % 11) as f32 / 10.0).unwrap();
        let (out, mask) = backward_warp(&f, &FlowField::zeros(7, 5)).unwrap();
        assert_eq!(out, f);
        assert!(mask.all_valid());
    }

    #[test]
    fn integer_shift_clamps_and_flags() {
        let f = row(&[10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
        let (out, mask) = backward_warp(&f, &FlowField::constant(3, 1, 1.0, 0.0)).unwrap();
        assert_eq!(out.data(), &[20.0 / 255.0, 30.0 / 255.0, 30.0 / 255.0]);
        assert_eq!(mask.values(), &[true, true, false]);
    }

    #[test]
    fn half_pixel_shift_interpolates() {
        let f = row(&[0.0, 100.0 / 255.0]);
        let flow = FlowField::new(2, 1, vec![0.5, 0.0], vec![0.0, 0.0]).unwrap();
        let (out, _) = backward_warp(&f, &flow).unwrap();
        assert!((out.get(0, 0, 0) - 50.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let f = row(&[0.0, 1.0]);
        let err = backward_warp(&f, &FlowField::zeros(3, 1)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn mse_cases() {
        let f = Frame::from_fn(4, 4, |x, y| (x + y) as f32 / 8.0).unwrap();
        assert_eq!(mse(&f, &f).unwrap(), 0.0);

        let zero = Frame::filled(4, 4, 1, 0.0).unwrap();
        let tenth = Frame::filled(4, 4, 1, 0.1).unwrap();
        assert!((mse(&zero, &tenth).unwrap() - 0.01).abs() < 1e-8);

        let mut b = zero.data().to_vec();
        b[5] = 0.2;
        let b = Frame::new(4, 4, 1, b).unwrap();
        let mut valid = vec![false; 16];
        valid[5] = true;
        let mask = Mask::new(4, 4, valid).unwrap();
        assert!((masked_mse(&zero, &b, &mask).unwrap() - 0.04).abs() < 1e-8);

        let empty = Mask::new(4, 4, vec![false; 16]).unwrap();
        assert!(matches!(
            masked_mse(&zero, &b, &empty),
            Err(Error::Degenerate(_))
        ));
    }

    proptest! {
        #[test]
        fn constant_frame_survives_any_flow(
            c in 0.0f32..=1.0,
            flow in prop::collection::vec(-10.0f32..10.0, 2 * 6 * 4),
        ) {
            let f = Frame::filled(6, 4, 1, c).unwrap();
            let flow = FlowField::new(6, 4, flow[..24].to_vec(), flow[24..].to_vec()).unwrap();
            let (out, _) = backward_warp(&f, &flow).unwrap();
            for &v in out.data() {
                prop_assert!((v - c).abs() < 1e-6);
            }
        }

        #[test]
        fn integer_flow_is_translation_on_interior(
            data in prop::collection::vec(0.0f32..=1.0, 12 * 10),
            dx in -3i64..=3,
            dy in -3i64..=3,
        ) {
            let f = Frame::new(12, 10, 1, data).unwrap();
            let (out, _) = backward_warp(&f, &FlowField::constant(12, 10, dx as f32, dy as f32)).unwrap();
            // warping by +d reads from x + d, i.e. a translation by -d
            let t = f.translate(-dx, -dy);
            for y in 3..7 {
                for x in 3..9 {
                    prop_assert_eq!(out.get(x, y, 0), t.get(x, y, 0));
                }
            }
        }
    }
}
