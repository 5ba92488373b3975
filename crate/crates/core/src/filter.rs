//! Plane filters shared by the pyramid, texture generator and SSIM.
//!
//! Planes are single-channel row-major `f32` buffers; borders replicate the edge pixel.

/// Normalized 1-D Gaussian kernel of radius `ceil(3σ)` (at least 1).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = ((3.0 * sigma).ceil() as usize).max(1);
    gaussian_kernel_with_radius(sigma, radius)
}

pub fn gaussian_kernel_with_radius(sigma: f64, radius: usize) -> Vec<f64> {
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable convolution with replicated borders. The output has the input's size.
pub fn convolve_separable(plane: &[f32], width: usize, height: usize, kernel: &[f64]) -> Vec<f32> {
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (width as i64, height as i64);
    let mut tmp = vec![0f32; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..w {
            let mut acc = 0.0f64;
            for (i, &kv) in kernel.iter().enumerate() {
                let sx = (x + i as i64 - r).clamp(0, w - 1) as usize;
                acc += kv * row[sx] as f64;
            }
            tmp[y * width + x as usize] = acc as f32;
        }
    }
    let mut out = vec![0f32; plane.len()];
    for y in 0..h {
        for x in 0..width {
            let mut acc = 0.0f64;
            for (i, &kv) in kernel.iter().enumerate() {
                let sy = (y + i as i64 - r).clamp(0, h - 1) as usize;
                acc += kv * tmp[sy * width + x] as f64;
            }
            out[y as usize * width + x] = acc as f32;
        }
    }
    out
}

pub fn gaussian_blur(plane: &[f32], width: usize, height: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    convolve_separable(plane, width, height, &gaussian_kernel(sigma))
}

/// Square median filter of the given radius; radius 0 is the identity.
pub fn median_filter(plane: &[f32], width: usize, height: usize, radius: usize) -> Vec<f32> {
    if radius == 0 {
        return plane.to_vec();
    }
    let r = radius as i64;
    let (w, h) = (width as i64, height as i64);
    let mut out = vec![0f32; plane.len()];
    let mut window = Vec::with_capacity((2 * radius + 1).pow(2));
    for y in 0..h {
        for x in 0..w {
            window.clear();
            for dy in -r..=r {
                let sy = (y + dy).clamp(0, h - 1) as usize;
                for dx in -r..=r {
                    let sx = (x + dx).clamp(0, w - 1) as usize;
                    window.push(plane[sy * width + sx]);
                }
            }
            window.sort_by(f32::total_cmp);
            out[(y * w + x) as usize] = window[window.len() / 2];
        }
    }
    out
}

/// Bilinear resampling of a plane to `new_w`×`new_h`, mapping pixel centers by the size ratio.
pub fn resize_bilinear(
    plane: &[f32],
    width: usize,
    height: usize,
    new_w: usize,
    new_h: usize,
) -> Vec<f32> {
    let sx = width as f32 / new_w as f32;
    let sy = height as f32 / new_h as f32;
    let mut out = Vec::with_capacity(new_w * new_h);
    for y in 0..new_h {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (height - 1) as f32);
        for x in 0..new_w {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (width - 1) as f32);
            out.push(sample_plane(plane, width, height, fx, fy));
        }
    }
    out
}

/// Bilinear sample of a plane with coordinates clamped to the image.
#[inline]
pub fn sample_plane(plane: &[f32], width: usize, height: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (width - 1) as f32);
    let y = y.clamp(0.0, (height - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let top = (1.0 - fx) * plane[y0 * width + x0] + fx * plane[y0 * width + x1];
    let bottom = (1.0 - fx) * plane[y1 * width + x0] + fx * plane[y1 * width + x1];
    (1.0 - fy) * top + fy * bottom
}
