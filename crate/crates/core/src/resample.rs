//! Separable bicubic resampling and the synthetic low-resolution degradation.

use crate::error::{Error, Result};
use crate::image::ImageF;

/// Cubic convolution constant (Catmull-Rom family).
pub const DEFAULT_CUBIC_A: f64 = -0.5;

/// Keys cubic kernel.
pub fn cubic(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Per-output-sample taps `(source index, weight)` along one axis. Pixel
/// centres are aligned (half-pixel convention); when shrinking, the kernel is
/// stretched by the scale factor so it low-passes. Out-of-range taps are
/// clamped to the edge and weights are normalised to sum to one.
pub fn axis_taps(src: usize, dst: usize, a: f64) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    let support = scale.max(1.0);
    (0..dst)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let lo = (center - 2.0 * support).floor() as isize;
            let hi = (center + 2.0 * support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity((hi - lo + 1) as usize);
            let mut total = 0.0;
            for i in lo..=hi {
                let w = cubic((i as f64 - center) / support, a);
                if w == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, src as isize - 1) as usize;
                total += w;
                match taps.iter_mut().find(|t| t.0 == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Bicubic resize to an arbitrary size. Values are not clamped.
pub fn resize_bicubic(img: &ImageF, out_h: usize, out_w: usize, a: f64) -> ImageF {
    let (h, w) = img.dims();
    let tx = axis_taps(w, out_w, a);
    let ty = axis_taps(h, out_h, a);
    let src = img.data();
    let mut rows = vec![0f64; h * out_w * 3];
    for y in 0..h {
        for (ox, taps) in tx.iter().enumerate() {
            for c in 0..3 {
                let mut acc = 0.0;
                for &(ix, wt) in taps {
                    acc += wt * src[(y * w + ix) * 3 + c] as f64;
                }
                rows[(y * out_w + ox) * 3 + c] = acc;
            }
        }
    }
    ImageF::from_fn(out_h, out_w, |oy, ox, c| {
        ty[oy].iter().map(|&(iy, wt)| wt * rows[(iy * out_w + ox) * 3 + c]).sum::<f64>() as f32
    })
}

/// Bicubic down- then up-sampling by `factor`, clamped to `[0, 1]`.
pub fn degrade(hr: &ImageF, factor: usize) -> Result<ImageF> {
    degrade_with(hr, factor, DEFAULT_CUBIC_A)
}

pub fn degrade_with(hr: &ImageF, factor: usize, a: f64) -> Result<ImageF> {
    let (h, w) = hr.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!(
            "degrade: {h}x{w} is not divisible by factor {factor}"
        )));
    }
    let small = resize_bicubic(hr, h / factor, w / factor, a);
    Ok(resize_bicubic(&small, h, w, a).clamped())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_interpolates() {
        assert_eq!(cubic(0.0, -0.5), 1.0);
        assert_eq!(cubic(1.0, -0.5), 0.0);
        assert_eq!(cubic(2.0, -0.5), 0.0);
        let s: f64 = [-1.25, -0.25, 0.75, 1.75].iter().map(|&x| cubic(x, -0.5)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_is_fixed_point() {
        let img = ImageF::filled(64, 64, 0.5);
        let out = degrade(&img, 4).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() <= 1e-6));
    }

    #[test]
    fn rejects_indivisible() {
        let err = degrade(&ImageF::filled(63, 63, 0.1), 4).unwrap_err();
        assert!(err.to_string().contains("not divisible"));
    }

    #[test]
    fn identity_size_is_identity() {
        let img = ImageF::from_fn(5, 6, |y, x, c| ((y + 2 * x + c) % 5) as f32 / 4.0);
        let out = resize_bicubic(&img, 5, 6, -0.5);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
