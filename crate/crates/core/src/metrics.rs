//! PSNR and SSIM on `[0, 1]` images.

use crate::config::MetricSpace;
use crate::error::{Error, Result};
use crate::image::ImageF;

/// Reported for identical images.
pub const PSNR_CAP: f64 = 100.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

pub fn mse(a: &ImageF, b: &ImageF) -> Result<f64> {
    a.same_dims(b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    Ok(sum / a.data().len() as f64)
}

fn psnr_from_mse(m: f64) -> f64 {
    if m <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(a: &ImageF, b: &ImageF) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// BT.601 luma in `[16/255, 235/255]`.
pub fn luma(img: &ImageF) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|p| (16.0 + 65.481 * p[0] as f64 + 128.553 * p[1] as f64 + 24.966 * p[2] as f64) / 255.0)
        .collect()
}

pub fn psnr_y(a: &ImageF, b: &ImageF) -> Result<f64> {
    a.same_dims(b)?;
    let (ya, yb) = (luma(a), luma(b));
    let m = ya.iter().zip(&yb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / ya.len() as f64;
    Ok(psnr_from_mse(m))
}

fn gaussian() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable valid-mode filtering of a `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of one plane over all valid window positions.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let k = gaussian();
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, &k);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, &k);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Per-channel SSIM averaged over RGB.
pub fn ssim(a: &ImageF, b: &ImageF) -> Result<f64> {
    a.same_dims(b)?;
    let (h, w) = a.dims();
    let mut sum = 0.0;
    for c in 0..3 {
        let pa: Vec<f64> = a.data().iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.data().iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        sum += ssim_plane(&pa, &pb, h, w)?;
    }
    Ok(sum / 3.0)
}

pub fn ssim_y(a: &ImageF, b: &ImageF) -> Result<f64> {
    a.same_dims(b)?;
    let (h, w) = a.dims();
    ssim_plane(&luma(a), &luma(b), h, w)
}

pub fn psnr_in(space: MetricSpace, a: &ImageF, b: &ImageF) -> Result<f64> {
    match space {
        MetricSpace::Rgb => psnr(a, b),
        MetricSpace::Y => psnr_y(a, b),
    }
}

pub fn ssim_in(space: MetricSpace, a: &ImageF, b: &ImageF) -> Result<f64> {
    match space {
        MetricSpace::Rgb => ssim(a, b),
        MetricSpace::Y => ssim_y(a, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(h: usize, w: usize, k: usize) -> ImageF {
        ImageF::from_fn(h, w, |y, x, c| ((y * 5 + x * 3 + c * 7 + k) % 17) as f32 / 16.0)
    }

    #[test]
    fn psnr_examples() {
        let a = ImageF::filled(8, 8, 128.0 / 255.0);
        let b = ImageF::filled(8, 8, 144.0 / 255.0);
        let expect = 20.0 * (255.0f64 / 16.0).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-4);
        assert!((psnr(&a, &b).unwrap() - 24.05).abs() < 0.01);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert_eq!(psnr(&ImageF::filled(4, 4, 0.0), &ImageF::filled(4, 4, 1.0)).unwrap(), 0.0);
        assert!(psnr(&a, &ImageF::filled(8, 9, 0.0)).is_err());
    }

    #[test]
    fn ssim_identity_and_small_input() {
        let a = pattern(16, 20, 0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&pattern(10, 20, 0), &pattern(10, 20, 0)).is_err());
    }

    #[test]
    fn ssim_of_inverted_binary_is_negative() {
        let a = ImageF::from_fn(16, 16, |y, x, _| ((y / 2 + x / 3) % 2) as f32);
        let inv = ImageF::from_fn(16, 16, |y, x, c| 1.0 - a.get(y, x, c));
        assert!(ssim(&a, &inv).unwrap() < 0.0);
    }

    #[test]
    fn luma_space_metrics() {
        let a = pattern(16, 16, 0);
        assert_eq!(psnr_y(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim_y(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let grey = ImageF::filled(2, 2, 1.0);
        assert!((luma(&grey)[0] - 235.0 / 255.0).abs() < 1e-9);
    }
}
