//! Image similarity metrics.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::Square;

/// PSNR value reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    /// Set when the images were identical and `db` holds the cap.
    pub capped: bool,
}

fn check_shapes(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(alloc::format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

pub fn mse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_shapes(a, b)?;
    let (a, b) = (a.to_unit_range(), b.to_unit_range());
    let sum: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (f64::from(x) - f64::from(y)).sq()).sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio on `[0, 1]` images (`MAX = 1`).
pub fn psnr(a: &ImageGrid, b: &ImageGrid) -> Result<Psnr> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(Psnr { db: PSNR_CAP_DB, capped: true });
    }
    let db = -10.0 * libm::log10(mse);
    Ok(if db >= PSNR_CAP_DB { Psnr { db: PSNR_CAP_DB, capped: true } } else { Psnr { db, capped: false } })
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| libm::exp(-((i as f64 - c).sq()) / (2.0 * sigma * sigma))).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-region filtering of a single `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = alloc::vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..n).map(|i| k[i] * plane[r * w + c + i]).sum();
        }
    }
    let mut out = alloc::vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5), `K1 = 0.01`,
/// `K2 = 0.03`, `L = 1`, averaged over the valid region and channels.
///
/// Images smaller than the window use the largest odd window that fits.
pub fn ssim(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_shapes(a, b)?;
    let (a, b) = (a.to_unit_range(), b.to_unit_range());
    let (h, w, ch) = (a.height(), a.width(), a.channels());
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_window(size, SSIM_SIGMA);
    let (c1, c2) = ((SSIM_K1).sq(), (SSIM_K2).sq());
    let mut total = 0.0;
    for c in 0..ch {
        let x: Vec<f64> = (0..h * w).map(|i| f64::from(a.data()[i * ch + c])).collect();
        let y: Vec<f64> = (0..h * w).map(|i| f64::from(b.data()[i * ch + c])).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter_valid(&x, h, w, &k);
        let (my, _, _) = filter_valid(&y, h, w, &k);
        let (sxx, _, _) = filter_valid(&xx, h, w, &k);
        let (syy, _, _) = filter_valid(&yy, h, w, &k);
        let (sxy, _, _) = filter_valid(&xy, h, w, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / ch as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_image(seed: u64, h: usize, w: usize, c: usize, hi: f32) -> ImageGrid {
        let mut r = rng::stream(seed, 0, 0);
        ImageGrid::new(h, w, c, (0..h * w * c).map(|_| r.random::<f32>() * hi).collect()).unwrap()
    }

    #[test]
    fn identical_images() {
        let a = random_image(1, 32, 32, 3, 1.0);
        assert_eq!(psnr(&a, &a).unwrap(), Psnr { db: PSNR_CAP_DB, capped: true });
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_offset_gives_20_db() {
        let a = random_image(2, 32, 32, 3, 0.9);
        let b = ImageGrid::new(32, 32, 3, a.data().iter().map(|v| v + 0.1).collect()).unwrap();
        let p = psnr(&a, &b).unwrap();
        assert!(!p.capped);
        assert!((p.db - 20.0).abs() < 1e-4, "{}", p.db);
    }

    #[test]
    fn checkerboard_vs_inverse() {
        let n = 32;
        let board: Vec<f32> = (0..n * n).map(|i| ((i / n + i % n) % 2) as f32).collect();
        let inv: Vec<f32> = board.iter().map(|v| 1.0 - v).collect();
        let a = ImageGrid::new(n, n, 1, board).unwrap();
        let b = ImageGrid::new(n, n, 1, inv).unwrap();
        assert!(ssim(&a, &b).unwrap() < 0.1);
    }

    #[test]
    fn ssim_matches_direct_window_sum() {
        // Direct evaluation at each valid window position, no separable filtering.
        let a = random_image(3, 14, 13, 1, 1.0);
        let b = random_image(4, 14, 13, 1, 1.0);
        let k = gaussian_window(11, 1.5);
        let (c1, c2) = (1e-4, 9e-4);
        let mut acc = 0.0;
        let mut count = 0;
        for r in 0..4 {
            for c in 0..3 {
                let (mut ux, mut uy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = k[i] * k[j];
                        let x = f64::from(a.data()[(r + i) * 13 + c + j]);
                        let y = f64::from(b.data()[(r + i) * 13 + c + j]);
                        ux += wgt * x;
                        uy += wgt * y;
                        sxx += wgt * x * x;
                        syy += wgt * y * y;
                        sxy += wgt * x * y;
                    }
                }
                let (vx, vy, cov) = (sxx - ux * ux, syy - uy * uy, sxy - ux * uy);
                acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        assert!((ssim(&a, &b).unwrap() - acc / count as f64).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let a = random_image(1, 8, 8, 1, 1.0);
        let b = random_image(1, 8, 9, 1, 1.0);
        assert!(matches!(psnr(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(ssim(&a, &b), Err(Error::Shape(_))));
    }
}
