//! PSNR and SSIM for 8-bit grayscale images.

use crate::error::{Error, Result};
use crate::image::Image;

pub const PEAK: f64 = 255.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * PEAK) * (0.01 * PEAK);
const SSIM_C2: f64 = (0.03 * PEAK) * (0.03 * PEAK);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mse: f64,
}

impl QualityReport {
    /// Scores `estimate` against `reference` after clamping both to `[0, 255]`.
    pub fn evaluate(estimate: &Image, reference: &Image) -> Result<Self> {
        let (a, b) = (estimate.clamped(), reference.clamped());
        Ok(Self {
            psnr_db: psnr(&a, &b)?,
            ssim: ssim(&a, &b)?,
            mse: mse(&a, &b)?,
        })
    }

    /// Same as [`evaluate`](Self::evaluate) on the 8-bit quantized estimate.
    pub fn evaluate_quantized(estimate: &Image, reference: &Image) -> Result<Self> {
        Self::evaluate(&estimate.quantized(), reference)
    }
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / e).log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - center;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian filter keeping only fully covered positions.
fn filter_valid(data: &[f64], rows: usize, cols: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let out_cols = cols - SSIM_WINDOW + 1;
    let out_rows = rows - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; rows * out_cols];
    for r in 0..rows {
        for c in 0..out_cols {
            horiz[r * out_cols + c] = (0..SSIM_WINDOW)
                .map(|i| k[i] * data[r * cols + c + i])
                .sum();
        }
    }
    let mut out = vec![0.0; out_rows * out_cols];
    for r in 0..out_rows {
        for c in 0..out_cols {
            out[r * out_cols + c] = (0..SSIM_WINDOW)
                .map(|i| k[i] * horiz[(r + i) * out_cols + c])
                .sum();
        }
    }
    out
}

/// Mean structural similarity over all 11×11 Gaussian windows (σ = 1.5)
/// that fit inside the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let (rows, cols) = (a.rows(), a.cols());
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::TooSmallForSsim { rows, cols });
    }
    let k = gaussian_kernel();
    let (x, y) = (a.pixels(), b.pixels());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();

    let mu_x = filter_valid(x, rows, cols, &k);
    let mu_y = filter_valid(y, rows, cols, &k);
    let e_xx = filter_valid(&xx, rows, cols, &k);
    let e_yy = filter_valid(&yy, rows, cols, &k);
    let e_xy = filter_valid(&xy, rows, cols, &k);

    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cxy = e_xy[i] - mx * my;
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}
