//! Non-local means reference denoiser.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::patch::reflect;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlmConfig {
    /// Comparison patch side (odd).
    pub patch: usize,
    /// Search window side (odd).
    pub window: usize,
    /// Filtering bandwidth in intensity units.
    pub h: f64,
}

impl NlmConfig {
    /// Bandwidth relative to the noise level used by [`NlmConfig::for_sigma`].
    pub const H_PER_SIGMA: f64 = 0.8;

    /// 7×7 patches, 21×21 window, `h = 0.8·σ`.
    pub fn for_sigma(sigma: f64) -> Self {
        Self {
            patch: 7,
            window: 21,
            h: Self::H_PER_SIGMA * sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch.is_multiple_of(2) || self.window.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "NL-means patch ({}) and window ({}) must be odd",
                self.patch, self.window
            )));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "NL-means bandwidth must be positive, got {}",
                self.h
            )));
        }
        Ok(())
    }
}

/// Replaces each pixel by a weighted mean over its search window, with
/// weights `exp(-d² / h²)` where `d²` is the mean squared difference between
/// the two reflect-padded patches.
pub fn nlmeans(noisy: &Image, cfg: &NlmConfig) -> Result<Image> {
    cfg.validate()?;
    let (rows, cols) = (noisy.rows(), noisy.cols());
    let ph = (cfg.patch / 2) as isize;
    let wh = (cfg.window / 2) as isize;
    if ph as usize >= rows.min(cols) {
        return Err(Error::InvalidConfig(format!(
            "NL-means patch {} too large for a {rows}x{cols} image",
            cfg.patch
        )));
    }

    // reflect-padded copy of the input
    let pr = rows + 2 * ph as usize;
    let pc = cols + 2 * ph as usize;
    let mut padded = vec![0.0; pr * pc];
    for r in 0..pr {
        for c in 0..pc {
            padded[r * pc + c] = noisy.get(
                reflect(r as isize - ph, rows),
                reflect(c as isize - ph, cols),
            );
        }
    }
    let area = (cfg.patch * cfg.patch) as f64;
    let inv_h2 = 1.0 / (cfg.h * cfg.h);
    let patch_d2 = |(r1, c1): (usize, usize), (r2, c2): (usize, usize)| -> f64 {
        let mut acc = 0.0;
        for dr in 0..cfg.patch {
            let a = &padded[(r1 + dr) * pc + c1..(r1 + dr) * pc + c1 + cfg.patch];
            let b = &padded[(r2 + dr) * pc + c2..(r2 + dr) * pc + c2 + cfg.patch];
            acc += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        acc / area
    };

    let pixels: Vec<f64> = (0..rows * cols)
        .into_par_iter()
        .map(|k| {
            let (r, c) = ((k / cols) as isize, (k % cols) as isize);
            let mut num = 0.0;
            let mut den = 0.0;
            for sr in (r - wh).max(0)..=(r + wh).min(rows as isize - 1) {
                for sc in (c - wh).max(0)..=(c + wh).min(cols as isize - 1) {
                    let d2 = patch_d2((r as usize, c as usize), (sr as usize, sc as usize));
                    let w = (-d2 * inv_h2).exp();
                    num += w * noisy.get(sr as usize, sc as usize);
                    den += w;
                }
            }
            num / den
        })
        .collect();
    Image::new(rows, cols, pixels)
}
