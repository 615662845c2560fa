//! Grayscale images, PGM (P2/P5) I/O and synthetic Gaussian noise.
//!
//! Pixels are kept as `f64` throughout the pipeline. Clamping to `[0, 255]`
//! and rounding only happen when an image is written to disk.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Row-major grayscale image with real-valued intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if pixels.len() != rows * cols {
            return Err(Error::InvalidImage(format!(
                "{} pixels supplied for a {rows}x{cols} image",
                pixels.len()
            )));
        }
        Ok(Self { rows, cols, pixels })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                pixels.push(f(r, c));
            }
        }
        Self::new(rows, cols, pixels)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.cols + col] = value;
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    /// Applies `f` to every pixel.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy with every pixel clamped to the 8-bit range.
    pub fn clamped(&self) -> Self {
        self.map(|v| v.clamp(0.0, 255.0))
    }

    /// Copy clamped to `[0, 255]` and rounded half away from zero, as written to disk.
    pub fn quantized(&self) -> Self {
        self.map(quantize)
    }

    /// Rectangular sub-image. Fails if the window leaves the image.
    pub fn crop(&self, top: usize, left: usize, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || top + rows > self.rows || left + cols > self.cols {
            return Err(Error::InvalidImage(format!(
                "crop {rows}x{cols} at ({top},{left}) exceeds {}x{} image",
                self.rows, self.cols
            )));
        }
        Self::from_fn(rows, cols, |r, c| self.get(top + r, left + c))
    }

    /// Centered crop of at most `size`×`size` pixels.
    pub fn center_crop(&self, size: usize) -> Result<Self> {
        let rows = size.min(self.rows);
        let cols = size.min(self.cols);
        self.crop((self.rows - rows) / 2, (self.cols - cols) / 2, rows, cols)
    }

    pub fn mean_square(&self) -> f64 {
        self.pixels.iter().map(|v| v * v).sum::<f64>() / self.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let n = self.len() as f64;
        let mean = self.pixels.iter().sum::<f64>() / n;
        self.pixels
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n
    }
}

#[inline]
fn quantize(v: f64) -> f64 {
    v.clamp(0.0, 255.0).round()
}

/// Gaussian noise parameters. The same seed always yields the same noise field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise sigma must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(Self { sigma, seed })
    }
}

/// Adds i.i.d. N(0, sigma²) noise to every pixel. The output is not clamped.
///
/// Samples come from a ChaCha8 stream seeded with `spec.seed` via
/// `SeedableRng::seed_from_u64`, drawn one per pixel in row-major order.
pub fn add_awgn(img: &Image, spec: NoiseSpec) -> Image {
    if spec.sigma == 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.sigma).expect("sigma validated by NoiseSpec");
    Image {
        rows: img.rows,
        cols: img.cols,
        pixels: img
            .pixels
            .iter()
            .map(|&v| v + normal.sample(&mut rng))
            .collect(),
    }
}

/// Convention for the clean-signal power in an SNR figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignalPower {
    /// Mean of the squared intensities.
    #[default]
    MeanSquare,
    /// Variance of the intensities (mean removed).
    Variance,
}

impl SignalPower {
    pub fn of(self, img: &Image) -> f64 {
        match self {
            SignalPower::MeanSquare => img.mean_square(),
            SignalPower::Variance => img.variance(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SignalPower::MeanSquare => "mean-square",
            SignalPower::Variance => "variance",
        }
    }
}

impl std::str::FromStr for SignalPower {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-square" => Ok(SignalPower::MeanSquare),
            "variance" => Ok(SignalPower::Variance),
            other => Err(Error::InvalidConfig(format!(
                "unknown signal power convention {other:?}"
            ))),
        }
    }
}

/// Noise standard deviation that puts `img` at `snr_db`, using mean-square power.
pub fn snr_to_sigma(img: &Image, snr_db: f64) -> Result<f64> {
    snr_to_sigma_with(img, snr_db, SignalPower::MeanSquare)
}

pub fn snr_to_sigma_with(img: &Image, snr_db: f64, power: SignalPower) -> Result<f64> {
    let p = power.of(img);
    if p <= 0.0 {
        return Err(Error::ZeroSignalPower);
    }
    Ok((p / 10f64.powf(snr_db / 10.0)).sqrt())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|source| Error::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    decode_pgm(&bytes)
}

/// Writes a binary (P5) PGM, clamping and rounding each pixel.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&encode_pgm(img))?;
    out.flush()?;
    Ok(())
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut buf = format!("P5\n{} {}\n255\n", img.cols, img.rows).into_bytes();
    buf.extend(img.pixels.iter().map(|&v| quantize(v) as u8));
    buf
}

/// Header tokenizer shared by P2 and P5; skips whitespace and `#` comments.
struct Tokens<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn skip_space(&mut self) {
        while self.pos < self.data.len() {
            match self.data[self.pos] {
                b'#' => {
                    while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn next_token(&mut self) -> Option<&'a [u8]> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.data[start..self.pos])
    }

    fn header_value(&mut self, what: &str) -> Result<u32> {
        let tok = self
            .next_token()
            .ok_or_else(|| Error::MalformedHeader(format!("missing {what}")))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                Error::MalformedHeader(format!("bad {what}: {:?}", String::from_utf8_lossy(tok)))
            })
    }
}

pub fn decode_pgm(data: &[u8]) -> Result<Image> {
    if data.len() < 2 {
        return Err(Error::MalformedHeader("file too short".into()));
    }
    let magic = &data[..2];
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        _ => {
            return Err(Error::UnsupportedMagic(
                String::from_utf8_lossy(magic).into_owned(),
            ))
        }
    };
    let mut tokens = Tokens { data, pos: 2 };
    let cols = tokens.header_value("width")? as usize;
    let rows = tokens.header_value("height")? as usize;
    let maxval = tokens.header_value("maxval")?;
    if cols == 0 || rows == 0 {
        return Err(Error::MalformedHeader(format!(
            "zero dimension {cols}x{rows}"
        )));
    }
    if maxval == 0 {
        return Err(Error::MalformedHeader("maxval must be positive".into()));
    }
    if maxval > 255 {
        return Err(Error::MaxvalTooLarge(maxval));
    }
    let expected = rows * cols;
    let pixels: Vec<f64> = if binary {
        // exactly one whitespace byte separates maxval from the raster
        let start = tokens.pos + 1;
        let raster = data.get(start..).unwrap_or(&[]);
        if raster.len() < expected {
            return Err(Error::TruncatedData {
                expected,
                found: raster.len(),
            });
        }
        raster[..expected].iter().map(|&b| b as f64).collect()
    } else {
        let mut values = Vec::with_capacity(expected);
        while values.len() < expected {
            let Some(tok) = tokens.next_token() else {
                return Err(Error::TruncatedData {
                    expected,
                    found: values.len(),
                });
            };
            let v: u32 = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| {
                    Error::MalformedHeader(format!("bad sample {:?}", String::from_utf8_lossy(tok)))
                })?;
            if v > maxval {
                return Err(Error::MalformedHeader(format!(
                    "sample {v} exceeds maxval {maxval}"
                )));
            }
            values.push(v as f64);
        }
        values
    };
    Image::new(rows, cols, pixels)
}
