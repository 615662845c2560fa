//! Two-pass collaborative denoising over one or more patch sizes.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::collab::{self, GroupDiagnostic};
use crate::dictionary::{build_dictionary, Dictionary};
use crate::error::{Error, Result};
use crate::grouping::{find_neighbors, GroupingConfig};
use crate::image::Image;
use crate::patch::{aggregate, extract_patches, validate_patch_size, PatchSet};
use crate::sabmp::{recover, SolverConfig, SparseResult};

/// Oversampling of the cosine frequencies in the per-size dictionaries.
pub const DICTIONARY_OVERSAMPLE: usize = 2;

/// Median absolute deviation of a unit normal.
const MAD_SCALE: f64 = 0.6745;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Odd patch sides whose results are averaged.
    pub sizes: Vec<usize>,
    /// Noise standard deviation in pixel units.
    pub sigma_w: f64,
    pub grouping: GroupingConfig,
    /// Supports kept per cardinality level in the solver.
    pub beam_width: usize,
    /// Cap on the support size; `None` uses `⌈0.15·N²⌉` per size.
    pub max_support: Option<usize>,
    /// Skip fusion: the second pass uses each patch's own probabilities.
    pub no_collab: bool,
    /// Replace the second pass by zeroing the group outlier taps of the
    /// first-pass estimate.
    pub naive_vk_zeroing: bool,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Recorded with every run. The pipeline itself draws no random numbers.
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(sigma_w: f64) -> Self {
        Self {
            sizes: vec![3, 5, 7, 9],
            sigma_w,
            grouping: GroupingConfig::default(),
            beam_width: 8,
            max_support: None,
            no_collab: false,
            naive_vk_zeroing: false,
            threads: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one patch size is required".into(),
            ));
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| n < 3 || n.is_multiple_of(2)) {
            return Err(Error::InvalidPatchSize {
                size: n,
                reason: "patch sides must be odd and >= 3".into(),
            });
        }
        if !(self.sigma_w > 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise sigma must be positive, got {}",
                self.sigma_w
            )));
        }
        if self.beam_width == 0 {
            return Err(Error::InvalidConfig("beam width must be >= 1".into()));
        }
        if self.max_support == Some(0) {
            return Err(Error::InvalidConfig("max support must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("thread count must be >= 1".into()));
        }
        if self.no_collab && self.naive_vk_zeroing {
            return Err(Error::InvalidConfig(
                "no_collab and naive_vk_zeroing are mutually exclusive".into(),
            ));
        }
        self.grouping.validate()
    }

    /// Solver settings for patch side `size`. A user cap on the support is
    /// further limited to half the patch dimension.
    pub fn solver_for(&self, dict: &Dictionary) -> SolverConfig {
        let mut cfg = SolverConfig::for_dictionary(dict, self.sigma_w);
        if let Some(cap) = self.max_support {
            cfg.max_support = cap.min(dict.dim() / 2);
            cfg.prior_p = cfg.max_support as f64 / dict.len() as f64;
        }
        cfg.beam_width = self.beam_width;
        cfg
    }
}

/// Wall time spent in each stage, summed over patch sizes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub dictionary: Duration,
    pub grouping: Duration,
    pub first_pass: Duration,
    pub fusion: Duration,
    pub second_pass: Duration,
    pub aggregation: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.dictionary
            + self.grouping
            + self.first_pass
            + self.fusion
            + self.second_pass
            + self.aggregation
    }

    fn add(&mut self, other: &StageTimings) {
        self.dictionary += other.dictionary;
        self.grouping += other.grouping;
        self.first_pass += other.first_pass;
        self.fusion += other.fusion;
        self.second_pass += other.second_pass;
        self.aggregation += other.aggregation;
    }

    /// `(name, seconds)` pairs in pipeline order.
    pub fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("dictionary", self.dictionary.as_secs_f64()),
            ("grouping", self.grouping.as_secs_f64()),
            ("first_pass", self.first_pass.as_secs_f64()),
            ("fusion", self.fusion.as_secs_f64()),
            ("second_pass", self.second_pass.as_secs_f64()),
            ("aggregation", self.aggregation.as_secs_f64()),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SizeReport {
    pub size: usize,
    pub image: Image,
    pub diagnostics: Vec<GroupDiagnostic>,
}

#[derive(Debug, Clone)]
pub struct DenoiseReport {
    pub image: Image,
    pub per_size: Vec<SizeReport>,
    pub timings: StageTimings,
}

/// Per-patch solver output kept between the two passes.
struct PatchCode {
    h_hat: Vec<f64>,
    lambda: Vec<f64>,
    support: Vec<usize>,
}

/// Noise level of the normalized patch `k`. A zero patch has no scale, so
/// it falls back to the noise of a full-range patch.
fn patch_sigma(sigma_w: f64, norm: f64, size: usize) -> f64 {
    if norm > 0.0 {
        sigma_w / norm
    } else {
        sigma_w / (255.0 * size as f64)
    }
}

fn run_pass(
    ps: &PatchSet,
    dict: &Dictionary,
    solver: &SolverConfig,
    sigma_w: f64,
    priors: Option<&[Vec<f64>]>,
) -> Result<Vec<PatchCode>> {
    (0..ps.len())
        .into_par_iter()
        .map(|k| {
            let cfg = SolverConfig {
                sigma_w: patch_sigma(sigma_w, ps.norms()[k], ps.size()),
                ..*solver
            };
            let SparseResult {
                h_hat,
                lambda,
                support,
                ..
            } = recover(ps.values(k), dict, &cfg, priors.map(|p| p[k].as_slice()))?;
            Ok(PatchCode {
                h_hat,
                lambda,
                support,
            })
        })
        .collect()
}

fn synthesize_all(
    ps: &PatchSet,
    dict: &Dictionary,
    coefficients: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    coefficients
        .par_iter()
        .enumerate()
        .map(|(k, h)| {
            let norm = ps.norms()[k];
            let mut v = dict.synthesize(h)?;
            v.iter_mut().for_each(|x| *x *= norm);
            Ok(v)
        })
        .collect()
}

fn single_size(
    noisy: &Image,
    size: usize,
    cfg: &PipelineConfig,
) -> Result<(SizeReport, StageTimings)> {
    validate_patch_size(size, noisy.rows(), noisy.cols())?;
    let mut t = StageTimings::default();

    let start = Instant::now();
    let dict = build_dictionary(size, DICTIONARY_OVERSAMPLE)?;
    let solver = cfg.solver_for(&dict);
    t.dictionary = start.elapsed();

    let start = Instant::now();
    let ps = extract_patches(noisy, size)?;
    let groups = find_neighbors(&ps, &cfg.grouping)?;
    t.grouping = start.elapsed();

    let start = Instant::now();
    let first = run_pass(&ps, &dict, &solver, cfg.sigma_w, None)?;
    t.first_pass = start.elapsed();

    let start = Instant::now();
    let fused: Vec<(Vec<f64>, GroupDiagnostic)> = groups
        .par_iter()
        .map(|g| {
            let lambdas: Vec<&[f64]> = g
                .members
                .iter()
                .map(|&m| first[m].lambda.as_slice())
                .collect();
            let supports: Vec<&[usize]> = g
                .members
                .iter()
                .map(|&m| first[m].support.as_slice())
                .collect();
            let outliers = collab::outlier_support(&supports);
            let prior = if cfg.no_collab {
                first[g.k]
                    .lambda
                    .iter()
                    .map(|&p| collab::clip_probability(p))
                    .collect()
            } else {
                collab::fuse_lambdas(g.k, &lambdas, &g.weights)?.lambda_prime
            };
            let mean = prior.iter().sum::<f64>() / prior.len() as f64;
            let diag = GroupDiagnostic {
                k: g.k,
                group_size: g.len(),
                outliers: outliers.len(),
                mean_lambda_prime: mean,
            };
            let prior = if cfg.naive_vk_zeroing {
                // carries the zeroed first-pass estimate instead of a prior
                let mut h = first[g.k].h_hat.clone();
                outliers.iter().for_each(|&j| h[j] = 0.0);
                h
            } else {
                prior
            };
            Ok((prior, diag))
        })
        .collect::<Result<_>>()?;
    let (carried, diagnostics): (Vec<Vec<f64>>, Vec<GroupDiagnostic>) = fused.into_iter().unzip();
    t.fusion = start.elapsed();

    let start = Instant::now();
    let coefficients: Vec<Vec<f64>> = if cfg.naive_vk_zeroing {
        carried
    } else {
        run_pass(&ps, &dict, &solver, cfg.sigma_w, Some(&carried))?
            .into_iter()
            .map(|r| r.h_hat)
            .collect()
    };
    t.second_pass = start.elapsed();

    let start = Instant::now();
    let estimates = synthesize_all(&ps, &dict, &coefficients)?;
    let image = aggregate(&estimates, noisy.rows(), noisy.cols(), size)?;
    t.aggregation = start.elapsed();

    Ok((
        SizeReport {
            size,
            image,
            diagnostics,
        },
        t,
    ))
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start {n} worker threads: {e}")))?
            .install(f),
    }
}

/// Runs the full chain for every configured size and averages the results
/// uniformly, keeping the per-size images, group diagnostics and timings.
pub fn denoise_with_report(noisy: &Image, cfg: &PipelineConfig) -> Result<DenoiseReport> {
    cfg.validate()?;
    in_pool(cfg.threads, || {
        let mut timings = StageTimings::default();
        let mut per_size = Vec::with_capacity(cfg.sizes.len());
        for &size in &cfg.sizes {
            let (report, t) = single_size(noisy, size, cfg)?;
            timings.add(&t);
            per_size.push(report);
        }
        let start = Instant::now();
        let l = per_size.len() as f64;
        let mut sum = vec![0.0; noisy.len()];
        for r in &per_size {
            for (s, v) in sum.iter_mut().zip(r.image.pixels()) {
                *s += v;
            }
        }
        let image = Image::new(
            noisy.rows(),
            noisy.cols(),
            sum.into_iter().map(|s| s / l).collect(),
        )?;
        timings.aggregation += start.elapsed();
        Ok(DenoiseReport {
            image,
            per_size,
            timings,
        })
    })
}

/// Denoised image for a single patch side, ignoring `cfg.sizes`.
pub fn denoise_single_size(noisy: &Image, size: usize, cfg: &PipelineConfig) -> Result<Image> {
    let cfg = PipelineConfig {
        sizes: vec![size],
        ..cfg.clone()
    };
    Ok(denoise_with_report(noisy, &cfg)?.image)
}

/// Uniform average of the single-size results over `cfg.sizes`.
pub fn denoise(noisy: &Image, cfg: &PipelineConfig) -> Result<Image> {
    Ok(denoise_with_report(noisy, cfg)?.image)
}

/// Noise level from the median absolute finest-scale diagonal Haar
/// coefficient, divided by 0.6745.
pub fn estimate_sigma(img: &Image) -> Result<f64> {
    let (rows, cols) = (img.rows() / 2, img.cols() / 2);
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidImage(format!(
            "noise estimation needs at least 2x2 pixels, got {}x{}",
            img.rows(),
            img.cols()
        )));
    }
    let mut hh: Vec<f64> = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (a, b) = (img.get(2 * r, 2 * c), img.get(2 * r, 2 * c + 1));
            let (d, e) = (img.get(2 * r + 1, 2 * c), img.get(2 * r + 1, 2 * c + 1));
            hh.push(((a - b - d + e) / 2.0).abs());
        }
    }
    hh.sort_by(f64::total_cmp);
    let n = hh.len();
    let median = if n % 2 == 1 {
        hh[n / 2]
    } else {
        0.5 * (hh[n / 2 - 1] + hh[n / 2])
    };
    Ok(median / MAD_SCALE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{add_awgn, NoiseSpec};
    use crate::metrics::psnr;

    fn textured(rows: usize, cols: usize) -> Image {
        Image::from_fn(rows, cols, |r, c| {
            let (x, y) = (r as f64, c as f64);
            128.0
                + 50.0 * (x * 0.45).sin()
                + 30.0 * (y * 0.3 + x * 0.1).cos()
                + if c > cols / 2 { 25.0 } else { 0.0 }
        })
        .unwrap()
    }

    fn quick(sigma: f64, sizes: &[usize]) -> PipelineConfig {
        PipelineConfig {
            sizes: sizes.to_vec(),
            ..PipelineConfig::new(sigma)
        }
    }

    #[test]
    fn duplicated_size_equals_single_size() {
        let clean = textured(16, 16);
        let noisy = add_awgn(&clean, NoiseSpec::new(15.0, 3).unwrap());
        let one = denoise(&noisy, &quick(15.0, &[3])).unwrap();
        let two = denoise(&noisy, &quick(15.0, &[3, 3])).unwrap();
        assert_eq!(one, two);
        assert_eq!(
            one,
            denoise_single_size(&noisy, 3, &quick(15.0, &[5, 7])).unwrap()
        );
    }

    #[test]
    fn average_over_sizes_is_uniform() {
        let noisy = add_awgn(&textured(14, 14), NoiseSpec::new(12.0, 1).unwrap());
        let cfg = quick(12.0, &[3, 5]);
        let report = denoise_with_report(&noisy, &cfg).unwrap();
        let a = denoise_single_size(&noisy, 3, &cfg).unwrap();
        let b = denoise_single_size(&noisy, 5, &cfg).unwrap();
        for i in 0..noisy.len() {
            let mean = (a.pixels()[i] + b.pixels()[i]) / 2.0;
            assert_eq!(report.image.pixels()[i], mean);
        }
        assert_eq!(report.per_size.len(), 2);
        assert_eq!(report.per_size[0].diagnostics.len(), noisy.len());
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let noisy = add_awgn(&textured(16, 16), NoiseSpec::new(20.0, 9).unwrap());
        let mut cfg = quick(20.0, &[3, 5]);
        cfg.threads = Some(1);
        let serial = denoise(&noisy, &cfg).unwrap();
        cfg.threads = Some(4);
        assert_eq!(serial, denoise(&noisy, &cfg).unwrap());
        assert_eq!(serial, denoise(&noisy, &cfg).unwrap());
    }

    #[test]
    fn intensity_equivariance() {
        let noisy = add_awgn(&textured(14, 14), NoiseSpec::new(10.0, 5).unwrap());
        let base = denoise(&noisy, &quick(10.0, &[3])).unwrap();
        let scaled = denoise(&noisy.map(|v| 2.0 * v), &quick(20.0, &[3])).unwrap();
        for (a, b) in base.pixels().iter().zip(scaled.pixels()) {
            assert!((2.0 * a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn constant_image_noise_is_reduced() {
        let clean = Image::filled(20, 20, 120.0).unwrap();
        let noisy = add_awgn(&clean, NoiseSpec::new(10.0, 11).unwrap());
        let out = denoise(&noisy, &quick(10.0, &[3, 5])).unwrap();
        let residual = |img: &Image| {
            img.pixels()
                .iter()
                .map(|v| (v - 120.0).powi(2))
                .sum::<f64>()
                / img.len() as f64
        };
        assert!(residual(&out) < residual(&noisy));
        assert!(residual(&out) < 100.0);
    }

    #[test]
    fn near_noiseless_gradient_is_preserved() {
        let clean = Image::from_fn(32, 32, |r, c| 40.0 + 4.0 * r as f64 + 2.5 * c as f64).unwrap();
        let out = denoise(&clean, &quick(0.01, &[3, 5])).unwrap();
        assert!(psnr(&out, &clean).unwrap() >= 40.0);
    }

    #[test]
    fn ablation_modes_run() {
        let noisy = add_awgn(&textured(12, 12), NoiseSpec::new(15.0, 2).unwrap());
        let mut cfg = quick(15.0, &[3]);
        cfg.no_collab = true;
        let a = denoise(&noisy, &cfg).unwrap();
        cfg.no_collab = false;
        cfg.naive_vk_zeroing = true;
        let b = denoise(&noisy, &cfg).unwrap();
        assert!(a.pixels().iter().chain(b.pixels()).all(|v| v.is_finite()));
        cfg.no_collab = true;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_validation() {
        let ok = PipelineConfig::new(10.0);
        assert!(ok.validate().is_ok());
        assert!(PipelineConfig {
            sizes: vec![],
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(PipelineConfig {
            sizes: vec![3, 4],
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(PipelineConfig {
            sigma_w: 0.0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(PipelineConfig {
            beam_width: 0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(PipelineConfig {
            threads: Some(0),
            ..ok.clone()
        }
        .validate()
        .is_err());
        let big = Image::filled(4, 4, 1.0).unwrap();
        assert!(denoise(&big, &quick(1.0, &[9])).is_err());
    }

    #[test]
    fn support_cap_is_limited_by_patch_dimension() {
        let dict = build_dictionary(3, DICTIONARY_OVERSAMPLE).unwrap();
        let cfg = PipelineConfig {
            max_support: Some(10),
            ..PipelineConfig::new(5.0)
        };
        let s = cfg.solver_for(&dict);
        assert_eq!(s.max_support, 4);
        assert!(s.validate(dict.dim()).is_ok());
        assert_eq!(PipelineConfig::new(5.0).solver_for(&dict).max_support, 2);
    }

    #[test]
    fn sigma_estimate_tracks_true_noise() {
        let clean =
            Image::from_fn(128, 128, |r, c| 60.0 + 0.5 * r as f64 + 0.3 * c as f64).unwrap();
        for sigma in [5.0, 20.0] {
            let noisy = add_awgn(&clean, NoiseSpec::new(sigma, 4).unwrap());
            let est = estimate_sigma(&noisy).unwrap();
            assert!((est / sigma - 1.0).abs() < 0.1, "{est} vs {sigma}");
        }
        assert_eq!(estimate_sigma(&clean).unwrap(), 0.0);
        assert!(estimate_sigma(&Image::filled(1, 5, 0.0).unwrap()).is_err());
    }
}
