//! Acceptance criteria, one `PASS`/`FAIL` line each.
//!
//! All criteria run sequentially inside one test. Run with `--nocapture` to
//! see the report.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use csar::collab::fuse_lambdas;
use csar::dictionary::{build_dictionary, Dictionary};
use csar::image::{add_awgn, load_image, Image, NoiseSpec};
use csar::metrics::{psnr, ssim, QualityReport};
use csar::patch::{aggregate, denormalize, extract_patches};
use csar::pipeline::{denoise, PipelineConfig};
use csar::sabmp::{exhaustive_posterior, recover, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes straight to stdout so the line shows up without `--nocapture`.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        let status = if pass { "PASS" } else { "FAIL" };
        emit(&format!("{status} {name}: {detail}"));
        if !pass {
            self.failures.push(name.to_string());
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn test_image() -> Image {
    load_image(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/cameraman.pgm")).unwrap()
}

/// Textured 64×64 window of the test image (camera body and tripod).
fn clean_crop() -> Image {
    test_image().crop(64, 224, 64, 64).unwrap()
}

fn min_time(reps: usize, mut f: impl FnMut()) -> Duration {
    (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed()
        })
        .min()
        .unwrap()
}

fn disclaimer(r: &mut Report) {
    r.check(
        "exact-reproduction disclaimer",
        true,
        "absolute table values are not reproduced at desk scale; the property checks below stand in for them".into(),
    );
}

fn oracle_equivalence(r: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let instances = 60;
    let mut worst_weight: f64 = 0.0;
    let mut worst_lambda: f64 = 0.0;
    let mut ranking_ok = true;
    let mut explored_total = 0;
    for i in 0..instances {
        let m = rng.random_range(6..=12);
        let p = rng.random_range(1..=3);
        let cols: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..9).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let dict = Dictionary::from_columns(3, cols).unwrap();
        let mut y = vec![0.0; 9];
        for _ in 0..p {
            let j = rng.random_range(0..m);
            let a = rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            y.iter_mut()
                .zip(dict.atom(j))
                .for_each(|(v, d)| *v += a * d);
        }
        y.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        let cfg = SolverConfig {
            max_support: p,
            beam_width: 1000,
            prior_p: rng.random_range(0.05..0.4),
            sigma_w: rng.random_range(0.05..0.3),
        };
        let priors: Option<Vec<f64>> =
            (i % 2 == 1).then(|| (0..m).map(|_| rng.random_range(0.02..0.6)).collect());
        let beam = recover(&y, &dict, &cfg, priors.as_deref()).unwrap();
        let exact = exhaustive_posterior(&y, &dict, &cfg, priors.as_deref()).unwrap();
        explored_total += exact.explored.len();
        if beam.explored.len() != exact.explored.len() {
            ranking_ok = false;
            continue;
        }
        for (a, b) in beam.explored.iter().zip(&exact.explored) {
            ranking_ok &= a.support == b.support;
            worst_weight = worst_weight.max((a.weight - b.weight).abs());
        }
        for (a, b) in beam.lambda.iter().zip(&exact.lambda) {
            worst_lambda = worst_lambda.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    r.check(
        "oracle equivalence",
        ranking_ok
            && worst_weight <= 1e-9
            && worst_lambda <= 1e-9
            && elapsed < Duration::from_secs(10),
        format!(
            "{instances} instances, {explored_total} supports, identical ranking {ranking_ok}, \
             max weight diff {worst_weight:.2e}, max lambda diff {worst_lambda:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

/// Fraction of `trials` planted pairs recovered exactly as the top support.
fn planted_hits(dict: &Dictionary, max_support: Option<usize>, seed: u64, trials: usize) -> usize {
    let m = dict.len();
    let dim = dict.dim() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0;
    for _ in 0..trials {
        let (i, j) = loop {
            let i = rng.random_range(0..m);
            let j = rng.random_range(0..m);
            if i != j && dot(dict.atom(i), dict.atom(j)).abs() < 0.9 {
                break (i.min(j), i.max(j));
            }
        };
        let amp = |rng: &mut ChaCha8Rng| {
            rng.random_range(1.0..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
        };
        let (a, b) = (amp(&mut rng), amp(&mut rng));
        let x: Vec<f64> = dict
            .atom(i)
            .iter()
            .zip(dict.atom(j))
            .map(|(u, v)| a * u + b * v)
            .collect();
        // noise level for exactly 20 dB
        let sigma = (dot(&x, &x) / dim / 100.0).sqrt();
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                let g: f64 = rng.sample(rand_distr::StandardNormal);
                v + sigma * g
            })
            .collect();
        let mut cfg = SolverConfig::for_dictionary(dict, sigma);
        if let Some(p) = max_support {
            cfg.max_support = p;
        }
        let res = recover(&y, dict, &cfg, None).unwrap();
        if res.explored[0].support == [i, j] {
            hits += 1;
        }
    }
    hits
}

fn planted_recovery(r: &mut Report) {
    let trials = 200;
    let start = Instant::now();
    let dict = build_dictionary(5, 2).unwrap();
    let hits = planted_hits(&dict, Some(2), 77, trials);
    let elapsed = start.elapsed();
    let rate = hits as f64 / trials as f64;
    r.check(
        "planted-sparsity recovery",
        rate >= 0.95 && elapsed < Duration::from_secs(30),
        format!(
            "top support exact in {hits}/{trials} ({:.1}%) at 20 dB, 5x5 dictionary (M={}), max support 2, {:.2}s",
            100.0 * rate,
            dict.len(),
            elapsed.as_secs_f64()
        ),
    );

    let small = build_dictionary(3, 2).unwrap();
    let default_cap = planted_hits(&dict, None, 77, trials);
    let small_hits = planted_hits(&small, None, 77, trials);
    emit(&format!(
        "INFO planted-sparsity with default support caps: 5x5 (cap {}) {default_cap}/{trials}, \
         3x3 (M={}, cap {}) {small_hits}/{trials}",
        SolverConfig::default_max_support(5),
        small.len(),
        SolverConfig::default_max_support(3)
    ));
}

fn round_trip(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pixels: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..255.0)).collect();
    let img = Image::new(16, 16, pixels).unwrap();
    let mut worst: f64 = 0.0;
    for n in [3, 5, 7, 9] {
        let ps = extract_patches(&img, n).unwrap();
        let est: Vec<Vec<f64>> = ps.iter().map(|p| denormalize(p.values, p.norm)).collect();
        let back = aggregate(&est, 16, 16, n).unwrap();
        for (a, b) in back.pixels().iter().zip(img.pixels()) {
            worst = worst.max((a - b).abs());
        }
    }
    r.check(
        "round-trip identity",
        worst <= 1e-10,
        format!("max abs error {worst:.2e} over N in 3,5,7,9 on 16x16"),
    );
}

struct DenoiseRuns {
    noisy: Image,
    full: Image,
    seconds: f64,
}

fn directional(r: &mut Report, clean: &Image) -> DenoiseRuns {
    let noisy = add_awgn(clean, NoiseSpec::new(18.0, 1).unwrap()).quantized();
    let cfg = PipelineConfig {
        sizes: vec![3, 5],
        threads: Some(1),
        ..PipelineConfig::new(18.0)
    };
    let start = Instant::now();
    let full = denoise(&noisy, &cfg).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let before = QualityReport::evaluate(&noisy, clean).unwrap();
    let after = QualityReport::evaluate(&full, clean).unwrap();
    r.check(
        "directional denoising",
        after.psnr_db >= before.psnr_db + 3.0 && after.ssim > before.ssim && seconds < 300.0,
        format!(
            "sigma 18, sizes 3,5: PSNR {:.2} -> {:.2} dB (+{:.2}), SSIM {:.3} -> {:.3}, {seconds:.1}s single-threaded",
            before.psnr_db,
            after.psnr_db,
            after.psnr_db - before.psnr_db,
            before.ssim,
            after.ssim
        ),
    );
    DenoiseRuns {
        noisy,
        full,
        seconds,
    }
}

fn ablation(r: &mut Report, clean: &Image, runs: &DenoiseRuns) {
    let mut details = Vec::new();
    let mut pass = true;
    for sigma in [18.0, 33.0] {
        let (noisy, full) = if sigma == 18.0 {
            (runs.noisy.clone(), runs.full.clone())
        } else {
            let noisy = add_awgn(clean, NoiseSpec::new(sigma, 1).unwrap()).quantized();
            let cfg = PipelineConfig {
                sizes: vec![3, 5],
                ..PipelineConfig::new(sigma)
            };
            let full = denoise(&noisy, &cfg).unwrap();
            (noisy, full)
        };
        let cfg = PipelineConfig {
            sizes: vec![3, 5],
            no_collab: true,
            ..PipelineConfig::new(sigma)
        };
        let solo = denoise(&noisy, &cfg).unwrap();
        let with = psnr(&full.clamped(), clean).unwrap();
        let without = psnr(&solo.clamped(), clean).unwrap();
        pass &= with >= without;
        details.push(format!(
            "sigma {sigma}: {with:.2} vs {without:.2} dB ({:+.2})",
            with - without
        ));
    }
    r.check(
        "collaboration ablation",
        pass,
        format!("full vs no-collab PSNR, {}", details.join("; ")),
    );
}

fn solitary_tap(r: &mut Report) {
    let mut pass = true;
    for g in 2..=32usize {
        let mut lambdas = vec![vec![0.0; 8]; g];
        lambdas[g - 1][3] = 1.0;
        let fused = fuse_lambdas(0, &lambdas, &vec![1.0 / g as f64; g]).unwrap();
        pass &= fused.lambda_prime[3] == 1.0 / g as f64;
    }
    r.check(
        "solitary-tap attenuation",
        pass,
        "fused probability equals 1/G exactly for G = 2..32".into(),
    );
}

fn complexity(r: &mut Report, clean: &Image) {
    let noisy = add_awgn(clean, NoiseSpec::new(18.0, 2).unwrap()).quantized();
    let mirrored = Image::from_fn(64, 128, |row, col| {
        if col < 64 {
            noisy.get(row, col)
        } else {
            noisy.get(row, 127 - col)
        }
    })
    .unwrap();
    let cfg = |sizes: Vec<usize>| PipelineConfig {
        sizes,
        threads: Some(1),
        ..PipelineConfig::new(18.0)
    };
    let mut best = [Duration::MAX; 3];
    for _ in 0..5 {
        let runs: [(&Image, Vec<usize>); 3] = [
            (&noisy, vec![3]),
            (&mirrored, vec![3]),
            (&noisy, vec![3, 3]),
        ];
        for (slot, (img, sizes)) in best.iter_mut().zip(runs) {
            *slot = (*slot).min(min_time(1, || {
                drop(denoise(img, &cfg(sizes.clone())).unwrap())
            }));
        }
    }
    let [base, double_k, double_l] = best;
    let rk = double_k.as_secs_f64() / base.as_secs_f64();
    let rl = double_l.as_secs_f64() / base.as_secs_f64();
    r.check(
        "complexity scaling in K",
        (rk - 2.0).abs() <= 0.6,
        format!(
            "64x128 vs 64x64: {rk:.2}x (base {:.3}s)",
            base.as_secs_f64()
        ),
    );
    r.check(
        "complexity scaling in L",
        (rl - 2.0).abs() <= 0.4,
        format!("sizes [3,3] vs [3]: {rl:.2}x"),
    );
}

fn determinism(r: &mut Report, runs: &DenoiseRuns) {
    let cfg = PipelineConfig {
        sizes: vec![3, 5],
        threads: Some(8),
        ..PipelineConfig::new(18.0)
    };
    let start = Instant::now();
    let eight = denoise(&runs.noisy, &cfg).unwrap();
    let identical = eight
        .pixels()
        .iter()
        .zip(runs.full.pixels())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    r.check(
        "determinism",
        identical,
        format!(
            "threads 1 ({:.1}s) vs 8 ({:.1}s): bit-identical {identical}",
            runs.seconds,
            start.elapsed().as_secs_f64()
        ),
    );
}

fn metrics(r: &mut Report) {
    let a = Image::from_fn(24, 20, |row, col| {
        ((row * 37 + col * 91 + ((row * col) % 17) * 5) % 256) as f64
    })
    .unwrap();
    let plus_one = a.map(|v| v + 1.0);
    let c1 = (0.01f64 * 255.0).powi(2);
    let constant = (2.0 * 100.0 * 150.0 + c1) / (100.0f64.powi(2) + 150.0f64.powi(2) + c1);
    let x = Image::filled(16, 16, 100.0).unwrap();
    let y = Image::filled(16, 16, 150.0).unwrap();
    let zero = Image::filled(16, 16, 0.0).unwrap();
    let full = Image::filled(16, 16, 255.0).unwrap();
    let other =
        Image::from_fn(24, 20, |row, col| ((row * row * 3 + col * 11) % 256) as f64).unwrap();
    let checks = [
        ("psnr identical", psnr(&a, &a).unwrap(), f64::INFINITY),
        ("psnr mse 1", psnr(&a, &plus_one).unwrap(), 48.1308036086791),
        ("psnr full range", psnr(&zero, &full).unwrap(), 0.0),
        ("ssim identical", ssim(&a, &a).unwrap(), 1.0),
        ("ssim constants", ssim(&x, &y).unwrap(), constant),
        (
            "ssim inverted (reference)",
            ssim(&a, &a.map(|v| 255.0 - v)).unwrap(),
            -0.978048736456779,
        ),
        (
            "ssim unrelated (reference)",
            ssim(&a, &other).unwrap(),
            -0.07511439025797445,
        ),
        (
            "ssim shifted (reference)",
            ssim(&a, &a.map(|v| (v + 7.0).min(255.0))).unwrap(),
            0.998512490055605,
        ),
    ];
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for (name, got, want) in checks {
        let ok = if want.is_infinite() {
            got == want
        } else {
            (got - want).abs() <= 1e-6
        };
        if !ok {
            emit(&format!("  metric mismatch {name}: {got} vs {want}"));
        }
        if want.is_finite() {
            worst = worst.max((got - want).abs());
        }
        pass &= ok;
    }
    r.check(
        "metrics",
        pass,
        format!(
            "{} reference values, max deviation {worst:.2e}",
            checks.len()
        ),
    );
}

#[test]
fn acceptance_criteria() {
    let mut r = Report {
        failures: Vec::new(),
    };
    let clean = clean_crop();
    disclaimer(&mut r);
    oracle_equivalence(&mut r);
    planted_recovery(&mut r);
    round_trip(&mut r);
    let runs = directional(&mut r, &clean);
    ablation(&mut r, &clean, &runs);
    solitary_tap(&mut r);
    complexity(&mut r, &clean);
    determinism(&mut r, &runs);
    metrics(&mut r);
    assert!(r.failures.is_empty(), "failed criteria: {:?}", r.failures);
}
