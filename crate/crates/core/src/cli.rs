//! Command-line front end: noise injection, denoising, benchmark sweeps,
//! dictionary dumps and manifest replay.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::baseline::{nlmeans, NlmConfig};
use crate::collab::write_diagnostics_csv;
use crate::dictionary::build_dictionary;
use crate::grouping::GroupingConfig;
use crate::image::{
    add_awgn, encode_pgm, load_image, snr_to_sigma_with, Image, NoiseSpec, SignalPower,
};
use crate::metrics::QualityReport;
use crate::pipeline::{denoise_with_report, estimate_sigma, PipelineConfig, DICTIONARY_OVERSAMPLE};

#[derive(Debug, Parser)]
#[command(
    name = "csar",
    version,
    about = "Collaborative sparse-recovery image denoising"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Add white Gaussian noise to a PGM image.
    AddNoise(AddNoiseArgs),
    /// Denoise a PGM image.
    Denoise(DenoiseArgs),
    /// Compare CSAR, NL-means and the noisy input over images and SNRs.
    Benchmark(BenchmarkArgs),
    /// Write the dictionary for one patch size as text.
    Dictionary(DictionaryArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct AddNoiseArgs {
    /// Input PGM image.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PGM image.
    #[arg(long)]
    pub out: PathBuf,
    /// Noise standard deviation in intensity units.
    #[arg(long, conflicts_with = "snr_db", required_unless_present = "snr_db")]
    pub sigma: Option<f64>,
    /// Target SNR in dB, converted to a noise level from the image power.
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    /// Signal power used by --snr-db: mean-square or variance.
    #[arg(long, default_value = "mean-square")]
    pub power: SignalPower,
    /// Noise generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Manifest path; defaults to `<out>.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Comma-separated odd patch sides.
    #[arg(long, value_delimiter = ',', default_value = "3,5,7,9")]
    pub sizes: Vec<usize>,
    /// Grouping distance threshold on unit-norm patches.
    #[arg(long, default_value_t = GroupingConfig::default().epsilon)]
    pub eps: f64,
    /// Maximum group size.
    #[arg(long, default_value_t = GroupingConfig::default().max_group)]
    pub gmax: usize,
    /// Grouping search window side.
    #[arg(long, default_value_t = GroupingConfig::default().window)]
    pub window: usize,
    /// Regularizer of the collaboration weights.
    #[arg(long, default_value_t = GroupingConfig::default().delta)]
    pub delta: f64,
    /// Supports kept per level in the solver.
    #[arg(long, default_value_t = 8)]
    pub beam: usize,
    /// Support size cap; defaults to ceil(0.15 N^2) per size.
    #[arg(long)]
    pub pmax: Option<usize>,
    /// Skip the fusion of neighbor probabilities.
    #[arg(long)]
    pub no_collab: bool,
    /// Zero group outlier taps of the first-pass estimate instead of a second pass.
    #[arg(long, conflicts_with = "no_collab")]
    pub vk_zeroing: bool,
    /// Worker threads.
    #[arg(long, env = "CSAR_THREADS")]
    pub threads: Option<usize>,
}

impl PipelineArgs {
    fn config(&self, sigma: f64, seed: u64) -> PipelineConfig {
        PipelineConfig {
            sizes: self.sizes.clone(),
            sigma_w: sigma,
            grouping: GroupingConfig {
                epsilon: self.eps,
                window: self.window,
                max_group: self.gmax,
                delta: self.delta,
            },
            beam_width: self.beam,
            max_support: self.pmax,
            no_collab: self.no_collab,
            naive_vk_zeroing: self.vk_zeroing,
            threads: self.threads,
            seed,
        }
    }

    fn push_args(&self, m: &mut Manifest) {
        m.arg("sizes", join(&self.sizes));
        m.arg("eps", self.eps);
        m.arg("gmax", self.gmax);
        m.arg("window", self.window);
        m.arg("delta", self.delta);
        m.arg("beam", self.beam);
        if let Some(p) = self.pmax {
            m.arg("pmax", p);
        }
        m.flag("no-collab", self.no_collab);
        m.flag("vk-zeroing", self.vk_zeroing);
        if let Some(t) = self.threads {
            m.arg("threads", t);
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DenoiseArgs {
    /// Input PGM image.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PGM image.
    #[arg(long)]
    pub out: PathBuf,
    /// Noise standard deviation in intensity units.
    #[arg(
        long,
        conflicts_with = "estimate_sigma",
        required_unless_present = "estimate_sigma"
    )]
    pub sigma: Option<f64>,
    /// Estimate the noise level from the finest Haar diagonal band.
    #[arg(long)]
    pub estimate_sigma: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Run seed, recorded in the manifest.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Clean reference; adds PSNR and SSIM to the manifest.
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Per-patch group diagnostics CSV, one file per patch size.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Manifest path; defaults to `<out>.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    /// Clean PGM images.
    #[arg(long, value_delimiter = ',', required = true)]
    pub images: Vec<PathBuf>,
    /// SNR levels in dB.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-5,0,5,10,15,20,25"
    )]
    pub snr_db: Vec<f64>,
    /// Signal power used for the SNR: mean-square or variance.
    #[arg(long, default_value = "mean-square")]
    pub power: SignalPower,
    /// Side of the centered square crop; 0 keeps the full image.
    #[arg(long, default_value_t = 64)]
    pub crop: usize,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Noise generator seed, shared by every image and SNR.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to `<out>.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DictionaryArgs {
    /// Patch side.
    #[arg(long)]
    pub size: usize,
    /// Cosine frequency oversampling.
    #[arg(long, default_value_t = DICTIONARY_OVERSAMPLE)]
    pub oversample: usize,
    /// Output text file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fail unless the new output matches the recorded checksum.
    #[arg(long)]
    pub check: bool,
}

/// Flat `key=value` run record. Keys starting with `arg.` hold the resolved
/// command-line arguments and are enough to replay the run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    fn arg(&mut self, flag: &str, value: impl ToString) {
        self.set(&format!("arg.{flag}"), value);
    }

    fn flag(&mut self, flag: &str, on: bool) {
        self.arg(flag, on);
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut m = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("manifest line {} has no '=': {line}", i + 1))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        fs::write(path, self.to_text())
            .with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        Self::parse(&text)
    }

    /// Command line that reproduces the run, with `out` optionally replaced.
    pub fn replay_argv(&self, out: Option<&Path>) -> anyhow::Result<Vec<String>> {
        let command = self
            .get("command")
            .ok_or_else(|| anyhow!("manifest has no command"))?;
        let mut argv = vec!["csar".to_string(), command.to_string()];
        for (k, v) in &self.entries {
            let Some(flag) = k.strip_prefix("arg.") else {
                continue;
            };
            let v = match (flag, out) {
                ("out", Some(o)) => o.display().to_string(),
                _ => v.clone(),
            };
            match v.as_str() {
                "true" => argv.push(format!("--{flag}")),
                "false" => {}
                _ => argv.push(format!("--{flag}={v}")),
            }
        }
        Ok(argv)
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn manifest_path(explicit: &Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write_output(path: &Path, bytes: &[u8], m: &mut Manifest) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    m.set("output.sha256", sha256_hex(bytes));
    Ok(())
}

fn record_quality(m: &mut Manifest, prefix: &str, q: &QualityReport) -> anyhow::Result<()> {
    if !(q.psnr_db.is_finite() && q.ssim.is_finite()) {
        bail!(
            "{prefix} metrics are not finite: psnr {} ssim {}",
            q.psnr_db,
            q.ssim
        );
    }
    m.set(&format!("{prefix}.psnr_db"), format!("{:.6}", q.psnr_db));
    m.set(&format!("{prefix}.ssim"), format!("{:.6}", q.ssim));
    m.set(&format!("{prefix}.mse"), format!("{:.6}", q.mse));
    Ok(())
}

fn resolve_sigma(img: &Image, snr_db: f64, power: SignalPower) -> anyhow::Result<f64> {
    Ok(snr_to_sigma_with(img, snr_db, power)?)
}

pub fn cmd_add_noise(a: &AddNoiseArgs) -> anyhow::Result<Manifest> {
    let clean = load_image(&a.input)?;
    let mut m = Manifest::new("add-noise");
    m.arg("in", a.input.display());
    m.arg("out", a.out.display());
    let sigma = match (a.sigma, a.snr_db) {
        (Some(s), None) => {
            m.arg("sigma", s);
            s
        }
        (None, Some(snr)) => {
            m.arg("snr-db", snr);
            m.arg("power", a.power.name());
            resolve_sigma(&clean, snr, a.power)?
        }
        _ => bail!("exactly one of --sigma and --snr-db is required"),
    };
    m.arg("seed", a.seed);
    let noisy = add_awgn(&clean, NoiseSpec::new(sigma, a.seed)?);
    m.set("sigma", sigma);
    m.set("seed", a.seed);
    write_output(&a.out, &encode_pgm(&noisy), &mut m)?;
    record_quality(
        &mut m,
        "noisy",
        &QualityReport::evaluate_quantized(&noisy, &clean)?,
    )?;
    m.save(&manifest_path(&a.manifest, &a.out))?;
    eprintln!("add-noise: sigma {sigma:.4} written to {}", a.out.display());
    Ok(m)
}

fn diagnostics_path(base: &Path, size: usize) -> PathBuf {
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = base
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    base.with_file_name(format!("{stem}_n{size}.{ext}"))
}

pub fn cmd_denoise(a: &DenoiseArgs) -> anyhow::Result<Manifest> {
    let noisy = load_image(&a.input)?;
    let mut m = Manifest::new("denoise");
    m.arg("in", a.input.display());
    m.arg("out", a.out.display());
    let sigma = match (a.sigma, a.estimate_sigma) {
        (Some(s), false) => {
            m.arg("sigma", s);
            s
        }
        (None, true) => {
            m.flag("estimate-sigma", true);
            estimate_sigma(&noisy)?
        }
        _ => bail!("exactly one of --sigma and --estimate-sigma is required"),
    };
    a.pipeline.push_args(&mut m);
    m.arg("seed", a.seed);
    if let Some(c) = &a.clean {
        m.arg("clean", c.display());
    }
    if let Some(d) = &a.diagnostics {
        m.arg("diagnostics", d.display());
    }
    m.set("sigma", sigma);
    m.set("seed", a.seed);

    let cfg = a.pipeline.config(sigma, a.seed);
    let report = denoise_with_report(&noisy, &cfg)?;
    for (stage, secs) in report.timings.entries() {
        eprintln!("denoise: {stage} {secs:.3}s");
        m.set(&format!("timing.{stage}"), format!("{secs:.6}"));
    }
    m.set(
        "timing.total",
        format!("{:.6}", report.timings.total().as_secs_f64()),
    );
    write_output(&a.out, &encode_pgm(&report.image), &mut m)?;

    if let Some(base) = &a.diagnostics {
        for s in &report.per_size {
            let path = diagnostics_path(base, s.size);
            let file =
                fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_diagnostics_csv(&s.diagnostics, std::io::BufWriter::new(file))?;
        }
    }
    if let Some(c) = &a.clean {
        let clean = load_image(c)?;
        record_quality(&mut m, "noisy", &QualityReport::evaluate(&noisy, &clean)?)?;
        record_quality(
            &mut m,
            "denoised",
            &QualityReport::evaluate(&report.image, &clean)?,
        )?;
        record_quality(
            &mut m,
            "denoised_8bit",
            &QualityReport::evaluate_quantized(&report.image, &clean)?,
        )?;
    }
    m.save(&manifest_path(&a.manifest, &a.out))?;
    Ok(m)
}

/// One CSV row of the benchmark table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub image: String,
    pub snr_db: f64,
    pub sigma: f64,
    pub method: &'static str,
    pub quality: QualityReport,
    pub seconds: f64,
}

pub const BENCHMARK_HEADER: &str = "image,snr_db,sigma,method,psnr_db,ssim,seconds";

pub fn cmd_benchmark(a: &BenchmarkArgs) -> anyhow::Result<Vec<BenchmarkRow>> {
    if a.images.is_empty() {
        bail!("no benchmark images given");
    }
    let mut m = Manifest::new("benchmark");
    m.arg(
        "images",
        a.images
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    m.arg("snr-db", join(&a.snr_db));
    m.arg("power", a.power.name());
    m.arg("crop", a.crop);
    a.pipeline.push_args(&mut m);
    m.arg("seed", a.seed);
    m.arg("out", a.out.display());

    let mut rows = Vec::new();
    for path in &a.images {
        let full = load_image(path)?;
        let clean = if a.crop > 0 {
            full.center_crop(a.crop)?
        } else {
            full
        };
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for &snr in &a.snr_db {
            let sigma = resolve_sigma(&clean, snr, a.power)?;
            let noisy = add_awgn(&clean, NoiseSpec::new(sigma, a.seed)?).quantized();
            let mut push = |method, est: &Image, seconds| -> anyhow::Result<()> {
                let quality = QualityReport::evaluate(est, &clean)?;
                rows.push(BenchmarkRow {
                    image: name.clone(),
                    snr_db: snr,
                    sigma,
                    method,
                    quality,
                    seconds,
                });
                Ok(())
            };
            push("noisy", &noisy, 0.0)?;

            let start = Instant::now();
            let out = denoise_with_report(&noisy, &a.pipeline.config(sigma, a.seed))?.image;
            push("csar", &out, start.elapsed().as_secs_f64())?;

            let start = Instant::now();
            let out = nlmeans(&noisy, &NlmConfig::for_sigma(sigma))?;
            push("nlmeans", &out, start.elapsed().as_secs_f64())?;
            eprintln!("benchmark: {name} snr {snr} dB (sigma {sigma:.3}) done");
        }
    }

    let mut csv = String::new();
    csv.push_str(BENCHMARK_HEADER);
    csv.push('\n');
    for r in &rows {
        if !(r.quality.psnr_db.is_finite() && r.quality.ssim.is_finite()) {
            bail!(
                "non-finite metrics for {} at {} dB ({})",
                r.image,
                r.snr_db,
                r.method
            );
        }
        let _ = writeln!(
            csv,
            "{},{},{:.6},{},{:.6},{:.6},{:.3}",
            r.image, r.snr_db, r.sigma, r.method, r.quality.psnr_db, r.quality.ssim, r.seconds
        );
    }
    write_output(&a.out, csv.as_bytes(), &mut m)?;
    m.set("rows", rows.len());
    m.save(&manifest_path(&a.manifest, &a.out))?;
    Ok(rows)
}

pub fn cmd_dictionary(a: &DictionaryArgs) -> anyhow::Result<()> {
    let dict = build_dictionary(a.size, a.oversample)?;
    dict.save_text(&a.out)?;
    eprintln!(
        "dictionary: {} atoms of length {} written to {}",
        dict.len(),
        dict.dim(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_replay(a: &ReplayArgs) -> anyhow::Result<()> {
    let recorded = Manifest::load(&a.manifest)?;
    let argv = recorded.replay_argv(a.out.as_deref())?;
    eprintln!("replay: {}", argv[1..].join(" "));
    let cli =
        Cli::try_parse_from(&argv).map_err(|e| anyhow!("manifest arguments rejected: {e}"))?;
    let new = match &cli.command {
        Command::AddNoise(args) => cmd_add_noise(args)?,
        Command::Denoise(args) => cmd_denoise(args)?,
        Command::Benchmark(args) => {
            cmd_benchmark(args)?;
            Manifest::load(&manifest_path(&args.manifest, &args.out))?
        }
        Command::Dictionary(_) | Command::Replay(_) => bail!("manifest command cannot be replayed"),
    };
    if a.check && new.get("output.sha256") != recorded.get("output.sha256") {
        bail!(
            "replayed output checksum {:?} differs from recorded {:?}",
            new.get("output.sha256"),
            recorded.get("output.sha256")
        );
    }
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::AddNoise(a) => cmd_add_noise(&a).map(drop),
        Command::Denoise(a) => cmd_denoise(&a).map(drop),
        Command::Benchmark(a) => cmd_benchmark(&a).map(drop),
        Command::Dictionary(a) => cmd_dictionary(&a),
        Command::Replay(a) => cmd_replay(&a),
    }
}
