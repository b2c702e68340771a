//! Command-line front end.
//!
//! Settings resolve in three layers: a named preset, an optional key=value
//! config file (or a previous run's manifest), then explicit flags. Every
//! resolved value is written back into the run manifest under `settings`, so
//! `--config run.manifest.json` replays a run exactly.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 I/O, format or
//! dimension, 3 numeric failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SolverConfig;
use crate::driver::{estimate_kernel, DeblurRun};
use crate::error::{Error, Result};
use crate::gabor::{evenly_spaced, support_for_sigma};
use crate::imgcore::io::{load_channels, load_image, save_channels, save_image, save_kernel};
use crate::imgcore::{BlurKernel, RasterImage};
use crate::nonblind::{deconvolve, deconvolve_channels, NonblindConfig, NonblindMethod};
use crate::pyramid::{build_schedule, PyramidSchedule, SeededRng};
use crate::quality::{defocus_score, mse, psnr_from_mse, QualityReport};
use crate::synth::{make_kernel, synthesize, test_corpus, KernelSpec, NoiseSpec};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "OMNIDEBLUR_THREADS";

/// File name of the corpus manifest written by `synth` and read by `bench`.
pub const CORPUS_MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "omnideblur", version, about = "Blind deblurring with omnidirectional Gabor edges")]
struct Cli {
    /// Log progress to stderr (-v for per-level lines, -vv for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the blur kernel and restore the image.
    Deblur(DeblurArgs),
    /// Estimate the blur kernel only.
    EstimateKernel(EstimateArgs),
    /// No-reference quality report for one image.
    Score(ScoreArgs),
    /// PSNR between two images of equal size.
    Psnr(PsnrArgs),
    /// Write blurred/sharp test pairs with a known kernel.
    Synth(SynthArgs),
    /// Compare Gabor filter counts over a corpus.
    Bench(BenchArgs),
}

/// Solver overrides shared by every subcommand that runs the estimator.
#[derive(Args, Debug, Default, Clone)]
struct SolverArgs {
    /// Named parameter set: `baseline` or `tuned`.
    #[arg(long)]
    preset: Option<String>,
    /// key=value settings file, or a manifest from a previous run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_kernel: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    step_t: Option<f64>,
    #[arg(long)]
    fista_iters: Option<usize>,
    #[arg(long)]
    irls_outer: Option<usize>,
    #[arg(long)]
    cg_inner: Option<usize>,
    #[arg(long)]
    em_iters: Option<usize>,
    #[arg(long)]
    scale_ratio: Option<f64>,
    /// Comma-separated orientations in degrees, e.g. `0,60,120`.
    #[arg(long)]
    thetas: Option<String>,
    #[arg(long)]
    gabor_lambda: Option<f64>,
    #[arg(long)]
    gabor_sigma: Option<f64>,
    #[arg(long)]
    gabor_psi: Option<f64>,
    #[arg(long)]
    gabor_gamma: Option<f64>,
    #[arg(long)]
    gabor_support: Option<usize>,
    #[arg(long)]
    normalize: Option<bool>,
    #[arg(long)]
    recenter: Option<bool>,
    /// Non-blind method: `tikhonov` or `sparse`.
    #[arg(long)]
    nonblind: Option<String>,
    #[arg(long)]
    nb_reg: Option<f64>,
    #[arg(long)]
    nb_iters: Option<usize>,
}

impl SolverArgs {
    fn pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(|v| v.to_string()));
        put("min-kernel", self.min_kernel.map(|v| v.to_string()));
        put("alpha", self.alpha.map(|v| v.to_string()));
        put("zeta", self.zeta.map(|v| v.to_string()));
        put("step-t", self.step_t.map(|v| v.to_string()));
        put("fista-iters", self.fista_iters.map(|v| v.to_string()));
        put("irls-outer", self.irls_outer.map(|v| v.to_string()));
        put("cg-inner", self.cg_inner.map(|v| v.to_string()));
        put("em-iters", self.em_iters.map(|v| v.to_string()));
        put("scale-ratio", self.scale_ratio.map(|v| v.to_string()));
        put("thetas", self.thetas.clone());
        put("gabor-lambda", self.gabor_lambda.map(|v| v.to_string()));
        put("gabor-sigma", self.gabor_sigma.map(|v| v.to_string()));
        put("gabor-psi", self.gabor_psi.map(|v| v.to_string()));
        put("gabor-gamma", self.gabor_gamma.map(|v| v.to_string()));
        put("gabor-support", self.gabor_support.map(|v| v.to_string()));
        put("normalize", self.normalize.map(|v| v.to_string()));
        put("recenter", self.recenter.map(|v| v.to_string()));
        put("nonblind", self.nonblind.clone());
        put("nb-reg", self.nb_reg.map(|v| v.to_string()));
        put("nb-iters", self.nb_iters.map(|v| v.to_string()));
        out
    }
}

#[derive(Args, Debug)]
struct DeblurArgs {
    input: PathBuf,
    /// Largest kernel side to estimate (odd).
    #[arg(long)]
    kernel_size: usize,
    /// Restored image (.png or .pgm); kernel, trace and manifest go alongside.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    input: PathBuf,
    #[arg(long)]
    kernel_size: usize,
    /// Kernel text file; trace and manifest go alongside.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    input: PathBuf,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PsnrArgs {
    image: PathBuf,
    reference: PathBuf,
    /// Peak value; intensities are expressed on a `[0, max]` scale.
    #[arg(long, default_value_t = 1.0)]
    max: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Kernel spec: `gaussian:5:1.5`, `motion:9:30`, `box:3` or `walk:15:<seed>`.
    #[arg(long)]
    kernel: String,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Blur this image instead of generating test images.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Side of generated test images.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Number of generated test images.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Directory holding a synth manifest, or plain blurred images.
    corpus: PathBuf,
    #[arg(long)]
    kernel_size: usize,
    /// Filter counts to compare.
    #[arg(long, value_delimiter = ',', default_values_t = [3usize, 4, 5, 6, 8])]
    variants: Vec<usize>,
    /// JSON report; the text table and manifest go alongside.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

/// Fully resolved parameters for one estimator run.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub preset: String,
    pub solver: SolverConfig,
    pub nonblind: NonblindConfig,
    pub kernel_size: usize,
    pub min_kernel: usize,
    pub seed: u64,
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_thetas(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value("thetas", s))
        .collect()
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('_', "-").to_ascii_lowercase()
}

impl Settings {
    pub fn from_preset(name: &str) -> Result<Self> {
        Ok(Self {
            preset: name.to_string(),
            solver: SolverConfig::preset(name)?,
            nonblind: NonblindConfig::preset(name)?,
            kernel_size: 0,
            min_kernel: 3,
            seed: 0,
        })
    }

    /// Sets one parameter by its flag name (without the leading dashes).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let s = &mut self.solver;
        match key.as_str() {
            "alpha" => s.alpha = parse_value(&key, value)?,
            "zeta" => s.zeta = parse_value(&key, value)?,
            "step-t" => s.step_t = parse_value(&key, value)?,
            "fista-iters" => s.fista_iters = parse_value(&key, value)?,
            "irls-outer" => s.irls_outer = parse_value(&key, value)?,
            "cg-inner" => s.cg_inner = parse_value(&key, value)?,
            "em-iters" => s.em_iters = parse_value(&key, value)?,
            "scale-ratio" => s.scale_ratio = parse_value(&key, value)?,
            "thetas" => s.thetas = parse_thetas(value)?,
            "gabor-lambda" => s.gabor.wavelength = parse_value(&key, value)?,
            "gabor-sigma" => s.gabor.sigma = parse_value(&key, value)?,
            "gabor-psi" => s.gabor.phase_deg = parse_value(&key, value)?,
            "gabor-gamma" => s.gabor.aspect = parse_value(&key, value)?,
            "gabor-support" => s.gabor.support = parse_value(&key, value)?,
            "normalize" => s.normalize = parse_value(&key, value)?,
            "recenter" => s.recenter = parse_value(&key, value)?,
            "nonblind" => self.nonblind.method = NonblindMethod::from_str(value.trim())?,
            "nb-reg" => self.nonblind.reg_weight = parse_value(&key, value)?,
            "nb-iters" => self.nonblind.inner_iters = parse_value(&key, value)?,
            "kernel-size" => self.kernel_size = parse_value(&key, value)?,
            "min-kernel" => self.min_kernel = parse_value(&key, value)?,
            "seed" => self.seed = parse_value(&key, value)?,
            "preset" => {
                if value.trim() != self.preset {
                    return Err(Error::Config("`preset` must come before other settings".into()));
                }
            }
            other => return Err(Error::Config(format!("unknown setting `{other}`"))),
        }
        Ok(())
    }

    /// Every parameter as flag-name/value pairs that [`Settings::apply`] reads back exactly.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let s = &self.solver;
        let method = match self.nonblind.method {
            NonblindMethod::TikhonovFrequency => "tikhonov",
            NonblindMethod::SparseGradient => "sparse",
        };
        let thetas: Vec<String> = s.thetas.iter().map(|t| t.to_string()).collect();
        [
            ("preset", self.preset.clone()),
            ("alpha", s.alpha.to_string()),
            ("zeta", s.zeta.to_string()),
            ("step-t", s.step_t.to_string()),
            ("fista-iters", s.fista_iters.to_string()),
            ("irls-outer", s.irls_outer.to_string()),
            ("cg-inner", s.cg_inner.to_string()),
            ("em-iters", s.em_iters.to_string()),
            ("scale-ratio", s.scale_ratio.to_string()),
            ("thetas", thetas.join(",")),
            ("gabor-lambda", s.gabor.wavelength.to_string()),
            ("gabor-sigma", s.gabor.sigma.to_string()),
            ("gabor-psi", s.gabor.phase_deg.to_string()),
            ("gabor-gamma", s.gabor.aspect.to_string()),
            ("gabor-support", s.gabor.support.to_string()),
            ("normalize", s.normalize.to_string()),
            ("recenter", s.recenter.to_string()),
            ("nonblind", method.to_string()),
            ("nb-reg", self.nonblind.reg_weight.to_string()),
            ("nb-iters", self.nonblind.inner_iters.to_string()),
            ("kernel-size", self.kernel_size.to_string()),
            ("min-kernel", self.min_kernel.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.nonblind.validate()?;
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<PyramidSchedule> {
        build_schedule(self.kernel_size, self.solver.scale_ratio, self.min_kernel)
    }

    /// Applies `pairs` in order. When the Gabor envelope width changes and
    /// the window is not given explicitly, the window follows the 4σ rule.
    pub fn apply_all(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let keys: Vec<String> = pairs.iter().map(|(k, _)| normalize_key(k)).collect();
        for (k, v) in pairs {
            self.apply(k, v)?;
        }
        if keys.iter().any(|k| k == "gabor-sigma") && !keys.iter().any(|k| k == "gabor-support") {
            self.solver.gabor.support = support_for_sigma(self.solver.gabor.sigma);
        }
        Ok(())
    }
}

/// Reads settings from a key=value file or from the `settings` object of a
/// run manifest. Blank lines and `#` comments are ignored.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('{') {
        let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        return Ok(manifest.settings.into_iter().collect());
    }
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected key=value", path.display(), n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn resolve(args: &SolverArgs, kernel_size: usize) -> Result<Settings> {
    let file_pairs = match &args.config {
        Some(p) => read_config_file(p)?,
        None => Vec::new(),
    };
    let file_preset = file_pairs
        .iter()
        .find(|(k, _)| normalize_key(k) == "preset")
        .map(|(_, v)| v.trim().to_string());
    let preset = args.preset.clone().or(file_preset).unwrap_or_else(|| "baseline".into());
    let mut settings = Settings::from_preset(&preset)?;
    let mut pairs: Vec<(String, String)> = file_pairs
        .into_iter()
        .filter(|(k, _)| normalize_key(k) != "preset")
        .collect();
    pairs.extend(args.pairs());
    pairs.push(("kernel-size".into(), kernel_size.to_string()));
    settings.apply_all(&pairs)?;
    settings.validate()?;
    Ok(settings)
}

/// One corpus entry; paths are relative to the corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub blurred: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
}

/// Record of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub settings: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    /// Output path to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub wall_clock_ms: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub level_ms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub corpus: Vec<CorpusEntry>,
}

impl RunManifest {
    fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.into(),
            settings: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: BTreeMap::new(),
            seed: None,
            wall_clock_ms: 0.0,
            level_ms: Vec::new(),
            corpus: Vec::new(),
        }
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    fn output(&mut self, p: &Path) -> Result<()> {
        self.outputs.insert(p.display().to_string(), file_sha256(p)?);
        Ok(())
    }

    fn write(&mut self, path: &Path, started: Instant) -> Result<()> {
        self.wall_clock_ms = started.elapsed().as_secs_f64() * 1e3;
        let text = serde_json::to_string_pretty(self).expect("manifest is always serializable");
        write_text(path, &(text + "\n"))
    }
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) => 1,
        Error::Io { .. } | Error::Format { .. } | Error::Dimension(_) => 2,
        _ => 3,
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("RUST_LOG")
        .format_timestamp(None)
        .try_init();
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = parse_value(THREADS_ENV, &raw)?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_ENV} must be at least 1")));
    }
    // A pool may already exist when the CLI runs more than once in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Entry point for the binary: parses `std::env::args` and returns the exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Runs the CLI on an explicit argument list (the first item is the program name).
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    let result = init_threads().and_then(|_| match cli.command {
        Command::Deblur(a) => cmd_deblur(a),
        Command::EstimateKernel(a) => cmd_estimate(a),
        Command::Score(a) => cmd_score(a),
        Command::Psnr(a) => cmd_psnr(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Bench(a) => cmd_bench(a),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code(&e);
            if code == 1 {
                eprintln!("run with --help for usage");
            }
            code
        }
    }
}

fn run_estimator(input: &Path, settings: &Settings) -> Result<(RasterImage, BlurKernel, DeblurRun)> {
    let y = load_image(input)?;
    let schedule = settings.schedule()?;
    let mut rng = SeededRng::new(settings.seed);
    let (kernel, run) = estimate_kernel(&y, &settings.solver, &schedule, &mut rng)?;
    Ok((y, kernel, run))
}

fn estimator_manifest(name: &str, input: &Path, settings: &Settings, run: &DeblurRun) -> RunManifest {
    let mut m = RunManifest::new(name);
    m.settings = settings.to_pairs();
    m.seed = Some(settings.seed);
    m.level_ms = run.levels.iter().map(|l| l.elapsed_ms).collect();
    m.input(input);
    m
}

fn cmd_deblur(a: DeblurArgs) -> Result<()> {
    let started = Instant::now();
    let settings = resolve(&a.solver, a.kernel_size)?;
    let (luma, kernel, run) = run_estimator(&a.input, &settings)?;
    let planes = load_channels(&a.input)?;
    let restored = if planes.len() == 1 {
        vec![deconvolve(&luma, &kernel, &settings.nonblind)?]
    } else {
        deconvolve_channels(&planes, &kernel, &settings.nonblind)?
    };

    let kernel_path = sibling(&a.out, "kernel.txt");
    let trace_path = sibling(&a.out, "trace.json");
    save_channels(&restored, &a.out)?;
    save_kernel(&kernel, &kernel_path)?;
    write_text(&trace_path, &(run.to_json() + "\n"))?;

    let mut m = estimator_manifest("deblur", &a.input, &settings, &run);
    for p in [&a.out, &kernel_path, &trace_path] {
        m.output(p)?;
    }
    let manifest_path = a.manifest.unwrap_or_else(|| sibling(&a.out, "manifest.json"));
    m.write(&manifest_path, started)
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let started = Instant::now();
    let settings = resolve(&a.solver, a.kernel_size)?;
    let (_, kernel, run) = run_estimator(&a.input, &settings)?;
    let trace_path = sibling(&a.out, "trace.json");
    save_kernel(&kernel, &a.out)?;
    write_text(&trace_path, &(run.to_json() + "\n"))?;

    let mut m = estimator_manifest("estimate-kernel", &a.input, &settings, &run);
    m.output(&a.out)?;
    m.output(&trace_path)?;
    let manifest_path = a.manifest.unwrap_or_else(|| sibling(&a.out, "manifest.json"));
    m.write(&manifest_path, started)
}

/// Prints the report, writes it to `out` if given, and writes a manifest when
/// an output or manifest path was requested.
fn emit_report(
    sub: &str,
    report: &QualityReport,
    inputs: &[&Path],
    settings: BTreeMap<String, String>,
    out: Option<PathBuf>,
    manifest: Option<PathBuf>,
    started: Instant,
) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report is always serializable") + "\n";
    print!("{json}");
    let mut m = RunManifest::new(sub);
    m.settings = settings;
    for p in inputs {
        m.input(p);
    }
    if let Some(out) = &out {
        write_text(out, &json)?;
        m.output(out)?;
    }
    let manifest_path = manifest.or_else(|| out.as_ref().map(|o| sibling(o, "manifest.json")));
    match manifest_path {
        Some(p) => m.write(&p, started),
        None => Ok(()),
    }
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let started = Instant::now();
    let img = load_image(&a.input)?;
    let report = QualityReport::of(&img)?;
    emit_report("score", &report, &[&a.input], BTreeMap::new(), a.out, a.manifest, started)
}

fn cmd_psnr(a: PsnrArgs) -> Result<()> {
    let started = Instant::now();
    if !(a.max > 0.0 && a.max.is_finite()) {
        return Err(Error::Config(format!("--max must be positive, got {}", a.max)));
    }
    let img = load_image(&a.image)?;
    let reference = load_image(&a.reference)?;
    let e = mse(&img.map(|v| v * a.max), &reference.map(|v| v * a.max))?;
    let (q, s) = defocus_score(&img)?;
    let report = QualityReport {
        mse: Some(e),
        psnr_db: Some(psnr_from_mse(e, a.max)),
        defocus_score: q,
        sigma_d: s,
    };
    let settings = BTreeMap::from([("max".to_string(), a.max.to_string())]);
    emit_report("psnr", &report, &[&a.image, &a.reference], settings, a.out, a.manifest, started)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let started = Instant::now();
    let spec = KernelSpec::from_str(&a.kernel)?;
    let kernel = make_kernel(&spec)?;
    if !(a.noise_sigma >= 0.0 && a.noise_sigma.is_finite()) {
        return Err(Error::Config(format!("--noise-sigma must be non-negative, got {}", a.noise_sigma)));
    }
    let sources: Vec<(String, RasterImage)> = match &a.input {
        Some(p) => {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
            vec![(stem, load_image(p)?)]
        }
        None => {
            if a.count == 0 {
                return Err(Error::Config("--count must be at least 1".into()));
            }
            test_corpus(a.size, a.count)?
                .into_iter()
                .enumerate()
                .map(|(i, img)| (format!("img{i:03}"), img))
                .collect()
        }
    };
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;

    let mut m = RunManifest::new("synth");
    m.settings = BTreeMap::from([
        ("kernel".to_string(), spec.to_string()),
        ("noise-sigma".to_string(), a.noise_sigma.to_string()),
        ("size".to_string(), a.size.to_string()),
        ("count".to_string(), a.count.to_string()),
    ]);
    m.seed = Some(a.seed);
    if let Some(p) = &a.input {
        m.input(p);
    }
    let kernel_name = "kernel.txt".to_string();
    let kernel_path = a.out_dir.join(&kernel_name);
    save_kernel(&kernel, &kernel_path)?;
    m.output(&kernel_path)?;
    for (i, (name, sharp)) in sources.iter().enumerate() {
        let noise = NoiseSpec {
            sigma: a.noise_sigma,
            seed: SeededRng::derive_seed(a.seed, i as u64),
        };
        let blurred = synthesize(sharp, &kernel, &noise)?;
        let entry = CorpusEntry {
            name: name.clone(),
            blurred: format!("{name}.blurred.png"),
            sharp: Some(format!("{name}.sharp.png")),
            kernel: Some(kernel_name.clone()),
        };
        let sharp_path = a.out_dir.join(entry.sharp.as_ref().unwrap());
        let blurred_path = a.out_dir.join(&entry.blurred);
        save_image(sharp, &sharp_path)?;
        save_image(&blurred, &blurred_path)?;
        m.output(&sharp_path)?;
        m.output(&blurred_path)?;
        m.corpus.push(entry);
    }
    m.write(&a.out_dir.join(CORPUS_MANIFEST), started)
}

/// Lists a corpus directory: the synth manifest if present, otherwise every
/// `.png`/`.pgm` file as a blurred-only entry, sorted by name.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusEntry>> {
    let manifest = dir.join(CORPUS_MANIFEST);
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: manifest.clone(),
            reason: e.to_string(),
        })?;
        return Ok(m.corpus);
    }
    let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for item in listing {
        let path = item.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "pgm")) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names
        .into_iter()
        .map(|n| CorpusEntry {
            name: Path::new(&n).file_stem().and_then(|s| s.to_str()).unwrap_or(&n).to_string(),
            blurred: n,
            sharp: None,
            kernel: None,
        })
        .collect())
}

/// One table cell: a filter count applied to one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub filters: usize,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub report: Option<QualityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub blurred: QualityReport,
    pub variants: Vec<BenchCell>,
}

/// Column means over rows; PSNR means skip infinite and missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMean {
    pub label: String,
    pub defocus_score: Option<f64>,
    pub psnr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub kernel_size: usize,
    pub variants: Vec<usize>,
    pub has_ground_truth: bool,
    pub rows: Vec<BenchRow>,
    pub means: Vec<BenchMean>,
    pub failed_cells: usize,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn report_for(img: &RasterImage, sharp: Option<&RasterImage>) -> Result<QualityReport> {
    match sharp {
        Some(s) => QualityReport::against(img, s, 1.0),
        None => QualityReport::of(img),
    }
}

/// Runs every (image, filter count) pair. Each image uses a seed derived from
/// `settings.seed` and its index, shared by all of its variants.
pub fn run_bench(dir: &Path, entries: &[CorpusEntry], variants: &[usize], settings: &Settings) -> Result<BenchReport> {
    if entries.is_empty() {
        return Err(Error::Config(format!("corpus {} is empty", dir.display())));
    }
    if variants.is_empty() || variants.contains(&0) {
        return Err(Error::Config("variants must be positive filter counts".into()));
    }
    let loaded: Vec<(RasterImage, Option<RasterImage>)> = entries
        .iter()
        .map(|e| {
            let blurred = load_image(dir.join(&e.blurred))?;
            let sharp = e.sharp.as_ref().map(|s| load_image(dir.join(s))).transpose()?;
            Ok((blurred, sharp))
        })
        .collect::<Result<_>>()?;
    let schedule = settings.schedule()?;

    let jobs: Vec<(usize, usize)> = (0..entries.len())
        .flat_map(|i| variants.iter().map(move |&n| (i, n)))
        .collect();
    let cells: Vec<BenchCell> = jobs
        .par_iter()
        .map(|&(i, n)| {
            let (blurred, sharp) = &loaded[i];
            let mut solver = settings.solver.clone();
            solver.thetas = evenly_spaced(n);
            let mut rng = SeededRng::new(SeededRng::derive_seed(settings.seed, i as u64));
            let outcome = estimate_kernel(blurred, &solver, &schedule, &mut rng)
                .and_then(|(k, _)| deconvolve(blurred, &k, &settings.nonblind))
                .and_then(|x| report_for(&x, sharp.as_ref()));
            match outcome {
                Ok(r) => BenchCell { filters: n, report: Some(r), error: None },
                Err(e) => {
                    log::warn!("{} with {n} filters failed: {e}", entries[i].name);
                    BenchCell { filters: n, report: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(entries.len());
    for (i, (entry, (blurred, sharp))) in entries.iter().zip(&loaded).enumerate() {
        rows.push(BenchRow {
            name: entry.name.clone(),
            blurred: report_for(blurred, sharp.as_ref())?,
            variants: cells[i * variants.len()..(i + 1) * variants.len()].to_vec(),
        });
    }
    let mut means = vec![BenchMean {
        label: "blur".into(),
        defocus_score: mean_of(rows.iter().map(|r| r.blurred.defocus_score)),
        psnr_db: mean_of(rows.iter().filter_map(|r| r.blurred.psnr_db)),
    }];
    for (j, &n) in variants.iter().enumerate() {
        let reports = || rows.iter().filter_map(|r| r.variants[j].report.as_ref());
        means.push(BenchMean {
            label: n.to_string(),
            defocus_score: mean_of(reports().map(|r| r.defocus_score)),
            psnr_db: mean_of(reports().filter_map(|r| r.psnr_db)),
        });
    }
    Ok(BenchReport {
        kernel_size: settings.kernel_size,
        variants: variants.to_vec(),
        has_ground_truth: loaded.iter().any(|(_, s)| s.is_some()),
        failed_cells: cells.iter().filter(|c| c.report.is_none()).count(),
        rows,
        means,
    })
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

impl BenchReport {
    /// Aligned human-readable table: one row per image plus a mean row,
    /// defocus columns first and PSNR columns when ground truth exists.
    pub fn to_table(&self) -> String {
        let mut header = vec!["image".to_string(), "Q_B blur".to_string()];
        header.extend(self.variants.iter().map(|n| format!("Q_B {n}f")));
        if self.has_ground_truth {
            header.push("PSNR blur".into());
            header.extend(self.variants.iter().map(|n| format!("PSNR {n}f")));
        }
        let mut lines = vec![header];
        for r in &self.rows {
            let mut line = vec![r.name.clone(), fmt_cell(Some(r.blurred.defocus_score))];
            line.extend(r.variants.iter().map(|c| fmt_cell(c.report.as_ref().map(|q| q.defocus_score))));
            if self.has_ground_truth {
                line.push(fmt_cell(r.blurred.psnr_db));
                line.extend(r.variants.iter().map(|c| fmt_cell(c.report.as_ref().and_then(|q| q.psnr_db))));
            }
            lines.push(line);
        }
        let mut mean = vec!["mean".to_string()];
        mean.extend(self.means.iter().map(|m| fmt_cell(m.defocus_score)));
        if self.has_ground_truth {
            mean.extend(self.means.iter().map(|m| fmt_cell(m.psnr_db)));
        }
        lines.push(mean);
        for l in &mut lines[1..] {
            l.resize(lines_width(&self.variants, self.has_ground_truth), "-".into());
        }

        let cols = lines[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let mut row = String::new();
            for (c, cell) in l.iter().enumerate() {
                if c == 0 {
                    let _ = write!(row, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(row, "  {cell:>w$}", w = widths[c]);
                }
            }
            out.push_str(row.trim_end());
            out.push('\n');
        }
        out
    }
}

fn lines_width(variants: &[usize], psnr: bool) -> usize {
    let per = 1 + variants.len();
    1 + if psnr { 2 * per } else { per }
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let started = Instant::now();
    let settings = resolve(&a.solver, a.kernel_size)?;
    let entries = load_corpus(&a.corpus)?;
    let report = run_bench(&a.corpus, &entries, &a.variants, &settings)?;
    let table = report.to_table();
    print!("{table}");

    let table_path = sibling(&a.out, "txt");
    let json = serde_json::to_string_pretty(&report).expect("report is always serializable") + "\n";
    write_text(&a.out, &json)?;
    write_text(&table_path, &table)?;

    let mut m = RunManifest::new("bench");
    m.settings = settings.to_pairs();
    m.settings.insert(
        "variants".into(),
        a.variants.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
    );
    m.seed = Some(settings.seed);
    m.input(&a.corpus);
    m.output(&a.out)?;
    m.output(&table_path)?;
    let manifest_path = a.manifest.unwrap_or_else(|| sibling(&a.out, "manifest.json"));
    m.write(&manifest_path, started)?;
    if report.failed_cells > 0 {
        return Err(Error::Degenerate(format!("{} bench cells failed", report.failed_cells)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_round_trip_through_pairs() {
        let mut s = Settings::from_preset("tuned").unwrap();
        s.kernel_size = 15;
        s.solver.thetas = vec![0.0, 60.0, 120.0];
        s.nonblind.reg_weight = 3.7e-4;
        let pairs: Vec<(String, String)> = s.to_pairs().into_iter().collect();
        let mut back = Settings::from_preset("tuned").unwrap();
        back.apply_all(&pairs.into_iter().filter(|(k, _)| k != "preset").collect::<Vec<_>>())
            .unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn sigma_override_resizes_the_window() {
        let mut s = Settings::from_preset("baseline").unwrap();
        s.apply_all(&[("gabor-sigma".into(), "2".into())]).unwrap();
        assert_eq!(s.solver.gabor.support, 9);
        s.apply_all(&[("gabor_sigma".into(), "2".into()), ("gabor-support".into(), "5".into())])
            .unwrap();
        assert_eq!(s.solver.gabor.support, 5);
    }

    #[test]
    fn unknown_and_malformed_settings_are_config_errors() {
        let mut s = Settings::from_preset("baseline").unwrap();
        assert!(matches!(s.apply("gamma-ray", "1"), Err(Error::Config(_))));
        assert!(matches!(s.apply("alpha", "lots"), Err(Error::Config(_))));
        assert!(matches!(s.apply("nonblind", "wiener"), Err(Error::Config(_))));
        assert!(Settings::from_preset("fancy").is_err());
    }

    #[test]
    fn config_file_accepts_comments_and_rejects_junk() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.conf");
        fs::write(&good, "# comment\nalpha = 5\n\nthetas=0,60,120 # three\n").unwrap();
        let pairs = read_config_file(&good).unwrap();
        assert_eq!(pairs, vec![("alpha".into(), "5".into()), ("thetas".into(), "0,60,120".into())]);
        let bad = dir.path().join("bad.conf");
        fs::write(&bad, "alpha 5\n").unwrap();
        assert!(matches!(read_config_file(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("a.conf");
        fs::write(&conf, "preset=tuned\nalpha=5\nzeta=7\n").unwrap();
        let args = SolverArgs {
            config: Some(conf),
            alpha: Some(9.0),
            ..Default::default()
        };
        let s = resolve(&args, 9).unwrap();
        assert_eq!(s.preset, "tuned");
        assert!(s.solver.normalize);
        assert_eq!((s.solver.alpha, s.solver.zeta), (9.0, 7.0));
        assert_eq!(s.kernel_size, 9);
    }

    #[test]
    fn even_kernel_size_is_a_usage_error() {
        let err = resolve(&SolverArgs::default(), 14).unwrap_err();
        assert_eq!(exit_code(&err), 1);
    }

    #[test]
    fn exit_codes_follow_the_taxonomy() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::Dimension("x".into())), 2);
        assert_eq!(
            exit_code(&Error::AtLevel {
                level: 2,
                source: Box::new(Error::NumericDivergence { stage: "fista", iteration: 1 })
            }),
            3
        );
    }

    #[test]
    fn table_has_one_line_per_row_plus_header_and_mean() {
        let q = |d: f64, p: Option<f64>| QualityReport { mse: None, psnr_db: p, defocus_score: d, sigma_d: 0.0 };
        let report = BenchReport {
            kernel_size: 9,
            variants: vec![3, 4],
            has_ground_truth: true,
            rows: vec![BenchRow {
                name: "a".into(),
                blurred: q(0.5, Some(20.0)),
                variants: vec![
                    BenchCell { filters: 3, report: Some(q(0.2, Some(25.0))), error: None },
                    BenchCell { filters: 4, report: None, error: Some("boom".into()) },
                ],
            }],
            means: vec![],
            failed_cells: 1,
        };
        let table = report.to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("Q_B 3f") && lines[0].contains("PSNR 4f"));
        assert!(lines[1].contains("25.0000") && lines[1].contains('-'));
    }
}
