//! Command-line orchestration: `fit-discretizer`, `train`, `colorize`,
//! `colorize-video`, and `analyze`.
//!
//! Every option can come from a flag or from a `key = value` config file
//! (`--config`), with precedence flags > file > defaults. Each run writes
//! `run_manifest.txt` into the output directory: the fully resolved
//! configuration in config-file syntax, so `--config run_manifest.txt`
//! reruns it. With `--threads 1` a rerun reproduces every output file
//! bit-exactly.
//!
//! Exit codes: 0 success, 2 configuration errors, 3 data and format
//! errors, 4 numeric failures.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use ndarray::{s, Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::colorspace::{luminance, RgbImage};
use crate::datapipe::{self, AugmentationSpec, DEFAULT_FRAME};
use crate::decoder::{self, ProbabilityVolume, DEFAULT_TEMPERATURE};
use crate::discretizer::{ColorDiscretizer, DEFAULT_BINS, DEFAULT_GRID_STEP, DEFAULT_LAMBDA};
use crate::nn::{Adam, AdamConfig};
use crate::render;
use crate::unet::{self, ColorUNet, ColorUNetConfig, TrainConfig, TrainLogRow, DOWNSCALE};
use crate::video::{self, FrameSequence, SmoothingSpec, DEFAULT_ALPHA, DEFAULT_WINDOW};
use crate::{Error, Result};

/// Fraction of the corpus held out for validation.
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

/// Full-scale batch default for the command line. The library's
/// [`TrainConfig`] keeps a smaller default sized for smoke tests.
pub const DEFAULT_CLI_BATCH: usize = 64;

const LOG_HEADER: &str = "iter,phase,lr,train_loss,val_loss";
const MANIFEST_NAME: &str = "run_manifest.txt";

#[derive(Debug, Parser)]
#[command(
    name = "colorunet",
    version,
    about = "Image colorization: per-pixel classification over discretized chrominance"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the chrominance discretizer on an image corpus.
    FitDiscretizer(FitDiscretizerArgs),
    /// Train the colorization network.
    Train(TrainArgs),
    /// Colorize one grayscale image at one or more temperatures.
    Colorize(ColorizeArgs),
    /// Colorize a directory of frames with temporal smoothing.
    ColorizeVideo(ColorizeVideoArgs),
    /// Render diagnostics: loss curve and comparative color histograms.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Config file in `key = value` form; flags override file values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores, 1 is the deterministic mode.
    #[arg(long)]
    threads: Option<usize>,
    /// Master seed; all randomness in a run derives from it.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct FitDiscretizerArgs {
    #[command(flatten)]
    common: Common,
    /// Image corpus: a directory (searched recursively) or a single file.
    #[arg(long, value_name = "PATH")]
    images: Option<PathBuf>,
    /// Number of chrominance bins to keep.
    #[arg(long)]
    n: Option<usize>,
    /// Rebalancing mix toward uniform, in [0, 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// Side length of one chrominance grid cell.
    #[arg(long)]
    grid_step: Option<f64>,
    /// Square frame side images are fitted into before counting.
    #[arg(long)]
    frame: Option<usize>,
    /// Held-out fraction excluded from fitting; with the same seed this
    /// matches train's split, so the discretizer never sees validation
    /// images.
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Image corpus: a directory (searched recursively) or a single file.
    #[arg(long, value_name = "PATH")]
    images: Option<PathBuf>,
    /// Fitted discretizer file.
    #[arg(long, value_name = "FILE")]
    discretizer: Option<PathBuf>,
    /// Square frame side for training samples; must be a multiple of 8.
    #[arg(long)]
    frame: Option<usize>,
    /// Channel count of the first convolution group.
    #[arg(long)]
    base_filters: Option<usize>,
    /// Images per iteration.
    #[arg(long)]
    batch: Option<usize>,
    /// Iterations in the first phase.
    #[arg(long)]
    phase1_steps: Option<usize>,
    /// Learning rate in the first phase.
    #[arg(long)]
    phase1_lr: Option<f64>,
    /// Iterations in the second phase.
    #[arg(long)]
    phase2_steps: Option<usize>,
    /// Learning rate in the second phase.
    #[arg(long)]
    phase2_lr: Option<f64>,
    /// Validation cadence in iterations; 0 disables.
    #[arg(long)]
    val_every: Option<usize>,
    /// Periodic checkpoint cadence in iterations; 0 disables.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Fraction of the corpus held out for validation.
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Expand each training image into its seven deformed variants.
    #[arg(long, overrides_with = "no_augment")]
    augment: bool,
    /// Train on original images only.
    #[arg(long, overrides_with = "augment")]
    no_augment: bool,
}

#[derive(Debug, clap::Args)]
pub struct ColorizeArgs {
    #[command(flatten)]
    common: Common,
    /// Input image; only its luminance is used.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Trained checkpoint file.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Fitted discretizer file.
    #[arg(long, value_name = "FILE")]
    discretizer: Option<PathBuf>,
    /// Decoding temperature; repeat for one output per temperature.
    #[arg(long, value_name = "T", allow_negative_numbers = true)]
    temperature: Vec<f64>,
    /// Also write per-pixel confidence maps (top1 and top1/top2 ratio).
    #[arg(long)]
    confidence: bool,
    /// Also write the predicted color histogram as CSV.
    #[arg(long)]
    histogram: bool,
}

#[derive(Debug, clap::Args)]
pub struct ColorizeVideoArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of input frames named frame_NNNNNN.png.
    #[arg(long, value_name = "DIR")]
    frames: Option<PathBuf>,
    /// Trained checkpoint file.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Fitted discretizer file.
    #[arg(long, value_name = "FILE")]
    discretizer: Option<PathBuf>,
    /// Decoding temperature.
    #[arg(long, value_name = "T", allow_negative_numbers = true)]
    temperature: Option<f64>,
    /// Temporal window length in frames.
    #[arg(long)]
    window: Option<usize>,
    /// Exponential decay rate of past frames' influence.
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    /// Training log CSV to render as a loss curve.
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
    /// Image corpus for the ground-truth histogram (needs --discretizer
    /// and --checkpoint too).
    #[arg(long, value_name = "PATH")]
    images: Option<PathBuf>,
    /// Fitted discretizer file, for the codebook histogram.
    #[arg(long, value_name = "FILE")]
    discretizer: Option<PathBuf>,
    /// Trained checkpoint file, for the predicted histogram.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Square frame side images are fitted into before encoding.
    #[arg(long)]
    frame: Option<usize>,
}

/// Fully resolved configuration of one run: the union of every
/// subcommand's settings, with the fields the subcommand does not use
/// left at their defaults. The manifest records exactly the fields the
/// subcommand reads.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub subcommand: &'static str,
    pub images: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub out: PathBuf,
    pub discretizer: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub n: usize,
    pub lambda: f64,
    pub grid_step: f64,
    pub frame: usize,
    pub temperatures: Vec<f64>,
    pub batch: usize,
    pub base_filters: usize,
    pub phase1_steps: usize,
    pub phase1_lr: f64,
    pub phase2_steps: usize,
    pub phase2_lr: f64,
    pub val_every: usize,
    pub checkpoint_every: usize,
    pub val_fraction: f64,
    pub augment: bool,
    pub confidence: bool,
    pub histogram: bool,
    pub window: usize,
    pub alpha: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let net = ColorUNetConfig::default();
        RunConfig {
            subcommand: "",
            images: None,
            input: None,
            frames: None,
            log: None,
            out: PathBuf::from("."),
            discretizer: None,
            checkpoint: None,
            n: DEFAULT_BINS,
            lambda: DEFAULT_LAMBDA,
            grid_step: DEFAULT_GRID_STEP,
            frame: DEFAULT_FRAME,
            temperatures: vec![DEFAULT_TEMPERATURE],
            batch: DEFAULT_CLI_BATCH,
            base_filters: net.base_filters,
            phase1_steps: t.phase1_steps,
            phase1_lr: t.phase1_lr,
            phase2_steps: t.phase2_steps,
            phase2_lr: t.phase2_lr,
            val_every: t.val_every,
            checkpoint_every: t.checkpoint_every,
            val_fraction: DEFAULT_VAL_FRACTION,
            augment: true,
            confidence: false,
            histogram: false,
            window: DEFAULT_WINDOW,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            threads: 0,
        }
    }
}

/// Key = value overlay read from a config file. Keys are consumed as
/// they are resolved; leftovers are rejected so typos cannot silently
/// fall back to defaults.
#[derive(Debug)]
struct Overlay {
    map: BTreeMap<String, String>,
    origin: String,
}

impl Overlay {
    fn load(path: Option<&Path>) -> Result<Overlay> {
        match path {
            None => Ok(Overlay {
                map: BTreeMap::new(),
                origin: String::new(),
            }),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Overlay::from_text(&text, &p.display().to_string())
            }
        }
    }

    fn from_text(text: &str, origin: &str) -> Result<Overlay> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{origin}:{}: expected `key = value`",
                    i + 1
                )));
            };
            // Repeated keys: the last occurrence wins.
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Overlay {
            map,
            origin: origin.to_string(),
        })
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.remove(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::Config(format!(
                    "{}: invalid value `{raw}` for `{key}`",
                    self.origin
                ))
            }),
        }
    }

    /// Comma-separated float list.
    fn take_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map(Some)
                .map_err(|_| {
                    Error::Config(format!(
                        "{}: invalid value `{raw}` for `{key}`",
                        self.origin
                    ))
                }),
        }
    }

    /// Rejects unused keys and a mismatched `subcommand` entry.
    fn finish(mut self, subcommand: &str) -> Result<()> {
        if let Some(found) = self.map.remove("subcommand") {
            if found != subcommand {
                return Err(Error::Config(format!(
                    "{}: config is for `{found}`, invoked subcommand is `{subcommand}`",
                    self.origin
                )));
            }
        }
        if !self.map.is_empty() {
            let keys: Vec<&str> = self.map.keys().map(String::as_str).collect();
            return Err(Error::Config(format!(
                "{}: unknown keys: {}",
                self.origin,
                keys.join(", ")
            )));
        }
        Ok(())
    }
}

fn resolve_common(c: &Common, ov: &mut Overlay, cfg: &mut RunConfig) -> Result<()> {
    cfg.out = c
        .out
        .clone()
        .or(ov.take("out")?)
        .ok_or_else(|| Error::Config("missing required `--out`".into()))?;
    cfg.threads = c.threads.or(ov.take("threads")?).unwrap_or(cfg.threads);
    cfg.seed = c.seed.or(ov.take("seed")?).unwrap_or(cfg.seed);
    Ok(())
}

fn require_path(flag: &Option<PathBuf>, ov: &mut Overlay, key: &'static str) -> Result<PathBuf> {
    flag.clone().or(ov.take(key)?).ok_or_else(|| {
        Error::Config(format!("missing required `--{}`", key.replace('_', "-")))
    })
}

fn check_temperature(t: f64) -> Result<()> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::Config(format!(
            "temperature {t} must be positive and finite"
        )));
    }
    Ok(())
}

/// Merges flags, config file, and defaults into a [`RunConfig`].
pub fn resolve(cmd: &Command) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    match cmd {
        Command::FitDiscretizer(a) => {
            cfg.subcommand = "fit-discretizer";
            let mut ov = Overlay::load(a.common.config.as_deref())?;
            resolve_common(&a.common, &mut ov, &mut cfg)?;
            cfg.images = Some(require_path(&a.images, &mut ov, "images")?);
            cfg.n = a.n.or(ov.take("n")?).unwrap_or(cfg.n);
            cfg.lambda = a.lambda.or(ov.take("lambda")?).unwrap_or(cfg.lambda);
            cfg.grid_step = a
                .grid_step
                .or(ov.take("grid_step")?)
                .unwrap_or(cfg.grid_step);
            cfg.frame = a.frame.or(ov.take("frame")?).unwrap_or(cfg.frame);
            cfg.val_fraction = a
                .val_fraction
                .or(ov.take("val_fraction")?)
                .unwrap_or(cfg.val_fraction);
            ov.finish(cfg.subcommand)?;
        }
        Command::Train(a) => {
            cfg.subcommand = "train";
            let mut ov = Overlay::load(a.common.config.as_deref())?;
            resolve_common(&a.common, &mut ov, &mut cfg)?;
            cfg.images = Some(require_path(&a.images, &mut ov, "images")?);
            cfg.discretizer = Some(require_path(&a.discretizer, &mut ov, "discretizer")?);
            cfg.frame = a.frame.or(ov.take("frame")?).unwrap_or(cfg.frame);
            cfg.base_filters = a
                .base_filters
                .or(ov.take("base_filters")?)
                .unwrap_or(cfg.base_filters);
            cfg.batch = a.batch.or(ov.take("batch")?).unwrap_or(cfg.batch);
            cfg.phase1_steps = a
                .phase1_steps
                .or(ov.take("phase1_steps")?)
                .unwrap_or(cfg.phase1_steps);
            cfg.phase1_lr = a
                .phase1_lr
                .or(ov.take("phase1_lr")?)
                .unwrap_or(cfg.phase1_lr);
            cfg.phase2_steps = a
                .phase2_steps
                .or(ov.take("phase2_steps")?)
                .unwrap_or(cfg.phase2_steps);
            cfg.phase2_lr = a
                .phase2_lr
                .or(ov.take("phase2_lr")?)
                .unwrap_or(cfg.phase2_lr);
            cfg.val_every = a
                .val_every
                .or(ov.take("val_every")?)
                .unwrap_or(cfg.val_every);
            cfg.checkpoint_every = a
                .checkpoint_every
                .or(ov.take("checkpoint_every")?)
                .unwrap_or(cfg.checkpoint_every);
            cfg.val_fraction = a
                .val_fraction
                .or(ov.take("val_fraction")?)
                .unwrap_or(cfg.val_fraction);
            let flag = if a.augment {
                Some(true)
            } else if a.no_augment {
                Some(false)
            } else {
                None
            };
            cfg.augment = flag.or(ov.take("augment")?).unwrap_or(cfg.augment);
            ov.finish(cfg.subcommand)?;
            if cfg.frame == 0 || cfg.frame % DOWNSCALE != 0 {
                return Err(Error::Config(format!(
                    "frame side {} must be a positive multiple of {DOWNSCALE}",
                    cfg.frame
                )));
            }
            if cfg.batch == 0 {
                return Err(Error::Config("batch size must be positive".into()));
            }
        }
        Command::Colorize(a) => {
            cfg.subcommand = "colorize";
            let mut ov = Overlay::load(a.common.config.as_deref())?;
            resolve_common(&a.common, &mut ov, &mut cfg)?;
            cfg.input = Some(require_path(&a.input, &mut ov, "input")?);
            cfg.checkpoint = Some(require_path(&a.checkpoint, &mut ov, "checkpoint")?);
            cfg.discretizer = Some(require_path(&a.discretizer, &mut ov, "discretizer")?);
            let file_list = ov.take_list("temperature")?;
            cfg.temperatures = if !a.temperature.is_empty() {
                a.temperature.clone()
            } else {
                file_list.unwrap_or(cfg.temperatures)
            };
            let flag = a.confidence.then_some(true);
            cfg.confidence = flag.or(ov.take("confidence")?).unwrap_or(cfg.confidence);
            let flag = a.histogram.then_some(true);
            cfg.histogram = flag.or(ov.take("histogram")?).unwrap_or(cfg.histogram);
            ov.finish(cfg.subcommand)?;
            for &t in &cfg.temperatures {
                check_temperature(t)?;
            }
        }
        Command::ColorizeVideo(a) => {
            cfg.subcommand = "colorize-video";
            let mut ov = Overlay::load(a.common.config.as_deref())?;
            resolve_common(&a.common, &mut ov, &mut cfg)?;
            cfg.frames = Some(require_path(&a.frames, &mut ov, "frames")?);
            cfg.checkpoint = Some(require_path(&a.checkpoint, &mut ov, "checkpoint")?);
            cfg.discretizer = Some(require_path(&a.discretizer, &mut ov, "discretizer")?);
            let t = a
                .temperature
                .or(ov.take("temperature")?)
                .unwrap_or(cfg.temperatures[0]);
            cfg.temperatures = vec![t];
            cfg.window = a.window.or(ov.take("window")?).unwrap_or(cfg.window);
            cfg.alpha = a.alpha.or(ov.take("alpha")?).unwrap_or(cfg.alpha);
            ov.finish(cfg.subcommand)?;
            check_temperature(t)?;
            if !cfg.alpha.is_finite() || cfg.alpha < 0.0 {
                return Err(Error::Config(format!(
                    "decay rate {} must be finite and nonnegative",
                    cfg.alpha
                )));
            }
        }
        Command::Analyze(a) => {
            cfg.subcommand = "analyze";
            let mut ov = Overlay::load(a.common.config.as_deref())?;
            resolve_common(&a.common, &mut ov, &mut cfg)?;
            cfg.log = Some(require_path(&a.log, &mut ov, "log")?);
            cfg.images = a.images.clone().or(ov.take("images")?);
            cfg.discretizer = a.discretizer.clone().or(ov.take("discretizer")?);
            cfg.checkpoint = a.checkpoint.clone().or(ov.take("checkpoint")?);
            cfg.frame = a.frame.or(ov.take("frame")?).unwrap_or(cfg.frame);
            ov.finish(cfg.subcommand)?;
            let given = [&cfg.images, &cfg.discretizer, &cfg.checkpoint];
            let set = given.iter().filter(|v| v.is_some()).count();
            if set != 0 && set != 3 {
                return Err(Error::Config(
                    "comparative histograms need --images, --discretizer and --checkpoint together"
                        .into(),
                ));
            }
        }
    }
    Ok(cfg)
}

fn fmt_list(vals: &[f64]) -> String {
    vals.iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

/// The manifest's config lines: exactly the keys the subcommand reads.
fn manifest_entries(cfg: &RunConfig) -> Vec<(&'static str, String)> {
    let mut e: Vec<(&'static str, String)> = Vec::new();
    match cfg.subcommand {
        "fit-discretizer" => {
            e.push(("images", path_str(&cfg.images)));
            e.push(("n", cfg.n.to_string()));
            e.push(("lambda", cfg.lambda.to_string()));
            e.push(("grid_step", cfg.grid_step.to_string()));
            e.push(("frame", cfg.frame.to_string()));
            e.push(("val_fraction", cfg.val_fraction.to_string()));
        }
        "train" => {
            e.push(("images", path_str(&cfg.images)));
            e.push(("discretizer", path_str(&cfg.discretizer)));
            e.push(("frame", cfg.frame.to_string()));
            e.push(("base_filters", cfg.base_filters.to_string()));
            e.push(("batch", cfg.batch.to_string()));
            e.push(("phase1_steps", cfg.phase1_steps.to_string()));
            e.push(("phase1_lr", cfg.phase1_lr.to_string()));
            e.push(("phase2_steps", cfg.phase2_steps.to_string()));
            e.push(("phase2_lr", cfg.phase2_lr.to_string()));
            e.push(("val_every", cfg.val_every.to_string()));
            e.push(("checkpoint_every", cfg.checkpoint_every.to_string()));
            e.push(("val_fraction", cfg.val_fraction.to_string()));
            e.push(("augment", cfg.augment.to_string()));
        }
        "colorize" => {
            e.push(("input", path_str(&cfg.input)));
            e.push(("checkpoint", path_str(&cfg.checkpoint)));
            e.push(("discretizer", path_str(&cfg.discretizer)));
            e.push(("temperature", fmt_list(&cfg.temperatures)));
            e.push(("confidence", cfg.confidence.to_string()));
            e.push(("histogram", cfg.histogram.to_string()));
        }
        "colorize-video" => {
            e.push(("frames", path_str(&cfg.frames)));
            e.push(("checkpoint", path_str(&cfg.checkpoint)));
            e.push(("discretizer", path_str(&cfg.discretizer)));
            e.push(("temperature", cfg.temperatures[0].to_string()));
            e.push(("window", cfg.window.to_string()));
            e.push(("alpha", cfg.alpha.to_string()));
        }
        "analyze" => {
            e.push(("log", path_str(&cfg.log)));
            if cfg.images.is_some() {
                e.push(("images", path_str(&cfg.images)));
                e.push(("discretizer", path_str(&cfg.discretizer)));
                e.push(("checkpoint", path_str(&cfg.checkpoint)));
                e.push(("frame", cfg.frame.to_string()));
            }
        }
        _ => {}
    }
    e.push(("out", cfg.out.display().to_string()));
    e.push(("seed", cfg.seed.to_string()));
    e.push(("threads", cfg.threads.to_string()));
    e
}

fn manifest_body(cfg: &RunConfig) -> String {
    let mut s = format!(
        "# colorunet {} (discretizer format v{}, checkpoint format v{})\n\
         # resolved configuration; rerun: colorunet {} --config {}\n\
         subcommand = {}\n",
        env!("CARGO_PKG_VERSION"),
        crate::discretizer::VERSION,
        crate::nn::checkpoint::VERSION,
        cfg.subcommand,
        MANIFEST_NAME,
        cfg.subcommand,
    );
    for (k, v) in manifest_entries(cfg) {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn init_threads(threads: usize) {
    if threads == 0 {
        return;
    }
    // Fails only if the global pool already exists (repeat call in one
    // process); the existing pool then stays in effect.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
}

/// Parses arguments and runs; the manifest is written before the
/// subcommand so failed runs also leave a record of their configuration.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.command)?;
    init_threads(cfg.threads);
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_text(&cfg.out.join(MANIFEST_NAME), &manifest_body(&cfg))?;
    match cfg.subcommand {
        "fit-discretizer" => cmd_fit_discretizer(&cfg),
        "train" => cmd_train(&cfg),
        "colorize" => cmd_colorize(&cfg),
        "colorize-video" => cmd_colorize_video(&cfg),
        "analyze" => cmd_analyze(&cfg),
        other => Err(Error::Config(format!("unknown subcommand `{other}`"))),
    }
}

/// Binary entry point: 0 on success, otherwise the error's exit code
/// with a message on stderr.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn required<'a>(v: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| Error::Config(format!("missing required `--{key}`")))
}

fn cmd_fit_discretizer(cfg: &RunConfig) -> Result<()> {
    let paths = datapipe::scan_images(required(&cfg.images, "images")?)?;
    let (train_paths, _) = datapipe::split(&paths, cfg.val_fraction, cfg.seed)?;
    let disc = datapipe::fit_discretizer_on_paths(
        &train_paths,
        cfg.frame,
        cfg.grid_step,
        cfg.n,
        cfg.lambda,
    )?;
    let cdsc = cfg.out.join("discretizer.cdsc");
    disc.save(&cdsc)?;
    let freq: Vec<f64> = disc.bins().iter().map(|b| b.frequency).collect();
    decoder::write_histogram_csv(&cfg.out.join("bins.csv"), &disc, &freq)?;
    println!(
        "fitted {} bins from {} images -> {}",
        disc.n(),
        train_paths.len(),
        cdsc.display()
    );
    Ok(())
}

fn log_row_line(r: &TrainLogRow) -> String {
    let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
    format!("{},{},{},{},{}", r.iter, r.phase, r.lr, r.train_loss, val)
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let disc = ColorDiscretizer::load(required(&cfg.discretizer, "discretizer")?)?;
    let paths = datapipe::scan_images(required(&cfg.images, "images")?)?;
    let (train_paths, val_paths) = datapipe::split(&paths, cfg.val_fraction, cfg.seed)?;
    datapipe::write_split_manifests(&cfg.out, &train_paths, &val_paths)?;
    let spec = cfg.augment.then(AugmentationSpec::default);
    let train_set =
        datapipe::prepare_samples(&train_paths, &disc, spec.as_ref(), cfg.frame, cfg.seed)?;
    let val_set = datapipe::prepare_samples(&val_paths, &disc, None, cfg.frame, cfg.seed)?;

    let log_path = cfg.out.join("training_log.csv");
    let file = std::fs::File::create(&log_path).map_err(|e| Error::io(log_path.as_path(), e))?;
    let mut log = std::io::BufWriter::new(file);
    writeln!(
        log,
        "# train_images = {}\n# train_samples = {}\n# val_images = {}\n# val_samples = {}\n{LOG_HEADER}",
        train_paths.len(),
        train_set.len(),
        val_paths.len(),
        val_set.len()
    )
    .map_err(|e| Error::io(log_path.as_path(), e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = ColorUNet::<f32>::new(
        ColorUNetConfig {
            num_classes: disc.n(),
            base_filters: cfg.base_filters,
            ..ColorUNetConfig::default()
        },
        &mut rng,
    )?;
    let weights = disc.weights_f32();
    let mut adam = Adam::new(AdamConfig::default());
    let tcfg = TrainConfig {
        batch_size: cfg.batch,
        phase1_steps: cfg.phase1_steps,
        phase1_lr: cfg.phase1_lr,
        phase2_steps: cfg.phase2_steps,
        phase2_lr: cfg.phase2_lr,
        val_every: cfg.val_every,
        checkpoint_every: cfg.checkpoint_every,
        seed: cfg.seed,
    };
    let total = tcfg.phase1_steps + tcfg.phase2_steps;
    let outcome = unet::train(
        &mut net,
        &mut adam,
        &train_set,
        &val_set,
        &weights,
        &tcfg,
        Some(&cfg.out),
        |row| {
            writeln!(log, "{}", log_row_line(row)).map_err(|e| Error::io(log_path.as_path(), e))?;
            if let Some(val) = row.val_loss {
                println!(
                    "iter {}/{} phase {} lr {} train {:.4} val {:.4}",
                    row.iter, total, row.phase, row.lr, row.train_loss, val
                );
            }
            Ok(())
        },
    )?;
    log.flush().map_err(|e| Error::io(log_path.as_path(), e))?;

    let model_path = cfg.out.join("model.cunw");
    unet::save_training_state(&mut net, &adam, &model_path)?;
    println!(
        "trained {} iterations, loss {:.4} -> {:.4}, model in {}",
        outcome.iterations,
        outcome.initial_loss,
        outcome.final_loss,
        model_path.display()
    );
    Ok(())
}

/// Zero-pads a plane at the bottom/right up to multiples of `m`, keeping
/// content top-left (the training frames' padding convention).
fn pad_to_multiple(y: &Array2<f32>, m: usize) -> Array2<f32> {
    let (h, w) = y.dim();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return y.clone();
    }
    let mut out = Array2::zeros((ph, pw));
    out.slice_mut(s![..h, ..w]).assign(y);
    out
}

fn crop_volume(vol: &ProbabilityVolume, h: usize, w: usize) -> Result<ProbabilityVolume> {
    if (vol.height(), vol.width()) == (h, w) {
        return ProbabilityVolume::new(vol.probs().clone());
    }
    ProbabilityVolume::new(vol.probs().slice(s![.., ..h, ..w]).to_owned())
}

fn load_compatible(
    checkpoint: &Path,
    discretizer: &Path,
) -> Result<(ColorUNet<f32>, ColorDiscretizer)> {
    let disc = ColorDiscretizer::load(discretizer)?;
    let net = ColorUNet::<f32>::load(checkpoint)?;
    if net.config().num_classes != disc.n() {
        return Err(Error::Config(format!(
            "checkpoint predicts {} classes, discretizer has {} bins",
            net.config().num_classes,
            disc.n()
        )));
    }
    Ok((net, disc))
}

fn forward_volume(net: &mut ColorUNet<f32>, luma: &Array2<f32>) -> Result<ProbabilityVolume> {
    let (h, w) = luma.dim();
    let mut x = Array4::<f32>::zeros((1, 1, h, w));
    x.slice_mut(s![0, 0, .., ..]).assign(luma);
    let logits = net.forward(&x, false)?;
    ProbabilityVolume::from_logits(&logits, 0)
}

fn cmd_colorize(cfg: &RunConfig) -> Result<()> {
    let (mut net, disc) = load_compatible(
        required(&cfg.checkpoint, "checkpoint")?,
        required(&cfg.discretizer, "discretizer")?,
    )?;
    let input = required(&cfg.input, "input")?;
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Config(format!("{}: no file stem", input.display())))?;
    let img = datapipe::load_rgb(input)?;
    let y = luminance(&img);
    let (h, w) = y.dim();
    // Sizes off the /8 grid run padded like a training frame and are
    // cropped back afterwards.
    let vol_full = forward_volume(&mut net, &pad_to_multiple(&y, DOWNSCALE))?;
    let vol = crop_volume(&vol_full, h, w)?;

    for &t in &cfg.temperatures {
        let out_img = decoder::colorize(&y, &vol, t, &disc)?;
        render::write_rgb_png(&cfg.out.join(format!("{stem}_t{t}.png")), &out_img)?;
    }
    if cfg.confidence {
        let maps = decoder::confidence(&vol)?;
        render::write_gray_png(
            &cfg.out.join(format!("{stem}_top1.png")),
            &render::top1_gray(&maps.top1),
        )?;
        render::write_gray_png(
            &cfg.out.join(format!("{stem}_ratio.png")),
            &render::ratio_gray(&maps.ratio),
        )?;
    }
    if cfg.histogram {
        let freq = decoder::histogram_from_probs(&vol);
        decoder::write_histogram_csv(
            &cfg.out.join(format!("{stem}_histogram.csv")),
            &disc,
            &freq,
        )?;
    }
    println!(
        "colorized {} ({} temperature{}) -> {}",
        input.display(),
        cfg.temperatures.len(),
        if cfg.temperatures.len() == 1 { "" } else { "s" },
        cfg.out.display()
    );
    Ok(())
}

fn parse_frame_name(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.len() != 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Index-sorted `frame_NNNNNN.png` entries; the numbering must be
/// contiguous but may start anywhere. Other files are ignored.
fn list_frames(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(idx) = parse_frame_name(&entry.file_name().to_string_lossy()) {
            found.push((idx, entry.path()));
        }
    }
    if found.is_empty() {
        return Err(Error::Data(format!(
            "{}: no frames named frame_NNNNNN.png",
            dir.display()
        )));
    }
    found.sort();
    let (lo, hi) = (found[0].0, found[found.len() - 1].0);
    let have: std::collections::BTreeSet<usize> = found.iter().map(|f| f.0).collect();
    let missing: Vec<String> = (lo..=hi)
        .filter(|i| !have.contains(i))
        .map(|i| i.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{}: missing frame indices: {}",
            dir.display(),
            missing.join(", ")
        )));
    }
    Ok(found)
}

fn crop_rgb(img: &RgbImage, w: usize, h: usize) -> Result<RgbImage> {
    RgbImage::from_fn(w, h, |x, y| img.pixel(x, y))
}

fn cmd_colorize_video(cfg: &RunConfig) -> Result<()> {
    let (mut net, disc) = load_compatible(
        required(&cfg.checkpoint, "checkpoint")?,
        required(&cfg.discretizer, "discretizer")?,
    )?;
    let listed = list_frames(required(&cfg.frames, "frames")?)?;
    let mut lumas = Vec::with_capacity(listed.len());
    for (idx, path) in &listed {
        let y = luminance(&datapipe::load_rgb(path)?);
        if let Some(first) = lumas.first() {
            let (h0, w0) = Array2::dim(first);
            if y.dim() != (h0, w0) {
                return Err(Error::Shape(format!(
                    "frame {idx} is {}x{}, expected {w0}x{h0}",
                    y.dim().1,
                    y.dim().0
                )));
            }
        }
        lumas.push(y);
    }
    let (h, w) = lumas[0].dim();
    let padded: Vec<Array2<f32>> = lumas.iter().map(|y| pad_to_multiple(y, DOWNSCALE)).collect();
    let seq = FrameSequence::new(padded)?;
    let spec = SmoothingSpec {
        window: cfg.window,
        alpha: cfg.alpha,
    };
    let result = video::colorize_sequence(&seq, &mut net, &disc, cfg.temperatures[0], spec)?;

    for ((idx, _), frame) in listed.iter().zip(&result.frames) {
        let out_img = crop_rgb(frame, w, h)?;
        render::write_rgb_png(&cfg.out.join(format!("frame_{idx:06}.png")), &out_img)?;
    }
    let crop_uv = |uv: &[(Array2<f32>, Array2<f32>)]| -> Vec<(Array2<f32>, Array2<f32>)> {
        uv.iter()
            .map(|(u, v)| {
                (
                    u.slice(s![..h, ..w]).to_owned(),
                    v.slice(s![..h, ..w]).to_owned(),
                )
            })
            .collect()
    };
    let rows = video::stability_report(&crop_uv(&result.raw_uv), &crop_uv(&result.smoothed_uv))?;
    video::write_stability_csv(&cfg.out.join("stability.csv"), &rows)?;
    println!(
        "colorized {} frames (window {}, alpha {}) -> {}",
        listed.len(),
        cfg.window,
        cfg.alpha,
        cfg.out.display()
    );
    Ok(())
}

fn parse_log_text(text: &str, origin: &str) -> Result<Vec<TrainLogRow>> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != LOG_HEADER {
                return Err(Error::Data(format!(
                    "{origin}:{ln}: expected header `{LOG_HEADER}`, found `{line}`"
                )));
            }
            header_seen = true;
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Data(format!(
                "{origin}:{ln}: expected 5 fields, found {}",
                parts.len()
            )));
        }
        let field = |what: &str, raw: &str| {
            Error::Data(format!("{origin}:{ln}: invalid {what} `{raw}`"))
        };
        rows.push(TrainLogRow {
            iter: parts[0].parse().map_err(|_| field("iteration", parts[0]))?,
            phase: parts[1].parse().map_err(|_| field("phase", parts[1]))?,
            lr: parts[2].parse().map_err(|_| field("learning rate", parts[2]))?,
            train_loss: parts[3]
                .parse()
                .map_err(|_| field("training loss", parts[3]))?,
            val_loss: if parts[4].is_empty() {
                None
            } else {
                Some(parts[4].parse().map_err(|_| field("validation loss", parts[4]))?)
            },
        });
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{origin}: log contains no data rows")));
    }
    Ok(rows)
}

fn parse_log(path: &Path) -> Result<Vec<TrainLogRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_log_text(&text, &path.display().to_string())
}

fn cmd_analyze(cfg: &RunConfig) -> Result<()> {
    let rows = parse_log(required(&cfg.log, "log")?)?;
    let curve = render::draw_loss_curve(&rows)?;
    render::write_rgb_png(&cfg.out.join("loss_curve.png"), &curve)?;
    let mut wrote_hist = false;
    if cfg.images.is_some() {
        write_comparative_histograms(cfg)?;
        wrote_hist = true;
    }
    println!(
        "analyzed {} log rows -> {}{}",
        rows.len(),
        cfg.out.join("loss_curve.png").display(),
        if wrote_hist { " + histograms.csv" } else { "" }
    );
    Ok(())
}

/// Codebook, ground-truth, and predicted bin frequencies over the
/// corpus's content pixels; each column sums to 1.
fn write_comparative_histograms(cfg: &RunConfig) -> Result<()> {
    if cfg.frame == 0 || cfg.frame % DOWNSCALE != 0 {
        return Err(Error::Config(format!(
            "frame side {} must be a positive multiple of {DOWNSCALE}",
            cfg.frame
        )));
    }
    let (mut net, disc) = load_compatible(
        required(&cfg.checkpoint, "checkpoint")?,
        required(&cfg.discretizer, "discretizer")?,
    )?;
    let paths = datapipe::scan_images(required(&cfg.images, "images")?)?;
    let samples = datapipe::prepare_samples(&paths, &disc, None, cfg.frame, cfg.seed)?;
    let n = disc.n();
    let mut gt = vec![0.0f64; n];
    let mut pred = vec![0.0f64; n];
    let mut count = 0.0f64;
    for sample in &samples {
        let vol = forward_volume(&mut net, &sample.luma)?;
        let (h, w) = sample.luma.dim();
        for r in 0..h {
            for c in 0..w {
                if sample.mask[[r, c]] > 0.0 {
                    gt[sample.labels[[r, c]] as usize] += 1.0;
                    for (b, p) in pred.iter_mut().enumerate() {
                        *p += vol.probs()[[b, r, c]] as f64;
                    }
                    count += 1.0;
                }
            }
        }
    }
    if count == 0.0 {
        return Err(Error::Data("corpus selects no content pixels".into()));
    }
    let mut body = String::from("bin_index,mean_u,mean_v,codebook,ground_truth,predicted\n");
    for (b, bin) in disc.bins().iter().enumerate() {
        body.push_str(&format!(
            "{b},{},{},{},{},{}\n",
            bin.mean_u,
            bin.mean_v,
            bin.frequency,
            gt[b] / count,
            pred[b] / count
        ));
    }
    write_text(&cfg.out.join("histograms.csv"), &body)
}
