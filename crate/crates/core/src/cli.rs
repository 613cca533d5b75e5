//! The `gfn` command line: `synth`, `train`, `dehaze` and `eval`.
//!
//! Settings resolve as flags over the `--config` TOML file over built-in
//! defaults. The fully resolved configuration is logged at the start of every
//! run, so a run can be repeated from its log.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::derive::GammaParams;
use crate::error::{Error, Result};
use crate::gfn::{dehaze_with_maps, fuse_images, ConfidenceMaps, GfnConfig, GfnParams, DEFAULT_SCALES};
use crate::hazesim::{generate_dataset, DatasetManifest, SourcePair, SynthOptions};
use crate::image::ImageRGB;
use crate::io;
use crate::metrics::{evaluate, Dehazer, EvalOptions, HazeGrouping, Identity};
use crate::scene::write_procedural_pairs;
use crate::train::{load_checkpoint, save_checkpoint, train, TrainConfig, TrainHooks, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub scale_count: usize,
    pub equal_weight_fusion: bool,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let g = GammaParams::default();
        ModelSettings {
            scale_count: DEFAULT_SCALES,
            equal_weight_fusion: false,
            alpha: g.alpha,
            gamma: g.gamma,
        }
    }
}

impl ModelSettings {
    pub fn gfn_config(&self) -> GfnConfig {
        GfnConfig {
            scale_count: self.scale_count,
            equal_weight_fusion: self.equal_weight_fusion,
            gamma: GammaParams {
                alpha: self.alpha,
                gamma: self.gamma,
            },
        }
    }

    fn from_gfn(c: &GfnConfig) -> Self {
        ModelSettings {
            scale_count: c.scale_count,
            equal_weight_fusion: c.equal_weight_fusion,
            alpha: c.gamma.alpha,
            gamma: c.gamma.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub patch_size: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub decay_every: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub iterations: u64,
    pub adversarial: bool,
    pub adv_weight: f64,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            patch_size: t.patch_size,
            batch_size: t.batch_size,
            lr0: t.lr0,
            lr_decay: t.lr_decay,
            decay_every: t.decay_every,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            weight_decay: t.weight_decay,
            iterations: t.total_iters,
            adversarial: t.adversarial_enabled,
            adv_weight: t.adv_weight,
            log_every: t.log_every,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub variants: usize,
    pub depth_normalization: bool,
    pub depth_scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    pub raw: bool,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let s = SynthOptions::default();
        SynthSettings {
            variants: s.variants_per_image,
            depth_normalization: s.depth_normalization,
            depth_scale: s.depth_scale,
            noise_sigma: s.noise_sigma,
            betas: s.betas,
            raw: s.raw_output,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub eight_bit: bool,
    pub group_by_beta: bool,
    pub beta_tolerance: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            eight_bit: false,
            group_by_beta: true,
            beta_tolerance: 1e-6,
        }
    }
}

/// Every tunable setting after merging defaults, config file and flags. Also
/// the schema of the `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    /// `error`, `warn`, `info`, `debug` or `trace`.
    pub log_level: String,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub synth: SynthSettings,
    pub eval: EvalSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            log_level: "info".into(),
            model: ModelSettings::default(),
            train: TrainSettings::default(),
            synth: SynthSettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e: toml::de::Error| Error::Usage(format!("config file: {}", e.to_string().trim_end())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            model: self.model.gfn_config(),
            patch_size: t.patch_size,
            batch_size: t.batch_size,
            lr0: t.lr0,
            lr_decay: t.lr_decay,
            decay_every: t.decay_every,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            weight_decay: t.weight_decay,
            total_iters: t.iterations,
            adversarial_enabled: t.adversarial,
            adv_weight: t.adv_weight,
            seed: self.seed,
            log_every: t.log_every,
            checkpoint_every: t.checkpoint_every,
        }
    }

    pub fn synth_options(&self) -> SynthOptions {
        let s = &self.synth;
        SynthOptions {
            variants_per_image: s.variants,
            global_seed: self.seed,
            depth_normalization: s.depth_normalization,
            depth_scale: s.depth_scale,
            noise_sigma: s.noise_sigma,
            betas: s.betas.clone(),
            raw_output: s.raw,
        }
    }

    pub fn grouping(&self) -> HazeGrouping {
        if self.eval.group_by_beta {
            HazeGrouping::ByBeta {
                tolerance: self.eval.beta_tolerance,
            }
        } else {
            HazeGrouping::None
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gfn", version, about = "Gated fusion network dehazing toolkit")]
pub struct Cli {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for synthesis, initialisation and patch sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Synthesize hazy variants of clean/depth pairs and write a manifest.
    Synth(SynthArgs),
    /// Train a model on a manifest and save a checkpoint.
    Train(TrainArgs),
    /// Dehaze one image or every image in a directory.
    Dehaze(DehazeArgs),
    /// Score a model (or the hazy input itself) on a manifest.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// Number of pyramid scales.
    #[arg(long)]
    pub scales: Option<usize>,
    /// Shorthand for `--scales 1`.
    #[arg(long, conflicts_with = "scales")]
    pub single_scale: bool,
    /// Blend the derived inputs with constant 1/3 weights.
    #[arg(long)]
    pub equal_weight_fusion: bool,
    /// Exponent of the gamma-corrected input.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Gain of the gamma-corrected input.
    #[arg(long)]
    pub alpha: Option<f64>,
}

impl ModelFlags {
    fn apply(&self, m: &mut ModelSettings) {
        if let Some(s) = self.scales {
            m.scale_count = s;
        }
        if self.single_scale {
            m.scale_count = 1;
        }
        if self.equal_weight_fusion {
            m.equal_weight_fusion = true;
        }
        if let Some(g) = self.gamma {
            m.gamma = g;
        }
        if let Some(a) = self.alpha {
            m.alpha = a;
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Clean image; pair each with a `--depth`.
    #[arg(long)]
    pub clean: Vec<PathBuf>,
    /// Depth map (16-bit PNG or raw `.gfni`), in the same order as `--clean`.
    #[arg(long)]
    pub depth: Vec<PathBuf>,
    /// Directory of `NAME.png` / `NAME_depth.png` pairs.
    #[arg(long, value_name = "DIR")]
    pub source_dir: Option<PathBuf>,
    /// Generate this many procedural scenes as the clean/depth source.
    #[arg(long, value_name = "N")]
    pub procedural: Option<usize>,
    /// Procedural scene size as HEIGHTxWIDTH.
    #[arg(long, default_value = "128x128", value_parser = parse_size)]
    pub size: (usize, usize),
    /// Output directory for hazy images and `manifest.json`.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Hazy variants per clean image
    #[arg(long)]
    pub variants: Option<usize>,
    /// Use depth as given instead of rescaling it to [0, 1].
    #[arg(long)]
    pub no_depth_normalization: bool,
    /// Metres represented by a full-scale 16-bit depth value.
    #[arg(long)]
    pub depth_scale: Option<f64>,
    /// Std-dev of the added Gaussian noise
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Fixed β values cycled over the variants, e.g. `0.8,1.0,1.2`.
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    /// Write hazy images as raw floats instead of 8-bit PNG.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset manifest written by `synth`
    #[arg(long, short)]
    pub manifest: PathBuf,
    /// Final checkpoint path.
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Total training iterations
    #[arg(long)]
    pub iters: Option<u64>,
    /// Square crop size; divisible by 2^(scales-1)
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Patches per step
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Train with the content loss only.
    #[arg(long)]
    pub no_adversarial: bool,
    /// Weight of the adversarial term
    #[arg(long)]
    pub adv_weight: Option<f64>,
    /// Iterations between loss log lines
    #[arg(long)]
    pub log_every: Option<u64>,
    /// Iterations between scheduled checkpoints
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Directory for scheduled and diagnostic checkpoints.
    #[arg(long, value_name = "DIR")]
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long, value_name = "FILE")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DehazeArgs {
    /// Checkpoint to load. Optional with `--equal-weight-fusion`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Image file or directory of images.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output file, or directory when the input is a directory.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Also write the three confidence maps as grayscale PNGs.
    #[arg(long)]
    pub dump_maps: bool,
    #[command(flatten)]
    pub flags: ModelFlags,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Dataset manifest written by `synth`
    #[arg(long, short)]
    pub manifest: PathBuf,
    /// Checkpoint to score.
    #[arg(long, required_unless_present = "identity")]
    pub model: Option<PathBuf>,
    /// Score the hazy inputs themselves.
    #[arg(long, conflicts_with = "model")]
    pub identity: bool,
    /// Quantize to 8 bits before scoring.
    #[arg(long)]
    pub eight_bit: bool,
    /// One `all` group instead of light/medium/heavy/random.
    #[arg(long)]
    pub no_grouping: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HEIGHTxWIDTH, got `{s}`"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    Ok((h, w))
}

/// A parsed command with its fully resolved settings.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub command: Command,
    pub settings: Settings,
}

/// Applies flag > file > default precedence. `--help` and `--version`
/// surface as a usage error carrying the rendered text.
pub fn parse_config<I, T>(args: I) -> Result<CliConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Usage(e.render().to_string()))?;
    resolve(cli)
}

fn resolve(cli: Cli) -> Result<CliConfig> {
    let mut s = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Settings::from_toml(&text)?
        }
        None => Settings::default(),
    };
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    if cli.quiet {
        s.log_level = "warn".into();
    }
    match cli.verbose {
        0 => {}
        1 => s.log_level = "debug".into(),
        _ => s.log_level = "trace".into(),
    }
    match &cli.command {
        Command::Synth(a) => {
            let y = &mut s.synth;
            if let Some(v) = a.variants {
                y.variants = v;
            }
            if a.no_depth_normalization {
                y.depth_normalization = false;
            }
            if let Some(d) = a.depth_scale {
                y.depth_scale = d;
            }
            if a.noise_sigma.is_some() {
                y.noise_sigma = a.noise_sigma;
            }
            if a.betas.is_some() {
                y.betas = a.betas.clone();
            }
            if a.raw {
                y.raw = true;
            }
        }
        Command::Train(a) => {
            a.model.apply(&mut s.model);
            let t = &mut s.train;
            if let Some(v) = a.iters {
                t.iterations = v;
            }
            if let Some(v) = a.patch_size {
                t.patch_size = v;
            }
            if let Some(v) = a.batch_size {
                t.batch_size = v;
            }
            if let Some(v) = a.lr {
                t.lr0 = v;
            }
            if a.no_adversarial {
                t.adversarial = false;
            }
            if let Some(v) = a.adv_weight {
                t.adv_weight = v;
            }
            if let Some(v) = a.log_every {
                t.log_every = v;
            }
            if let Some(v) = a.checkpoint_every {
                t.checkpoint_every = v;
            }
        }
        Command::Dehaze(a) => a.flags.apply(&mut s.model),
        Command::Eval(a) => {
            if a.eight_bit {
                s.eval.eight_bit = true;
            }
            if a.no_grouping {
                s.eval.group_by_beta = false;
            }
        }
    }
    if s.log_level.parse::<log::LevelFilter>().is_err() {
        return Err(Error::Usage(format!("unknown log_level `{}`", s.log_level)));
    }
    Ok(CliConfig {
        command: cli.command,
        settings: s,
    })
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp(None)
        .try_init();
}

/// Runs the command. Progress goes to the log; reports go to stdout.
pub fn dispatch(cfg: &CliConfig) -> Result<()> {
    let s = &cfg.settings;
    match &cfg.command {
        Command::Synth(a) => run_synth(a, s),
        Command::Train(a) => run_train(a, s),
        Command::Dehaze(a) => run_dehaze(a, s),
        Command::Eval(a) => run_eval(a, s),
    }
}

/// Parses, logs the resolved settings, dispatches and maps the outcome to a
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cfg = match resolve(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    init_logging(&cfg.settings.log_level);
    log::info!("resolved configuration:\n{}", cfg.settings.to_toml());
    match dispatch(&cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn source_dir_pairs(dir: &Path) -> Result<Vec<SourcePair>> {
    let mut pairs = Vec::new();
    let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    for clean in &names {
        let (Some(stem), Some(ext)) = (clean.file_stem().and_then(|s| s.to_str()), clean.extension()) else {
            continue;
        };
        if stem.ends_with("_depth") {
            continue;
        }
        let depth = clean.with_file_name(format!("{stem}_depth.{}", ext.to_string_lossy()));
        if depth.exists() {
            pairs.push(SourcePair {
                clean: clean.clone(),
                depth,
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::Empty(format!("no NAME/NAME_depth pairs in {}", dir.display())));
    }
    Ok(pairs)
}

fn run_synth(a: &SynthArgs, s: &Settings) -> Result<()> {
    if a.clean.len() != a.depth.len() {
        return Err(Error::Usage(format!(
            "{} --clean but {} --depth paths",
            a.clean.len(),
            a.depth.len()
        )));
    }
    let mut pairs: Vec<SourcePair> = a
        .clean
        .iter()
        .zip(&a.depth)
        .map(|(c, d)| SourcePair {
            clean: c.clone(),
            depth: d.clone(),
        })
        .collect();
    if let Some(dir) = &a.source_dir {
        pairs.extend(source_dir_pairs(dir)?);
    }
    if let Some(n) = a.procedural {
        let dir = a.out.join("scenes");
        pairs.extend(write_procedural_pairs(&dir, n, s.seed, a.size, s.synth.depth_scale, s.synth.raw)?);
    }
    if pairs.is_empty() {
        return Err(Error::Usage(
            "give --clean/--depth pairs, --source-dir or --procedural".into(),
        ));
    }
    let manifest = generate_dataset(&pairs, &s.synth_options(), &a.out)?;
    log::info!(
        "wrote {} hazy images and {}",
        manifest.entries.len(),
        a.out.join(crate::hazesim::MANIFEST_FILE).display()
    );
    for f in &manifest.failures {
        log::warn!("pair {} skipped: {}", f.pair_index, f.error);
    }
    Ok(())
}

fn run_train(a: &TrainArgs, s: &Settings) -> Result<()> {
    let cfg = s.train_config();
    let manifest = DatasetManifest::load(&a.manifest)?;
    let set = TrainingSet::from_manifest(&manifest)?;
    let resume = a.resume.as_ref().map(load_checkpoint).transpose()?;
    log::info!(
        "training on {} pairs for {} iterations{}",
        set.len(),
        cfg.total_iters,
        if resume.is_some() { " (resumed)" } else { "" }
    );
    let mut hooks = TrainHooks {
        checkpoint_dir: a.checkpoint_dir.clone(),
        ..Default::default()
    };
    let ckpt = train(&cfg, &set, resume, &mut hooks)?;
    save_checkpoint(&ckpt, &a.out)?;
    log::info!("saved {}", a.out.display());
    Ok(())
}

/// Model for dehazing: the checkpoint's architecture with inference-time flags
/// applied, or untrained equal-weight fusion.
fn load_model(path: Option<&Path>, flags: &ModelFlags, s: &Settings) -> Result<GfnParams> {
    match path {
        Some(p) => {
            let mut params = load_checkpoint(p)?.generator;
            let mut m = ModelSettings::from_gfn(&params.config);
            let mut f = flags.clone();
            f.scales = None;
            f.single_scale = false;
            f.apply(&mut m);
            if flags.scales.is_some_and(|k| k != params.config.scale_count) || (flags.single_scale && params.config.scale_count != 1) {
                return Err(Error::Parameter(format!(
                    "checkpoint has {} scales; the scale count cannot change at inference",
                    params.config.scale_count
                )));
            }
            params.config = m.gfn_config();
            params.config.validate()?;
            Ok(params)
        }
        None if s.model.equal_weight_fusion => GfnParams::zeros(s.model.gfn_config()),
        None => Err(Error::Usage("--model is required unless --equal-weight-fusion is set".into())),
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| ["png", io::RAW_EXTENSION].iter().any(|x| e.eq_ignore_ascii_case(x)))
}

fn dehaze_file(input: &Path, output: &Path, params: &GfnParams, dump_maps: bool) -> Result<()> {
    let hazy = io::read_image(input)?;
    let (out, maps) = if params.config.equal_weight_fusion {
        let d = crate::derive::derive_inputs_with(&hazy, params.config.gamma)?;
        let (h, w) = hazy.dims();
        let maps = ConfidenceMaps::uniform(1, h, w, 1.0 / 3.0);
        (fuse_images(&maps, &d)?, maps)
    } else {
        dehaze_with_maps(&hazy, params)?
    };
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    io::write_image(output, &out)?;
    if dump_maps {
        let (h, w) = out.dims();
        let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
        for (name, map) in ["wb", "ce", "gc"].iter().zip(maps.as_array()) {
            let path = output.with_file_name(format!("{stem}_map_{name}.png"));
            io::write_gray_png(&path, h, w, map.data())?;
        }
    }
    log::info!("{} -> {}", input.display(), output.display());
    Ok(())
}

fn run_dehaze(a: &DehazeArgs, s: &Settings) -> Result<()> {
    let params = load_model(a.model.as_deref(), &a.flags, s)?;
    log::info!("model: {}", toml::to_string(&ModelSettings::from_gfn(&params.config)).unwrap_or_default());
    if a.input.is_dir() {
        let mut inputs: Vec<PathBuf> = fs::read_dir(&a.input)
            .map_err(|e| Error::io(&a.input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        inputs.sort();
        if inputs.is_empty() {
            return Err(Error::Empty(format!("no images in {}", a.input.display())));
        }
        fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
        for input in inputs {
            let name = input.file_name().expect("listed file has a name");
            dehaze_file(&input, &a.output.join(name), &params, a.dump_maps)?;
        }
        Ok(())
    } else {
        dehaze_file(&a.input, &a.output, &params, a.dump_maps)
    }
}

fn run_eval(a: &EvalArgs, s: &Settings) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let (label, model): (String, Box<dyn Dehazer>) = match &a.model {
        Some(p) => (
            p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            Box::new(load_checkpoint(p)?.generator),
        ),
        None => ("hazy".to_string(), Box::new(Identity)),
    };
    let opts = EvalOptions {
        eight_bit: s.eval.eight_bit,
    };
    let report = evaluate(&manifest, model.as_ref(), &s.grouping(), opts)?;
    let json = report.to_json()?;
    let text = match &a.report {
        Some(path) => {
            fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
            report.to_table(&label)
        }
        None => json + "\n",
    };
    // A closed pipe (`gfn eval | head`) is not a failure of the evaluation.
    let _ = std::io::Write::write_all(&mut std::io::stdout().lock(), text.as_bytes());
    for f in &report.failures {
        log::warn!("{}: {}", f.hazy_path, f.error);
    }
    Ok(())
}

/// Loads an image for the CLI tests and examples without going through a
/// manifest.
pub fn read_any_image(path: impl AsRef<Path>) -> Result<ImageRGB> {
    io::read_image(path)
}
