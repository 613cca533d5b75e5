//! Adam with step decay on random co-located patch pairs, optional
//! adversarial alternation, and bit-exact checkpoint/resume.

mod checkpoint;
mod schedule;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{shape_err, Error, Result};
use crate::gfn::{
    content_loss_var, disc_probs, discriminator_loss_var, forward_pyramid, generator_adv_var, DehazePyramid,
    DiscParams, GfnConfig, GfnParams, LayerVars, NetworkInput, ADV_WEIGHT,
};
use crate::hazesim::DatasetManifest;
use crate::image::ImageRGB;
use crate::io;
use crate::tensor::{Tape, Tensor, Var};

const SAMPLER_SALT: u64 = 0x7361_6d70_6c65_7273;
const DISC_SALT: u64 = 0x6469_7363_7269_6d00;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: GfnConfig,
    pub patch_size: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Multiplier applied every `decay_every` iterations.
    pub lr_decay: f64,
    pub decay_every: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled: each step also subtracts `lr · weight_decay · θ`.
    pub weight_decay: f64,
    pub total_iters: u64,
    pub adversarial_enabled: bool,
    pub adv_weight: f64,
    pub seed: u64,
    pub log_every: u64,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: GfnConfig::default(),
            patch_size: 128,
            batch_size: 10,
            lr0: 1e-4,
            lr_decay: 0.75,
            decay_every: 10_000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-5,
            total_iters: 240_000,
            adversarial_enabled: true,
            adv_weight: ADV_WEIGHT,
            seed: 0,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let positive = [
            ("lr0", self.lr0),
            ("lr_decay", self.lr_decay),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Parameter("Adam betas must be below 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Parameter(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(self.adv_weight >= 0.0 && self.adv_weight.is_finite()) {
            return Err(Error::Parameter(format!("adv_weight must be non-negative, got {}", self.adv_weight)));
        }
        if self.patch_size == 0 || self.batch_size == 0 || self.decay_every == 0 || self.total_iters == 0 {
            return Err(Error::Parameter(
                "patch_size, batch_size, decay_every and total_iters must be positive".into(),
            ));
        }
        let m = self.model.size_multiple();
        if !self.patch_size.is_multiple_of(m) {
            return Err(Error::Parameter(format!(
                "patch_size {} is not divisible by {m} for {} scales",
                self.patch_size, self.model.scale_count
            )));
        }
        if self.adversarial_enabled && self.patch_size < 32 {
            return Err(Error::Parameter(format!(
                "adversarial training needs patch_size >= 32, got {}",
                self.patch_size
            )));
        }
        Ok(())
    }

    /// Settings whose change would break a resumed run's equivalence.
    fn same_trajectory(&self, other: &TrainConfig) -> bool {
        let strip = |c: &TrainConfig| TrainConfig {
            total_iters: 0,
            log_every: 0,
            checkpoint_every: 0,
            ..c.clone()
        };
        strip(self) == strip(other)
    }
}

/// `lr0 · lr_decay^⌊iter / decay_every⌋`.
pub fn lr_at(iter: u64, cfg: &TrainConfig) -> f64 {
    schedule::decayed(cfg.lr0, cfg.lr_decay, iter / cfg.decay_every.max(1))
}

/// First and second moments mirroring a parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return shape_err(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return shape_err(format!(
                "parameter {i}: shape {:?}, gradient {:?}, moments {:?}",
                p.shape(),
                g.shape(),
                state.m[i].shape()
            ));
        }
    }
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (theta, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            let decay = lr * cfg.weight_decay * *theta;
            *theta -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon) + decay;
        }
    }
    Ok(())
}

/// A hazy image and its clean counterpart, same size.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub hazy: ImageRGB,
    pub clean: ImageRGB,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pairs: Vec<TrainingPair>,
}

impl TrainingSet {
    pub fn new(pairs: Vec<TrainingPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("training set has no pairs".into()));
        }
        for (i, p) in pairs.iter().enumerate() {
            if p.hazy.dims() != p.clean.dims() {
                return shape_err(format!(
                    "pair {i}: hazy {:?} and clean {:?} differ in size",
                    p.hazy.dims(),
                    p.clean.dims()
                ));
            }
        }
        Ok(TrainingSet { pairs })
    }

    /// Loads every entry; clean images shared between variants are read once.
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        let mut cache: HashMap<PathBuf, ImageRGB> = HashMap::new();
        let mut pairs = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            let clean_path = manifest.resolve(&entry.clean_path);
            let clean = match cache.get(&clean_path) {
                Some(img) => img.clone(),
                None => {
                    let img = io::read_image(&clean_path)?;
                    cache.insert(clean_path, img.clone());
                    img
                }
            };
            let hazy = io::read_image(manifest.resolve(&entry.hazy_path))?;
            pairs.push(TrainingPair { hazy, clean });
        }
        Self::new(pairs)
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Where a patch was cut from, in the (possibly padded) source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchOrigin {
    pub entry: usize,
    pub top: usize,
    pub left: usize,
    /// Source size after reflect padding.
    pub padded: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub hazy: Vec<ImageRGB>,
    pub clean: Vec<ImageRGB>,
    pub origins: Vec<PatchOrigin>,
}

impl PatchBatch {
    pub fn hazy_tensor(&self) -> Result<Tensor> {
        ImageRGB::stack(&self.hazy)
    }

    pub fn clean_tensor(&self) -> Result<Tensor> {
        ImageRGB::stack(&self.clean)
    }
}

/// `batch_size` co-located crops, drawn with replacement from a stream keyed
/// by `(cfg.seed, iter)`. Images smaller than the patch are reflect-padded.
pub fn sample_patch_batch(set: &TrainingSet, cfg: &TrainConfig, iter: u64) -> Result<PatchBatch> {
    let p = cfg.patch_size;
    if p == 0 || cfg.batch_size == 0 {
        return Err(Error::Parameter("patch_size and batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLER_SALT);
    rng.set_stream(iter);
    let mut batch = PatchBatch {
        hazy: Vec::with_capacity(cfg.batch_size),
        clean: Vec::with_capacity(cfg.batch_size),
        origins: Vec::with_capacity(cfg.batch_size),
    };
    for _ in 0..cfg.batch_size {
        let entry = rng.random_range(0..set.len());
        let pair = &set.pairs[entry];
        let (h, w) = pair.hazy.dims();
        let (ph, pw) = (h.max(p), w.max(p));
        let top = rng.random_range(0..=ph - p);
        let left = rng.random_range(0..=pw - p);
        let cut = |img: &ImageRGB| {
            if (h, w) == (ph, pw) {
                img.crop(top, left, p, p)
            } else {
                img.reflect_pad(ph, pw).crop(top, left, p, p)
            }
        };
        batch.hazy.push(cut(&pair.hazy)?);
        batch.clean.push(cut(&pair.clean)?);
        batch.origins.push(PatchOrigin {
            entry,
            top,
            left,
            padded: (ph, pw),
        });
    }
    Ok(batch)
}

/// Sampler key stored in checkpoints: the batch for iteration `i` is a pure
/// function of `(seed, i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub next_iteration: u64,
}

/// Losses of one iteration, printed as `key=value` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Telemetry {
    pub iteration: u64,
    pub lr: f64,
    pub l_cont: f64,
    /// Generator's adversarial term `−log D(F(I))`; zero when disabled.
    pub l_adv: f64,
    pub l_total: f64,
}

impl fmt::Display for Telemetry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} lr={:e} l_cont={:e} l_adv={:e} l_total={:e}",
            self.iteration, self.lr, self.l_cont, self.l_adv, self.l_total
        )
    }
}

impl FromStr for Telemetry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut fields = HashMap::new();
        for part in s.split_whitespace() {
            if let Some((k, v)) = part.split_once('=') {
                fields.insert(k, v);
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| Error::Format(format!("telemetry line lacks `{k}`: {s}")))
        };
        let real = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad `{k}` in telemetry line: {s}")))
        };
        Ok(Telemetry {
            iteration: get("iter")?
                .parse()
                .map_err(|_| Error::Format(format!("bad `iter` in telemetry line: {s}")))?,
            lr: real("lr")?,
            l_cont: real("l_cont")?,
            l_adv: real("l_adv")?,
            l_total: real("l_total")?,
        })
    }
}

/// Optional observers and side outputs of [`train`].
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Called after every iteration.
    pub on_step: Option<&'a mut dyn FnMut(&Telemetry)>,
    /// Scheduled and diagnostic checkpoints go here.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop once this many iterations are complete, as if interrupted.
    pub stop_at: Option<u64>,
}

impl Checkpoint {
    /// Fresh state at iteration 0.
    pub fn initial(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let generator = GfnParams::init(cfg.model, cfg.seed)?;
        let generator_adam = AdamState::new(generator.named_tensors().into_iter().map(|(_, t)| t));
        let discriminator = cfg.adversarial_enabled.then(|| {
            let disc = DiscParams::init((cfg.patch_size, cfg.patch_size), cfg.seed ^ DISC_SALT);
            let adam = AdamState::new(disc.named_tensors().into_iter().map(|(_, t)| t));
            (disc, adam)
        });
        Ok(Checkpoint {
            config: cfg.clone(),
            iteration: 0,
            generator,
            generator_adam,
            discriminator,
            rng: RngState {
                seed: cfg.seed,
                next_iteration: 0,
            },
        })
    }
}

fn disc_leaves(vars: &[LayerVars]) -> Vec<Var> {
    vars.iter().flat_map(|l| [l.weight, l.bias]).collect()
}

fn non_finite(state: &Checkpoint, dir: Option<&Path>, what: &str, iter: u64, value: f64) -> Error {
    let mut msg = format!("{what} became {value} at iteration {iter}");
    if let Some(dir) = dir {
        let path = dir.join(format!("diverged_{iter:08}.gfnc"));
        match save_checkpoint(state, &path) {
            Ok(()) => msg.push_str(&format!("; diagnostic checkpoint at {}", path.display())),
            Err(e) => msg.push_str(&format!("; diagnostic checkpoint failed: {e}")),
        }
    }
    Error::Numerical(msg)
}

/// Generator losses on one batch, and optionally their parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub content: f64,
    /// `−log D(F(I))` averaged over the batch; zero without a discriminator.
    pub adversarial: f64,
    /// `content + adv_weight · adversarial`.
    pub total: f64,
    /// Finest-scale prediction `(N, 3, H, W)`.
    pub output: Tensor,
    /// In [`GfnParams::named_tensors`] order.
    pub gradients: Option<Vec<Tensor>>,
}

/// Content loss over the pyramid plus the weighted non-saturating adversarial
/// term when a discriminator is given.
pub fn generator_objective(
    gen: &GfnParams,
    disc: Option<&DiscParams>,
    input: &NetworkInput,
    clean: &Tensor,
    adv_weight: f64,
    with_gradients: bool,
) -> Result<Objective> {
    generator_pass(gen, input, clean, adv_weight, with_gradients, |_| Ok(disc.cloned()))
}

/// [`generator_objective`] with the discriminator chosen after the forward
/// pass: `disc_for` sees the finest prediction and returns the discriminator
/// to score it with, so training can update D on this very output first.
fn generator_pass(
    gen: &GfnParams,
    input: &NetworkInput,
    clean: &Tensor,
    adv_weight: f64,
    with_gradients: bool,
    disc_for: impl FnOnce(&Tensor) -> Result<Option<DiscParams>>,
) -> Result<Objective> {
    let truth = DehazePyramid::from_full(clean, gen.config.scale_count)?;
    let mut tape = Tape::new();
    let gen_vars = gen.register(&mut tape, with_gradients);
    let out = forward_pyramid(&mut tape, gen, &gen_vars, input)?;
    let truth_vars: Vec<Var> = truth.levels.into_iter().map(|t| tape.constant(t)).collect();
    let cont = content_loss_var(&mut tape, &out.levels, &truth_vars)?;
    let finest = *out.levels.last().expect("at least one scale");
    let (total, adv) = match disc_for(tape.value(finest))? {
        Some(disc) => {
            let disc = &disc;
            let frozen = disc.register(&mut tape, false);
            let p = disc_probs(&mut tape, disc, &frozen, finest)?;
            let adv = generator_adv_var(&mut tape, p);
            let weighted = tape.affine(adv, adv_weight, 0.0);
            (tape.add(cont, weighted)?, Some(adv))
        }
        None => (cont, None),
    };
    let gradients = if with_gradients {
        let mut grads = tape.backward(total)?;
        Some(gen_vars.flat().into_iter().map(|v| grads.take(v)).collect())
    } else {
        None
    };
    Ok(Objective {
        content: tape.value(cont).item()?,
        adversarial: match adv {
            Some(a) => tape.value(a).item()?,
            None => 0.0,
        },
        total: tape.value(total).item()?,
        output: tape.value(finest).clone(),
        gradients,
    })
}

/// `−(mean log D(real) + mean log(1 − D(fake)))` and its gradients in
/// [`DiscParams::named_tensors`] order.
pub fn discriminator_objective(disc: &DiscParams, real: &Tensor, fake: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let vars = disc.register(&mut tape, true);
    let real = tape.constant(real.clone());
    let fake = tape.constant(fake.clone());
    let p_real = disc_probs(&mut tape, disc, &vars, real)?;
    let p_fake = disc_probs(&mut tape, disc, &vars, fake)?;
    let loss = discriminator_loss_var(&mut tape, p_real, p_fake)?;
    let mut grads = tape.backward(loss)?;
    let g = disc_leaves(&vars).into_iter().map(|v| grads.take(v)).collect();
    Ok((tape.value(loss).item()?, g))
}

/// One optimisation step on `state`, which advances by one iteration: a
/// discriminator update, then a generator update.
fn step(state: &mut Checkpoint, set: &TrainingSet, dir: Option<&Path>) -> Result<Telemetry> {
    let cfg = state.config.clone();
    let iter = state.iteration;
    let lr = lr_at(iter, &cfg);
    let batch = sample_patch_batch(set, &cfg, iter)?;
    let clean = batch.clean_tensor()?;
    let input = NetworkInput::from_hazy(&batch.hazy, &state.generator)?;
    // D trains first, on this iteration's generator output; G then moves
    // against the updated D on the same recorded forward pass.
    let mut disc_next = None;
    let mut d_loss = 0.0;
    let obj = generator_pass(&state.generator, &input, &clean, cfg.adv_weight, true, |fake| {
        let Some((disc, adam)) = &state.discriminator else {
            return Ok(None);
        };
        let (loss, grads) = discriminator_objective(disc, &clean, fake)?;
        d_loss = loss;
        if !loss.is_finite() {
            return Ok(None);
        }
        let mut disc = disc.clone();
        let mut adam = adam.clone();
        adam_step(&mut disc.tensors_mut(), &grads, &mut adam, lr, &cfg)?;
        disc_next = Some((disc.clone(), adam));
        Ok(Some(disc))
    })?;
    if !d_loss.is_finite() {
        return Err(non_finite(state, dir, "discriminator loss", iter, d_loss));
    }
    if !obj.total.is_finite() {
        return Err(non_finite(state, dir, "training loss", iter, obj.total));
    }
    let grads = obj.gradients.expect("requested");
    adam_step(&mut state.generator.tensors_mut(), &grads, &mut state.generator_adam, lr, &cfg)?;
    if disc_next.is_some() {
        state.discriminator = disc_next;
    }
    state.iteration += 1;
    state.rng.next_iteration = state.iteration;
    Ok(Telemetry {
        iteration: iter,
        lr,
        l_cont: obj.content,
        l_adv: obj.adversarial,
        l_total: obj.total,
    })
}

/// Runs from `resume` (or a fresh initialisation) until `cfg.total_iters`
/// iterations are complete. Deterministic given the config and data.
pub fn train(cfg: &TrainConfig, set: &TrainingSet, resume: Option<Checkpoint>, hooks: &mut TrainHooks<'_>) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut state = match resume {
        Some(ckpt) => {
            if !ckpt.config.same_trajectory(cfg) {
                return Err(Error::Parameter(
                    "checkpoint was trained with different model or optimiser settings".into(),
                ));
            }
            let mut ckpt = ckpt;
            ckpt.config = cfg.clone();
            ckpt
        }
        None => Checkpoint::initial(cfg)?,
    };
    let dir = hooks.checkpoint_dir.clone();
    if let Some(d) = &dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let end = hooks.stop_at.map_or(cfg.total_iters, |s| s.min(cfg.total_iters));
    while state.iteration < end {
        let t = step(&mut state, set, dir.as_deref())?;
        if let Some(cb) = hooks.on_step.as_mut() {
            cb(&t);
        }
        let done = state.iteration;
        if cfg.log_every > 0 && (done % cfg.log_every == 0 || done == cfg.total_iters) {
            log::info!("{t}");
        }
        if let Some(d) = &dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                save_checkpoint(&state, d.join(format!("checkpoint_{done:08}.gfnc")))?;
            }
        }
    }
    Ok(state)
}
