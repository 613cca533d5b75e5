//! Haze synthesis with the atmospheric scattering model
//! `I = J·t + A·(1 − t)`, `t = exp(−β·d)`, and dataset generation on top of it.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::image::{clamp_unit, ImageRGB};
use crate::io;

pub const ATMOSPHERIC_LIGHT_RANGE: (f64, f64) = (0.8, 1.0);
pub const BETA_RANGE: (f64, f64) = (0.5, 1.5);
pub const DEFAULT_NOISE_SIGMA: f64 = 0.01;
pub const DEFAULT_VARIANTS: usize = 7;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Synthesis noise is drawn from this ChaCha stream so it never overlaps the
/// parameter draws made from the same seed.
const NOISE_STREAM: u64 = 1;

/// Nonnegative scene depth, arbitrary units.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return shape_err(format!(
                "depth data length {} does not match {height}x{width}",
                data.len()
            ));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Parameter(format!("depth value {v} is not a finite nonnegative number")));
        }
        Ok(DepthMap {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazeParams {
    /// Global airlight `A`, identical for all three channels.
    pub atmospheric_light: f64,
    /// Scattering coefficient `β`.
    pub scattering_coefficient: f64,
    pub noise_sigma: f64,
}

/// Per-pixel transmission `t ∈ (0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl TransmissionMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return shape_err(format!(
                "transmission data length {} does not match {height}x{width}",
                data.len()
            ));
        }
        if let Some(v) = data.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::Parameter(format!("transmission {v} outside (0, 1]")));
        }
        Ok(TransmissionMap {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `t = exp(−β·d)`, after dividing depth by its maximum when `normalize` is set.
pub fn transmission_from_depth(depth: &DepthMap, beta: f64, normalize: bool) -> Result<TransmissionMap> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Parameter(format!("scattering coefficient must be positive, got {beta}")));
    }
    let scale = if normalize {
        let max = depth.max();
        if max <= 0.0 {
            return Err(Error::DegenerateDepth("cannot normalize an all-zero depth map".into()));
        }
        1.0 / max
    } else {
        1.0
    };
    // Underflow to 0 would break the (0, 1] invariant on absurdly deep pixels.
    let data = depth
        .data()
        .iter()
        .map(|d| (-beta * d * scale).exp().max(f64::MIN_POSITIVE))
        .collect();
    TransmissionMap::new(depth.height(), depth.width(), data)
}

/// Applies the scattering model, then seeded Gaussian noise, then clamps to `[0, 1]`.
pub fn synthesize_hazy(clean: &ImageRGB, t: &TransmissionMap, params: &HazeParams, seed: u64) -> Result<ImageRGB> {
    if clean.dims() != t.dims() {
        return shape_err(format!(
            "clean image {:?} and transmission {:?} differ in size",
            clean.dims(),
            t.dims()
        ));
    }
    if !(params.noise_sigma >= 0.0 && params.noise_sigma.is_finite()) {
        return Err(Error::Parameter(format!("noise sigma must be nonnegative, got {}", params.noise_sigma)));
    }
    let a = params.atmospheric_light;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    let noise = (params.noise_sigma > 0.0).then(|| Normal::new(0.0, params.noise_sigma).expect("valid sigma"));
    let mut data = Vec::with_capacity(clean.data().len());
    for (px, &tv) in clean.data().chunks_exact(3).zip(t.data()) {
        for &j in px {
            let mut v = j * tv + a * (1.0 - tv);
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            data.push(clamp_unit(v));
        }
    }
    ImageRGB::new(clean.height(), clean.width(), data)
}

/// `A ~ U(0.8, 1.0)`, `β ~ U[0.5, 1.5]`, `σ = 0.01`, deterministic in `seed`.
pub fn sample_haze_params(seed: u64) -> HazeParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a_lo, a_hi) = ATMOSPHERIC_LIGHT_RANGE;
    let atmospheric_light = loop {
        let a = rng.random_range(a_lo..a_hi);
        if a > a_lo {
            break a;
        }
    };
    HazeParams {
        atmospheric_light,
        scattering_coefficient: rng.random_range(BETA_RANGE.0..=BETA_RANGE.1),
        noise_sigma: DEFAULT_NOISE_SIGMA,
    }
}

/// One synthesized hazy variant of a clean image.
#[derive(Debug, Clone)]
pub struct HazyVariant {
    pub hazy: ImageRGB,
    pub params: HazeParams,
    pub seed: u64,
}

/// Overrides applied on top of the sampled haze parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VariantOverrides {
    pub beta: Option<f64>,
    pub noise_sigma: Option<f64>,
}

/// Samples parameters from `seed` and renders the hazy image.
pub fn synthesize_variant(
    clean: &ImageRGB,
    depth: &DepthMap,
    normalize: bool,
    seed: u64,
    overrides: VariantOverrides,
) -> Result<HazyVariant> {
    if clean.dims() != depth.dims() {
        return shape_err(format!(
            "clean image {:?} and depth {:?} differ in size",
            clean.dims(),
            depth.dims()
        ));
    }
    let mut params = sample_haze_params(seed);
    if let Some(beta) = overrides.beta {
        params.scattering_coefficient = beta;
    }
    if let Some(sigma) = overrides.noise_sigma {
        params.noise_sigma = sigma;
    }
    let t = transmission_from_depth(depth, params.scattering_coefficient, normalize)?;
    let hazy = synthesize_hazy(clean, &t, &params, seed)?;
    Ok(HazyVariant { hazy, params, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub clean_path: String,
    pub depth_path: String,
    pub hazy_path: String,
    #[serde(rename = "A")]
    pub atmospheric_light: f64,
    pub beta: f64,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl ManifestEntry {
    pub fn haze_params(&self) -> HazeParams {
        HazeParams {
            atmospheric_light: self.atmospheric_light,
            scattering_coefficient: self.beta,
            noise_sigma: self.noise_sigma,
        }
    }
}

/// A source pair that could not be processed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryFailure {
    pub pair_index: usize,
    pub clean_path: String,
    pub depth_path: String,
    pub error: String,
}

/// Listing of clean/depth/hazy triples with everything needed to regenerate
/// them. Relative paths resolve against the manifest's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub global_seed: u64,
    pub depth_normalization: bool,
    /// Metres represented by a full-scale 16-bit depth PNG value.
    pub depth_scale: f64,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<EntryFailure>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Seed of entry `index`.
    pub fn entry_seed(global_seed: u64, index: usize) -> u64 {
        global_seed.wrapping_add(index as u64)
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                manifest.version
            )));
        }
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourcePair {
    pub clean: PathBuf,
    pub depth: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub variants_per_image: usize,
    pub global_seed: u64,
    pub depth_normalization: bool,
    pub depth_scale: f64,
    /// Replaces the default 1% noise when set.
    pub noise_sigma: Option<f64>,
    /// Fixed β per variant, cycled; sampled from `U[0.5, 1.5]` when unset.
    pub betas: Option<Vec<f64>>,
    /// Write hazy images as raw floats instead of 8-bit PNG.
    pub raw_output: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            variants_per_image: DEFAULT_VARIANTS,
            global_seed: 0,
            depth_normalization: true,
            depth_scale: 10.0,
            noise_sigma: None,
            betas: None,
            raw_output: false,
        }
    }
}

fn relative_to(path: &Path, base: &Path) -> String {
    let abs = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
    let base = std::path::absolute(base).unwrap_or_else(|_| base.to_path_buf());
    abs.strip_prefix(&base)
        .map(Path::to_path_buf)
        .unwrap_or(abs)
        .to_string_lossy()
        .into_owned()
}

/// Synthesizes `variants_per_image` hazy versions of every pair under
/// `out_dir` and writes `manifest.json` there. Pairs that fail to load are
/// recorded in the manifest's `failures` and skipped.
pub fn generate_dataset(pairs: &[SourcePair], opts: &SynthOptions, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if pairs.is_empty() {
        return Err(Error::Empty("no clean/depth pairs to synthesize from".into()));
    }
    if let Some(betas) = &opts.betas {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::Parameter(format!("fixed betas must be positive and non-empty, got {betas:?}")));
        }
    }
    if opts.variants_per_image == 0 {
        return Err(Error::Parameter("variants_per_image must be at least 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ext = if opts.raw_output { io::RAW_EXTENSION } else { "png" };
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (pair_index, pair) in pairs.iter().enumerate() {
        let loaded = io::read_image(&pair.clean).and_then(|clean| {
            let depth = io::read_depth(&pair.depth, opts.depth_scale)?;
            Ok((clean, depth))
        });
        let rendered = loaded.and_then(|(clean, depth)| {
            (0..opts.variants_per_image)
                .map(|v| {
                    let index = pair_index * opts.variants_per_image + v;
                    let seed = DatasetManifest::entry_seed(opts.global_seed, index);
                    let overrides = VariantOverrides {
                        beta: opts.betas.as_ref().map(|b| b[v % b.len()]),
                        noise_sigma: opts.noise_sigma,
                    };
                    synthesize_variant(&clean, &depth, opts.depth_normalization, seed, overrides)
                })
                .collect::<Result<Vec<_>>>()
        });
        let variants = match rendered {
            Ok(v) => v,
            Err(e) => {
                log::warn!("skipping pair {pair_index}: {e}");
                failures.push(EntryFailure {
                    pair_index,
                    clean_path: pair.clean.to_string_lossy().into_owned(),
                    depth_path: pair.depth.to_string_lossy().into_owned(),
                    error: e.to_string(),
                });
                continue;
            }
        };
        for (v, variant) in variants.into_iter().enumerate() {
            let name = format!("hazy_{pair_index:04}_{v}.{ext}");
            io::write_image(out_dir.join(&name), &variant.hazy)?;
            entries.push(ManifestEntry {
                clean_path: relative_to(&pair.clean, out_dir),
                depth_path: relative_to(&pair.depth, out_dir),
                hazy_path: name,
                atmospheric_light: variant.params.atmospheric_light,
                beta: variant.params.scattering_coefficient,
                noise_sigma: variant.params.noise_sigma,
                rng_seed: variant.seed,
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::Empty(format!(
            "all {} pairs failed; first error: {}",
            pairs.len(),
            failures.first().map(|f| f.error.as_str()).unwrap_or("")
        )));
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        global_seed: opts.global_seed,
        depth_normalization: opts.depth_normalization,
        depth_scale: opts.depth_scale,
        entries,
        failures,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
