//! Full-reference quality metrics and the dataset evaluation protocol.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::gfn::{dehaze, GfnParams};
use crate::hazesim::DatasetManifest;
use crate::image::ImageRGB;
use crate::io;

/// Reported when the two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_dims(a: &ImageRGB, b: &ImageRGB) -> Result<()> {
    if a.dims() != b.dims() {
        return shape_err(format!("images differ in size: {:?} vs {:?}", a.dims(), b.dims()));
    }
    Ok(())
}

/// `10·log10(1 / MSE)` over all values with peak 1, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of one `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03,
/// L = 1, valid windows only, averaged over positions and channels.
pub fn ssim(a: &ImageRGB, b: &ImageRGB) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return shape_err(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let pa: Vec<f64> = a.data().iter().skip(c).step_by(3).copied().collect();
        let pb: Vec<f64> = b.data().iter().skip(c).step_by(3).copied().collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter_valid(&pa, h, w, &taps);
        let mu_b = filter_valid(&pb, h, w, &taps);
        let e_aa = filter_valid(&prod(&pa, &pa), h, w, &taps);
        let e_bb = filter_valid(&prod(&pb, &pb), h, w, &taps);
        let e_ab = filter_valid(&prod(&pa, &pb), h, w, &taps);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Anything that maps a hazy image to a restored one.
pub trait Dehazer {
    fn dehaze(&self, hazy: &ImageRGB) -> Result<ImageRGB>;
}

impl Dehazer for GfnParams {
    fn dehaze(&self, hazy: &ImageRGB) -> Result<ImageRGB> {
        dehaze(hazy, self)
    }
}

/// Returns the hazy input unchanged; scores the no-op baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Dehazer for Identity {
    fn dehaze(&self, hazy: &ImageRGB) -> Result<ImageRGB> {
        Ok(hazy.clone())
    }
}

/// How per-image scores are grouped in a report.
#[derive(Debug, Clone, PartialEq)]
pub enum HazeGrouping {
    /// A single `all` group.
    None,
    /// Light/medium/heavy for β within `tolerance` of 0.8/1.0/1.2, `random`
    /// for everything else.
    ByBeta { tolerance: f64 },
}

impl Default for HazeGrouping {
    fn default() -> Self {
        HazeGrouping::ByBeta { tolerance: 1e-6 }
    }
}

pub const HAZE_LEVELS: [(&str, f64); 3] = [("light", 0.8), ("medium", 1.0), ("heavy", 1.2)];
const GROUP_ORDER: [&str; 4] = ["light", "medium", "heavy", "random"];

impl HazeGrouping {
    pub fn key(&self, beta: f64) -> &'static str {
        match self {
            HazeGrouping::None => "all",
            HazeGrouping::ByBeta { tolerance } => HAZE_LEVELS
                .iter()
                .find(|(_, b)| (beta - b).abs() <= *tolerance)
                .map(|(name, _)| *name)
                .unwrap_or("random"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalOptions {
    /// Quantize both images to 8 bits before scoring.
    pub eight_bit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub hazy_path: String,
    pub group: String,
    pub beta: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub count: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryError {
    pub hazy_path: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: Vec<ImageScore>,
    /// Non-empty groups in light/medium/heavy/random order, then `all`.
    pub groups: Vec<GroupSummary>,
    pub failures: Vec<EntryError>,
}

impl MetricReport {
    pub fn from_scores(images: Vec<ImageScore>, failures: Vec<EntryError>) -> Self {
        let summarize = |name: &str, rows: Vec<&ImageScore>| {
            let n = rows.len();
            GroupSummary {
                group: name.to_string(),
                count: n,
                mean_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n as f64,
                mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n as f64,
            }
        };
        let mut groups = Vec::new();
        for name in GROUP_ORDER {
            let rows: Vec<_> = images.iter().filter(|r| r.group == name).collect();
            if !rows.is_empty() {
                groups.push(summarize(name, rows));
            }
        }
        if !images.is_empty() {
            groups.push(summarize("all", images.iter().collect()));
        }
        MetricReport {
            images,
            groups,
            failures,
        }
    }

    pub fn group(&self, name: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per metric, one column per haze group.
    pub fn to_table(&self, method: &str) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self.groups.iter().map(|g| g.group.as_str()).collect();
        let _ = writeln!(out, "| {method} | {} |", header.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(header.len()));
        let psnr: Vec<String> = self.groups.iter().map(|g| format!("{:.2}", g.mean_psnr)).collect();
        let ssim: Vec<String> = self.groups.iter().map(|g| format!("{:.4}", g.mean_ssim)).collect();
        let _ = writeln!(out, "| PSNR | {} |", psnr.join(" | "));
        let _ = writeln!(out, "| SSIM | {} |", ssim.join(" | "));
        out
    }
}

fn quantized(img: &ImageRGB) -> ImageRGB {
    img.map_clamped(|v| io::quantize(v) as f64 / 255.0)
}

/// Scores one restored image against its ground truth.
pub fn score_pair(restored: &ImageRGB, clean: &ImageRGB, opts: EvalOptions) -> Result<(f64, f64)> {
    if opts.eight_bit {
        let (r, c) = (quantized(restored), quantized(clean));
        Ok((psnr(&r, &c)?, ssim(&r, &c)?))
    } else {
        Ok((psnr(restored, clean)?, ssim(restored, clean)?))
    }
}

/// Dehazes every manifest entry, scores it against the clean image and
/// aggregates per haze group. Unreadable entries are reported, not fatal.
pub fn evaluate(
    manifest: &DatasetManifest,
    dehazer: &dyn Dehazer,
    grouping: &HazeGrouping,
    opts: EvalOptions,
) -> Result<MetricReport> {
    if manifest.entries.is_empty() {
        return Err(Error::Empty("manifest has no entries".into()));
    }
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for entry in &manifest.entries {
        let scored = io::read_image(manifest.resolve(&entry.hazy_path)).and_then(|hazy| {
            let clean = io::read_image(manifest.resolve(&entry.clean_path))?;
            let restored = dehazer.dehaze(&hazy)?;
            score_pair(&restored, &clean, opts)
        });
        match scored {
            Ok((p, s)) => images.push(ImageScore {
                hazy_path: entry.hazy_path.clone(),
                group: grouping.key(entry.beta).to_string(),
                beta: entry.beta,
                psnr: p,
                ssim: s,
            }),
            Err(e) => {
                log::warn!("evaluation of {} failed: {e}", entry.hazy_path);
                failures.push(EntryError {
                    hazy_path: entry.hazy_path.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(MetricReport::from_scores(images, failures))
}
