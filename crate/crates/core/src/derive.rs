//! The three enhanced versions of a hazy image that the network blends:
//! gray-world white balance, mean-subtracted contrast stretch and a decoding
//! gamma curve.

use crate::error::{Error, Result};
use crate::image::ImageRGB;

/// White-balance gains are confined to this range.
pub const WB_GAIN_MIN: f64 = 0.25;
pub const WB_GAIN_MAX: f64 = 4.0;
/// Channel means below this are treated as empty; their gain saturates at the cap.
pub const WB_MIN_CHANNEL_MEAN: f64 = 1e-6;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_GAMMA: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LuminanceStats {
    pub mean_luminance: f64,
    /// `2 · (0.5 + mean_luminance)`, in `[1, 3]`.
    pub amplification: f64,
}

/// White-balanced image plus the gains that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteBalanced {
    pub image: ImageRGB,
    pub gains: [f64; 3],
    /// Set when some channel mean was below [`WB_MIN_CHANNEL_MEAN`] and its gain
    /// was forced to the cap.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GammaParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for GammaParams {
    fn default() -> Self {
        GammaParams {
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl GammaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("gamma-correction alpha must be positive, got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Parameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedInputs {
    pub wb: ImageRGB,
    pub ce: ImageRGB,
    pub gc: ImageRGB,
    /// Propagated from [`WhiteBalanced::degenerate`].
    pub wb_degenerate: bool,
}

impl DerivedInputs {
    pub fn dims(&self) -> (usize, usize) {
        self.wb.dims()
    }

    pub fn as_array(&self) -> [&ImageRGB; 3] {
        [&self.wb, &self.ce, &self.gc]
    }
}

/// Mean over all pixels and all three channels, and the contrast amplification
/// derived from it.
pub fn mean_luminance(img: &ImageRGB) -> LuminanceStats {
    let data = img.data();
    // Shifted by the first sample so a constant image yields its value exactly.
    let pivot = data.first().copied().unwrap_or(0.0);
    let mean = pivot + data.iter().map(|v| v - pivot).sum::<f64>() / data.len() as f64;
    LuminanceStats {
        mean_luminance: mean,
        amplification: 2.0 * (0.5 + mean),
    }
}

/// Gray-world white balance: scales each channel so all channel means meet at
/// their common average.
pub fn white_balance(img: &ImageRGB) -> WhiteBalanced {
    let means = img.channel_means();
    let gray = means.iter().sum::<f64>() / 3.0;
    let mut degenerate = false;
    let gains = means.map(|m| {
        if m < WB_MIN_CHANNEL_MEAN {
            degenerate = true;
            WB_GAIN_MAX
        } else {
            (gray / m).clamp(WB_GAIN_MIN, WB_GAIN_MAX)
        }
    });
    let (h, w) = img.dims();
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| (gains[c] * px[c]).clamp(0.0, 1.0)))
        .collect();
    WhiteBalanced {
        image: ImageRGB::new(h, w, data).expect("gains keep values in range"),
        gains,
        degenerate,
    }
}

/// `clamp(μ · (I − Ĩ), 0, 1)` with `Ĩ` and `μ` from [`mean_luminance`].
pub fn contrast_enhance(img: &ImageRGB) -> ImageRGB {
    let stats = mean_luminance(img);
    img.map_clamped(|v| stats.amplification * (v - stats.mean_luminance))
}

/// `clamp(α · I^γ, 0, 1)`.
pub fn gamma_correct(img: &ImageRGB, alpha: f64, gamma: f64) -> Result<ImageRGB> {
    GammaParams { alpha, gamma }.validate()?;
    Ok(img.map_clamped(|v| alpha * v.powf(gamma)))
}

pub fn derive_inputs(img: &ImageRGB) -> DerivedInputs {
    derive_inputs_with(img, GammaParams::default()).expect("default gamma parameters are valid")
}

pub fn derive_inputs_with(img: &ImageRGB, gamma: GammaParams) -> Result<DerivedInputs> {
    let wb = white_balance(img);
    Ok(DerivedInputs {
        wb: wb.image,
        ce: contrast_enhance(img),
        gc: gamma_correct(img, gamma.alpha, gamma.gamma)?,
        wb_degenerate: wb.degenerate,
    })
}
