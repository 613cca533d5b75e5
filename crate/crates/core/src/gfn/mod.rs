//! The multi-scale gated fusion network: per-scale encoder/decoder that
//! predicts three confidence maps, the gated blend of the derived inputs, the
//! discriminator and the training losses.

mod loss;
mod network;
mod params;

pub use loss::{adversarial_loss, content_loss, total_loss, total_loss_weighted, ADV_WEIGHT, PROB_EPS};
pub use network::{
    dehaze, dehaze_with_maps, discriminator_forward, fuse, fuse_images, multi_scale_forward,
    multi_scale_forward_detailed, scale_forward, ConfidenceMaps, DehazePyramid, MultiScaleOutput,
    NetworkInput, DISC_LEAK,
};
pub use params::{
    ConvLayer, DiscParams, GfnConfig, GfnParams, ScaleNetParams, BASE_INPUT_CHANNELS, DEFAULT_SCALES,
    DISC_CHANNELS, ENCODER_DILATIONS, FEATURES,
};

pub(crate) use loss::{content_loss_var, discriminator_loss_var, generator_adv_var};
pub(crate) use network::{disc_probs, forward_pyramid};
pub(crate) use params::LayerVars;
