use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive::GammaParams;
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Tape, Tensor, Var};

/// Feature width of every hidden layer.
pub const FEATURES: usize = 32;
pub const DEFAULT_SCALES: usize = 3;
/// Dilation of the three encoder blocks.
pub const ENCODER_DILATIONS: [usize; 3] = [1, 2, 4];
/// Hazy image plus the three derived inputs.
pub const BASE_INPUT_CHANNELS: usize = 12;
pub const DISC_CHANNELS: [usize; 6] = [3, 32, 64, 128, 256, 1];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GfnConfig {
    pub scale_count: usize,
    /// Replace the learned maps with a constant 1/3 gate.
    pub equal_weight_fusion: bool,
    pub gamma: GammaParams,
}

impl Default for GfnConfig {
    fn default() -> Self {
        GfnConfig {
            scale_count: DEFAULT_SCALES,
            equal_weight_fusion: false,
            gamma: GammaParams::default(),
        }
    }
}

impl GfnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale_count == 0 {
            return Err(Error::Parameter("scale_count must be at least 1".into()));
        }
        if self.scale_count > 8 {
            return Err(Error::Parameter(format!("scale_count {} is unreasonably large", self.scale_count)));
        }
        self.gamma.validate()
    }

    /// Image sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.scale_count - 1)
    }
}

/// One convolution or stride-1 transposed convolution with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub transposed: bool,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    fn weight_shape(spec: &ConvSpec, transposed: bool) -> [usize; 4] {
        let (kh, kw) = spec.kernel;
        if transposed {
            [spec.in_channels, spec.out_channels, kh, kw]
        } else {
            [spec.out_channels, spec.in_channels, kh, kw]
        }
    }

    pub fn zeros(spec: ConvSpec, transposed: bool) -> Self {
        ConvLayer {
            weight: Tensor::zeros(Self::weight_shape(&spec, transposed)),
            bias: Tensor::zeros([1, spec.out_channels, 1, 1]),
            spec,
            transposed,
        }
    }

    /// Zero bias and `N(0, 2 / fan_in)` weights.
    pub fn he_init(spec: ConvSpec, transposed: bool, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / spec.fan_in() as f64).sqrt();
        ConvLayer {
            weight: Tensor::randn(Self::weight_shape(&spec, transposed), std, rng),
            bias: Tensor::zeros([1, spec.out_channels, 1, 1]),
            spec,
            transposed,
        }
    }

    pub(crate) fn register(&self, tape: &mut Tape, trainable: bool) -> LayerVars {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        LayerVars {
            weight: leaf(&self.weight),
            bias: leaf(&self.bias),
        }
    }

    pub(crate) fn apply(&self, tape: &mut Tape, vars: LayerVars, x: Var) -> Result<Var> {
        if self.transposed {
            tape.deconv2d(x, vars.weight, vars.bias, self.spec)
        } else {
            tape.conv2d(x, vars.weight, vars.bias, self.spec)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

/// The per-scale encoder/decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleNetParams {
    /// 5×5, input channels → 32.
    pub first: ConvLayer,
    /// 3×3, 32 → 32, dilations 1, 2, 4.
    pub encoder: [ConvLayer; 3],
    /// Transposed 3×3: 32 → 32, then 64 → 32 twice (skip concatenations).
    pub decoder: [ConvLayer; 3],
    /// 3×3, 32 → 3 confidence channels.
    pub output: ConvLayer,
}

fn scale_specs(in_channels: usize) -> (ConvSpec, [ConvSpec; 3], [ConvSpec; 3], ConvSpec) {
    let f = FEATURES;
    (
        ConvSpec::same(in_channels, f, 5, 1),
        ENCODER_DILATIONS.map(|d| ConvSpec::same(f, f, 3, d)),
        [
            ConvSpec::same(f, f, 3, 1),
            ConvSpec::same(2 * f, f, 3, 1),
            ConvSpec::same(2 * f, f, 3, 1),
        ],
        ConvSpec::same(f, 3, 3, 1),
    )
}

impl ScaleNetParams {
    pub fn zeros(in_channels: usize) -> Self {
        let (first, enc, dec, out) = scale_specs(in_channels);
        ScaleNetParams {
            first: ConvLayer::zeros(first, false),
            encoder: enc.map(|s| ConvLayer::zeros(s, false)),
            decoder: dec.map(|s| ConvLayer::zeros(s, true)),
            output: ConvLayer::zeros(out, false),
        }
    }

    pub fn init(in_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let (first, enc, dec, out) = scale_specs(in_channels);
        ScaleNetParams {
            first: ConvLayer::he_init(first, false, rng),
            encoder: enc.map(|s| ConvLayer::he_init(s, false, rng)),
            decoder: dec.map(|s| ConvLayer::he_init(s, true, rng)),
            output: ConvLayer::he_init(out, false, rng),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.first.spec.in_channels
    }

    pub fn layers(&self) -> impl Iterator<Item = (&'static str, &ConvLayer)> {
        const NAMES: [&str; 8] = ["first", "enc1", "enc2", "enc3", "dec1", "dec2", "dec3", "out"];
        NAMES.into_iter().zip(
            std::iter::once(&self.first)
                .chain(&self.encoder)
                .chain(&self.decoder)
                .chain(std::iter::once(&self.output)),
        )
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        std::iter::once(&mut self.first)
            .chain(&mut self.encoder)
            .chain(&mut self.decoder)
            .chain(std::iter::once(&mut self.output))
    }

    pub(crate) fn register(&self, tape: &mut Tape, trainable: bool) -> ScaleVars {
        ScaleVars {
            first: self.first.register(tape, trainable),
            encoder: [0, 1, 2].map(|i| self.encoder[i].register(tape, trainable)),
            decoder: [0, 1, 2].map(|i| self.decoder[i].register(tape, trainable)),
            output: self.output.register(tape, trainable),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ScaleVars {
    pub first: LayerVars,
    pub encoder: [LayerVars; 3],
    pub decoder: [LayerVars; 3],
    pub output: LayerVars,
}

impl ScaleVars {
    fn flat(&self) -> impl Iterator<Item = Var> + '_ {
        std::iter::once(self.first)
            .chain(self.encoder)
            .chain(self.decoder)
            .chain(std::iter::once(self.output))
            .flat_map(|l| [l.weight, l.bias])
    }
}

/// All generator weights, coarsest scale first.
#[derive(Debug, Clone, PartialEq)]
pub struct GfnParams {
    pub config: GfnConfig,
    pub scales: Vec<ScaleNetParams>,
}

fn scale_in_channels(k: usize) -> usize {
    if k == 0 {
        BASE_INPUT_CHANNELS
    } else {
        BASE_INPUT_CHANNELS + 3
    }
}

impl GfnParams {
    pub fn init(config: GfnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scales = (0..config.scale_count)
            .map(|k| ScaleNetParams::init(scale_in_channels(k), &mut rng))
            .collect();
        Ok(GfnParams { config, scales })
    }

    pub fn zeros(config: GfnConfig) -> Result<Self> {
        config.validate()?;
        let scales = (0..config.scale_count)
            .map(|k| ScaleNetParams::zeros(scale_in_channels(k)))
            .collect();
        Ok(GfnParams { config, scales })
    }

    /// Every weight and bias with a stable name, in a fixed order shared by
    /// [`GfnParams::tensors_mut`] and the tape registration.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (k, scale) in self.scales.iter().enumerate() {
            for (name, layer) in scale.layers() {
                out.push((format!("gfn.scale{k}.{name}.weight"), &layer.weight));
                out.push((format!("gfn.scale{k}.{name}.bias"), &layer.bias));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.scales
            .iter_mut()
            .flat_map(|s| s.layers_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub(crate) fn register(&self, tape: &mut Tape, trainable: bool) -> GfnVars {
        GfnVars {
            scales: self.scales.iter().map(|s| s.register(tape, trainable)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GfnVars {
    pub scales: Vec<ScaleVars>,
}

impl GfnVars {
    /// Leaf handles in [`GfnParams::named_tensors`] order.
    pub fn flat(&self) -> Vec<Var> {
        self.scales.iter().flat_map(|s| s.flat().collect::<Vec<_>>()).collect()
    }
}

/// Strided patch classifier: five 3×3 stride-2 convolutions, global average
/// and a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscParams {
    pub layers: Vec<ConvLayer>,
    /// The only input size accepted, `(height, width)`.
    pub resolution: (usize, usize),
}

impl DiscParams {
    fn specs() -> Vec<ConvSpec> {
        DISC_CHANNELS
            .windows(2)
            .map(|w| ConvSpec::strided(w[0], w[1], 3, 2))
            .collect()
    }

    pub fn init(resolution: (usize, usize), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DiscParams {
            layers: Self::specs()
                .into_iter()
                .map(|s| ConvLayer::he_init(s, false, &mut rng))
                .collect(),
            resolution,
        }
    }

    pub fn zeros(resolution: (usize, usize)) -> Self {
        DiscParams {
            layers: Self::specs().into_iter().map(|s| ConvLayer::zeros(s, false)).collect(),
            resolution,
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("disc.conv{i}.weight"), &l.weight),
                    (format!("disc.conv{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub(crate) fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<LayerVars> {
        self.layers.iter().map(|l| l.register(tape, trainable)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_network_dimensions() {
        let p = GfnParams::init(GfnConfig::default(), 0).unwrap();
        assert_eq!(p.scales.len(), 3);
        assert_eq!(p.scales[0].in_channels(), 12);
        assert_eq!(p.scales[1].in_channels(), 15);
        let s = &p.scales[2];
        assert_eq!(s.first.weight.shape(), [32, 15, 5, 5]);
        for (e, d) in s.encoder.iter().zip(ENCODER_DILATIONS) {
            assert_eq!(e.weight.shape(), [32, 32, 3, 3]);
            assert_eq!(e.spec.dilation, d);
            assert_eq!(e.spec.stride, 1);
        }
        assert_eq!(s.decoder[0].weight.shape(), [32, 32, 3, 3]);
        assert_eq!(s.decoder[1].weight.shape(), [64, 32, 3, 3]);
        assert_eq!(s.decoder[2].weight.shape(), [64, 32, 3, 3]);
        assert_eq!(s.output.weight.shape(), [3, 32, 3, 3]);
        assert!(p.named_tensors().iter().all(|(n, _)| n.starts_with("gfn.scale")));
    }

    #[test]
    fn init_is_seeded_with_zero_bias() {
        let a = GfnParams::init(GfnConfig::default(), 5).unwrap();
        assert_eq!(a, GfnParams::init(GfnConfig::default(), 5).unwrap());
        assert_ne!(a, GfnParams::init(GfnConfig::default(), 6).unwrap());
        assert!(a.scales[0].first.bias.data().iter().all(|&b| b == 0.0));
        let w = &a.scales[0].encoder[0].weight;
        let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let expect = 2.0 / (32.0 * 9.0);
        assert!((var / expect - 1.0).abs() < 0.1);
    }

    #[test]
    fn tensor_orders_agree() {
        let mut p = GfnParams::init(GfnConfig { scale_count: 2, ..Default::default() }, 1).unwrap();
        let shapes: Vec<_> = p.named_tensors().iter().map(|(_, t)| t.shape()).collect();
        let mut_shapes: Vec<_> = p.tensors_mut().iter().map(|t| t.shape()).collect();
        assert_eq!(shapes, mut_shapes);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape, true).flat();
        let tape_shapes: Vec<_> = vars.iter().map(|&v| tape.value(v).shape()).collect();
        assert_eq!(shapes, tape_shapes);
    }
}
