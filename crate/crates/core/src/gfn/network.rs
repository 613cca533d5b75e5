use super::params::{DiscParams, GfnParams, GfnVars, LayerVars, ScaleNetParams, ScaleVars};
use crate::derive::{derive_inputs_with, DerivedInputs};
use crate::error::{shape_err, Error, Result};
use crate::image::ImageRGB;
use crate::tensor::{resize_bilinear, Activation, ResizeScale, Tape, Tensor, Var};

pub const DISC_LEAK: f64 = 0.2;

/// The three per-pixel gates, each `(N, 1, H, W)` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMaps {
    pub wb: Tensor,
    pub ce: Tensor,
    pub gc: Tensor,
}

impl ConfidenceMaps {
    pub fn uniform(batch: usize, height: usize, width: usize, value: f64) -> Self {
        let t = Tensor::full([batch, 1, height, width], value);
        ConfidenceMaps {
            wb: t.clone(),
            ce: t.clone(),
            gc: t,
        }
    }

    pub fn as_array(&self) -> [&Tensor; 3] {
        [&self.wb, &self.ce, &self.gc]
    }
}

/// Dehazed outputs of every scale, coarsest first, before clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct DehazePyramid {
    pub levels: Vec<Tensor>,
}

impl DehazePyramid {
    pub fn finest(&self) -> &Tensor {
        self.levels.last().expect("pyramid has at least one level")
    }

    /// `scale_count` levels obtained by repeated ×½ bilinear downsampling of
    /// `full`, coarsest first.
    pub fn from_full(full: &Tensor, scale_count: usize) -> Result<Self> {
        let mut levels = vec![full.clone()];
        for _ in 1..scale_count {
            let next = resize_bilinear(levels.last().unwrap(), ResizeScale::HALF)?;
            levels.push(next);
        }
        levels.reverse();
        Ok(DehazePyramid { levels })
    }
}

/// Network input batch: hazy images and their derived inputs, all `(N, 3, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInput {
    pub hazy: Tensor,
    pub wb: Tensor,
    pub ce: Tensor,
    pub gc: Tensor,
}

impl NetworkInput {
    pub fn from_derived(hazy: &[ImageRGB], derived: &[DerivedInputs]) -> Result<Self> {
        Ok(NetworkInput {
            hazy: ImageRGB::stack(hazy)?,
            wb: ImageRGB::stack(&derived.iter().map(|d| d.wb.clone()).collect::<Vec<_>>())?,
            ce: ImageRGB::stack(&derived.iter().map(|d| d.ce.clone()).collect::<Vec<_>>())?,
            gc: ImageRGB::stack(&derived.iter().map(|d| d.gc.clone()).collect::<Vec<_>>())?,
        })
    }

    /// Derives the inputs of every image with the configured gamma curve.
    pub fn from_hazy(hazy: &[ImageRGB], params: &GfnParams) -> Result<Self> {
        let derived = hazy
            .iter()
            .map(|h| derive_inputs_with(h, params.config.gamma))
            .collect::<Result<Vec<_>>>()?;
        Self::from_derived(hazy, &derived)
    }

    pub fn derived(&self) -> [&Tensor; 3] {
        [&self.wb, &self.ce, &self.gc]
    }

    fn dims(&self) -> (usize, usize) {
        (self.hazy.height(), self.hazy.width())
    }

    /// Per-scale `[hazy, wb, ce, gc]`, coarsest first.
    fn pyramid(&self, scale_count: usize) -> Result<Vec<[Tensor; 4]>> {
        let mut levels = vec![[self.hazy.clone(), self.wb.clone(), self.ce.clone(), self.gc.clone()]];
        for _ in 1..scale_count {
            let prev = levels.last().unwrap();
            let mut next = Vec::with_capacity(4);
            for t in prev {
                next.push(resize_bilinear(t, ResizeScale::HALF)?);
            }
            levels.push(next.try_into().expect("four tensors"));
        }
        levels.reverse();
        Ok(levels)
    }
}

/// Encoder/decoder of one scale; returns the three gate maps.
pub(crate) fn scale_maps(
    tape: &mut Tape,
    params: &ScaleNetParams,
    vars: &ScaleVars,
    inputs: &[Var],
) -> Result<[Var; 3]> {
    let x = tape.concat_channels(inputs)?;
    let relu = |tape: &mut Tape, v: Var| tape.activation(v, Activation::Relu);

    let f = params.first.apply(tape, vars.first, x)?;
    let f = relu(tape, f);
    let mut enc = Vec::with_capacity(3);
    let mut h = f;
    for (layer, lv) in params.encoder.iter().zip(vars.encoder) {
        let y = layer.apply(tape, lv, h)?;
        h = relu(tape, y);
        enc.push(h);
    }
    // decoder mirrors the encoder: E3 feeds D1, E2 joins before D2, E1 before D3
    let d1 = params.decoder[0].apply(tape, vars.decoder[0], enc[2])?;
    let d1 = relu(tape, d1);
    let cat2 = tape.concat_channels(&[d1, enc[1]])?;
    let d2 = params.decoder[1].apply(tape, vars.decoder[1], cat2)?;
    let d2 = relu(tape, d2);
    let cat3 = tape.concat_channels(&[d2, enc[0]])?;
    let d3 = params.decoder[2].apply(tape, vars.decoder[2], cat3)?;
    let d3 = relu(tape, d3);
    let logits = params.output.apply(tape, vars.output, d3)?;
    let gates = tape.activation(logits, Activation::Sigmoid);
    Ok([
        tape.slice_channels(gates, 0, 1)?,
        tape.slice_channels(gates, 1, 1)?,
        tape.slice_channels(gates, 2, 1)?,
    ])
}

/// `J = C_wb∘I_wb + C_ce∘I_ce + C_gc∘I_gc` with each map broadcast over colour.
pub(crate) fn fuse_vars(tape: &mut Tape, maps: [Var; 3], derived: [Var; 3]) -> Result<Var> {
    let a = tape.mul_map(maps[0], derived[0])?;
    let b = tape.mul_map(maps[1], derived[1])?;
    let c = tape.mul_map(maps[2], derived[2])?;
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}

pub(crate) struct PyramidVars {
    pub levels: Vec<Var>,
    pub maps: Vec<[Var; 3]>,
}

/// Coarse-to-fine pass. Each finer scale also sees the ×2 upsampled output of
/// the previous one. Sides must be multiples of `2^(scale_count − 1)`.
pub(crate) fn forward_pyramid(
    tape: &mut Tape,
    params: &GfnParams,
    vars: &GfnVars,
    input: &NetworkInput,
) -> Result<PyramidVars> {
    let cfg = &params.config;
    cfg.validate()?;
    if params.scales.len() != cfg.scale_count {
        return Err(Error::Contract(format!(
            "{} scale networks for scale_count {}",
            params.scales.len(),
            cfg.scale_count
        )));
    }
    let (h, w) = input.dims();
    let m = cfg.size_multiple();
    if h % m != 0 || w % m != 0 {
        return shape_err(format!("{h}x{w} input is not divisible by {m}"));
    }
    let mut levels = Vec::with_capacity(cfg.scale_count);
    let mut all_maps = Vec::with_capacity(cfg.scale_count);
    for (k, inputs) in input.pyramid(cfg.scale_count)?.into_iter().enumerate() {
        let [hazy, wb, ce, gc] = inputs;
        let [n, _, sh, sw] = hazy.shape();
        let derived = [tape.constant(wb), tape.constant(ce), tape.constant(gc)];
        let maps = if cfg.equal_weight_fusion {
            let third = Tensor::full([n, 1, sh, sw], 1.0 / 3.0);
            [0, 1, 2].map(|_| tape.constant(third.clone()))
        } else {
            let mut parts = vec![tape.constant(hazy)];
            parts.extend(derived);
            if k > 0 {
                let up = tape.resize_bilinear(levels[k - 1], ResizeScale::DOUBLE)?;
                parts.push(up);
            }
            scale_maps(tape, &params.scales[k], &vars.scales[k], &parts)?
        };
        let out = fuse_vars(tape, maps, derived)?;
        levels.push(out);
        all_maps.push(maps);
    }
    Ok(PyramidVars {
        levels,
        maps: all_maps,
    })
}

/// Discriminator probabilities `(N, 1, 1, 1)`.
pub(crate) fn disc_probs(tape: &mut Tape, params: &DiscParams, vars: &[LayerVars], img: Var) -> Result<Var> {
    let [_, c, h, w] = tape.value(img).shape();
    if c != 3 || (h, w) != params.resolution {
        return shape_err(format!(
            "discriminator expects 3x{}x{} input, got {c}x{h}x{w}",
            params.resolution.0, params.resolution.1
        ));
    }
    let mut x = img;
    let last = params.layers.len() - 1;
    for (i, (layer, lv)) in params.layers.iter().zip(vars).enumerate() {
        x = layer.apply(tape, *lv, x)?;
        if i < last {
            x = tape.activation(x, Activation::LeakyRelu(DISC_LEAK));
        }
    }
    let pooled = tape.global_avg_pool(x);
    Ok(tape.activation(pooled, Activation::Sigmoid))
}

/// Gate maps of one scale network. `prev_upsampled` must be given exactly when
/// the network is not the coarsest (15 input channels).
pub fn scale_forward(
    hazy: &Tensor,
    derived: [&Tensor; 3],
    prev_upsampled: Option<&Tensor>,
    params: &ScaleNetParams,
) -> Result<ConfidenceMaps> {
    let expects_prev = params.in_channels() > super::params::BASE_INPUT_CHANNELS;
    if expects_prev != prev_upsampled.is_some() {
        return Err(Error::Contract(format!(
            "scale network with {} input channels {} a previous-scale image",
            params.in_channels(),
            if expects_prev { "needs" } else { "does not take" }
        )));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let mut parts = vec![tape.constant(hazy.clone())];
    for d in derived {
        parts.push(tape.constant(d.clone()));
    }
    if let Some(p) = prev_upsampled {
        parts.push(tape.constant(p.clone()));
    }
    let maps = scale_maps(&mut tape, params, &vars, &parts)?;
    Ok(ConfidenceMaps {
        wb: tape.value(maps[0]).clone(),
        ce: tape.value(maps[1]).clone(),
        gc: tape.value(maps[2]).clone(),
    })
}

/// Gated fusion of tensors, unclamped.
pub fn fuse(maps: &ConfidenceMaps, derived: [&Tensor; 3]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let m = maps.as_array().map(|t| tape.constant(t.clone()));
    let d = derived.map(|t| tape.constant(t.clone()));
    let out = fuse_vars(&mut tape, m, d)?;
    Ok(tape.value(out).clone())
}

/// Gated fusion of a single image's derived inputs, clamped for export.
pub fn fuse_images(maps: &ConfidenceMaps, derived: &DerivedInputs) -> Result<ImageRGB> {
    let d = derived.as_array().map(|i| i.to_tensor());
    let fused = fuse(maps, [&d[0], &d[1], &d[2]])?;
    ImageRGB::from_tensor_clamped(&fused, 0)
}

/// Pyramid levels plus the gate maps that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleOutput {
    pub pyramid: DehazePyramid,
    pub maps: Vec<ConfidenceMaps>,
}

/// Runs every scale on `hazy`. Images whose sides are not multiples of
/// `2^(scale_count − 1)` are reflect-padded and the outputs cropped back.
pub fn multi_scale_forward(hazy: &ImageRGB, params: &GfnParams) -> Result<DehazePyramid> {
    Ok(multi_scale_forward_detailed(hazy, params)?.pyramid)
}

pub fn multi_scale_forward_detailed(hazy: &ImageRGB, params: &GfnParams) -> Result<MultiScaleOutput> {
    params.config.validate()?;
    let derived = derive_inputs_with(hazy, params.config.gamma)?;
    let m = params.config.size_multiple();
    let (h, w) = hazy.dims();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let pad = |img: &ImageRGB| img.reflect_pad(ph, pw);
    let input = NetworkInput {
        hazy: pad(hazy).to_tensor(),
        wb: pad(&derived.wb).to_tensor(),
        ce: pad(&derived.ce).to_tensor(),
        gc: pad(&derived.gc).to_tensor(),
    };
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let out = forward_pyramid(&mut tape, params, &vars, &input)?;
    let s = params.config.scale_count;
    let mut levels = Vec::with_capacity(s);
    let mut maps = Vec::with_capacity(s);
    for (k, (level, m3)) in out.levels.iter().zip(&out.maps).enumerate() {
        let factor = 1 << (s - 1 - k);
        let (ch, cw) = (h.div_ceil(factor), w.div_ceil(factor));
        levels.push(crop(tape.value(*level), ch, cw)?);
        maps.push(ConfidenceMaps {
            wb: crop(tape.value(m3[0]), ch, cw)?,
            ce: crop(tape.value(m3[1]), ch, cw)?,
            gc: crop(tape.value(m3[2]), ch, cw)?,
        });
    }
    Ok(MultiScaleOutput {
        pyramid: DehazePyramid { levels },
        maps,
    })
}

fn crop(t: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let [n, c, h, w] = t.shape();
    if (h, w) == (height, width) {
        return Ok(t.clone());
    }
    let mut data = Vec::with_capacity(n * c * height * width);
    for plane in t.data().chunks_exact(h * w) {
        for row in plane.chunks_exact(w).take(height) {
            data.extend_from_slice(&row[..width]);
        }
    }
    Tensor::from_vec([n, c, height, width], data)
}

/// Full inference: derived inputs, all scales, finest output clamped to `[0, 1]`.
pub fn dehaze(img: &ImageRGB, params: &GfnParams) -> Result<ImageRGB> {
    let out = multi_scale_forward(img, params)?;
    ImageRGB::from_tensor_clamped(out.finest(), 0)
}

/// Like [`dehaze`], also returning the finest-scale gate maps.
pub fn dehaze_with_maps(img: &ImageRGB, params: &GfnParams) -> Result<(ImageRGB, ConfidenceMaps)> {
    let mut out = multi_scale_forward_detailed(img, params)?;
    let image = ImageRGB::from_tensor_clamped(out.pyramid.finest(), 0)?;
    Ok((image, out.maps.pop().expect("at least one scale")))
}

/// Discriminator probability for every batch item.
pub fn discriminator_forward(img: &Tensor, params: &DiscParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let x = tape.constant(img.clone());
    let p = disc_probs(&mut tape, params, &vars, x)?;
    Ok(tape.value(p).data().to_vec())
}
