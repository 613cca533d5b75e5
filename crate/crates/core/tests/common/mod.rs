//! Oracles shared by the integration tests and the acceptance run: central
//! finite differences against the tape, and naive metric implementations.
#![allow(dead_code)]

use gfn::gfn::{DiscParams, GfnConfig, GfnParams, NetworkInput};
use gfn::image::ImageRGB;
use gfn::tensor::{Activation, ConvSpec, ResizeScale, Tape, Tensor, Var};
use gfn::train::{discriminator_objective, generator_objective};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or the absolute difference when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Reduces a non-scalar output to a scalar with an MSE against a fixed random
/// target, so every output element carries a distinct upstream gradient.
fn scalar_loss(tape: &mut Tape, y: Var) -> Var {
    let value = tape.value(y);
    if value.is_scalar() {
        return y;
    }
    let target = Tensor::uniform(value.shape(), -1.0, 1.0, &mut rng(99));
    let t = tape.constant(target);
    tape.mse(y, t).unwrap()
}

fn evaluate(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let y = build(&mut tape, &vars);
    let loss = scalar_loss(&mut tape, y);
    let grads = tape.backward(loss).unwrap();
    let value = tape.value(loss).item().unwrap();
    (value, vars.iter().map(|&v| grads.wrt(v)).collect())
}

/// Worst relative error over the inputs, every element perturbed.
pub fn check(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let (_, analytic) = evaluate(&inputs, &build);
    let mut worst: f64 = 0.0;
    for (i, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.shape(), inputs[i].shape(), "gradient shape");
        let mut numeric = Vec::with_capacity(grad.len());
        for j in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let (lp, _) = evaluate(&plus, &build);
            let (lm, _) = evaluate(&minus, &build);
            numeric.push((lp - lm) / (2.0 * H));
        }
        worst = worst.max(relative_error(grad.data(), &numeric));
    }
    worst
}

fn conv_inputs(spec: &ConvSpec, n: usize, h: usize, w: usize, seed: u64) -> Vec<Tensor> {
    let mut r = rng(seed);
    vec![
        Tensor::uniform([n, spec.in_channels, h, w], -1.0, 1.0, &mut r),
        Tensor::uniform([spec.out_channels, spec.in_channels, spec.kernel.0, spec.kernel.1], -0.5, 0.5, &mut r),
        Tensor::uniform([1, spec.out_channels, 1, 1], -0.5, 0.5, &mut r),
    ]
}

fn conv_case(spec: ConvSpec, n: usize, h: usize, w: usize, seed: u64) -> f64 {
    check(conv_inputs(&spec, n, h, w, seed), |t, v| t.conv2d(v[0], v[1], v[2], spec).unwrap())
}

pub fn conv_errors() -> Vec<(String, f64)> {
    let mut out = vec![
        ("conv 3x3".to_string(), conv_case(ConvSpec::same(2, 3, 3, 1), 2, 5, 6, 1)),
        ("conv 5x5".to_string(), conv_case(ConvSpec::same(3, 2, 5, 1), 1, 6, 7, 3)),
    ];
    for d in [2, 4] {
        out.push((format!("conv dilation {d}"), conv_case(ConvSpec::same(2, 2, 3, d), 1, 9, 10, 2)));
    }
    for (h, w) in [(8, 8), (7, 9)] {
        out.push((format!("conv stride 2 on {h}x{w}"), conv_case(ConvSpec::strided(2, 3, 3, 2), 2, h, w, 4)));
    }
    out
}

pub fn deconv_error() -> f64 {
    let spec = ConvSpec::same(3, 2, 3, 1);
    let mut r = rng(5);
    let inputs = vec![
        Tensor::uniform([2, 3, 5, 4], -1.0, 1.0, &mut r),
        Tensor::uniform([3, 2, 3, 3], -0.5, 0.5, &mut r),
        Tensor::uniform([1, 2, 1, 1], -0.5, 0.5, &mut r),
    ];
    check(inputs, |t, v| t.deconv2d(v[0], v[1], v[2], spec).unwrap())
}

pub fn activation_errors() -> Vec<(String, f64)> {
    [Activation::Relu, Activation::Sigmoid, Activation::LeakyRelu(0.2)]
        .into_iter()
        .map(|kind| {
            let x = Tensor::uniform([2, 3, 4, 4], -2.0, 2.0, &mut rng(6));
            (format!("{kind:?}"), check(vec![x], |t, v| t.activation(v[0], kind)))
        })
        .collect()
}

pub fn channel_errors() -> Vec<(String, f64)> {
    let mut r = rng(7);
    let inputs = vec![
        Tensor::uniform([2, 1, 3, 4], -1.0, 1.0, &mut r),
        Tensor::uniform([2, 3, 3, 4], -1.0, 1.0, &mut r),
    ];
    let concat = check(inputs.clone(), |t, v| t.concat_channels(&[v[0], v[1]]).unwrap());
    let slice = check(inputs, |t, v| {
        let c = t.concat_channels(&[v[0], v[1]]).unwrap();
        t.slice_channels(c, 1, 2).unwrap()
    });
    vec![("concat".into(), concat), ("slice".into(), slice)]
}

pub fn resize_errors() -> Vec<(String, f64)> {
    [
        (ResizeScale::HALF, (8, 6)),
        (ResizeScale::HALF, (7, 5)),
        (ResizeScale::DOUBLE, (4, 3)),
    ]
    .into_iter()
    .map(|(scale, (h, w))| {
        let x = Tensor::uniform([2, 2, h, w], -1.0, 1.0, &mut rng(8));
        let err = check(vec![x], |t, v| t.resize_bilinear(v[0], scale).unwrap());
        (format!("resize {}/{} on {h}x{w}", scale.num, scale.den), err)
    })
    .collect()
}

pub fn arithmetic_errors() -> Vec<(String, f64)> {
    let mut r = rng(9);
    let gated = vec![
        Tensor::uniform([2, 1, 3, 4], 0.0, 1.0, &mut r),
        Tensor::uniform([2, 3, 3, 4], -1.0, 1.0, &mut r),
        Tensor::uniform([2, 3, 3, 4], -1.0, 1.0, &mut r),
    ];
    let gate = check(gated, |t, v| {
        let g = t.mul_map(v[0], v[1]).unwrap();
        t.add(g, v[2]).unwrap()
    });
    let pair = vec![
        Tensor::uniform([1, 3, 4, 4], -1.0, 1.0, &mut r),
        Tensor::uniform([1, 3, 4, 4], -1.0, 1.0, &mut r),
    ];
    let mse = check(pair, |t, v| t.mse(v[0], v[1]).unwrap());

    let mut x = Tensor::uniform([1, 2, 4, 4], 0.05, 0.95, &mut r);
    // a few entries sit where the clamp is active, so both sides are zero there
    x.data_mut()[0] = 1.5;
    x.data_mut()[1] = -0.5;
    let ln = check(vec![x.clone()], |t, v| t.ln_clamped(v[0], 1e-7, 1.0 - 1e-7));
    let affine = check(vec![x.clone()], |t, v| t.affine(v[0], -2.5, 0.3));
    let mean = check(vec![x.clone()], |t, v| {
        let s = t.activation(v[0], Activation::Sigmoid);
        t.mean(s)
    });
    let pool = check(vec![x], |t, v| t.global_avg_pool(v[0]));
    vec![
        ("mul_map + add".into(), gate),
        ("mse".into(), mse),
        ("ln_clamped".into(), ln),
        ("affine".into(), affine),
        ("mean".into(), mean),
        ("global_avg_pool".into(), pool),
    ]
}

/// Every single-op case.
pub fn all_op_errors() -> Vec<(String, f64)> {
    let mut out = conv_errors();
    out.push(("deconv".into(), deconv_error()));
    out.extend(activation_errors());
    out.extend(channel_errors());
    out.extend(resize_errors());
    out.extend(arithmetic_errors());
    out
}

pub fn random_image(h: usize, w: usize, r: &mut ChaCha8Rng) -> ImageRGB {
    ImageRGB::from_fn(h, w, |_, _, _| r.random_range(0.05..0.95)).unwrap()
}

/// Per-tensor and overall relative errors of the generator objective on a
/// 16×16 single-scale network with the adversarial term, sampling a few
/// coordinates of every parameter tensor.
pub fn generator_errors() -> (Vec<(String, f64)>, f64) {
    let cfg = GfnConfig {
        scale_count: 1,
        ..GfnConfig::default()
    };
    let gen = GfnParams::init(cfg, 21).unwrap();
    let disc = DiscParams::init((16, 16), 22);
    let mut r = rng(23);
    let hazy = random_image(16, 16, &mut r);
    let input = NetworkInput::from_hazy(&[hazy], &gen).unwrap();
    let clean = random_image(16, 16, &mut r).to_tensor();
    let weight = 0.001;

    let obj = generator_objective(&gen, Some(&disc), &input, &clean, weight, true).unwrap();
    assert!(obj.adversarial > 0.0);
    let analytic = obj.gradients.unwrap();
    let total = |p: &GfnParams| {
        generator_objective(p, Some(&disc), &input, &clean, weight, false)
            .unwrap()
            .total
    };

    let mut per_tensor = Vec::new();
    let mut a = Vec::new();
    let mut n = Vec::new();
    let names: Vec<String> = gen.named_tensors().into_iter().map(|(s, _)| s).collect();
    for (i, name) in names.into_iter().enumerate() {
        let len = analytic[i].len();
        let mut ta = Vec::new();
        let mut tn = Vec::new();
        for _ in 0..4 {
            let j = r.random_range(0..len);
            let mut plus = gen.clone();
            plus.tensors_mut()[i].data_mut()[j] += H;
            let mut minus = gen.clone();
            minus.tensors_mut()[i].data_mut()[j] -= H;
            ta.push(analytic[i].data()[j]);
            tn.push((total(&plus) - total(&minus)) / (2.0 * H));
        }
        per_tensor.push((name, relative_error(&ta, &tn)));
        a.extend(ta);
        n.extend(tn);
    }
    (per_tensor, relative_error(&a, &n))
}

pub fn discriminator_error() -> f64 {
    let disc = DiscParams::init((16, 16), 31);
    let mut r = rng(32);
    let real = random_image(16, 16, &mut r).to_tensor();
    let fake = random_image(16, 16, &mut r).to_tensor();
    let (_, analytic) = discriminator_objective(&disc, &real, &fake).unwrap();
    let loss = |d: &DiscParams| discriminator_objective(d, &real, &fake).unwrap().0;
    let mut a = Vec::new();
    let mut n = Vec::new();
    for (i, g) in analytic.iter().enumerate() {
        for _ in 0..4 {
            let j = r.random_range(0..g.len());
            let mut plus = disc.clone();
            plus.tensors_mut()[i].data_mut()[j] += H;
            let mut minus = disc.clone();
            minus.tensors_mut()[i].data_mut()[j] -= H;
            a.push(g.data()[j]);
            n.push((loss(&plus) - loss(&minus)) / (2.0 * H));
        }
    }
    relative_error(&a, &n)
}

// Naive metrics: a direct 2-D window and two-pass moments, nothing shared
// with the library code.

pub fn naive_psnr(a: &ImageRGB, b: &ImageRGB) -> f64 {
    let mut sse = 0.0;
    let mut n = 0.0;
    for (x, y) in a.data().iter().zip(b.data()) {
        sse += (x - y).powi(2);
        n += 1.0;
    }
    -10.0 * (sse / n).log10()
}

#[allow(clippy::needless_range_loop)]
pub fn naive_ssim(a: &ImageRGB, b: &ImageRGB) -> f64 {
    let (h, w) = a.dims();
    let size = 11;
    let sigma: f64 = 1.5;
    let half = 5.0;
    let mut window = vec![vec![0.0; size]; size];
    let mut mass = 0.0;
    for (i, row) in window.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let r2 = (i as f64 - half).powi(2) + (j as f64 - half).powi(2);
            *v = (-r2 / (2.0 * sigma * sigma)).exp();
            mass += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0.0;
    for c in 0..3 {
        for top in 0..=h - size {
            for left in 0..=w - size {
                let mut mx = 0.0;
                let mut my = 0.0;
                for i in 0..size {
                    for j in 0..size {
                        let g = window[i][j] / mass;
                        mx += g * a.get(top + i, left + j, c);
                        my += g * b.get(top + i, left + j, c);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..size {
                    for j in 0..size {
                        let g = window[i][j] / mass;
                        let dx = a.get(top + i, left + j, c) - mx;
                        let dy = b.get(top + i, left + j, c) - my;
                        vx += g * dx * dx;
                        vy += g * dy * dy;
                        cov += g * dx * dy;
                    }
                }
                sum += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
    }
    sum / count
}

pub fn random_pair(r: &mut ChaCha8Rng) -> (ImageRGB, ImageRGB) {
    let h = r.random_range(11..24);
    let w = r.random_range(11..24);
    let a = ImageRGB::from_fn(h, w, |_, _, _| r.random::<f64>()).unwrap();
    let noise = r.random_range(0.01..0.3);
    let b = ImageRGB::from_fn(h, w, |y, x, c| a.get(y, x, c) + noise * (r.random::<f64>() - 0.5)).unwrap();
    (a, b)
}

