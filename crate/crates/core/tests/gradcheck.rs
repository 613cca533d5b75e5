mod common;

use common::*;
use gfn::gfn::{scale_forward, ScaleNetParams};
use gfn::tensor::Tensor;

fn assert_all(cases: Vec<(String, f64)>) {
    for (name, err) in cases {
        assert!(err < TOLERANCE, "{name}: relative error {err:e}");
    }
}

#[test]
fn convolutions() {
    assert_all(conv_errors());
}

#[test]
fn deconvolution() {
    let err = deconv_error();
    assert!(err < TOLERANCE, "{err:e}");
}

#[test]
fn activations() {
    assert_all(activation_errors());
}

#[test]
fn concat_and_slice() {
    assert_all(channel_errors());
}

#[test]
fn resize() {
    assert_all(resize_errors());
}

#[test]
fn elementwise_and_reductions() {
    assert_all(arithmetic_errors());
}

#[test]
fn generator_objective_with_adversarial_term() {
    let (per_tensor, overall) = generator_errors();
    for (name, err) in per_tensor {
        assert!(err < 1e-3, "{name}: relative error {err:e}");
    }
    assert!(overall < TOLERANCE, "overall relative error {overall:e}");
}

#[test]
fn discriminator_objective_gradients() {
    let err = discriminator_error();
    assert!(err < TOLERANCE, "{err:e}");
}

/// Radius of influence of one input pixel on the gate maps, following the
/// longest path: the 5×5 head, the three dilated encoder blocks, three 3×3
/// decoder blocks and the 3×3 output layer.
fn analytic_radius(net: &ScaleNetParams) -> usize {
    net.layers()
        .map(|(_, l)| l.spec.dilation * (l.spec.kernel.0 - 1) / 2)
        .sum()
}

#[test]
fn impulse_stays_inside_the_receptive_field() {
    let net = ScaleNetParams::init(12, &mut rng(41));
    let radius = analytic_radius(&net);
    assert_eq!(radius, 2 + 1 + 2 + 4 + 1 + 1 + 1 + 1);

    let size = 2 * radius + 15;
    let mut r = rng(42);
    let base: Vec<Tensor> = (0..4)
        .map(|_| Tensor::uniform([1, 3, size, size], 0.2, 0.8, &mut r))
        .collect();
    let derived = [&base[1], &base[2], &base[3]];
    let before = scale_forward(&base[0], derived, None, &net).unwrap();

    let c = size / 2;
    let mut poked = base[0].clone();
    poked.data_mut()[c * size + c] += 0.5;
    let after = scale_forward(&poked, derived, None, &net).unwrap();

    let mut reach = 0;
    for (m0, m1) in before.as_array().iter().zip(after.as_array()) {
        for y in 0..size {
            for x in 0..size {
                if m0.at(0, 0, y, x) != m1.at(0, 0, y, x) {
                    reach = reach.max(y.abs_diff(c).max(x.abs_diff(c)));
                }
            }
        }
    }
    assert!(reach <= radius, "impulse travelled {reach} > {radius}");
    assert!(reach + 3 >= radius, "impulse travelled only {reach} of {radius}");
}
