//! Records a small dilated conv net on a tape, back-propagates, and compares
//! a few gradient entries with central finite differences.

use gfn::tensor::{Activation, ConvSpec, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn loss(x: &Tensor, w1: &Tensor, w2: &Tensor, target: &Tensor) -> (f64, Tensor) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let a = tape.param(w1.clone());
    let b = tape.param(w2.clone());
    let zero4 = tape.constant(Tensor::zeros([1, 4, 1, 1]));
    let zero1 = tape.constant(Tensor::zeros([1, 1, 1, 1]));
    let h = tape.conv2d(xv, a, zero4, ConvSpec::same(3, 4, 3, 2)).unwrap();
    let h = tape.activation(h, Activation::LeakyRelu(0.2));
    let y = tape.conv2d(h, b, zero1, ConvSpec::same(4, 1, 3, 1)).unwrap();
    let y = tape.activation(y, Activation::Sigmoid);
    let t = tape.constant(target.clone());
    let l = tape.mse(y, t).unwrap();
    let grads = tape.backward(l).unwrap();
    (tape.value(l).item().unwrap(), grads.wrt(a))
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::uniform([2, 3, 12, 12], 0.0, 1.0, &mut rng);
    let w1 = Tensor::randn([4, 3, 3, 3], 0.3, &mut rng);
    let w2 = Tensor::randn([1, 4, 3, 3], 0.3, &mut rng);
    let target = Tensor::uniform([2, 1, 12, 12], 0.0, 1.0, &mut rng);

    let (value, grad) = loss(&x, &w1, &w2, &target);
    println!("loss {value:.6}");
    let h = 1e-5;
    for i in [0, 17, 50, 101] {
        let mut plus = w1.clone();
        plus.data_mut()[i] += h;
        let mut minus = w1.clone();
        minus.data_mut()[i] -= h;
        let numeric = (loss(&x, &plus, &w2, &target).0 - loss(&x, &minus, &w2, &target).0) / (2.0 * h);
        println!("dL/dw1[{i:>3}]  tape {:+.9e}  finite difference {numeric:+.9e}", grad.data()[i]);
    }
}
