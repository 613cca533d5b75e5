//! Dense `(batch, channels, height, width)` tensors and the small set of
//! differentiable operations the fusion network needs.
//!
//! The free functions in this module are the forward kernels. [`Tape`] records
//! the same operations and replays them in reverse to produce exact gradients.

mod kernels;
mod tape;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};

pub use kernels::{
    activation, concat_channels, conv2d, deconv2d, flip_transpose, mse, resize_bilinear,
};
pub use tape::{Gradients, Tape, Var};

pub type Shape = [usize; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return shape_err(format!("tensor dimensions must be positive, got {shape:?}"));
        }
        if data.len() != shape.iter().product::<usize>() {
            return shape_err(format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized tensor {shape:?}");
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    /// Zero-mean normal entries with standard deviation `std`.
    pub fn randn(shape: Shape, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn uniform(shape: Shape, low: f64, high: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(|_| rng.random_range(low..high)).collect(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + y) * ws + x]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channels `start..start + len` of every batch item.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if len == 0 || start + len > c {
            return shape_err(format!("channel slice {start}+{len} out of range for {c}"));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let off = (b * c + start) * plane;
            data.extend_from_slice(&self.data[off..off + len * plane]);
        }
        Tensor::from_vec([n, len, h, w], data)
    }

    /// One batch item as a `(1, C, H, W)` tensor.
    pub fn batch_item(&self, index: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if index >= n {
            return shape_err(format!("batch index {index} out of range for {n}"));
        }
        let sz = c * h * w;
        Tensor::from_vec([1, c, h, w], self.data[index * sz..(index + 1) * sz].to_vec())
    }

    /// Concatenates along the batch axis.
    pub fn stack_batch(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Empty("no tensors to stack".into()))?;
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            if t.shape[1..] != [c, h, w] {
                return shape_err(format!("cannot stack {:?} with {:?}", t.shape, first.shape));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec([n, c, h, w], data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Convolution geometry. Weights are `(out, in, kh, kw)` for ordinary
/// convolution and `(in, out, kh, kw)` for transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride-1 convolution whose padding preserves spatial size (odd kernels).
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    pub fn strided(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            dilation: 1,
            padding: (kernel - 1) / 2,
        }
    }

    /// `(in + 2·padding − dilation·(k − 1) − 1) / stride + 1` per axis, with
    /// integer division.
    pub fn output_size(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.dilation == 0 || self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::Parameter(format!("degenerate conv spec {self:?}")));
        }
        let axis = |input: usize, k: usize| -> Result<usize> {
            let span = self.dilation * (k - 1) + 1;
            let padded = input + 2 * self.padding;
            if padded < span {
                return shape_err(format!(
                    "input extent {input} too small for kernel span {span} with padding {}",
                    self.padding
                ));
            }
            Ok((padded - span) / self.stride + 1)
        };
        Ok((axis(in_h, self.kernel.0)?, axis(in_w, self.kernel.1)?))
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Leaky rectifier with the given negative slope (0.2 in the discriminator).
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Rational resize factor `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResizeScale {
    pub num: usize,
    pub den: usize,
}

impl ResizeScale {
    pub const HALF: ResizeScale = ResizeScale { num: 1, den: 2 };
    pub const DOUBLE: ResizeScale = ResizeScale { num: 2, den: 1 };

    /// `round(dim × num / den)`, halves rounding up.
    pub fn apply(self, dim: usize) -> usize {
        (2 * dim * self.num + self.den) / (2 * self.den)
    }
}
