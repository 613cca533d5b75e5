use super::kernels::{self, deconv_as_conv};
use super::{Activation, ConvSpec, ResizeScale, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var, spec: ConvSpec },
    FlipTranspose { w: Var },
    Act { x: Var, kind: Activation },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    Resize { x: Var, scale: ResizeScale },
    Add { a: Var, b: Var },
    MulMap { map: Var, img: Var },
    Mse { a: Var, b: Var },
    Affine { x: Var, scale: f64 },
    LnClamped { x: Var, lo: f64, hi: f64 },
    Mean { x: Var },
    GlobalAvgPool { x: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation as it runs so [`Tape::backward`] can replay it in
/// reverse. Single-owner: build one tape per forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to the trainable leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 4]>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0]))
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[var.0]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf; gradients are reported for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        let y = kernels::conv2d(self.value(x), self.value(w), self.value(b), &spec)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(y, Op::Conv { x, w, b, spec }, rg))
    }

    /// Stride-1 transposed convolution, recorded as a kernel flip followed by
    /// an ordinary convolution.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        let conv_spec = deconv_as_conv(&spec)?;
        let expected = [spec.in_channels, spec.out_channels, spec.kernel.0, spec.kernel.1];
        if self.value(w).shape() != expected {
            return shape_err(format!(
                "deconv weights {:?} do not match spec {expected:?}",
                self.value(w).shape()
            ));
        }
        let flipped = kernels::flip_transpose(self.value(w));
        let rg = self.rg(w);
        let fw = self.push(flipped, Op::FlipTranspose { w }, rg);
        self.conv2d(x, fw, b, conv_spec)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let y = kernels::activation(self.value(x), kind);
        let rg = self.rg(x);
        self.push(y, Op::Act { x, kind }, rg)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = kernels::concat_channels(&values)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            y,
            Op::Concat {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let y = self.value(x).slice_channels(start, len)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Slice { x, start }, rg))
    }

    pub fn resize_bilinear(&mut self, x: Var, scale: ResizeScale) -> Result<Var> {
        let y = kernels::resize_bilinear(self.value(x), scale)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Resize { x, scale }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(format!("add of {:?} and {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let y = Tensor::from_vec(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Add { a, b }, rg))
    }

    /// Multiplies every channel of `img` `(N, C, H, W)` by the single-channel
    /// `map` `(N, 1, H, W)`.
    pub fn mul_map(&mut self, map: Var, img: Var) -> Result<Var> {
        let (tm, ti) = (self.value(map), self.value(img));
        let [n, c, h, w] = ti.shape();
        if tm.shape() != [n, 1, h, w] {
            return shape_err(format!(
                "map {:?} cannot gate image {:?}",
                tm.shape(),
                ti.shape()
            ));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(ti.len());
        for b in 0..n {
            let m = &tm.data()[b * plane..(b + 1) * plane];
            for ch in 0..c {
                let src = &ti.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                data.extend(src.iter().zip(m).map(|(v, g)| v * g));
            }
        }
        let y = Tensor::from_vec(ti.shape(), data)?;
        let rg = self.rg(map) || self.rg(img);
        Ok(self.push(y, Op::MulMap { map, img }, rg))
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::mse(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(v), Op::Mse { a, b }, rg))
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| scale * v + shift).collect();
        let y = Tensor::from_vec(t.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(y, Op::Affine { x, scale }, rg)
    }

    /// `ln(clamp(x, lo, hi))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.clamp(lo, hi).ln()).collect();
        let y = Tensor::from_vec(t.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(y, Op::LnClamped { x, lo, hi }, rg)
    }

    /// Mean over all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean { x }, rg)
    }

    /// Spatial mean per `(batch, channel)`, giving `(N, C, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        let data = t
            .data()
            .chunks_exact(h * w)
            .map(|p| p.iter().sum::<f64>() / (h * w) as f64)
            .collect();
        let y = Tensor::from_vec([n, c, 1, 1], data).expect("consistent shape");
        let rg = self.rg(x);
        self.push(y, Op::GlobalAvgPool { x }, rg)
    }

    /// Reverse-mode pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, spec } => {
                let cg = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    self.value(*b),
                    spec,
                    g,
                    self.rg(*x),
                )?;
                if let Some(dx) = cg.dx {
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *w, cg.dw);
                self.accumulate(grads, *b, cg.db);
            }
            Op::FlipTranspose { w } => {
                self.accumulate(grads, *w, kernels::flip_transpose(g));
            }
            Op::Act { x, kind } => {
                let dx = kernels::activation_backward(self.value(*x), &node.value, *kind, g);
                self.accumulate(grads, *x, dx);
            }
            Op::Concat { parts } => {
                let mut start = 0;
                for &p in parts {
                    let c = self.value(p).channels();
                    if self.rg(p) {
                        self.accumulate(grads, p, g.slice_channels(start, c)?);
                    }
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                let src = self.value(*x);
                let [n, c, h, w] = src.shape();
                let len = g.channels();
                let plane = h * w;
                let mut dx = Tensor::zeros(src.shape());
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    let from = b * len * plane;
                    dx.data_mut()[dst..dst + len * plane]
                        .copy_from_slice(&g.data()[from..from + len * plane]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Resize { x, scale } => {
                let dx = kernels::resize_bilinear_backward(self.value(*x), *scale, g)?;
                self.accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::MulMap { map, img } => {
                let (tm, ti) = (self.value(*map), self.value(*img));
                let [n, c, h, w] = ti.shape();
                let plane = h * w;
                if self.rg(*img) {
                    let mut di = Vec::with_capacity(ti.len());
                    for b in 0..n {
                        let m = &tm.data()[b * plane..(b + 1) * plane];
                        for ch in 0..c {
                            let gs = &g.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                            di.extend(gs.iter().zip(m).map(|(gv, mv)| gv * mv));
                        }
                    }
                    self.accumulate(grads, *img, Tensor::from_vec(ti.shape(), di)?);
                }
                if self.rg(*map) {
                    let mut dm = vec![0.0; tm.len()];
                    for b in 0..n {
                        let dst = &mut dm[b * plane..(b + 1) * plane];
                        for ch in 0..c {
                            let off = (b * c + ch) * plane;
                            let gs = &g.data()[off..off + plane];
                            let is = &ti.data()[off..off + plane];
                            for p in 0..plane {
                                dst[p] += gs[p] * is[p];
                            }
                        }
                    }
                    self.accumulate(grads, *map, Tensor::from_vec(tm.shape(), dm)?);
                }
            }
            Op::Mse { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = 2.0 * g.item()? / ta.len() as f64;
                let diff: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| k * (x - y)).collect();
                if self.rg(*b) {
                    let neg = diff.iter().map(|v| -v).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(tb.shape(), neg)?);
                }
                self.accumulate(grads, *a, Tensor::from_vec(ta.shape(), diff)?);
            }
            Op::Affine { x, scale } => {
                let data = g.data().iter().map(|v| scale * v).collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), data)?);
            }
            Op::LnClamped { x, lo, hi } => {
                let t = self.value(*x);
                let data = t
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > *lo && v < *hi { gv / v } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(t.shape(), data)?);
            }
            Op::Mean { x } => {
                let t = self.value(*x);
                let v = g.item()? / t.len() as f64;
                self.accumulate(grads, *x, Tensor::full(t.shape(), v));
            }
            Op::GlobalAvgPool { x } => {
                let t = self.value(*x);
                let [_, _, h, w] = t.shape();
                let plane = h * w;
                let mut dx = Vec::with_capacity(t.len());
                for &gv in g.data() {
                    dx.extend(std::iter::repeat_n(gv / plane as f64, plane));
                }
                self.accumulate(grads, *x, Tensor::from_vec(t.shape(), dx)?);
            }
        }
        Ok(())
    }
}
