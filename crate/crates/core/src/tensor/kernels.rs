use super::{Activation, ConvSpec, ResizeScale, Tensor};
use crate::error::{shape_err, Error, Result};

/// Row-major `c = a·b + beta·c` where `a` is `m×k` and `b` is `k×n`, each with
/// arbitrary strides so transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    gemm_strided(m, k, n, a, (rsa, csa), b, (rsb, csb), beta, c, (n, 1));
}

/// [`gemm`] with an explicitly strided output.
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k.max(1) - 1) * csa);
    assert!(b.len() > (k.max(1) - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

thread_local! {
    static SCRATCH: [std::cell::RefCell<Vec<f64>>; 3] = const {
        [
            std::cell::RefCell::new(Vec::new()),
            std::cell::RefCell::new(Vec::new()),
            std::cell::RefCell::new(Vec::new()),
        ]
    };
}

/// Runs `f` with reusable buffer `slot` of `len` elements. Large column
/// buffers would otherwise be freshly mapped and faulted in on every call.
/// Contents on entry are unspecified.
fn with_scratch<R>(slot: usize, len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    SCRATCH.with(|cells| match cells[slot].try_borrow_mut() {
        Ok(mut buf) => {
            if buf.len() < len {
                buf.resize(len, 0.0);
            }
            f(&mut buf[..len])
        }
        Err(_) => f(&mut vec![0.0; len]),
    })
}

struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel tap offset `off`
/// (`input = o·stride + off`).
#[inline]
fn valid_range(off: isize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let hi = if (input as isize) <= off {
        0
    } else {
        ((input as isize - off + s - 1) / s).min(output as isize)
    };
    let lo = lo.min(output as isize);
    (lo as usize, hi.max(lo) as usize)
}

fn im2col(x: &[f64], g: &ConvGeometry, spec: &ConvSpec, col: &mut [f64]) {
    let (s, d, p) = (spec.stride, spec.dilation, spec.padding as isize);
    let cols = g.cols();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            let offy = (i * d) as isize - p;
            let (y_lo, y_hi) = valid_range(offy, s, g.h, g.ho);
            for j in 0..g.kw {
                let offx = (j * d) as isize - p;
                let (x_lo, x_hi) = valid_range(offx, s, g.w, g.wo);
                let row = (ci * g.kh + i) * g.kw + j;
                let dst = &mut col[row * cols..(row + 1) * cols];
                dst.fill(0.0);
                for oy in y_lo..y_hi {
                    let iy = (oy * s) as isize + offy;
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if s == 1 {
                        let ix0 = (x_lo as isize + offx) as usize;
                        out_row[x_lo..x_hi].copy_from_slice(&src_row[ix0..ix0 + (x_hi - x_lo)]);
                    } else {
                        for ox in x_lo..x_hi {
                            out_row[ox] = src_row[((ox * s) as isize + offx) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f64], g: &ConvGeometry, spec: &ConvSpec, dx: &mut [f64]) {
    let (s, d, p) = (spec.stride, spec.dilation, spec.padding as isize);
    let cols = g.cols();
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for i in 0..g.kh {
            let offy = (i * d) as isize - p;
            let (y_lo, y_hi) = valid_range(offy, s, g.h, g.ho);
            for j in 0..g.kw {
                let offx = (j * d) as isize - p;
                let (x_lo, x_hi) = valid_range(offx, s, g.w, g.wo);
                let row = (ci * g.kh + i) * g.kw + j;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in y_lo..y_hi {
                    let iy = ((oy * s) as isize + offy) as usize;
                    let dst_row = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let in_row = &src[oy * g.wo..(oy + 1) * g.wo];
                    if s == 1 {
                        let ix0 = (x_lo as isize + offx) as usize;
                        let dst = &mut dst_row[ix0..ix0 + (x_hi - x_lo)];
                        for (a, b) in dst.iter_mut().zip(&in_row[x_lo..x_hi]) {
                            *a += b;
                        }
                    } else {
                        for ox in x_lo..x_hi {
                            dst_row[((ox * s) as isize + offx) as usize] += in_row[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Layout for stride-1 convolution as one GEMM per kernel tap over a
/// zero-padded input. Output column `q = y·wp + x` reads padded input column
/// `q + tap_offset`; columns with `x ≥ wo` are scratch and discarded.
struct Direct {
    hp: usize,
    wp: usize,
    /// `(ho − 1)·wp + wo`, the last useful column plus one.
    ncols: usize,
    offsets: Vec<usize>,
}

impl Direct {
    fn new(g: &ConvGeometry, spec: &ConvSpec) -> Self {
        let (hp, wp) = (g.h + 2 * spec.padding, g.w + 2 * spec.padding);
        let d = spec.dilation;
        let offsets = (0..g.kh)
            .flat_map(|i| (0..g.kw).map(move |j| i * d * wp + j * d))
            .collect();
        Direct {
            hp,
            wp,
            ncols: (g.ho - 1) * wp + g.wo,
            offsets,
        }
    }

    fn plane(&self) -> usize {
        self.hp * self.wp
    }

    fn pad_into(&self, x: &[f64], g: &ConvGeometry, p: usize, xp: &mut [f64]) {
        xp.fill(0.0);
        for ci in 0..g.c {
            for y in 0..g.h {
                let src = &x[(ci * g.h + y) * g.w..(ci * g.h + y + 1) * g.w];
                let at = ci * self.plane() + (y + p) * self.wp + p;
                xp[at..at + g.w].copy_from_slice(src);
            }
        }
    }
}

fn conv2d_direct(x: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec, g: &ConvGeometry) -> Result<Tensor> {
    let dir = Direct::new(g, spec);
    let n = x.batch();
    let out_c = spec.out_channels;
    let taps = g.kh * g.kw;
    let in_sz = g.c * g.h * g.w;
    let out_sz = out_c * g.ho * g.wo;
    let mut out = vec![0.0; n * out_sz];
    with_scratch(0, g.c * dir.plane(), |xp| {
        with_scratch(1, out_c * dir.ncols, |yfull| {
            for b in 0..n {
                dir.pad_into(&x.data()[b * in_sz..(b + 1) * in_sz], g, spec.padding, xp);
                for (t, &off) in dir.offsets.iter().enumerate() {
                    gemm_strided(
                        out_c,
                        g.c,
                        dir.ncols,
                        &weights.data()[t..],
                        (g.c * taps, taps),
                        &xp[off..],
                        (dir.plane(), 1),
                        if t == 0 { 0.0 } else { 1.0 },
                        yfull,
                        (dir.ncols, 1),
                    );
                }
                let dst = &mut out[b * out_sz..(b + 1) * out_sz];
                for co in 0..out_c {
                    let bias = bias.data()[co];
                    for y in 0..g.ho {
                        let src = &yfull[co * dir.ncols + y * dir.wp..][..g.wo];
                        let row = &mut dst[(co * g.ho + y) * g.wo..][..g.wo];
                        for (o, v) in row.iter_mut().zip(src) {
                            *o = v + bias;
                        }
                    }
                }
            }
        })
    });
    Tensor::from_vec([n, out_c, g.ho, g.wo], out)
}

fn conv2d_direct_backward(
    x: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    g: &ConvGeometry,
    dy: &Tensor,
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dir = Direct::new(g, spec);
    let n = x.batch();
    let out_c = spec.out_channels;
    let taps = g.kh * g.kw;
    let in_sz = g.c * g.h * g.w;
    let out_sz = out_c * g.ho * g.wo;
    let p = spec.padding;
    let mut dw = vec![0.0; out_c * g.c * taps];
    let mut db = vec![0.0; out_c];
    let mut dx = if need_dx { vec![0.0; n * in_sz] } else { Vec::new() };
    with_scratch(0, g.c * dir.plane(), |xp| {
        with_scratch(1, out_c * dir.ncols, |dyp| {
            with_scratch(2, if need_dx { g.c * dir.plane() } else { 0 }, |dxp| {
                for b in 0..n {
                    let dyb = &dy.data()[b * out_sz..(b + 1) * out_sz];
                    dyp.fill(0.0);
                    for co in 0..out_c {
                        let plane = &dyb[co * g.ho * g.wo..(co + 1) * g.ho * g.wo];
                        db[co] += plane.iter().sum::<f64>();
                        for y in 0..g.ho {
                            dyp[co * dir.ncols + y * dir.wp..][..g.wo].copy_from_slice(&plane[y * g.wo..(y + 1) * g.wo]);
                        }
                    }
                    dir.pad_into(&x.data()[b * in_sz..(b + 1) * in_sz], g, p, xp);
                    for (t, &off) in dir.offsets.iter().enumerate() {
                        // dW[:, :, tap] += dY · X_tapᵀ
                        gemm_strided(
                            out_c,
                            dir.ncols,
                            g.c,
                            dyp,
                            (dir.ncols, 1),
                            &xp[off..],
                            (1, dir.plane()),
                            1.0,
                            &mut dw[t..],
                            (g.c * taps, taps),
                        );
                    }
                    if !need_dx {
                        continue;
                    }
                    dxp.fill(0.0);
                    for (t, &off) in dir.offsets.iter().enumerate() {
                        // dX_tap += W_tapᵀ · dY
                        gemm_strided(
                            g.c,
                            out_c,
                            dir.ncols,
                            &weights.data()[t..],
                            (taps, g.c * taps),
                            dyp,
                            (dir.ncols, 1),
                            1.0,
                            &mut dxp[off..],
                            (dir.plane(), 1),
                        );
                    }
                    let dst = &mut dx[b * in_sz..(b + 1) * in_sz];
                    for ci in 0..g.c {
                        for y in 0..g.h {
                            let src = &dxp[ci * dir.plane() + (y + p) * dir.wp + p..][..g.w];
                            dst[(ci * g.h + y) * g.w..][..g.w].copy_from_slice(src);
                        }
                    }
                }
            })
        })
    });
    (dx, dw, db)
}

fn conv_geometry(x: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<ConvGeometry> {
    let [_, c, h, w] = x.shape();
    if c != spec.in_channels {
        return shape_err(format!(
            "conv input has {c} channels, spec expects {}",
            spec.in_channels
        ));
    }
    let expected = [spec.out_channels, spec.in_channels, spec.kernel.0, spec.kernel.1];
    if weights.shape() != expected {
        return shape_err(format!(
            "conv weights {:?} do not match spec {expected:?}",
            weights.shape()
        ));
    }
    if bias.len() != spec.out_channels {
        return shape_err(format!(
            "conv bias has {} entries, expected {}",
            bias.len(),
            spec.out_channels
        ));
    }
    let (ho, wo) = spec.output_size(h, w)?;
    Ok(ConvGeometry {
        c,
        h,
        w,
        ho,
        wo,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
    })
}

/// Dilated, strided, zero-padded cross-correlation.
///
/// `x` is `(N, in, H, W)`, `weights` is `(out, in, kh, kw)` and `bias` holds
/// `out` entries.
pub fn conv2d(x: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let g = conv_geometry(x, weights, bias, spec)?;
    if spec.stride == 1 {
        return conv2d_direct(x, weights, bias, spec, &g);
    }
    let n = x.batch();
    let (rows, cols) = (g.rows(), g.cols());
    let out_c = spec.out_channels;
    let mut out = vec![0.0; n * out_c * cols];
    let in_sz = g.c * g.h * g.w;
    with_scratch(0, rows * cols, |col| {
        for b in 0..n {
            im2col(&x.data()[b * in_sz..(b + 1) * in_sz], &g, spec, col);
            let dst = &mut out[b * out_c * cols..(b + 1) * out_c * cols];
            for (co, plane) in dst.chunks_exact_mut(cols).enumerate() {
                plane.fill(bias.data()[co]);
            }
            gemm(out_c, rows, cols, weights.data(), rows, 1, col, cols, 1, 1.0, dst);
        }
    });
    Tensor::from_vec([n, out_c, g.ho, g.wo], out)
}

pub(crate) struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Tensor,
    pub db: Tensor,
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
    dy: &Tensor,
    need_dx: bool,
) -> Result<ConvGrads> {
    let g = conv_geometry(x, weights, bias, spec)?;
    let n = x.batch();
    let (rows, cols) = (g.rows(), g.cols());
    let out_c = spec.out_channels;
    if dy.shape() != [n, out_c, g.ho, g.wo] {
        return shape_err(format!("conv upstream gradient has shape {:?}", dy.shape()));
    }
    if spec.stride == 1 {
        let (dx, dw, db) = conv2d_direct_backward(x, weights, spec, &g, dy, need_dx);
        return Ok(ConvGrads {
            dx: if need_dx {
                Some(Tensor::from_vec(x.shape(), dx)?)
            } else {
                None
            },
            dw: Tensor::from_vec(weights.shape(), dw)?,
            db: Tensor::from_vec(bias.shape(), db)?,
        });
    }
    let mut dw = vec![0.0; out_c * rows];
    let mut db = vec![0.0; out_c];
    let in_sz = g.c * g.h * g.w;
    let mut dx = if need_dx { vec![0.0; n * in_sz] } else { Vec::new() };
    with_scratch(0, rows * cols, |col| {
        for b in 0..n {
            let dyb = &dy.data()[b * out_c * cols..(b + 1) * out_c * cols];
            for (co, plane) in dyb.chunks_exact(cols).enumerate() {
                db[co] += plane.iter().sum::<f64>();
            }
            im2col(&x.data()[b * in_sz..(b + 1) * in_sz], &g, spec, col);
            // dW += dY · colᵀ
            gemm(out_c, cols, rows, dyb, cols, 1, col, 1, cols, 1.0, &mut dw);
            if need_dx {
                // dcol = Wᵀ · dY
                gemm(rows, out_c, cols, weights.data(), 1, rows, dyb, cols, 1, 0.0, col);
                col2im_add(col, &g, spec, &mut dx[b * in_sz..(b + 1) * in_sz]);
            }
        }
    });
    Ok(ConvGrads {
        dx: if need_dx {
            Some(Tensor::from_vec(x.shape(), dx)?)
        } else {
            None
        },
        dw: Tensor::from_vec(weights.shape(), dw)?,
        db: Tensor::from_vec(bias.shape(), db)?,
    })
}

/// Swaps the two channel axes and rotates each kernel by 180°:
/// `out[b][a][kh−1−i][kw−1−j] = w[a][b][i][j]`. The map is its own inverse.
pub fn flip_transpose(weights: &Tensor) -> Tensor {
    let [a, b, kh, kw] = weights.shape();
    let mut out = vec![0.0; weights.len()];
    for ia in 0..a {
        for ib in 0..b {
            for i in 0..kh {
                for j in 0..kw {
                    out[((ib * a + ia) * kh + (kh - 1 - i)) * kw + (kw - 1 - j)] =
                        weights.data()[((ia * b + ib) * kh + i) * kw + j];
                }
            }
        }
    }
    Tensor::from_vec([b, a, kh, kw], out).expect("same element count")
}

/// The ordinary-convolution spec equivalent to a stride-1 transposed
/// convolution with spec `spec`.
pub(crate) fn deconv_as_conv(spec: &ConvSpec) -> Result<ConvSpec> {
    if spec.stride != 1 {
        return Err(Error::Unsupported(format!(
            "transposed convolution with stride {} (only stride 1 is supported)",
            spec.stride
        )));
    }
    if spec.kernel.0 != spec.kernel.1 {
        return Err(Error::Unsupported(format!(
            "transposed convolution with non-square kernel {:?}",
            spec.kernel
        )));
    }
    let reach = spec.dilation * (spec.kernel.0 - 1);
    if spec.padding > reach {
        return Err(Error::Unsupported(format!(
            "transposed convolution padding {} exceeds dilated kernel reach {reach}",
            spec.padding
        )));
    }
    Ok(ConvSpec {
        padding: reach - spec.padding,
        ..*spec
    })
}

/// Stride-1 transposed convolution. `weights` is `(in, out, kh, kw)`.
///
/// Computed as [`conv2d`] with [`flip_transpose`]d weights and complementary
/// padding.
pub fn deconv2d(x: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let conv_spec = deconv_as_conv(spec)?;
    let expected = [spec.in_channels, spec.out_channels, spec.kernel.0, spec.kernel.1];
    if weights.shape() != expected {
        return shape_err(format!(
            "deconv weights {:?} do not match spec {expected:?}",
            weights.shape()
        ));
    }
    conv2d(x, &flip_transpose(weights), bias, &conv_spec)
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    let data = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub(crate) fn activation_backward(x: &Tensor, y: &Tensor, kind: Activation, dy: &Tensor) -> Tensor {
    let data = match kind {
        Activation::Relu => x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
        Activation::LeakyRelu(slope) => x
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&v, &g)| if v > 0.0 { g } else { slope * g })
            .collect(),
        Activation::Sigmoid => y
            .data()
            .iter()
            .zip(dy.data())
            .map(|(&s, &g)| g * s * (1.0 - s))
            .collect(),
    };
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Channel concatenation; earlier parts' channels come first.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Empty("nothing to concatenate".into()))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        let [pn, _, ph, pw] = p.shape();
        if (pn, ph, pw) != (n, h, w) {
            return shape_err(format!(
                "cannot concatenate {:?} with {:?}",
                p.shape(),
                first.shape()
            ));
        }
    }
    let total_c: usize = parts.iter().map(|p| p.channels()).sum();
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total_c * plane);
    for b in 0..n {
        for p in parts {
            let sz = p.channels() * plane;
            data.extend_from_slice(&p.data()[b * sz..(b + 1) * sz]);
        }
    }
    Tensor::from_vec([n, total_c, h, w], data)
}

/// Interpolation taps `(i0, i1, w1)` along one axis: `out = (1 − w1)·in[i0] + w1·in[i1]`.
///
/// Half-pixel centres: output sample `o` reads source coordinate
/// `(o + 0.5)·in/out − 0.5`, clamped to the valid range at both borders. An
/// exact ×½ therefore averages pixel pairs, and an exact ×2 places taps at
/// quarter offsets.
fn resize_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = src.floor() as usize;
            if i0 + 1 >= input {
                (input - 1, input - 1, 0.0)
            } else {
                (i0, i0 + 1, src - i0 as f64)
            }
        })
        .collect()
}

fn resize_dims(x: &Tensor, scale: ResizeScale) -> Result<(usize, usize)> {
    if scale.num == 0 || scale.den == 0 {
        return Err(Error::Parameter(format!("invalid resize scale {scale:?}")));
    }
    let (oh, ow) = (scale.apply(x.height()), scale.apply(x.width()));
    if oh == 0 || ow == 0 {
        return shape_err(format!(
            "resizing {:?} by {}/{} yields an empty image",
            x.shape(),
            scale.num,
            scale.den
        ));
    }
    Ok((oh, ow))
}

/// Bilinear resize of every channel plane; output dims are `round(dim × scale)`.
pub fn resize_bilinear(x: &Tensor, scale: ResizeScale) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = resize_dims(x, scale)?;
    let ty = resize_taps(h, oh);
    let tx = resize_taps(w, ow);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks_exact(h * w) {
        for &(y0, y1, wy) in &ty {
            let r0 = &plane[y0 * w..(y0 + 1) * w];
            let r1 = &plane[y1 * w..(y1 + 1) * w];
            for &(x0, x1, wx) in &tx {
                let top = (1.0 - wx) * r0[x0] + wx * r0[x1];
                let bot = (1.0 - wx) * r1[x0] + wx * r1[x1];
                out.push((1.0 - wy) * top + wy * bot);
            }
        }
    }
    Tensor::from_vec([n, c, oh, ow], out)
}

pub(crate) fn resize_bilinear_backward(x: &Tensor, scale: ResizeScale, dy: &Tensor) -> Result<Tensor> {
    let [_, _, h, w] = x.shape();
    let (oh, ow) = resize_dims(x, scale)?;
    let ty = resize_taps(h, oh);
    let tx = resize_taps(w, ow);
    let mut dx = vec![0.0; x.len()];
    for (dplane, gplane) in dx.chunks_exact_mut(h * w).zip(dy.data().chunks_exact(oh * ow)) {
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let g = gplane[oy * ow + ox];
                dplane[y0 * w + x0] += (1.0 - wy) * (1.0 - wx) * g;
                dplane[y0 * w + x1] += (1.0 - wy) * wx * g;
                dplane[y1 * w + x0] += wy * (1.0 - wx) * g;
                dplane[y1 * w + x1] += wy * wx * g;
            }
        }
    }
    Tensor::from_vec(x.shape(), dx)
}

/// Mean of squared differences over all elements.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return shape_err(format!("mse of {:?} and {:?}", a.shape(), b.shape()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    /// Direct-definition convolution used as an independent reference.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Tensor {
        let [n, c, h, wd] = x.shape();
        let (ho, wo) = spec.output_size(h, wd).unwrap();
        let mut out = Tensor::zeros([n, spec.out_channels, ho, wo]);
        let (kh, kw) = spec.kernel;
        for bi in 0..n {
            for co in 0..spec.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[co];
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * spec.stride + i * spec.dilation) as isize
                                        - spec.padding as isize;
                                    let ix = (ox * spec.stride + j * spec.dilation) as isize
                                        - spec.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w.at(co, ci, i, j) * x.at(bi, ci, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        let idx = ((bi * spec.out_channels + co) * ho + oy) * wo + ox;
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    /// Scatter-form transposed convolution straight from its definition.
    fn naive_deconv(x: &Tensor, w: &Tensor, b: &Tensor, spec: &ConvSpec) -> Tensor {
        let [n, c, h, wd] = x.shape();
        let k = spec.kernel.0;
        let d = spec.dilation as isize;
        let p = spec.padding as isize;
        let ho = (h as isize + d * (k as isize - 1) - 2 * p) as usize;
        let wo = (wd as isize + d * (k as isize - 1) - 2 * p) as usize;
        let mut out = Tensor::zeros([n, spec.out_channels, ho, wo]);
        for bi in 0..n {
            for co in 0..spec.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        out.data_mut()[((bi * spec.out_channels + co) * ho + oy) * wo + ox] = b.data()[co];
                    }
                }
            }
            for ci in 0..c {
                for iy in 0..h {
                    for ix in 0..wd {
                        for co in 0..spec.out_channels {
                            for i in 0..k {
                                for j in 0..k {
                                    let oy = iy as isize + i as isize * d - p;
                                    let ox = ix as isize + j as isize * d - p;
                                    if oy >= 0 && ox >= 0 && (oy as usize) < ho && (ox as usize) < wo {
                                        let idx = ((bi * spec.out_channels + co) * ho + oy as usize) * wo
                                            + ox as usize;
                                        out.data_mut()[idx] += w.at(ci, co, i, j) * x.at(bi, ci, iy, ix);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn identity_kernel(c: usize) -> Tensor {
        let mut w = Tensor::zeros([c, c, 3, 3]);
        for i in 0..c {
            w.data_mut()[((i * c + i) * 3 + 1) * 3 + 1] = 1.0;
        }
        w
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let x = Tensor::uniform([2, 3, 6, 5], -1.0, 1.0, &mut rng());
        let b = Tensor::zeros([1, 3, 1, 1]);
        for dilation in [1, 2] {
            let spec = ConvSpec::same(3, 3, 3, dilation);
            let y = conv2d(&x, &identity_kernel(3), &b, &spec).unwrap();
            assert_eq!(y, x);
        }
        let y = deconv2d(&x, &identity_kernel(3), &b, &ConvSpec::same(3, 3, 3, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_kernel_sums_neighbourhood() {
        let x = Tensor::full([1, 1, 5, 5], 0.3);
        let w = Tensor::full([1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, &Tensor::zeros([1, 1, 1, 1]), &ConvSpec::same(1, 1, 3, 1)).unwrap();
        assert!((y.at(0, 0, 2, 2) - 2.7).abs() < 1e-12);
        // corner sees only four taps
        assert!((y.at(0, 0, 0, 0) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn conv_matches_naive_reference() {
        let mut r = rng();
        let specs = [
            ConvSpec::same(3, 4, 3, 1),
            ConvSpec::same(2, 3, 3, 2),
            ConvSpec::same(2, 2, 5, 1),
            ConvSpec::strided(3, 2, 3, 2),
            ConvSpec {
                in_channels: 2,
                out_channels: 3,
                kernel: (2, 3),
                stride: 3,
                dilation: 2,
                padding: 1,
            },
        ];
        for spec in specs {
            let x = Tensor::uniform([2, spec.in_channels, 9, 7], -1.0, 1.0, &mut r);
            let w = Tensor::uniform(
                [spec.out_channels, spec.in_channels, spec.kernel.0, spec.kernel.1],
                -1.0,
                1.0,
                &mut r,
            );
            let b = Tensor::uniform([1, spec.out_channels, 1, 1], -1.0, 1.0, &mut r);
            let fast = conv2d(&x, &w, &b, &spec).unwrap();
            let slow = naive_conv(&x, &w, &b, &spec);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-10, "{spec:?}");
        }
    }

    #[test]
    fn deconv_matches_flipped_conv_and_scatter_definition() {
        let mut r = rng();
        let x = Tensor::uniform([1, 1, 4, 4], -1.0, 1.0, &mut r);
        let w = Tensor::uniform([1, 1, 3, 3], -1.0, 1.0, &mut r);
        let b = Tensor::zeros([1, 1, 1, 1]);
        let spec = ConvSpec::same(1, 1, 3, 1);
        let y = deconv2d(&x, &w, &b, &spec).unwrap();
        let flipped = conv2d(&x, &flip_transpose(&w), &b, &spec).unwrap();
        assert!(y.max_abs_diff(&flipped) < 1e-10);
        assert!(y.max_abs_diff(&naive_deconv(&x, &w, &b, &spec)) < 1e-10);

        for spec in [ConvSpec::same(4, 3, 3, 1), ConvSpec::same(3, 2, 3, 2), ConvSpec {
            padding: 0,
            ..ConvSpec::same(2, 2, 3, 1)
        }] {
            let x = Tensor::uniform([2, spec.in_channels, 6, 5], -1.0, 1.0, &mut r);
            let w = Tensor::uniform([spec.in_channels, spec.out_channels, 3, 3], -1.0, 1.0, &mut r);
            let b = Tensor::uniform([1, spec.out_channels, 1, 1], -1.0, 1.0, &mut r);
            let y = deconv2d(&x, &w, &b, &spec).unwrap();
            assert!(y.max_abs_diff(&naive_deconv(&x, &w, &b, &spec)) < 1e-10, "{spec:?}");
        }
    }

    #[test]
    fn deconv_bias_only_and_stride_rejection() {
        let x = Tensor::uniform([1, 2, 4, 4], -1.0, 1.0, &mut rng());
        let w = Tensor::zeros([2, 3, 3, 3]);
        let b = Tensor::from_vec([1, 3, 1, 1], vec![0.1, -0.2, 0.3]).unwrap();
        let y = deconv2d(&x, &w, &b, &ConvSpec::same(2, 3, 3, 1)).unwrap();
        for c in 0..3 {
            for v in &y.data()[c * 16..(c + 1) * 16] {
                assert_eq!(*v, b.data()[c]);
            }
        }
        let strided = ConvSpec::strided(2, 3, 3, 2);
        assert!(matches!(deconv2d(&x, &w, &b, &strided), Err(Error::Unsupported(_))));
    }

    #[test]
    fn conv_rejects_inconsistent_shapes() {
        let x = Tensor::zeros([1, 2, 4, 4]);
        let spec = ConvSpec::same(3, 1, 3, 1);
        let w = Tensor::zeros([1, 3, 3, 3]);
        let b = Tensor::zeros([1, 1, 1, 1]);
        assert!(matches!(conv2d(&x, &w, &b, &spec), Err(Error::Shape(_))));
    }

    #[test]
    fn activations() {
        let x = Tensor::from_vec([1, 1, 1, 4], vec![-1.0, 2.0, 0.0, -0.5]).unwrap();
        assert_eq!(activation(&x, Activation::Relu).data(), &[0.0, 2.0, 0.0, 0.0]);
        let s = activation(&x, Activation::Sigmoid);
        assert_eq!(s.data()[2], 0.5);
        assert!((activation(&Tensor::scalar(2.0), Activation::Sigmoid).data()[0] - 0.880797).abs() < 1e-6);
        let l = activation(&x, Activation::LeakyRelu(0.2));
        assert_eq!(l.data(), &[-0.2, 2.0, 0.0, -0.1]);
    }

    #[test]
    fn concat_shapes_and_order() {
        let a = Tensor::full([1, 3, 8, 8], 1.0);
        let b = Tensor::full([1, 32, 8, 8], 2.0);
        let ab = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(ab.shape(), [1, 35, 8, 8]);
        assert_eq!(ab.slice_channels(0, 3).unwrap(), a);
        assert_eq!(ab.slice_channels(3, 32).unwrap(), b);
        let ba = concat_channels(&[&b, &a]).unwrap();
        assert_ne!(ab, ba);
        assert!(concat_channels(&[&a, &Tensor::zeros([1, 1, 4, 8])]).is_err());
    }

    #[test]
    fn resize_hand_evaluated_upsample() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = resize_bilinear(&x, ResizeScale::DOUBLE).unwrap();
        assert_eq!(y.shape(), [1, 1, 4, 4]);
        for row in y.data().chunks(4) {
            assert_eq!(row, &[0.0, 0.25, 0.75, 1.0]);
        }
    }

    #[test]
    fn resize_half_is_box_average_and_constant_preserving() {
        let x = Tensor::uniform([1, 3, 128, 128], 0.0, 1.0, &mut rng());
        let y = resize_bilinear(&x, ResizeScale::HALF).unwrap();
        assert_eq!(y.shape(), [1, 3, 64, 64]);
        let expect = (x.at(0, 1, 10, 20) + x.at(0, 1, 10, 21) + x.at(0, 1, 11, 20) + x.at(0, 1, 11, 21)) / 4.0;
        assert!((y.at(0, 1, 5, 10) - expect).abs() < 1e-12);

        let c = Tensor::full([1, 2, 6, 10], 0.37);
        for s in [ResizeScale::HALF, ResizeScale::DOUBLE, ResizeScale { num: 3, den: 5 }] {
            let r = resize_bilinear(&c, s).unwrap();
            assert!(r.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
        assert!(resize_bilinear(&Tensor::zeros([1, 1, 1, 1]), ResizeScale { num: 1, den: 4 }).is_err());
    }

    #[test]
    fn mse_cases() {
        let a = Tensor::from_vec([1, 1, 1, 2], vec![0.5, 0.1]).unwrap();
        let b = Tensor::from_vec([1, 1, 1, 2], vec![0.5, 0.3]).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert!((mse(&Tensor::scalar(0.2), &Tensor::scalar(0.0)).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        assert!(mse(&a, &Tensor::scalar(0.0)).is_err());
    }
}
