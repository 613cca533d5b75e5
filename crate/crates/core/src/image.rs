//! The RGB raster shared by every stage of the pipeline.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Real-valued `height × width × 3` image with intensities in `[0, 1]`,
/// stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageRGB {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return shape_err(format!("image dimensions must be positive, got {height}x{width}"));
        }
        if data.len() != height * width * 3 {
            return shape_err(format!(
                "image data length {} does not match {height}x{width}x3",
                data.len()
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Parameter(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageRGB {
            height,
            width,
            data,
        })
    }

    /// Builds an image from arbitrary reals, clamping every value into `[0, 1]`.
    /// NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = clamp_unit(*v);
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * 3])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(clamp_unit(f(y, x, c)));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Applies `f` to every value and clamps the result into `[0, 1]`.
    pub fn map_clamped(&self, f: impl Fn(f64) -> f64) -> ImageRGB {
        ImageRGB {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| clamp_unit(f(v))).collect(),
        }
    }

    /// Per-channel arithmetic means.
    pub fn channel_means(&self) -> [f64; 3] {
        let mut sums = [0.0; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += px[c];
            }
        }
        let n = (self.height * self.width) as f64;
        sums.map(|s| s / n)
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<ImageRGB> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return shape_err(format!(
                "crop {height}x{width}+{top}+{left} exceeds {}x{}",
                self.height, self.width
            ));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let start = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(ImageRGB {
            height,
            width,
            data,
        })
    }

    /// Pads to at least `height × width` by mirror reflection about the last
    /// row/column (edge samples are not repeated). Padding goes to the bottom and
    /// right so that the original occupies the top-left corner.
    pub fn reflect_pad(&self, height: usize, width: usize) -> ImageRGB {
        let height = height.max(self.height);
        let width = width.max(self.width);
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            let sy = reflect_index(y, self.height);
            for x in 0..width {
                let sx = reflect_index(x, self.width);
                let i = (sy * self.width + sx) * 3;
                data.extend_from_slice(&self.data[i..i + 3]);
            }
        }
        ImageRGB {
            height,
            width,
            data,
        }
    }

    /// Converts to a `(1, 3, H, W)` planar tensor.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * 3];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c];
            }
        }
        Tensor::from_vec([1, 3, self.height, self.width], out).expect("consistent shape")
    }

    /// Stacks images of identical size into an `(N, 3, H, W)` tensor.
    pub fn stack(images: &[ImageRGB]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::Empty("no images to stack".into()))?;
        let (h, w) = first.dims();
        let plane = h * w;
        let mut out = Vec::with_capacity(images.len() * plane * 3);
        for img in images {
            if img.dims() != (h, w) {
                return shape_err(format!("cannot stack {:?} with {:?}", img.dims(), (h, w)));
            }
            let t = img.to_tensor();
            out.extend_from_slice(t.data());
        }
        Tensor::from_vec([images.len(), 3, h, w], out)
    }

    /// Reads batch item `index` of a 3-channel tensor back into an image, clamping
    /// values into `[0, 1]`.
    pub fn from_tensor_clamped(t: &Tensor, index: usize) -> Result<ImageRGB> {
        let [n, c, h, w] = t.shape();
        if c != 3 || index >= n {
            return shape_err(format!("cannot read image {index} from tensor {:?}", t.shape()));
        }
        let plane = h * w;
        let src = &t.data()[index * 3 * plane..(index + 1) * 3 * plane];
        let mut data = vec![0.0; plane * 3];
        for p in 0..plane {
            for ch in 0..3 {
                data[p * 3 + ch] = clamp_unit(src[ch * plane + p]);
            }
        }
        ImageRGB::new(h, w, data)
    }
}

/// Clamps into `[0, 1]`; NaN becomes 0.
#[inline]
pub fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Mirror index for reflection padding, `len ≥ 1`.
pub(crate) fn reflect_index(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let r = i % period;
    if r < len {
        r
    } else {
        period - r
    }
}
