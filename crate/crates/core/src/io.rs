//! Image file formats: 8-bit PNG, 16-bit depth PNG and the raw float
//! interchange (`GFNI`).
//!
//! Raw layout, little-endian: magic `GFNI`, `u32` height, `u32` width,
//! `u32` channels, then `height × width × channels` `f32` values row-major
//! with interleaved channels.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::hazesim::DepthMap;
use crate::image::{clamp_unit, ImageRGB};

pub const RAW_MAGIC: &[u8; 4] = b"GFNI";
pub const RAW_EXTENSION: &str = "gfni";

/// Decoded raw interchange payload.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl RawImage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(RAW_MAGIC);
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
            return Err(Error::Format("missing GFNI header".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (height, width, channels) = (dim(0), dim(1), dim(2));
        let count = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::Format("GFNI dimensions overflow".into()))?;
        let body = &bytes[16..];
        if body.len() != count * 4 {
            return Err(Error::Format(format!(
                "GFNI payload has {} bytes, header implies {}",
                body.len(),
                count * 4
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(RawImage {
            height,
            width,
            channels,
            data,
        })
    }
}

fn is_raw(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case(RAW_EXTENSION))
}

fn read_raw(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RawImage::decode(&bytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.into(),
            source,
        },
    })
}

fn save_image<P, C>(path: &Path, img: &ImageBuffer<P, C>) -> Result<()>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
}

pub fn raw_from_image(img: &ImageRGB) -> RawImage {
    RawImage {
        height: img.height(),
        width: img.width(),
        channels: 3,
        data: img.data().iter().map(|&v| v as f32).collect(),
    }
}

/// Reads an RGB image: `.gfni` files as raw floats, anything else as an 8-bit
/// PNG with `b → b / 255`.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageRGB> {
    let path = path.as_ref();
    if is_raw(path) {
        let raw = read_raw(path)?;
        if raw.channels != 3 {
            return Err(Error::Format(format!(
                "{}: expected 3 channels, found {}",
                path.display(),
                raw.channels
            )));
        }
        return ImageRGB::new(raw.height, raw.width, raw.data.iter().map(|&v| v as f64).collect());
    }
    let rgb = open_image(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    ImageRGB::new(h as usize, w as usize, data)
}

/// Writes an RGB image, raw or 8-bit PNG by extension; PNG encoding maps
/// `x → round(255 · x)`.
pub fn write_image(path: impl AsRef<Path>, img: &ImageRGB) -> Result<()> {
    let path = path.as_ref();
    if is_raw(path) {
        return write_bytes(path, &raw_from_image(img).encode());
    }
    let buf: RgbImage = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let p = img.pixel(y as usize, x as usize);
        Rgb(p.map(quantize))
    });
    save_image(path, &buf)
}

/// `round(255 · clamp(x))`.
pub fn quantize(x: f64) -> u8 {
    (clamp_unit(x) * 255.0).round() as u8
}

/// Writes a single-channel map in `[0, 1]` as an 8-bit grayscale PNG.
pub fn write_gray_png(path: impl AsRef<Path>, height: usize, width: usize, values: &[f64]) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::Shape(format!(
            "{} values for a {height}x{width} map",
            values.len()
        )));
    }
    let buf: GrayImage = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        Luma([quantize(values[y as usize * width + x as usize])])
    });
    save_image(path.as_ref(), &buf)
}

/// Reads a depth map: `.gfni` single-channel raw, or a 16-bit grayscale PNG
/// scaled as `value / 65535 × depth_scale`.
pub fn read_depth(path: impl AsRef<Path>, depth_scale: f64) -> Result<DepthMap> {
    let path = path.as_ref();
    if is_raw(path) {
        let raw = read_raw(path)?;
        if raw.channels != 1 {
            return Err(Error::Format(format!(
                "{}: depth needs 1 channel, found {}",
                path.display(),
                raw.channels
            )));
        }
        return DepthMap::new(raw.height, raw.width, raw.data.iter().map(|&v| v as f64).collect());
    }
    let gray = open_image(path)?.to_luma16();
    let (w, h) = gray.dimensions();
    let data = gray
        .into_raw()
        .into_iter()
        .map(|v| v as f64 / 65535.0 * depth_scale)
        .collect();
    DepthMap::new(h as usize, w as usize, data)
}

/// Writes a depth map: raw by extension, otherwise a 16-bit PNG storing
/// `round(d / depth_scale × 65535)`.
pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap, depth_scale: f64) -> Result<()> {
    let path = path.as_ref();
    if is_raw(path) {
        let raw = RawImage {
            height: depth.height(),
            width: depth.width(),
            channels: 1,
            data: depth.data().iter().map(|&v| v as f32).collect(),
        };
        return write_bytes(path, &raw.encode());
    }
    let w = depth.width();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(w as u32, depth.height() as u32, |x, y| {
            let d = depth.data()[y as usize * w + x as usize] / depth_scale;
            Luma([(d.clamp(0.0, 1.0) * 65535.0).round() as u16])
        });
    save_image(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_header_layout() {
        let raw = RawImage {
            height: 2,
            width: 1,
            channels: 3,
            data: vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125],
        };
        let bytes = raw.encode();
        assert_eq!(&bytes[..4], b"GFNI");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &0.0f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &0.25f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 6 * 4);
        assert_eq!(RawImage::decode(&bytes).unwrap(), raw);
        assert!(RawImage::decode(&bytes[..20]).is_err());
        assert!(RawImage::decode(b"XXXX0000000000000").is_err());
    }

    #[test]
    fn png_quantization_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageRGB::from_fn(3, 4, |y, x, c| ((y * 4 + x) * 3 + c) as f64 * 7.0 / 255.0).unwrap();
        let path = dir.path().join("a.png");
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.dims(), (3, 4));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn raw_image_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageRGB::from_fn(5, 2, |y, x, c| (y + x + c) as f64 / 16.0).unwrap();
        let path = dir.path().join("a.gfni");
        write_image(&path, &img).unwrap();
        assert_eq!(read_image(&path).unwrap(), img);
    }

    #[test]
    fn depth_png_sixteen_bit() {
        let dir = tempfile::tempdir().unwrap();
        let depth = DepthMap::new(2, 2, vec![0.0, 2.5, 5.0, 10.0]).unwrap();
        let path = dir.path().join("d.png");
        write_depth(&path, &depth, 10.0).unwrap();
        let back = read_depth(&path, 10.0).unwrap();
        for (a, b) in depth.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 10.0 / 65535.0);
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_image("/definitely/not/here.png").unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
