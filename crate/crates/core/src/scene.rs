//! Procedural indoor-like scenes with matching depth, so synthesis and
//! training run without an external RGB-D dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use std::path::Path;

use crate::error::{Error, Result};
use crate::hazesim::{DepthMap, SourcePair};
use crate::image::ImageRGB;
use crate::io;

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    let base = rng.random_range(0.15..0.85);
    [0, 1, 2].map(|_| (base + rng.random_range(-0.25f64..0.25)).clamp(0.02, 0.98))
}

enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Disc { cy: f64, cx: f64, r: f64 },
}

struct Object {
    shape: Shape,
    depth: f64,
    color: [f64; 3],
    shade: f64,
}

impl Object {
    fn covers(&self, y: f64, x: f64) -> bool {
        match self.shape {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Disc { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
        }
    }
}

/// A back wall, a receding floor and a handful of nearer boxes and discs.
/// Depth is in metres, roughly 1 to 10. Deterministic in `seed`.
pub fn procedural_scene(seed: u64, height: usize, width: usize) -> Result<(ImageRGB, DepthMap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f64, width as f64);
    let horizon = rng.random_range(0.35..0.6);
    let far = rng.random_range(7.0..10.0);
    let near = rng.random_range(1.0..2.0);
    let wall = random_color(&mut rng);
    let floor = random_color(&mut rng);
    let stripe_freq = rng.random_range(4.0..12.0);
    let checker = rng.random_range(4.0..10.0);

    let count = rng.random_range(3..7);
    let mut objects: Vec<Object> = (0..count)
        .map(|_| {
            let shape = if rng.random_bool(0.5) {
                let (y0, x0) = (rng.random_range(0.1..0.8), rng.random_range(0.0..0.85));
                let (hh, ww) = (rng.random_range(0.1..0.45), rng.random_range(0.1..0.4));
                Shape::Rect {
                    y0,
                    x0,
                    y1: (y0 + hh).min(1.0),
                    x1: (x0 + ww).min(1.0),
                }
            } else {
                Shape::Disc {
                    cy: rng.random_range(0.2..0.9),
                    cx: rng.random_range(0.1..0.9),
                    r: rng.random_range(0.05..0.2),
                }
            };
            Object {
                shape,
                depth: rng.random_range(near..far * 0.8),
                color: random_color(&mut rng),
                shade: rng.random_range(-0.25..0.25),
            }
        })
        .collect();
    // nearest last so it is painted on top
    objects.sort_by(|a, b| b.depth.total_cmp(&a.depth));

    let mut rgb = Vec::with_capacity(height * width * 3);
    let mut depth = Vec::with_capacity(height * width);
    for y in 0..height {
        let v = (y as f64 + 0.5) / hf;
        for x in 0..width {
            let u = (x as f64 + 0.5) / wf;
            let (mut color, mut d) = if v < horizon {
                let tex = 0.06 * (stripe_freq * std::f64::consts::TAU * u).sin();
                let grad = 0.15 * (v / horizon - 0.5);
                (wall.map(|c| c + tex + grad), far)
            } else {
                let s = (v - horizon) / (1.0 - horizon);
                let cell = ((u * checker).floor() as i64 + (s * checker).floor() as i64) & 1;
                let tex = if cell == 0 { 0.08 } else { -0.08 };
                (floor.map(|c| c + tex - 0.1 * s), far - (far - near) * s)
            };
            for o in &objects {
                if o.covers(v, u) && o.depth < d {
                    d = o.depth;
                    color = o.color.map(|c| c + o.shade * (u - 0.5));
                }
            }
            rgb.extend(color.map(|c| c.clamp(0.0, 1.0)));
            depth.push(d);
        }
    }
    Ok((ImageRGB::new(height, width, rgb)?, DepthMap::new(height, width, depth)?))
}

/// Writes scenes `first_seed .. first_seed + count` under `dir` as
/// `scene_NNNN` clean/depth files, ready for dataset synthesis. `raw` selects
/// float files over 8-bit and 16-bit PNGs.
pub fn write_procedural_pairs(
    dir: impl AsRef<Path>,
    count: usize,
    first_seed: u64,
    (height, width): (usize, usize),
    depth_scale: f64,
    raw: bool,
) -> Result<Vec<SourcePair>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = if raw { io::RAW_EXTENSION } else { "png" };
    (0..count)
        .map(|k| {
            let (clean, depth) = procedural_scene(first_seed.wrapping_add(k as u64), height, width)?;
            let pair = SourcePair {
                clean: dir.join(format!("scene_{k:04}.{ext}")),
                depth: dir.join(format!("scene_{k:04}_depth.{ext}")),
            };
            io::write_image(&pair.clean, &clean)?;
            io::write_depth(&pair.depth, &depth, depth_scale)?;
            Ok(pair)
        })
        .collect()
}
