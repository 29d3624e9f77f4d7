//! Procedural image/mask pairs standing in for remote-sensing data.
//!
//! Each image is a textured background with one or two flat-colored,
//! lightly textured objects; the mask is the exact union of the object
//! footprints, sampled at pixel centers.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Admissible foreground ratio of a generated mask.
pub const FOREGROUND_RANGE: (f64, f64) = (0.02, 0.6);
const MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    RotatedBar,
    BlobPolygon,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [Self::Ellipse, Self::Rectangle, Self::RotatedBar, Self::BlobPolygon];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub count: usize,
    /// square canvas side in pixels
    pub size: usize,
    pub shapes: Vec<ShapeKind>,
    /// peak deviation of the background texture, in `[0, 1]` intensity units
    pub texture_amplitude: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(count: usize, size: usize, seed: u64) -> Self {
        Self { count, size, shapes: ShapeKind::ALL.to_vec(), texture_amplitude: 0.15, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 || self.size < 8 {
            return Err(Error::Config("synthetic data needs count ≥ 1 and size ≥ 8".into()));
        }
        if self.shapes.is_empty() {
            return Err(Error::Config("synthetic shape vocabulary is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.texture_amplitude) {
            return Err(Error::Config("texture_amplitude must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// A placed shape in canvas coordinates.
#[derive(Debug, Clone)]
enum Placed {
    /// center, semi-axes, rotation
    Ellipse { c: (f64, f64), r: (f64, f64), angle: f64 },
    /// center, half extents, rotation (zero for plain rectangles)
    Box { c: (f64, f64), half: (f64, f64), angle: f64 },
    Polygon { vertices: Vec<(f64, f64)> },
}

fn to_local(p: (f64, f64), c: (f64, f64), angle: f64) -> (f64, f64) {
    let (dx, dy) = (p.0 - c.0, p.1 - c.1);
    let (s, co) = angle.sin_cos();
    (co * dx + s * dy, -s * dx + co * dy)
}

impl Placed {
    fn contains(&self, p: (f64, f64)) -> bool {
        match self {
            Placed::Ellipse { c, r, angle } => {
                let (u, v) = to_local(p, *c, *angle);
                (u / r.0).powi(2) + (v / r.1).powi(2) <= 1.0
            }
            Placed::Box { c, half, angle } => {
                let (u, v) = to_local(p, *c, *angle);
                u.abs() <= half.0 && v.abs() <= half.1
            }
            Placed::Polygon { vertices } => {
                // even-odd crossing test
                let mut inside = false;
                let n = vertices.len();
                for i in 0..n {
                    let (a, b) = (vertices[i], vertices[(i + n - 1) % n]);
                    if (a.1 > p.1) != (b.1 > p.1) && p.0 < (b.0 - a.0) * (p.1 - a.1) / (b.1 - a.1) + a.0 {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }
}

fn place<R: Rng>(kind: ShapeKind, size: f64, rng: &mut R) -> Placed {
    let c = (rng.gen_range(0.2..0.8) * size, rng.gen_range(0.2..0.8) * size);
    let angle = rng.gen_range(0.0..PI);
    match kind {
        ShapeKind::Ellipse => {
            Placed::Ellipse { c, r: (rng.gen_range(0.08..0.3) * size, rng.gen_range(0.08..0.3) * size), angle }
        }
        ShapeKind::Rectangle => Placed::Box {
            c,
            half: (rng.gen_range(0.08..0.3) * size, rng.gen_range(0.08..0.3) * size),
            angle: 0.0,
        },
        ShapeKind::RotatedBar => {
            Placed::Box { c, half: (rng.gen_range(0.2..0.4) * size, rng.gen_range(0.04..0.09) * size), angle }
        }
        ShapeKind::BlobPolygon => {
            let n = rng.gen_range(5..10);
            let base = rng.gen_range(0.1..0.28) * size;
            let vertices = (0..n)
                .map(|i| {
                    let phi = angle + 2.0 * PI * i as f64 / n as f64;
                    let r = base * rng.gen_range(0.6..1.3);
                    (c.0 + r * phi.cos(), c.1 + r * phi.sin())
                })
                .collect();
            Placed::Polygon { vertices }
        }
    }
}

fn color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
}

/// Smooth periodic texture plus per-pixel noise, zero-mean in expectation.
struct Texture {
    freq: (f64, f64),
    phase: (f64, f64),
    amplitude: f64,
}

impl Texture {
    fn new<R: Rng>(amplitude: f64, rng: &mut R) -> Self {
        Self {
            freq: (rng.gen_range(0.05..0.5), rng.gen_range(0.05..0.5)),
            phase: (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)),
            amplitude,
        }
    }

    fn at<R: Rng>(&self, x: f64, y: f64, rng: &mut R) -> f64 {
        let wave = (self.freq.0 * x + self.phase.0).sin() * (self.freq.1 * y + self.phase.1).sin();
        self.amplitude * (0.7 * wave + 0.3 * rng.gen_range(-1.0..1.0))
    }
}

/// Renders image `index` of `spec`. Every index draws from its own
/// generator stream, so an image does not depend on the dataset size.
pub fn render(spec: &SyntheticSpec, index: usize) -> Result<(RgbImage, GrayImage)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let n = spec.size;
    let size = n as f64;
    for _ in 0..MAX_ATTEMPTS {
        let count = rng.gen_range(1..=2);
        let shapes: Vec<Placed> = (0..count)
            .map(|_| {
                let kind = spec.shapes[rng.gen_range(0..spec.shapes.len())];
                place(kind, size, &mut rng)
            })
            .collect();
        let mut mask = GrayImage::new(n as u32, n as u32);
        let mut fg = 0usize;
        for y in 0..n {
            for x in 0..n {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                if shapes.iter().any(|s| s.contains(p)) {
                    mask.put_pixel(x as u32, y as u32, Luma([255]));
                    fg += 1;
                }
            }
        }
        let ratio = fg as f64 / (n * n) as f64;
        if ratio < FOREGROUND_RANGE.0 || ratio > FOREGROUND_RANGE.1 {
            continue;
        }
        let background = color(&mut rng);
        let mut foreground = color(&mut rng);
        // keep the object distinguishable from the background
        while foreground.iter().zip(&background).map(|(a, b)| (a - b).abs()).sum::<f64>() < 0.6 {
            foreground = color(&mut rng);
        }
        let bg_tex = Texture::new(spec.texture_amplitude, &mut rng);
        let fg_tex = Texture::new(spec.texture_amplitude / 2.0, &mut rng);
        let mut image = RgbImage::new(n as u32, n as u32);
        for y in 0..n {
            for x in 0..n {
                let on = mask.get_pixel(x as u32, y as u32)[0] > 0;
                let (base, tex) = if on { (&foreground, &fg_tex) } else { (&background, &bg_tex) };
                let t = tex.at(x as f64, y as f64, &mut rng);
                let px = base.map(|v| ((v + t).clamp(0.0, 1.0) * 255.0).round() as u8);
                image.put_pixel(x as u32, y as u32, Rgb(px));
            }
        }
        return Ok((image, mask));
    }
    Err(Error::Data(format!(
        "synthetic image {index}: no mask with foreground ratio in {FOREGROUND_RANGE:?} after {MAX_ATTEMPTS} attempts"
    )))
}

/// Writes `images/NNNN.png` and `masks/NNNN.png` under `out`; returns the
/// two directories.
pub fn generate(spec: &SyntheticSpec, out: &Path) -> Result<(PathBuf, PathBuf)> {
    spec.validate()?;
    let (images, masks) = (out.join("images"), out.join("masks"));
    for dir in [&images, &masks] {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    for i in 0..spec.count {
        let (img, mask) = render(spec, i)?;
        let name = format!("{i:04}.png");
        for (path, res) in [
            (images.join(&name), img.save(images.join(&name))),
            (masks.join(&name), mask.save(masks.join(&name))),
        ] {
            res.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        }
    }
    Ok((images, masks))
}
