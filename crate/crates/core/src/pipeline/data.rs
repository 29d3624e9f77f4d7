//! PNG image/mask pairs on disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{GrayImage, ImageReader, RgbImage};
use sod_tensor::Tensor;

use crate::error::{Error, Result};
use crate::objective::GrayMap;

/// One training pair: RGB image in `[0, 1]` as `[1, 3, h, w]` and a
/// strictly binary mask as `[1, 1, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

/// PNG files of `dir` keyed by file stem, in lexicographic order.
pub fn list_pngs(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(Error::io(dir))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(Error::io(dir))?.path();
        let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

fn decode_err(path: &Path, e: image::ImageError) -> String {
    format!("{}: {e}", path.display())
}

pub fn read_rgb(path: &Path) -> std::result::Result<RgbImage, String> {
    let reader = ImageReader::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(reader.decode().map_err(|e| decode_err(path, e))?.to_rgb8())
}

pub fn read_gray(path: &Path) -> std::result::Result<GrayImage, String> {
    let reader = ImageReader::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(reader.decode().map_err(|e| decode_err(path, e))?.to_luma8())
}

/// Channel-planar `[1, 3, h, w]` tensor with values `v / 255`.
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    Tensor::from_fn([1, 3, h as usize, w as usize], |[_, c, y, x]| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    })
}

/// Binary `[1, 1, h, w]` mask: foreground iff `v / 255 > 0.5`.
pub fn mask_to_tensor(img: &GrayImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    Tensor::from_fn([1, 1, h as usize, w as usize], |[_, _, y, x]| {
        if img.get_pixel(x as u32, y as u32)[0] as f32 / 255.0 > 0.5 {
            1.0
        } else {
            0.0
        }
    })
}

/// Gray map with values `v / 255`.
pub fn gray_to_map(img: &GrayImage) -> GrayMap {
    let (w, h) = img.dimensions();
    GrayMap::from_fn(w as usize, h as usize, |x, y| img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0)
}

pub fn resize_rgb(img: RgbImage, size: usize) -> RgbImage {
    if img.dimensions() == (size as u32, size as u32) {
        return img;
    }
    image::imageops::resize(&img, size as u32, size as u32, FilterType::Triangle)
}

pub fn resize_mask(img: GrayImage, size: usize) -> GrayImage {
    if img.dimensions() == (size as u32, size as u32) {
        return img;
    }
    image::imageops::resize(&img, size as u32, size as u32, FilterType::Nearest)
}

/// Loads every same-stem image/mask pair, resized to `size × size`
/// (bilinear for images, nearest for masks), sorted by file name.
///
/// All problems (missing masks, unreadable files, image and mask of
/// different sizes) are collected into a single error.
pub fn load_dataset(image_dir: &Path, mask_dir: &Path, size: usize) -> Result<Vec<Sample>> {
    let images = list_pngs(image_dir)?;
    let masks = list_pngs(mask_dir)?;
    if images.is_empty() {
        return Err(Error::Data(format!("no samples: {} contains no PNG images", image_dir.display())));
    }
    let mut problems = Vec::new();
    let mut samples = Vec::with_capacity(images.len());
    for (stem, image_path) in &images {
        let Some(mask_path) = masks.get(stem) else {
            problems.push(format!("{}: no mask named {stem}.png in {}", image_path.display(), mask_dir.display()));
            continue;
        };
        let (img, mask) = match (read_rgb(image_path), read_gray(mask_path)) {
            (Ok(i), Ok(m)) => (i, m),
            (i, m) => {
                problems.extend(i.err());
                problems.extend(m.err());
                continue;
            }
        };
        if img.dimensions() != mask.dimensions() {
            problems.push(format!(
                "{}: image is {:?} but mask is {:?}",
                stem,
                img.dimensions(),
                mask.dimensions()
            ));
            continue;
        }
        samples.push(Sample {
            name: stem.clone(),
            image_path: image_path.clone(),
            mask_path: mask_path.clone(),
            image: rgb_to_tensor(&resize_rgb(img, size)),
            mask: mask_to_tensor(&resize_mask(mask, size)),
        });
    }
    if !problems.is_empty() {
        return Err(Error::Data(format!("dataset errors:\n  {}", problems.join("\n  "))));
    }
    Ok(samples)
}

/// Stacks single-item tensors along the batch axis.
pub fn stack(items: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = items.first().ok_or_else(|| Error::Input("cannot stack an empty batch".into()))?.shape();
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for t in items {
        if t.shape() != first {
            return Err(Error::Input(format!("batch items differ in shape: {} vs {first}", t.shape())));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec([items.len(), first.c, first.h, first.w], data)
        .map_err(|e| Error::Input(e.to_string()))
}
