//! Saliency prediction for a directory of images.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use sod_tensor::{Graph, ParamStore, Tensor};

use super::data::{list_pngs, read_rgb, resize_rgb, rgb_to_tensor};
use crate::checkpoint;
use crate::error::{Context, Error, Result};
use crate::network::Network;

/// 8-bit quantization of a probability, `round(255 p)`.
pub fn quantize(p: f32) -> u8 {
    (255.0 * p.clamp(0.0, 1.0)).round() as u8
}

/// Probability map of one RGB image at its original size: the image is
/// resized to the network input, and the prediction resized back bilinearly.
pub fn predict_image(net: &Network, store: &ParamStore<f32>, img: image::RgbImage) -> Result<Tensor<f32>> {
    let (w, h) = img.dimensions();
    let x = rgb_to_tensor(&resize_rgb(img, net.config.input_size));
    let g = Graph::new(store);
    let out = net.forward(&g, g.input(x))?;
    let p = g.resize(out.saliency, h as usize, w as usize).ctx("infer")?;
    Ok((*g.value(p)).clone())
}

pub fn to_gray(p: &Tensor<f32>) -> GrayImage {
    let s = p.shape();
    GrayImage::from_fn(s.w as u32, s.h as u32, |x, y| Luma([quantize(p.at(0, 0, y as usize, x as usize))]))
}

/// Writes one `<stem>.png` saliency map per input PNG; returns the files
/// written, in name order.
pub fn infer(ckpt: &Path, image_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (net, store) = checkpoint::load(ckpt)?.instantiate(ckpt)?;
    let inputs = list_pngs(image_dir)?;
    if inputs.is_empty() {
        return Err(Error::Data(format!("no PNG images in {}", image_dir.display())));
    }
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    let mut written = Vec::with_capacity(inputs.len());
    for (stem, path) in inputs {
        let img = read_rgb(&path).map_err(Error::Data)?;
        let p = predict_image(&net, &store, img)?;
        let out = out_dir.join(format!("{stem}.png"));
        to_gray(&p).save(&out).map_err(|e| Error::Data(format!("{}: {e}", out.display())))?;
        written.push(out);
    }
    Ok(written)
}
