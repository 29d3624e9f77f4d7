//! Five-stage VGG-style encoder.

use sod_tensor::nn::{Conv2d, Init};
use sod_tensor::{Element, Graph, ParamStore, Var};
use rand::Rng;

use crate::config::BackboneConfig;
use crate::error::{Context, Error, Result};

const MODULE: &str = "backbone";

/// Encoder features `E1…E5` at scales 1, 1/2, 1/4, 1/8, 1/16.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderPyramid {
    pub e: [Var; 5],
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub stages: Vec<Vec<Conv2d>>,
    pub widths: [usize; 5],
}

impl Backbone {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, cfg: &BackboneConfig) -> Result<Self> {
        let mut stages = Vec::with_capacity(5);
        let mut in_c = 3;
        for (s, (&width, &convs)) in cfg.widths.iter().zip(&cfg.convs).enumerate() {
            let mut stage = Vec::with_capacity(convs);
            for k in 0..convs {
                let name = format!("backbone.stage{}.conv{}", s + 1, k + 1);
                stage.push(Conv2d::new(store, rng, &name, in_c, width, 3, Init::Kaiming).ctx(MODULE)?);
                in_c = width;
            }
            stages.push(stage);
        }
        Ok(Self { stages, widths: cfg.widths })
    }

    /// Runs the encoder on `[n, 3, H, W]` images; `H` and `W` must be
    /// positive multiples of 16.
    pub fn encode<T: Element>(&self, g: &Graph<'_, T>, image: Var) -> Result<EncoderPyramid> {
        let s = g.shape(image);
        if s.c != 3 {
            return Err(Error::Input(format!("expected a 3-channel image, got shape {s}")));
        }
        if s.h < 16 || s.w < 16 || !s.h.is_multiple_of(16) || !s.w.is_multiple_of(16) {
            return Err(Error::Input(format!(
                "image size {}x{} is not a positive multiple of 16 in both dimensions",
                s.h, s.w
            )));
        }
        let mut x = image;
        let mut e = [image; 5];
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                x = g.maxpool2(x).ctx(MODULE)?;
            }
            for conv in stage {
                x = conv.forward_relu(g, x).ctx(MODULE)?;
            }
            e[i] = x;
        }
        Ok(EncoderPyramid { e })
    }
}
