//! Dual feature feedback: a single-channel boundary/semantic attention map
//! built from the calibrated map `I3` and the deepest encoder layer is fed
//! back into every encoder layer, and the modulated pyramid is decoded.

use sod_tensor::nn::{Conv2d, ConvTranspose2d, Init, SeLayer};
use sod_tensor::{Element, Graph, ParamStore, Var};
use rand::Rng;

use crate::backbone::EncoderPyramid;
use crate::error::{Context, Result};

const MODULE: &str = "dffc";

/// `P` and its single-channel gate `P' = σ(Conv1×1(P))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DualAttention {
    pub p: Var,
    pub gate: Var,
}

#[derive(Debug, Clone)]
pub struct DualFeedback {
    /// `E5 → c_b` before upsampling
    pub reduce: Conv2d,
    /// `P → 1`
    pub squeeze: Conv2d,
    /// one channel gate per encoder layer
    pub se: [SeLayer; 5],
    /// whether `P` contains `I3` (false when calibration is disabled)
    pub with_calibration: bool,
}

impl DualFeedback {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        widths: &[usize; 5],
        c_b: usize,
        with_calibration: bool,
    ) -> Result<Self> {
        let reduce = Conv2d::new(store, rng, "dffc.reduce", widths[4], c_b, 1, Init::Kaiming).ctx(MODULE)?;
        let p_c = if with_calibration { 2 * c_b } else { c_b };
        let squeeze = Conv2d::new(store, rng, "dffc.squeeze", p_c, 1, 1, Init::Kaiming).ctx(MODULE)?;
        let mut se = Vec::with_capacity(5);
        for (i, &w) in widths.iter().enumerate() {
            let name = format!("dffc.se{}", i + 1);
            se.push(SeLayer::new(store, rng, &name, w, SeLayer::default_reduction(w)).ctx(MODULE)?);
        }
        Ok(Self { reduce, squeeze, se: se.try_into().expect("five layers"), with_calibration })
    }

    /// `P = Cat(I3, Up(Conv1×1(E5)))`, `P' = σ(Conv1×1(P))`.
    ///
    /// Without calibration the `I3` half is absent, which is the same as
    /// feeding zeros to it.
    pub fn dual_attention<T: Element>(
        &self,
        g: &Graph<'_, T>,
        i3: Option<Var>,
        e5: Var,
        h: usize,
        w: usize,
    ) -> Result<DualAttention> {
        let sem = self.reduce.forward(g, e5).ctx(MODULE)?;
        let sem = g.resize(sem, h, w).ctx(MODULE)?;
        let p = match i3 {
            Some(i3) => g.concat(&[i3, sem]).ctx(MODULE)?,
            None => sem,
        };
        let gate = g.sigmoid(self.squeeze.forward(g, p).ctx(MODULE)?);
        Ok(DualAttention { p, gate })
    }

    /// The factor `Resize(P') + 1` at the size of `e`.
    pub fn factor<T: Element>(&self, g: &Graph<'_, T>, gate: Var, e: Var) -> Result<Var> {
        let s = g.shape(e);
        let ds = g.resize(gate, s.h, s.w).ctx(MODULE)?;
        Ok(g.add_scalar(ds, T::one()))
    }

    /// `G_i = SE_i((Resize(P') + 1) ⊗ E_i)`.
    pub fn modulate<T: Element>(&self, g: &Graph<'_, T>, layer: usize, gate: Var, e: Var) -> Result<Var> {
        let factor = self.factor(g, gate, e)?;
        let m = g.mul(e, factor).ctx(MODULE)?;
        self.se[layer].forward(g, m).ctx(MODULE)
    }

    pub fn forward<T: Element>(
        &self,
        g: &Graph<'_, T>,
        enc: &EncoderPyramid,
        i3: Option<Var>,
    ) -> Result<(DualAttention, [Var; 5])> {
        let full = g.shape(enc.e[0]);
        let att = self.dual_attention(g, i3, enc.e[4], full.h, full.w)?;
        let mut out = enc.e;
        for i in (0..5).rev() {
            out[i] = self.modulate(g, i, att.gate, enc.e[i])?;
        }
        Ok((att, out))
    }
}

/// Decoder features at scales 1/8, 1/4, 1/2 and 1, all `c_b` wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderPyramid {
    pub d8: Var,
    pub d4: Var,
    pub d2: Var,
    pub d1: Var,
}

impl DecoderPyramid {
    /// Coarse to fine.
    pub fn levels(&self) -> [Var; 4] {
        [self.d8, self.d4, self.d2, self.d1]
    }
}

/// Transposed-convolution decoder with neighbouring-layer fusion.
///
/// Every input layer is projected to `c_b` channels; the deepest one passes
/// a 3×3 conv, and each of four stages upsamples ×2, concatenates the
/// projected skip and applies a 3×3 conv.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub project: [Conv2d; 5],
    pub head: Conv2d,
    pub up: [ConvTranspose2d; 4],
    pub fuse: [Conv2d; 4],
}

impl Decoder {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        widths: &[usize; 5],
        c_b: usize,
    ) -> Result<Self> {
        let mut project = Vec::with_capacity(5);
        for (i, &w) in widths.iter().enumerate() {
            let name = format!("decoder.project{}", i + 1);
            project.push(Conv2d::new(store, rng, &name, w, c_b, 1, Init::Kaiming).ctx(MODULE)?);
        }
        let head = Conv2d::new(store, rng, "decoder.head", c_b, c_b, 3, Init::Kaiming).ctx(MODULE)?;
        let mut up = Vec::with_capacity(4);
        let mut fuse = Vec::with_capacity(4);
        for s in 1..=4 {
            up.push(ConvTranspose2d::new(store, rng, &format!("decoder.up{s}"), c_b, c_b, 2, 2).ctx(MODULE)?);
            let name = format!("decoder.fuse{s}");
            fuse.push(Conv2d::new(store, rng, &name, 2 * c_b, c_b, 3, Init::Kaiming).ctx(MODULE)?);
        }
        Ok(Self {
            project: project.try_into().expect("five projections"),
            head,
            up: up.try_into().expect("four stages"),
            fuse: fuse.try_into().expect("four stages"),
        })
    }

    pub fn forward<T: Element>(&self, g: &Graph<'_, T>, layers: &[Var; 5]) -> Result<DecoderPyramid> {
        let mut skips = *layers;
        for (s, conv) in skips.iter_mut().zip(&self.project) {
            *s = conv.forward(g, *s).ctx(MODULE)?;
        }
        let mut x = self.head.forward_relu(g, skips[4]).ctx(MODULE)?;
        let mut out = [x; 4];
        for stage in 0..4 {
            let up = self.up[stage].forward(g, x).ctx(MODULE)?;
            let cat = g.concat(&[up, skips[3 - stage]]).ctx(MODULE)?;
            x = self.fuse[stage].forward_relu(g, cat).ctx(MODULE)?;
            out[stage] = x;
        }
        Ok(DecoderPyramid { d8: out[0], d4: out[1], d2: out[2], d1: out[3] })
    }
}
