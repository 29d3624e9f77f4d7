//! Adaptive feedback refinement.
//!
//! The full-resolution decoder output is resized back onto the three
//! coarser decoder scales, neighbouring scales are cross-gated by each
//! other's single-channel attention maps, a dense dilated chain widens the
//! context, and the result is fused with the decoder output and the
//! calibrated boundary map into the final logit map.

use sod_tensor::nn::{Conv2d, Init};
use sod_tensor::{Element, Graph, ParamStore, Var};
use rand::Rng;

use crate::dffc::DecoderPyramid;
use crate::error::{Context, Error, Result};

const MODULE: &str = "afr";

/// Dilation rates of the context chain.
pub const DILATIONS: [usize; 4] = [1, 2, 3, 4];

/// `fb_s` (the resized `d1`) and `f_s = fb_s + Conv1×1(d_s)` for scales
/// 1/8, 1/4, 1/2, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackSet {
    pub fb: [Var; 3],
    pub f: [Var; 3],
}

#[derive(Debug, Clone)]
pub struct Feedback {
    pub lateral: [Conv2d; 3],
}

impl Feedback {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, c_b: usize) -> Result<Self> {
        let mut lateral = Vec::with_capacity(3);
        for s in [8, 4, 2] {
            let name = format!("afr.feedback{s}");
            lateral.push(Conv2d::new(store, rng, &name, c_b, c_b, 1, Init::Kaiming).ctx(MODULE)?);
        }
        Ok(Self { lateral: lateral.try_into().expect("three scales") })
    }

    pub fn forward<T: Element>(&self, g: &Graph<'_, T>, dp: &DecoderPyramid) -> Result<FeedbackSet> {
        let mut fb = [dp.d1; 3];
        let mut f = [dp.d1; 3];
        for (k, d) in [dp.d8, dp.d4, dp.d2].into_iter().enumerate() {
            let s = g.shape(d);
            fb[k] = g.resize(dp.d1, s.h, s.w).ctx(MODULE)?;
            let lateral = self.lateral[k].forward(g, d).ctx(MODULE)?;
            f[k] = g.add(fb[k], lateral).ctx(MODULE)?;
        }
        Ok(FeedbackSet { fb, f })
    }
}

/// Intermediates of one cross-refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossState {
    /// the coarse operand resized onto the fine grid
    pub coarse_up: Var,
    pub a_coarse: Var,
    pub a_fine: Var,
    pub c1: Var,
    pub c2: Var,
    pub s: Var,
}

/// Sigmoid attention map: 3×3 conv + ReLU, then 3×3 conv to one channel.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub hidden: Conv2d,
    pub out: Conv2d,
}

impl AttentionMap {
    fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            hidden: Conv2d::new(store, rng, &format!("{name}.hidden"), c, c, 3, Init::Kaiming).ctx(MODULE)?,
            out: Conv2d::new(store, rng, &format!("{name}.out"), c, 1, 3, Init::Kaiming).ctx(MODULE)?,
        })
    }

    pub fn forward<T: Element>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.hidden.forward_relu(g, x).ctx(MODULE)?;
        Ok(g.sigmoid(self.out.forward(g, h).ctx(MODULE)?))
    }
}

/// Mutual gating of two neighbouring scales:
///
/// ```text
/// c1 = Conv((A_coarse + 1) ⊗ Conv(x_fine))
/// c2 = Conv((A_fine + 1) ⊗ Conv(x_coarse↑))
/// s  = Conv1×1(Cat(c1, c2))
/// ```
#[derive(Debug, Clone)]
pub struct IirCross {
    pub att_coarse: AttentionMap,
    pub att_fine: AttentionMap,
    pub pre_fine: Conv2d,
    pub pre_coarse: Conv2d,
    pub post1: Conv2d,
    pub post2: Conv2d,
    pub merge: Conv2d,
}

impl IirCross {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, c: usize) -> Result<Self> {
        let conv = |store: &mut ParamStore<T>, rng: &mut R, part: &str, i: usize, o: usize, k: usize| {
            Conv2d::new(store, rng, &format!("{name}.{part}"), i, o, k, Init::Kaiming).ctx(MODULE)
        };
        Ok(Self {
            att_coarse: AttentionMap::new(store, rng, &format!("{name}.att_coarse"), c)?,
            att_fine: AttentionMap::new(store, rng, &format!("{name}.att_fine"), c)?,
            pre_fine: conv(store, rng, "pre_fine", c, c, 3)?,
            pre_coarse: conv(store, rng, "pre_coarse", c, c, 3)?,
            post1: conv(store, rng, "post1", c, c, 3)?,
            post2: conv(store, rng, "post2", c, c, 3)?,
            merge: conv(store, rng, "merge", 2 * c, c, 1)?,
        })
    }

    /// `x_fine` must be exactly twice the size of `x_coarse`.
    pub fn forward<T: Element>(&self, g: &Graph<'_, T>, x_coarse: Var, x_fine: Var) -> Result<CrossState> {
        let (sc, sf) = (g.shape(x_coarse), g.shape(x_fine));
        if sf.h != 2 * sc.h || sf.w != 2 * sc.w {
            return Err(Error::Input(format!(
                "cross refinement needs the fine operand one octave above the coarse one, got {sc} and {sf}"
            )));
        }
        let coarse_up = g.resize(x_coarse, sf.h, sf.w).ctx(MODULE)?;
        let a_coarse = self.att_coarse.forward(g, coarse_up)?;
        let a_fine = self.att_fine.forward(g, x_fine)?;
        let gain_c = g.add_scalar(a_coarse, T::one());
        let gain_f = g.add_scalar(a_fine, T::one());
        let fine = self.pre_fine.forward_relu(g, x_fine).ctx(MODULE)?;
        let coarse = self.pre_coarse.forward_relu(g, coarse_up).ctx(MODULE)?;
        let c1 = self.post1.forward_relu(g, g.mul(fine, gain_c).ctx(MODULE)?).ctx(MODULE)?;
        let c2 = self.post2.forward_relu(g, g.mul(coarse, gain_f).ctx(MODULE)?).ctx(MODULE)?;
        let s = self.merge.forward(g, g.concat(&[c1, c2]).ctx(MODULE)?).ctx(MODULE)?;
        Ok(CrossState { coarse_up, a_coarse, a_fine, c1, c2, s })
    }
}

/// Four dilated 3×3 convs (rates 1…4) with a skip from the chain input
/// after each one.
#[derive(Debug, Clone)]
pub struct DenseDilated {
    pub convs: [Conv2d; 4],
}

impl DenseDilated {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, c: usize) -> Result<Self> {
        let mut convs = Vec::with_capacity(4);
        for r in DILATIONS {
            let name = format!("afr.dilated{r}");
            convs.push(Conv2d::dilated(store, rng, &name, c, c, 3, r, Init::Kaiming).ctx(MODULE)?);
        }
        Ok(Self { convs: convs.try_into().expect("four rates") })
    }

    /// Returns every step's output; the last is the chain result.
    pub fn forward<T: Element>(&self, g: &Graph<'_, T>, x0: Var) -> Result<[Var; 4]> {
        let mut prev = x0;
        let mut steps = [x0; 4];
        for (k, conv) in self.convs.iter().enumerate() {
            let y = conv.forward_relu(g, prev).ctx(MODULE)?;
            prev = g.add(y, x0).ctx(MODULE)?;
            steps[k] = prev;
        }
        Ok(steps)
    }

    /// Pixels an impulse can reach along one axis: `Σ rates`.
    pub fn radius() -> usize {
        DILATIONS.iter().sum()
    }
}

/// Intermediates and supervised logits of one refinement pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AfrState {
    pub feedback: FeedbackSet,
    pub cross1: CrossState,
    pub cross2: CrossState,
    pub refined: Var,
    /// logit head on `refined`, at the input size
    pub refined_logit: Var,
    /// final logit map at the input size
    pub fused: Var,
}

#[derive(Debug, Clone)]
pub struct Afr {
    pub feedback: Feedback,
    pub cross: [IirCross; 2],
    pub dilated: DenseDilated,
    pub refined_head: Conv2d,
    pub fuse: Conv2d,
    pub with_calibration: bool,
}

impl Afr {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        c_b: usize,
        with_calibration: bool,
    ) -> Result<Self> {
        let feedback = Feedback::new(store, rng, c_b)?;
        let cross = [IirCross::new(store, rng, "afr.cross1", c_b)?, IirCross::new(store, rng, "afr.cross2", c_b)?];
        let dilated = DenseDilated::new(store, rng, c_b)?;
        let refined_head = Conv2d::new(store, rng, "afr.refined_head", c_b, 1, 1, Init::Kaiming).ctx(MODULE)?;
        let fuse_in = if with_calibration { 3 * c_b } else { 2 * c_b };
        let fuse = Conv2d::new(store, rng, "afr.fuse", fuse_in, 1, 1, Init::Kaiming).ctx(MODULE)?;
        Ok(Self { feedback, cross, dilated, refined_head, fuse, with_calibration })
    }

    pub fn forward<T: Element>(&self, g: &Graph<'_, T>, dp: &DecoderPyramid, i3: Option<Var>) -> Result<AfrState> {
        let feedback = self.feedback.forward(g, dp)?;
        let [f8, f4, f2] = feedback.f;
        let cross1 = self.cross[0].forward(g, f8, f4)?;
        let cross2 = self.cross[1].forward(g, cross1.s, f2)?;
        let refined = self.dilated.forward(g, cross2.s)?[3];
        let full = g.shape(dp.d1);
        let refined_up = g.resize(refined, full.h, full.w).ctx(MODULE)?;
        let mut parts = vec![dp.d1];
        match (self.with_calibration, i3) {
            (true, Some(i3)) => parts.push(i3),
            (false, None) => {}
            _ => return Err(Error::Input("calibrated map presence does not match the refinement wiring".into())),
        }
        parts.push(refined_up);
        let fused = self.fuse.forward(g, g.concat(&parts).ctx(MODULE)?).ctx(MODULE)?;
        let head = self.refined_head.forward(g, refined).ctx(MODULE)?;
        let refined_logit = g.resize(head, full.h, full.w).ctx(MODULE)?;
        Ok(AfrState { feedback, cross1, cross2, refined, refined_logit, fused })
    }
}
