//! Boundary protection calibration.
//!
//! Adjacent encoder layers are brought to full resolution and a common
//! width, fused with channel attention, and used to predict a pixel flow
//! that warps the next layer onto the running calibrated map:
//!
//! ```text
//! f1   = Res1(P1)
//! I1   = GS(P2, Flow1(SE1(Cat(f1, P2))))       + f1
//! I2   = GS(P3, Flow2(SE2(Cat(Res2(I1), P3)))) + I1
//! I3   = GS(P4, Flow3(SE3(Cat(Res3(I2), P4)))) + I2
//! ```
//!
//! where `Pk` is the 1×1 projection of `Ek` upsampled to the input size.
//! The flow convolutions start at zero, so every warp is initially the
//! identity.

use sod_tensor::nn::{Conv2d, Init, SeLayer};
use sod_tensor::{Element, Graph, ParamStore, Var};
use rand::Rng;

use crate::backbone::EncoderPyramid;
use crate::error::{Context, Error, Result};

const MODULE: &str = "bpc";

/// `y = x + relu(conv(relu(conv(x))))` with channel-preserving 3×3 convs.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResidualBlock {
    pub fn new<T: Element, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, c: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), c, c, 3, Init::Kaiming).ctx(MODULE)?,
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), c, c, 3, Init::Kaiming).ctx(MODULE)?,
        })
    }

    pub fn forward<T: Element>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        if g.shape(x).c != self.conv1.in_c {
            return Err(Error::Input(format!(
                "residual block expects {} channels, got {}",
                self.conv1.in_c,
                g.shape(x)
            )));
        }
        let h = self.conv1.forward_relu(g, x).ctx(MODULE)?;
        let h = self.conv2.forward_relu(g, h).ctx(MODULE)?;
        g.add(x, h).ctx(MODULE)
    }
}

/// Intermediates of one calibration pass.
#[derive(Debug, Clone)]
pub struct CalibrationState {
    /// projected, upsampled `E1…E4`
    pub projected: [Var; 4],
    /// `Res1(P1)`
    pub f1_res: Var,
    /// input of each level's attention branch: `f1_res`, `Res2(I1)`, `Res3(I2)`
    pub refined: [Var; 3],
    /// `SE(Cat(refined, P_{k+1}))`, `2·c_b` channels
    pub fused: [Var; 3],
    pub flows: [Var; 3],
    /// `I1, I2, I3`; the last one is the module output `M1`
    pub outputs: [Var; 3],
}

impl CalibrationState {
    /// `M1`, the same node as `I3`.
    pub fn m1(&self) -> Var {
        self.outputs[2]
    }
}

#[derive(Debug, Clone)]
pub struct Bpc {
    pub project: [Conv2d; 4],
    pub residual: [ResidualBlock; 3],
    pub attention: [SeLayer; 3],
    pub flow: [Conv2d; 3],
    pub c_b: usize,
}

impl Bpc {
    pub fn new<T: Element, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        widths: &[usize; 5],
        c_b: usize,
    ) -> Result<Self> {
        let mut project = Vec::with_capacity(4);
        for (k, &w) in widths[..4].iter().enumerate() {
            let name = format!("bpc.project{}", k + 1);
            project.push(Conv2d::new(store, rng, &name, w, c_b, 1, Init::Kaiming).ctx(MODULE)?);
        }
        let mut residual = Vec::with_capacity(3);
        let mut attention = Vec::with_capacity(3);
        let mut flow = Vec::with_capacity(3);
        for k in 1..=3 {
            residual.push(ResidualBlock::new(store, rng, &format!("bpc.residual{k}"), c_b)?);
            let r = SeLayer::default_reduction(2 * c_b);
            attention.push(SeLayer::new(store, rng, &format!("bpc.attention{k}"), 2 * c_b, r).ctx(MODULE)?);
            flow.push(Conv2d::new(store, rng, &format!("bpc.flow{k}"), 2 * c_b, 2, 3, Init::Zeros).ctx(MODULE)?);
        }
        Ok(Self {
            project: project.try_into().expect("four projections"),
            residual: residual.try_into().expect("three residual blocks"),
            attention: attention.try_into().expect("three attention layers"),
            flow: flow.try_into().expect("three flow heads"),
            c_b,
        })
    }

    /// 1×1 projection of `E_k` to `c_b` channels at `(h, w)`.
    ///
    /// Projecting before upsampling equals projecting the upsampled map:
    /// bilinear weights sum to one and the projection is affine.
    pub fn project<T: Element>(&self, g: &Graph<'_, T>, k: usize, e: Var, h: usize, w: usize) -> Result<Var> {
        let p = self.project[k].forward(g, e).ctx(MODULE)?;
        g.resize(p, h, w).ctx(MODULE)
    }

    /// `SE(Cat(refined, next))`.
    pub fn afa<T: Element>(&self, g: &Graph<'_, T>, level: usize, refined: Var, next: Var) -> Result<Var> {
        let cat = g.concat(&[refined, next]).ctx(MODULE)?;
        self.attention[level].forward(g, cat).ctx(MODULE)
    }

    pub fn predict_flow<T: Element>(&self, g: &Graph<'_, T>, level: usize, fused: Var) -> Result<Var> {
        self.flow[level].forward(g, fused).ctx(MODULE)
    }

    /// `GS(next, flow) + carry`.
    pub fn calibrate_step<T: Element>(&self, g: &Graph<'_, T>, next: Var, flow: Var, carry: Var) -> Result<Var> {
        let warped = g.grid_sample(next, flow).ctx(MODULE)?;
        g.add(warped, carry).ctx(MODULE)
    }

    pub fn forward<T: Element>(&self, g: &Graph<'_, T>, enc: &EncoderPyramid) -> Result<CalibrationState> {
        let full = g.shape(enc.e[0]);
        let (h, w) = (full.h, full.w);
        let mut projected = [enc.e[0]; 4];
        for (k, p) in projected.iter_mut().enumerate() {
            *p = self.project(g, k, enc.e[k], h, w)?;
        }
        let f1_res = self.residual[0].forward(g, projected[0])?;
        let mut carry = f1_res;
        let mut refined = [f1_res; 3];
        let mut fused = [f1_res; 3];
        let mut flows = [f1_res; 3];
        let mut outputs = [f1_res; 3];
        for level in 0..3 {
            refined[level] = if level == 0 { f1_res } else { self.residual[level].forward(g, carry)? };
            let next = projected[level + 1];
            fused[level] = self.afa(g, level, refined[level], next)?;
            flows[level] = self.predict_flow(g, level, fused[level])?;
            outputs[level] = self.calibrate_step(g, next, flows[level], carry)?;
            carry = outputs[level];
        }
        Ok(CalibrationState { projected, f1_res, refined, fused, flows, outputs })
    }
}
