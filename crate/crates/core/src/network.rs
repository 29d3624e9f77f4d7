//! Full network: encoder, boundary calibration, dual feedback with the
//! decoder, and adaptive refinement, each switchable for ablations.
//!
//! Fallback wiring when modules are disabled:
//! - without calibration, no `I3` exists; the attention map and the final
//!   fusion are built from their remaining inputs;
//! - without dual feedback the decoder consumes the raw encoder layers;
//! - without refinement the outputs are the four decoder heads, the last
//!   (full-resolution) one being final; if calibration is on, that head
//!   reads `Cat(d1, I3)` so the calibrated map still reaches the output.

use std::collections::BTreeMap;

use sod_tensor::nn::{Conv2d, Init};
use sod_tensor::{Element, ExecMode, Graph, ParamStore, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::afr::{Afr, AfrState};
use crate::backbone::{Backbone, EncoderPyramid};
use crate::bpc::{Bpc, CalibrationState};
use crate::config::ModelConfig;
use crate::dffc::{Decoder, DecoderPyramid, DualAttention, DualFeedback};
use crate::error::{Context, Error, Result};

const MODULE: &str = "network";

/// Every intermediate of one forward pass, plus the supervised logits.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    pub encoder: EncoderPyramid,
    pub calibration: Option<CalibrationState>,
    pub attention: Option<DualAttention>,
    /// decoder inputs: `G_i` with dual feedback, `E_i` without
    pub modulated: [Var; 5],
    pub decoder: DecoderPyramid,
    pub refinement: Option<AfrState>,
    /// supervised single-channel logit maps at the input size; six with
    /// refinement (`d8, d4, d2, d1, refined, fused`), four without
    pub logits: Vec<Var>,
    /// saliency probabilities, `σ` of the last logit map
    pub saliency: Var,
}

impl ForwardOutputs {
    pub fn final_logit(&self) -> Var {
        *self.logits.last().expect("at least one output")
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub bpc: Option<Bpc>,
    pub dffc: Option<DualFeedback>,
    pub decoder: Decoder,
    pub afr: Option<Afr>,
    /// logit heads on `d8, d4, d2, d1`
    pub heads: [Conv2d; 4],
}

impl Network {
    /// Creates the parameters of `config` in `store`.
    pub fn new<T: Element, R: Rng>(config: &ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (widths, c_b) = (&config.backbone.widths, config.c_b);
        let backbone = Backbone::new(store, rng, &config.backbone)?;
        let bpc = config.use_bpc.then(|| Bpc::new(store, rng, widths, c_b)).transpose()?;
        let dffc = config
            .use_dffc
            .then(|| DualFeedback::new(store, rng, widths, c_b, config.use_bpc))
            .transpose()?;
        let decoder = Decoder::new(store, rng, widths, c_b)?;
        let afr = config.use_afr.then(|| Afr::new(store, rng, c_b, config.use_bpc)).transpose()?;
        let d1_in = if !config.use_afr && config.use_bpc { 2 * c_b } else { c_b };
        let mut heads = Vec::with_capacity(4);
        for (name, c) in [("head.d8", c_b), ("head.d4", c_b), ("head.d2", c_b), ("head.d1", d1_in)] {
            heads.push(Conv2d::new(store, rng, name, c, 1, 1, Init::Kaiming).ctx(MODULE)?);
        }
        Ok(Self { config: config.clone(), backbone, bpc, dffc, decoder, afr, heads: heads.try_into().expect("four") })
    }

    /// Builds a network and a fresh parameter store from `seed`.
    pub fn init<T: Element>(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Self::new(config, &mut store, &mut rng)?;
        Ok((net, store))
    }

    /// Number of supervised outputs.
    pub fn num_outputs(&self) -> usize {
        if self.afr.is_some() {
            6
        } else {
            4
        }
    }

    pub fn forward<T: Element>(&self, g: &Graph<'_, T>, image: Var) -> Result<ForwardOutputs> {
        let s = g.shape(image);
        let encoder = self.backbone.encode(g, image)?;
        let calibration = self.bpc.as_ref().map(|b| b.forward(g, &encoder)).transpose()?;
        let i3 = calibration.as_ref().map(|c| c.m1());
        let (attention, modulated) = match &self.dffc {
            Some(d) => {
                let (att, layers) = d.forward(g, &encoder, i3)?;
                (Some(att), layers)
            }
            None => (None, encoder.e),
        };
        let decoder = self.decoder.forward(g, &modulated)?;
        let refinement = self.afr.as_ref().map(|a| a.forward(g, &decoder, i3)).transpose()?;

        let mut logits = Vec::with_capacity(self.num_outputs());
        for (k, d) in decoder.levels().into_iter().enumerate() {
            let input = match (k, &refinement, i3) {
                (3, None, Some(i3)) => g.concat(&[d, i3]).ctx(MODULE)?,
                _ => d,
            };
            let logit = self.heads[k].forward(g, input).ctx(MODULE)?;
            logits.push(g.resize(logit, s.h, s.w).ctx(MODULE)?);
        }
        if let Some(r) = &refinement {
            logits.push(r.refined_logit);
            logits.push(r.fused);
        }
        let saliency = g.sigmoid(*logits.last().expect("outputs"));
        Ok(ForwardOutputs { encoder, calibration, attention, modulated, decoder, refinement, logits, saliency })
    }

    /// Saliency probabilities for a `[n, 3, H, W]` batch.
    pub fn predict(&self, store: &ParamStore<f32>, images: Tensor<f32>) -> Result<Tensor<f32>> {
        let g = Graph::new(store);
        let x = g.input(images);
        let out = self.forward(&g, x)?;
        let p = (*g.value(out.saliency)).clone();
        Ok(p)
    }
}

/// Exact number of learned scalars of `config`.
pub fn count_params(config: &ModelConfig) -> Result<usize> {
    // shapes do not depend on the generator; a fixed seed keeps this cheap to reason about
    let (_, store) = Network::init::<f32>(config, 0)?;
    Ok(store.num_scalars())
}

/// Learned scalars grouped by the first component of the parameter name.
pub fn params_by_module(config: &ModelConfig) -> Result<BTreeMap<String, usize>> {
    let (_, store) = Network::init::<f32>(config, 0)?;
    let mut out = BTreeMap::new();
    for (_, p) in store.iter() {
        let module = p.name.split('.').next().unwrap_or("").to_string();
        *out.entry(module).or_insert(0) += p.value.len();
    }
    Ok(out)
}

/// Floating-point operation estimate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopReport {
    /// all recorded operations
    pub total: u64,
    /// convolutions and transposed convolutions only
    pub conv: u64,
    /// per operation kind
    pub by_op: BTreeMap<&'static str, u64>,
    /// every executed operation in order: `(kind, output shape, flops)`
    pub layers: Vec<(&'static str, Shape, u64)>,
}

/// Counts FLOPs of a single-image forward pass at `h × w` without
/// evaluating any data. One multiply-add counts as two FLOPs.
pub fn estimate_flops(config: &ModelConfig, h: usize, w: usize) -> Result<FlopReport> {
    let (net, store) = Network::init::<f32>(config, 0)?;
    let g = Graph::with_mode(&store, ExecMode::ShapeOnly);
    let x = g.input(Tensor::zeros([1, 3, h, w]));
    net.forward(&g, x)?;
    let costs = g.costs();
    let mut by_op = BTreeMap::new();
    let mut conv = 0;
    let mut layers = Vec::with_capacity(costs.len());
    for c in costs.iter() {
        *by_op.entry(c.op).or_insert(0) += c.flops;
        if c.op.starts_with("conv") {
            conv += c.flops;
        }
        layers.push((c.op, c.output, c.flops));
    }
    Ok(FlopReport { total: g.flops(), conv, by_op, layers })
}

/// Rejects an image batch whose spatial size differs from the configured
/// input size.
pub fn check_input_size(config: &ModelConfig, s: Shape) -> Result<()> {
    if s.h != config.input_size || s.w != config.input_size {
        return Err(Error::Input(format!(
            "batch {s} does not match the configured input size {0}x{0}",
            config.input_size
        )));
    }
    Ok(())
}
