//! Finite-difference gradient suite over every differentiable operation
//! family plus three module-level checks, all in 64-bit mode.
//!
//! Instances are drawn from a seeded generator; inputs to non-smooth
//! operations are kept away from their kinks (ReLU at zero, bilinear knots
//! of the warp, the probability clamp of the losses) so that central
//! differences are meaningful.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sod_tensor::gradcheck::{check_inputs, check_params, check_params_contracted, GradCheckReport, Tolerance};
use sod_tensor::nn::{Conv2d, ConvTranspose2d, Init, SeLayer};
use sod_tensor::{Graph, ParamStore, Tensor, Var};

use crate::afr::Afr;
use crate::backbone::EncoderPyramid;
use crate::bpc::Bpc;
use crate::config::BackboneConfig;
use crate::dffc::{Decoder, DecoderPyramid, DualFeedback};
use crate::error::{Context, Result};

/// Random instances per operation family.
pub const INSTANCES: usize = 5;
/// Spatial side of the module-level checks.
pub const MODULE_SIZE: usize = 32;
/// Entries perturbed per parameter tensor in the module-level checks.
pub const MODULE_SAMPLES: usize = 2;
const MODULE: &str = "gradsuite";

fn random<R: Rng>(shape: [usize; 4], lo: f64, hi: f64, rng: &mut R) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values with magnitude in `[0.05, 1)` and random sign.
fn away_from_zero<R: Rng>(shape: [usize; 4], rng: &mut R) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Weighted sum with fixed, non-uniform weights, so every output entry
/// contributes a distinct amount to the scalar.
pub fn contract(g: &Graph<'_, f64>, y: Var) -> sod_tensor::Result<Var> {
    let s = g.shape(y);
    let w = Tensor::from_fn(s, |[n, c, i, j]| ((n * 7 + c * 5 + i * 3 + j) as f64 * 0.37).sin() + 0.1);
    Ok(g.sum_all(g.mul(y, g.input(w))?))
}

fn inputs_check<F>(label: &str, inputs: &[Tensor<f64>], f: F, rng: &mut ChaCha8Rng) -> Result<GradCheckReport>
where
    F: Fn(&Graph<'_, f64>, &[Var]) -> sod_tensor::Result<Var>,
{
    check_inputs(label, inputs, f, Tolerance::default(), None, rng).ctx(MODULE)
}

/// One merged report per operation family, each over [`INSTANCES`] draws.
pub fn op_families(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut family = |name: &str, f: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<GradCheckReport>| -> Result<()> {
        let mut merged = f(&mut rng)?;
        for _ in 1..INSTANCES {
            merged.merge(f(&mut rng)?);
        }
        merged.label = name.to_string();
        out.push(merged);
        Ok(())
    };

    family("conv2d", &mut |rng| {
        let (stride, pad, dil) = [(1, 1, 1), (2, 1, 1), (1, 2, 2), (1, 0, 1), (2, 3, 3)][rng.gen_range(0..5)];
        let (cin, cout, k) = (rng.gen_range(1..4), rng.gen_range(1..4), [1, 3][rng.gen_range(0..2)]);
        let inputs = [
            random([2, cin, 6, 5], -1.0, 1.0, rng),
            random([cout, cin, k, k], -1.0, 1.0, rng),
            random([1, cout, 1, 1], -1.0, 1.0, rng),
        ];
        inputs_check("conv2d", &inputs, |g, v| contract(g, g.conv2d(v[0], v[1], Some(v[2]), stride, pad, dil)?), rng)
    })?;

    family("conv_transpose2d", &mut |rng| {
        let (stride, k) = (rng.gen_range(1..3), rng.gen_range(1..4));
        let inputs = [
            random([2, 2, 3, 4], -1.0, 1.0, rng),
            random([2, 3, k, k], -1.0, 1.0, rng),
            random([1, 3, 1, 1], -1.0, 1.0, rng),
        ];
        inputs_check("conv_transpose2d", &inputs, |g, v| contract(g, g.conv_transpose2d(v[0], v[1], Some(v[2]), stride)?), rng)
    })?;

    family("bilinear_resize", &mut |rng| {
        let (h, w, oh, ow) = (rng.gen_range(2..7), rng.gen_range(2..7), rng.gen_range(1..13), rng.gen_range(1..13));
        let inputs = [random([2, 2, h, w], -1.0, 1.0, rng)];
        inputs_check("bilinear_resize", &inputs, |g, v| contract(g, g.resize(v[0], oh, ow)?), rng)
    })?;

    family("grid_sample", &mut |rng| {
        // fractional displacements stay off the knots of the interpolant
        let flow = Tensor::from_fn([2, 2, 5, 6], |_| rng.gen_range(-2..3) as f64 + rng.gen_range(0.1..0.9));
        let inputs = [random([2, 3, 5, 6], -1.0, 1.0, rng), flow];
        inputs_check("grid_sample", &inputs, |g, v| contract(g, g.grid_sample(v[0], v[1])?), rng)
    })?;

    family("se_layer", &mut |rng| {
        let c: usize = rng.gen_range(2..6);
        let r = rng.gen_range(1..4);
        let hidden = (c / r).max(1);
        // parameters of a real layer through the store
        let mut store = ParamStore::<f64>::new();
        let se = SeLayer::new(&mut store, rng, "se", c, r).ctx(MODULE)?;
        for id in [se.squeeze.bias, se.excite.bias] {
            let s = store.get(id).shape();
            store.get_mut(id).value = random(s.dims(), -0.5, 0.5, rng);
        }
        let x = random([2, c, 3, 4], -1.0, 1.0, rng);
        let mut report = check_params(
            "se_layer",
            &mut store,
            |g| contract(g, se.forward(g, g.input(x.clone()))?),
            Tolerance::default(),
            None,
            rng,
        )
        .ctx(MODULE)?;
        // input path, with the gate written out from graph operations
        let inputs = [
            x.clone(),
            random([hidden, c, 1, 1], -1.0, 1.0, rng),
            random([1, hidden, 1, 1], -0.5, 0.5, rng),
            random([c, hidden, 1, 1], -1.0, 1.0, rng),
            random([1, c, 1, 1], -0.5, 0.5, rng),
        ];
        report.merge(inputs_check(
            "se_layer",
            &inputs,
            |g, v| {
                let pooled = g.global_avg_pool(v[0]);
                let h = g.relu(g.conv2d(pooled, v[1], Some(v[2]), 1, 0, 1)?);
                let s = g.sigmoid(g.conv2d(h, v[3], Some(v[4]), 1, 0, 1)?);
                contract(g, g.scale_channels(v[0], s)?)
            },
            rng,
        )?);
        Ok(report)
    })?;

    family("maxpool2", &mut |rng| {
        let inputs = [random([1, 2, 4, 6], -1.0, 1.0, rng)];
        inputs_check("maxpool2", &inputs, |g, v| contract(g, g.maxpool2(v[0])?), rng)
    })?;

    family("elementwise", &mut |rng| {
        let c = rng.gen_range(1..4);
        let inputs = [away_from_zero([2, c, 3, 3], rng), random([2, c, 3, 3], -1.0, 1.0, rng), random([2, 1, 3, 3], -1.0, 1.0, rng)];
        let s: f64 = rng.gen_range(-2.0..2.0);
        inputs_check(
            "elementwise",
            &inputs,
            |g, v| {
                let ab = g.mul(g.relu(v[0]), g.sigmoid(v[1]))?;
                let m = g.mul(v[2], ab)?;
                let t = g.mul_scalar(g.add(g.add_scalar(m, s), v[2])?, s);
                let u = g.add(v[1], g.mul(t, v[2])?)?;
                g.add(contract(g, u)?, g.mean_all(g.mul(v[1], v[1])?))
            },
            rng,
        )
    })?;

    family("concat", &mut |rng| {
        let inputs = [
            random([2, rng.gen_range(1..3), 3, 4], -1.0, 1.0, rng),
            random([2, rng.gen_range(1..4), 3, 4], -1.0, 1.0, rng),
            random([2, 1, 3, 4], -1.0, 1.0, rng),
        ];
        inputs_check("concat", &inputs, |g, v| contract(g, g.concat(&[v[0], v[1], v[2]])?), rng)
    })?;

    family("losses", &mut |rng| {
        let shape = [rng.gen_range(1..4), 1, 4, 4];
        let target = Tensor::from_fn(shape, |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
        let logits = random(shape, -3.0, 3.0, rng);
        let t = target.clone();
        let mut report = inputs_check(
            "losses",
            &[logits],
            |g, v| {
                let p = g.sigmoid(v[0]);
                g.add(g.bce(p, t.clone())?, g.iou(p, t.clone())?)
            },
            rng,
        )?;
        let probs = random(shape, 0.05, 0.95, rng);
        report.merge(inputs_check(
            "losses",
            &[probs],
            |g, v| g.add(g.bce(v[0], target.clone())?, g.mul_scalar(g.iou(v[0], target.clone())?, 2.0)),
            rng,
        )?);
        Ok(report)
    })?;

    family("layers", &mut |rng| {
        let mut store = ParamStore::<f64>::new();
        let dil = rng.gen_range(1..3);
        let conv = Conv2d::dilated(&mut store, rng, "conv", 2, 3, 3, dil, Init::Kaiming).ctx(MODULE)?;
        let up = ConvTranspose2d::new(&mut store, rng, "up", 3, 2, 2, 2).ctx(MODULE)?;
        for id in [conv.bias, up.bias] {
            let s = store.get(id).shape();
            store.get_mut(id).value = random(s.dims(), -0.5, 0.5, rng);
        }
        let x = random([1, 2, 5, 5], -1.0, 1.0, rng);
        check_params(
            "layers",
            &mut store,
            |g| contract(g, up.forward(g, g.sigmoid(conv.forward(g, g.input(x.clone()))?))?),
            Tolerance::default(),
            None,
            rng,
        )
        .ctx(MODULE)
    })?;

    Ok(out)
}

/// Replaces every parameter with `U(−a, a)` values scaled by fan-in, so
/// that biases and the zero-initialized flow heads are exercised too.
fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let s = store.get(id).shape();
        let fan_in = (s.c * s.h * s.w).max(1) as f64;
        let a = if s.n == 1 && s.h == 1 && s.w == 1 { 0.2 } else { (3.0 / fan_in).sqrt() };
        store.get_mut(id).value = random(s.dims(), -a, a, rng);
    }
}

fn pyramid_tensors(widths: &[usize; 5], size: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    (0..5).map(|i| random([1, widths[i], size >> i, size >> i], 0.0, 1.0, rng)).collect()
}

fn module_check<F>(label: &str, store: &mut ParamStore<f64>, f: F, rng: &mut ChaCha8Rng) -> Result<GradCheckReport>
where
    F: Fn(&Graph<'_, f64>) -> sod_tensor::Result<Vec<Var>>,
{
    randomize(store, rng);
    check_params_contracted(label, store, f, Tolerance::default(), Some(MODULE_SAMPLES), rng).ctx(MODULE)
}

fn tensor_err(e: crate::Error) -> sod_tensor::TensorError {
    sod_tensor::TensorError::InvalidArgument { op: "module", reason: e.to_string() }
}

/// Parameter gradients through the calibration, the attention-modulated
/// decoder and the refinement module on tiny-preset widths at 32×32.
pub fn module_checks(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe2e);
    let widths = BackboneConfig::tiny().widths;
    let c_b = 8;
    let n = MODULE_SIZE;
    let mut out = Vec::new();

    let enc = pyramid_tensors(&widths, n, &mut rng);
    let mut store = ParamStore::new();
    let bpc = Bpc::new(&mut store, &mut rng, &widths, c_b)?;
    out.push(module_check(
        "bpc_forward",
        &mut store,
        |g| {
            let e: Vec<Var> = enc.iter().map(|t| g.input(t.clone())).collect();
            let state = bpc.forward(g, &EncoderPyramid { e: e.try_into().expect("five") }).map_err(tensor_err)?;
            Ok(state.outputs.to_vec())
        },
        &mut rng,
    )?);

    let i3 = random([1, c_b, n, n], -1.0, 1.0, &mut rng);
    let mut store = ParamStore::new();
    let dffc = DualFeedback::new(&mut store, &mut rng, &widths, c_b, true)?;
    let decoder = Decoder::new(&mut store, &mut rng, &widths, c_b)?;
    out.push(module_check(
        "decode",
        &mut store,
        |g| {
            let e: Vec<Var> = enc.iter().map(|t| g.input(t.clone())).collect();
            let enc = EncoderPyramid { e: e.try_into().expect("five") };
            let (_, modulated) = dffc.forward(g, &enc, Some(g.input(i3.clone()))).map_err(tensor_err)?;
            let dp = decoder.forward(g, &modulated).map_err(tensor_err)?;
            Ok(dp.levels().to_vec())
        },
        &mut rng,
    )?);

    let levels: Vec<Tensor<f64>> = [n / 8, n / 4, n / 2, n].iter().map(|&s| random([1, c_b, s, s], -1.0, 1.0, &mut rng)).collect();
    let mut store = ParamStore::new();
    let afr = Afr::new(&mut store, &mut rng, c_b, true)?;
    out.push(module_check(
        "afr_forward",
        &mut store,
        |g| {
            let v: Vec<Var> = levels.iter().map(|t| g.input(t.clone())).collect();
            let dp = DecoderPyramid { d8: v[0], d4: v[1], d2: v[2], d1: v[3] };
            let state = afr.forward(g, &dp, Some(g.input(i3.clone()))).map_err(tensor_err)?;
            Ok(vec![state.fused, state.refined_logit])
        },
        &mut rng,
    )?);
    Ok(out)
}

/// Operation families followed by the module-level checks.
pub fn run(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut reports = op_families(seed)?;
    reports.extend(module_checks(seed)?);
    Ok(reports)
}
