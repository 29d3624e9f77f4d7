//! Boundary calibration, dual feedback, decoder and refinement modules in
//! 64-bit mode: zero-weight identities, structural bounds, loop oracles and
//! gradient reachability.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sod_net::afr::{Afr, DenseDilated, Feedback, IirCross};
use sod_net::backbone::{Backbone, EncoderPyramid};
use sod_net::bpc::{Bpc, ResidualBlock};
use sod_net::dffc::{Decoder, DecoderPyramid, DualFeedback};
use sod_net::BackboneConfig;
use sod_tensor::gradcheck::contraction_weights;
use sod_tensor::nn::{Conv2d, SeLayer};
use sod_tensor::{ExecMode, Graph, ParamStore, Shape, Tensor, Var};

const TINY: [usize; 5] = [8, 16, 32, 64, 64];
const C_B: usize = 8;

fn random(shape: [usize; 4], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

fn zero_conv(store: &mut ParamStore<f64>, conv: &Conv2d) {
    store.get_mut(conv.weight).value.fill(0.0);
    store.get_mut(conv.bias).value.fill(0.0);
}

/// Random encoder features with the tiny widths at input size `size`.
fn encoder<'g>(g: &Graph<'g, f64>, size: usize, rng: &mut ChaCha8Rng) -> EncoderPyramid {
    let e: Vec<Var> = (0..5).map(|i| g.input(random([1, TINY[i], size >> i, size >> i], 1.0, rng))).collect();
    EncoderPyramid { e: e.try_into().expect("five layers") }
}

fn decoder_pyramid<'g>(g: &Graph<'g, f64>, size: usize, rng: &mut ChaCha8Rng) -> DecoderPyramid {
    let mut level = |s: usize| g.input(random([1, C_B, size / s, size / s], 1.0, rng));
    DecoderPyramid { d8: level(8), d4: level(4), d2: level(2), d1: level(1) }
}

/// Gradient of `Σ w ⊙ y` with fixed non-uniform weights.
fn contract(g: &Graph<'_, f64>, ys: &[Var]) -> Var {
    let mut total = None;
    for &y in ys {
        let w = g.input(contraction_weights(g.shape(y)));
        let t = g.sum_all(g.mul(y, w).unwrap());
        total = Some(match total {
            Some(acc) => g.add(acc, t).unwrap(),
            None => t,
        });
    }
    total.unwrap()
}

fn assert_all_params_reached(store: &ParamStore<f64>, grads: &sod_tensor::Gradients<f64>, prefix: &str) {
    let mut seen = vec![false; store.len()];
    for (id, t) in grads.param_grads() {
        seen[id.index()] = t.data().iter().any(|&v| v != 0.0);
    }
    for (id, p) in store.iter() {
        if p.name.starts_with(prefix) {
            assert!(seen[id.index()], "no gradient reaches {}", p.name);
        }
    }
}

// ---- boundary calibration ----

#[test]
fn zero_residual_branch_is_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for c in [1, 4, 8] {
        let mut store = ParamStore::<f64>::new();
        let block = ResidualBlock::new(&mut store, &mut rng, "res", c).unwrap();
        zero_conv(&mut store, &block.conv1);
        zero_conv(&mut store, &block.conv2);
        let g = Graph::new(&store);
        let x = g.input(random([2, c, 5, 7], 1.0, &mut rng));
        let y = block.forward(&g, x).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }
    let mut store = ParamStore::<f64>::new();
    let block = ResidualBlock::new(&mut store, &mut rng, "res", 4).unwrap();
    let g = Graph::new(&store);
    assert!(block.forward(&g, g.input(Tensor::zeros([1, 3, 4, 4]))).is_err());
}

#[test]
fn residual_block_preserves_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for c in [2, 5, 8] {
        let mut store = ParamStore::<f64>::new();
        let block = ResidualBlock::new(&mut store, &mut rng, "res", c).unwrap();
        let g = Graph::new(&store);
        let y = block.forward(&g, g.input(random([1, c, 6, 3], 1.0, &mut rng))).unwrap();
        assert_eq!(g.shape(y), Shape::from([1, c, 6, 3]));
    }
}

#[test]
fn projection_harmonizes_width_and_identity_projection_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let bpc = Bpc::new(&mut store, &mut rng, &[64, 128, 256, 512, 512], 64).unwrap();
    let g = Graph::with_mode(&store, ExecMode::ShapeOnly);
    let p = bpc.project(&g, 1, g.input(Tensor::zeros([1, 128, 8, 8])), 8, 8).unwrap();
    assert_eq!(g.shape(p), Shape::from([1, 64, 8, 8]));

    let mut store = ParamStore::<f64>::new();
    let bpc = Bpc::new(&mut store, &mut rng, &[C_B, 16, 32, 64, 64], C_B).unwrap();
    let eye = Tensor::from_fn([C_B, C_B, 1, 1], |[o, c, _, _]| if o == c { 1.0 } else { 0.0 });
    store.get_mut(bpc.project[0].weight).value = eye;
    store.get_mut(bpc.project[0].bias).value.fill(0.0);
    let g = Graph::new(&store);
    let x = g.input(random([1, C_B, 6, 6], 1.0, &mut rng));
    let y = bpc.project(&g, 0, x, 6, 6).unwrap();
    assert_eq!(g.value(y).data(), g.value(x).data());
}

#[test]
fn attention_fusion_doubles_the_width_and_never_amplifies() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (widths, c_b) in [([64, 128, 256, 512, 512], 64), (TINY, C_B)] {
        let mut store = ParamStore::<f64>::new();
        let bpc = Bpc::new(&mut store, &mut rng, &widths, c_b).unwrap();
        let g = Graph::new(&store);
        let a = g.input(random([1, c_b, 4, 4], 2.0, &mut rng));
        let b = g.input(random([1, c_b, 4, 4], 2.0, &mut rng));
        let fa = bpc.afa(&g, 0, a, b).unwrap();
        assert_eq!(g.shape(fa), Shape::from([1, 2 * c_b, 4, 4]));
        let cat = g.concat(&[a, b]).unwrap();
        for (y, x) in g.value(fa).data().iter().zip(g.value(cat).data()) {
            assert!(y.abs() <= x.abs());
        }
        assert!(g.concat(&[a, g.input(Tensor::zeros([1, c_b, 4, 5]))]).is_err());
    }
}

#[test]
fn flow_heads_start_at_zero_with_two_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let bpc = Bpc::new(&mut store, &mut rng, &TINY, C_B).unwrap();
    let g = Graph::new(&store);
    for level in 0..3 {
        let flow = bpc.predict_flow(&g, level, g.input(random([1, 2 * C_B, 8, 8], 3.0, &mut rng))).unwrap();
        assert_eq!(g.shape(flow), Shape::from([1, 2, 8, 8]));
        assert!(g.value(flow).data().iter().all(|&v| v == 0.0));
    }
}

/// Bilinear sample at `(j + Δx, i + Δy)` clamped into the map.
fn warp_oracle(x: &Tensor<f64>, flow: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(s, |[n, c, i, j]| {
        let sx = (j as f64 + flow.at(n, 0, i, j)).clamp(0.0, (s.w - 1) as f64);
        let sy = (i as f64 + flow.at(n, 1, i, j)).clamp(0.0, (s.h - 1) as f64);
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(s.w - 1), (y0 + 1).min(s.h - 1));
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let top = (1.0 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1);
        let bot = (1.0 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1);
        (1.0 - fy) * top + fy * bot
    })
}

#[test]
fn calibrate_step_warps_then_adds() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::<f64>::new();
    let bpc = Bpc::new(&mut store, &mut rng, &TINY, C_B).unwrap();
    let g = Graph::new(&store);
    let next_t = random([1, C_B, 9, 7], 1.0, &mut rng);
    let carry_t = random([1, C_B, 9, 7], 1.0, &mut rng);
    let (next, carry) = (g.input(next_t.clone()), g.input(carry_t.clone()));

    let zero = g.input(Tensor::zeros([1, 2, 9, 7]));
    let out = g.value(bpc.calibrate_step(&g, next, zero, carry).unwrap());
    let sum: Vec<f64> = next_t.data().iter().zip(carry_t.data()).map(|(a, b)| a + b).collect();
    assert_eq!(out.data(), &sum[..]);
    let no_carry = g.input(Tensor::zeros([1, C_B, 9, 7]));
    assert_eq!(g.value(bpc.calibrate_step(&g, next, zero, no_carry).unwrap()).data(), next_t.data());

    let flow_t = random([1, 2, 9, 7], 3.0, &mut rng);
    let out = g.value(bpc.calibrate_step(&g, next, g.input(flow_t.clone()), carry).unwrap());
    let oracle = warp_oracle(&next_t, &flow_t);
    for (k, (a, (w, c))) in out.data().iter().zip(oracle.data().iter().zip(carry_t.data())).enumerate() {
        assert!((a - (w + c)).abs() < 1e-12, "entry {k}");
    }
    assert!(bpc.calibrate_step(&g, next, g.input(Tensor::zeros([1, 2, 9, 6])), carry).is_err());
}

#[test]
fn calibration_at_initialization_is_additive_fusion_at_full_resolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f64>::new();
    let bpc = Bpc::new(&mut store, &mut rng, &TINY, C_B).unwrap();
    let g = Graph::new(&store);
    let enc = encoder(&g, 64, &mut rng);
    let st = bpc.forward(&g, &enc).unwrap();
    for v in st.projected.iter().chain(&st.outputs).chain(&st.refined).chain([&st.f1_res]) {
        assert_eq!(g.shape(*v), Shape::from([1, C_B, 64, 64]));
    }
    for (k, f) in st.fused.iter().enumerate() {
        assert_eq!(g.shape(*f), Shape::from([1, 2 * C_B, 64, 64]));
        assert_eq!(g.shape(st.flows[k]), Shape::from([1, 2, 64, 64]));
    }
    let mut carry = (*g.value(st.f1_res)).clone();
    for k in 0..3 {
        let next = g.value(st.projected[k + 1]);
        let expected: Vec<f64> = next.data().iter().zip(carry.data()).map(|(a, b)| a + b).collect();
        assert_eq!(g.value(st.outputs[k]).data(), &expected[..], "I{}", k + 1);
        carry = (*g.value(st.outputs[k])).clone();
    }
    assert_eq!(st.m1(), st.outputs[2]);
}

#[test]
fn calibration_gradients_reach_encoder_layers_and_every_parameter() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::<f64>::new();
    let bpc = Bpc::new(&mut store, &mut rng, &TINY, C_B).unwrap();
    // move the flow heads off zero so the warp is not a pure identity
    for f in &bpc.flow {
        let s = store.get(f.weight).shape();
        store.get_mut(f.weight).value = random(s.dims(), 0.05, &mut rng);
    }
    // a single-unit SE bottleneck can start dead; keep it active
    for a in &bpc.attention {
        store.get_mut(a.squeeze.bias).value.fill(10.0);
    }
    let g = Graph::new(&store);
    let enc = encoder(&g, 32, &mut rng);
    let mut inputs = enc.e;
    for v in inputs.iter_mut().take(4) {
        *v = g.variable((*g.value(*v)).clone());
    }
    let st = bpc.forward(&g, &EncoderPyramid { e: inputs }).unwrap();
    let grads = g.backward(contract(&g, &st.outputs)).unwrap();
    for (k, &e) in inputs[..4].iter().enumerate() {
        let gr = grads.get(e).unwrap_or_else(|| panic!("E{} unreached", k + 1));
        assert!(gr.data().iter().any(|&v| v != 0.0));
    }
    assert_all_params_reached(&store, &grads, "bpc.");
}

// ---- dual feedback and decoder ----

#[test]
fn zero_squeeze_gives_a_half_gate_and_the_stated_widths() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::<f64>::new();
    let dffc = DualFeedback::new(&mut store, &mut rng, &TINY, C_B, true).unwrap();
    zero_conv(&mut store, &dffc.squeeze);
    let g = Graph::new(&store);
    let i3 = g.input(random([1, C_B, 32, 32], 1.0, &mut rng));
    let e5 = g.input(random([1, 64, 2, 2], 1.0, &mut rng));
    let att = dffc.dual_attention(&g, Some(i3), e5, 32, 32).unwrap();
    assert_eq!(g.shape(att.p), Shape::from([1, 2 * C_B, 32, 32]));
    assert_eq!(g.shape(att.gate), Shape::from([1, 1, 32, 32]));
    assert!(g.value(att.gate).data().iter().all(|&v| v == 0.5));
}

#[test]
fn vanishing_gate_reduces_modulation_to_the_channel_gate() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::<f64>::new();
    let dffc = DualFeedback::new(&mut store, &mut rng, &TINY, C_B, true).unwrap();
    let g = Graph::new(&store);
    let gate = g.input(Tensor::full([1, 1, 16, 16], 1e-300));
    for (i, &width) in TINY.iter().enumerate() {
        let e = g.input(random([1, width, 16 >> i, 16 >> i], 1.0, &mut rng));
        let gi = g.value(dffc.modulate(&g, i, gate, e).unwrap());
        let se = g.value(dffc.se[i].forward(&g, e).unwrap());
        assert_eq!(gi.data(), se.data(), "layer {}", i + 1);
    }
}

#[test]
fn modulation_broadcasts_one_gate_over_every_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::<f64>::new();
    let dffc = DualFeedback::new(&mut store, &mut rng, &[3, 16, 32, 64, 64], C_B, true).unwrap();
    let g = Graph::new(&store);
    let e_t = random([1, 3, 8, 8], 1.0, &mut rng);
    let gate_t = Tensor::from_fn([1, 1, 8, 8], |_| rng.gen_range(0.0..1.0));
    // at equal size the resize is the identity, bitwise
    let factor = g.value(dffc.factor(&g, g.input(gate_t.clone()), g.input(e_t.clone())).unwrap());
    assert_eq!(factor.data(), gate_t.map(|v| v + 1.0).data());
    let oracle = Tensor::from_fn([1, 3, 8, 8], |[n, c, i, j]| e_t.at(n, c, i, j) * (gate_t.at(n, 0, i, j) + 1.0));
    let expected = g.value(dffc.se[0].forward(&g, g.input(oracle)).unwrap());
    let got = g.value(dffc.modulate(&g, 0, g.input(gate_t), g.input(e_t)).unwrap());
    assert_eq!(got.data(), expected.data());
}

#[test]
fn decoder_scale_ladder_at_64() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::<f64>::new();
    let dec = Decoder::new(&mut store, &mut rng, &TINY, C_B).unwrap();
    let g = Graph::new(&store);
    let enc = encoder(&g, 64, &mut rng);
    let dp = dec.forward(&g, &enc.e).unwrap();
    for (v, s) in dp.levels().iter().zip([8, 16, 32, 64]) {
        assert_eq!(g.shape(*v), Shape::from([1, C_B, s, s]));
    }
    let again = dec.forward(&g, &enc.e).unwrap();
    assert_eq!(g.value(again.d1).data(), g.value(dp.d1).data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn modulation_factor_lies_strictly_between_one_and_two(seed in any::<u64>(), scale in 0.1f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let dffc = DualFeedback::new(&mut store, &mut rng, &TINY, C_B, true).unwrap();
        let g = Graph::new(&store);
        let enc = encoder(&g, 16, &mut rng);
        let i3 = g.input(random([1, C_B, 16, 16], scale, &mut rng));
        let att = dffc.dual_attention(&g, Some(i3), enc.e[4], 16, 16).unwrap();
        for &e in &enc.e {
            let f = g.value(dffc.factor(&g, att.gate, e).unwrap());
            prop_assert!(f.data().iter().all(|&v| v > 1.0 && v < 2.0));
        }
    }

    #[test]
    fn cross_refinement_gains_lie_strictly_between_one_and_two(seed in any::<u64>(), scale in 0.1f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let cross = IirCross::new(&mut store, &mut rng, "cross", C_B).unwrap();
        let g = Graph::new(&store);
        let coarse = g.input(random([1, C_B, 4, 4], scale, &mut rng));
        let fine = g.input(random([1, C_B, 8, 8], scale, &mut rng));
        let st = cross.forward(&g, coarse, fine).unwrap();
        for a in [st.a_coarse, st.a_fine] {
            let gain = g.value(g.add_scalar(a, 1.0));
            prop_assert!(gain.data().iter().all(|&v| v > 1.0 && v < 2.0));
        }
    }

    #[test]
    fn decoder_ladder_holds_for_every_valid_size(hk in 1usize..6, wk in 1usize..6) {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let backbone = Backbone::new(&mut store, &mut rng, &BackboneConfig::tiny()).unwrap();
        let dec = Decoder::new(&mut store, &mut rng, &TINY, C_B).unwrap();
        let g = Graph::with_mode(&store, ExecMode::ShapeOnly);
        let (h, w) = (16 * hk, 16 * wk);
        let enc = backbone.encode(&g, g.input(Tensor::zeros([1, 3, h, w]))).unwrap();
        let dp = dec.forward(&g, &enc.e).unwrap();
        for (v, s) in dp.levels().iter().zip([8, 4, 2, 1]) {
            prop_assert_eq!(g.shape(*v), Shape::from([1, C_B, h / s, w / s]));
        }
    }
}

// ---- adaptive refinement ----

#[test]
fn feedback_with_zero_laterals_is_the_resized_decoder_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::<f64>::new();
    let fb = Feedback::new(&mut store, &mut rng, C_B).unwrap();
    for c in &fb.lateral {
        zero_conv(&mut store, c);
    }
    let g = Graph::new(&store);
    let dp = decoder_pyramid(&g, 64, &mut rng);
    let set = fb.forward(&g, &dp).unwrap();
    for (k, s) in [8, 16, 32].into_iter().enumerate() {
        assert_eq!(g.shape(set.f[k]), Shape::from([1, C_B, s, s]));
        assert_eq!(g.shape(set.fb[k]), g.shape(set.f[k]));
        assert_eq!(g.value(set.f[k]).data(), g.value(set.fb[k]).data());
    }
}

#[test]
fn zero_attention_heads_give_gains_of_one_and_a_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut store = ParamStore::<f64>::new();
    let cross = IirCross::new(&mut store, &mut rng, "cross", C_B).unwrap();
    zero_conv(&mut store, &cross.att_coarse.out);
    zero_conv(&mut store, &cross.att_fine.out);
    let g = Graph::new(&store);
    let st = cross
        .forward(&g, g.input(random([1, C_B, 4, 4], 1.0, &mut rng)), g.input(random([1, C_B, 8, 8], 1.0, &mut rng)))
        .unwrap();
    for a in [st.a_coarse, st.a_fine] {
        assert_eq!(g.shape(a), Shape::from([1, 1, 8, 8]));
        assert!(g.value(g.add_scalar(a, 1.0)).data().iter().all(|&v| v == 1.5));
    }
    for v in [st.c1, st.c2, st.s] {
        assert_eq!(g.shape(v), Shape::from([1, C_B, 8, 8]));
    }
    let wrong = cross.forward(&g, g.input(Tensor::zeros([1, C_B, 4, 4])), g.input(Tensor::zeros([1, C_B, 6, 6])));
    assert!(wrong.is_err());
}

#[test]
fn dilated_chain_keeps_its_input_when_convs_are_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut store = ParamStore::<f64>::new();
    let chain = DenseDilated::new(&mut store, &mut rng, C_B).unwrap();
    for c in &chain.convs {
        zero_conv(&mut store, c);
    }
    let g = Graph::new(&store);
    let x = g.input(random([1, C_B, 12, 12], 1.0, &mut rng));
    for step in chain.forward(&g, x).unwrap() {
        assert_eq!(g.value(step).data(), g.value(x).data());
    }
}

#[test]
fn dilated_chain_impulse_reaches_exactly_the_analytic_radius() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut store = ParamStore::<f64>::new();
    let chain = DenseDilated::new(&mut store, &mut rng, 2).unwrap();
    for c in &chain.convs {
        let s = store.get(c.weight).shape();
        store.get_mut(c.weight).value = Tensor::from_fn(s, |_| rng.gen_range(0.1..1.0));
        store.get_mut(c.bias).value.fill(0.0);
    }
    let g = Graph::new(&store);
    let mut impulse = Tensor::zeros([1, 2, 32, 32]);
    impulse.set(0, 0, 16, 16, 1.0);
    let steps = chain.forward(&g, g.input(impulse)).unwrap();
    for s in steps {
        assert_eq!(g.shape(s), Shape::from([1, 2, 32, 32]));
    }
    let out = g.value(steps[3]);
    let r = DenseDilated::radius();
    assert_eq!(r, 10);
    for c in 0..2 {
        for i in 0..32usize {
            for j in 0..32usize {
                let reach = i.abs_diff(16).max(j.abs_diff(16)) <= r;
                assert_eq!(out.at(0, c, i, j) != 0.0, reach, "({c}, {i}, {j})");
            }
        }
    }
}

#[test]
fn refinement_scale_ladder_and_gradient_reach() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut store = ParamStore::<f64>::new();
    let afr = Afr::new(&mut store, &mut rng, C_B, true).unwrap();
    let g = Graph::new(&store);
    let mut dp = decoder_pyramid(&g, 64, &mut rng);
    dp.d1 = g.variable((*g.value(dp.d1)).clone());
    let i3 = g.variable(random([1, C_B, 64, 64], 1.0, &mut rng));
    let st = afr.forward(&g, &dp, Some(i3)).unwrap();
    assert_eq!(g.shape(st.cross1.s), Shape::from([1, C_B, 16, 16]));
    assert_eq!(g.shape(st.cross2.s), Shape::from([1, C_B, 32, 32]));
    assert_eq!(g.shape(st.refined), Shape::from([1, C_B, 32, 32]));
    assert_eq!(g.shape(st.fused), Shape::from([1, 1, 64, 64]));
    assert_eq!(g.shape(st.refined_logit), Shape::from([1, 1, 64, 64]));

    let grads = g.backward(contract(&g, &[st.fused])).unwrap();
    for v in [dp.d1, i3] {
        assert!(grads.get(v).unwrap().data().iter().any(|&x| x != 0.0));
    }
    // the refined head is supervised separately and not part of the fused map
    let mut seen = vec![false; store.len()];
    for (id, t) in grads.param_grads() {
        seen[id.index()] = t.data().iter().any(|&v| v != 0.0);
    }
    for (id, p) in store.iter() {
        assert_eq!(seen[id.index()], !p.name.starts_with("afr.refined_head"), "{}", p.name);
    }
    assert!(afr.forward(&g, &dp, None).is_err());
}

#[test]
fn channel_gate_bounds_hold_for_the_se_layers_used_here() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut store = ParamStore::<f64>::new();
    let se = SeLayer::new(&mut store, &mut rng, "se", 16, SeLayer::default_reduction(16)).unwrap();
    let g = Graph::new(&store);
    let x = g.input(random([2, 16, 5, 5], 5.0, &mut rng));
    let gate = g.value(se.gate(&g, x).unwrap());
    assert!(gate.data().iter().all(|&v| v > 0.0 && v < 1.0));
}
