//! Adjoints of the operations in `ops`.

use crate::graph::{Broadcast, Node, Op, Var};
use crate::kernels::{conv, sample};
use crate::ops::iou_terms;
use crate::{Element, Tensor};

fn accumulate<T: Element>(nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn wants<T>(nodes: &[Node<T>], v: Var) -> bool {
    nodes[v.0].requires_grad
}

fn zeros_like<T: Element>(nodes: &[Node<T>], v: Var) -> Tensor<T> {
    Tensor::zeros(nodes[v.0].value.shape())
}

/// Sums a broadcast-shaped gradient back to a 1-channel operand.
fn reduce_channels<T: Element>(g: &Tensor<T>) -> Tensor<T> {
    let s = g.shape();
    let p = s.plane();
    let mut out = Tensor::zeros(s.with_c(1));
    for n in 0..s.n {
        let dst = &mut out.data_mut()[n * p..(n + 1) * p];
        for c in 0..s.c {
            for (d, v) in dst.iter_mut().zip(g.plane(n, c)) {
                *d = *d + *v;
            }
        }
    }
    out
}

pub(crate) fn propagate<T: Element>(nodes: &[Node<T>], i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Input | Op::Param => {}
        Op::Conv2d { x, w, b, geom } => {
            let xv = &nodes[x.0].value;
            let wv = &nodes[w.0].value;
            let mut gx = wants(nodes, *x).then(|| zeros_like(nodes, *x));
            let mut gw = wants(nodes, *w).then(|| zeros_like(nodes, *w));
            let mut gb = b.filter(|b| wants(nodes, *b)).map(|b| zeros_like(nodes, b));
            conv::conv2d_backward(
                xv.data(),
                xv.shape(),
                wv.data(),
                wv.shape().n,
                geom,
                g.data(),
                out.shape(),
                gx.as_mut().map(|t| t.data_mut()),
                gw.as_mut().map(|t| t.data_mut()),
                gb.as_mut().map(|t| t.data_mut()),
            );
            if let Some(t) = gx {
                accumulate(nodes, grads, *x, t);
            }
            if let Some(t) = gw {
                accumulate(nodes, grads, *w, t);
            }
            if let (Some(b), Some(t)) = (b, gb) {
                accumulate(nodes, grads, *b, t);
            }
        }
        Op::ConvTranspose2d { x, w, b, geom } => {
            let xv = &nodes[x.0].value;
            let wv = &nodes[w.0].value;
            let mut gx = wants(nodes, *x).then(|| zeros_like(nodes, *x));
            let mut gw = wants(nodes, *w).then(|| zeros_like(nodes, *w));
            let mut gb = b.filter(|b| wants(nodes, *b)).map(|b| zeros_like(nodes, b));
            conv::conv_transpose2d_backward(
                xv.data(),
                xv.shape(),
                wv.data(),
                geom,
                g.data(),
                out.shape(),
                gx.as_mut().map(|t| t.data_mut()),
                gw.as_mut().map(|t| t.data_mut()),
                gb.as_mut().map(|t| t.data_mut()),
            );
            if let Some(t) = gx {
                accumulate(nodes, grads, *x, t);
            }
            if let Some(t) = gw {
                accumulate(nodes, grads, *w, t);
            }
            if let (Some(b), Some(t)) = (b, gb) {
                accumulate(nodes, grads, *b, t);
            }
        }
        Op::Resize { x } => {
            if wants(nodes, *x) {
                let mut gx = zeros_like(nodes, *x);
                let xs = gx.shape();
                sample::resize_backward(g.data(), out.shape(), gx.data_mut(), xs);
                accumulate(nodes, grads, *x, gx);
            }
        }
        Op::GridSample { x, flow } => {
            let xv = &nodes[x.0].value;
            let fv = &nodes[flow.0].value;
            let mut gx = wants(nodes, *x).then(|| zeros_like(nodes, *x));
            let mut gf = wants(nodes, *flow).then(|| zeros_like(nodes, *flow));
            sample::grid_sample_backward(
                xv.data(),
                xv.shape(),
                fv.data(),
                g.data(),
                gx.as_mut().map(|t| t.data_mut()),
                gf.as_mut().map(|t| t.data_mut()),
            );
            if let Some(t) = gx {
                accumulate(nodes, grads, *x, t);
            }
            if let Some(t) = gf {
                accumulate(nodes, grads, *flow, t);
            }
        }
        Op::Add { a, b, bc } => {
            let (ga, gb) = match bc {
                Broadcast::Same => (g.clone(), g.clone()),
                Broadcast::RhsChannels => (g.clone(), reduce_channels(g)),
                Broadcast::LhsChannels => (reduce_channels(g), g.clone()),
            };
            accumulate(nodes, grads, *a, ga);
            accumulate(nodes, grads, *b, gb);
        }
        Op::Mul { a, b, bc } => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            let s = out.shape();
            let p = s.plane();
            let pick = |t: &Tensor<T>, full: bool, k: usize| {
                if full {
                    t.data()[k]
                } else {
                    t.data()[(k / (s.c * p)) * p + k % p]
                }
            };
            let (a_full, b_full) = match bc {
                Broadcast::Same => (true, true),
                Broadcast::RhsChannels => (true, false),
                Broadcast::LhsChannels => (false, true),
            };
            if wants(nodes, *a) {
                let full: Vec<T> = (0..s.numel()).map(|k| g.data()[k] * pick(bv, b_full, k)).collect();
                let full = Tensor::from_vec(s, full).expect("mul grad");
                accumulate(nodes, grads, *a, if a_full { full } else { reduce_channels(&full) });
            }
            if wants(nodes, *b) {
                let full: Vec<T> = (0..s.numel()).map(|k| g.data()[k] * pick(av, a_full, k)).collect();
                let full = Tensor::from_vec(s, full).expect("mul grad");
                accumulate(nodes, grads, *b, if b_full { full } else { reduce_channels(&full) });
            }
        }
        Op::AddScalar { x } => accumulate(nodes, grads, *x, g.clone()),
        Op::MulScalar { x, s } => accumulate(nodes, grads, *x, g.map(|v| v * *s)),
        Op::Sigmoid { x } => {
            let gx = g
                .data()
                .iter()
                .zip(out.data())
                .map(|(gv, y)| *gv * *y * (T::one() - *y))
                .collect();
            accumulate(nodes, grads, *x, Tensor::from_vec(out.shape(), gx).expect("sigmoid grad"));
        }
        Op::Relu { x } => {
            let xv = &nodes[x.0].value;
            let gx = g
                .data()
                .iter()
                .zip(xv.data())
                .map(|(gv, v)| if *v > T::zero() { *gv } else { T::zero() })
                .collect();
            accumulate(nodes, grads, *x, Tensor::from_vec(out.shape(), gx).expect("relu grad"));
        }
        Op::Concat { xs } => {
            let s = out.shape();
            let p = s.plane();
            let mut offset = 0;
            for v in xs {
                let vs = nodes[v.0].value.shape();
                if wants(nodes, *v) {
                    let mut part = Vec::with_capacity(vs.numel());
                    for n in 0..s.n {
                        let start = (n * s.c + offset) * p;
                        part.extend_from_slice(&g.data()[start..start + vs.c * p]);
                    }
                    accumulate(nodes, grads, *v, Tensor::from_vec(vs, part).expect("concat grad"));
                }
                offset += vs.c;
            }
        }
        Op::MaxPool2 { x, argmax } => {
            let mut gx = zeros_like(nodes, *x);
            for (k, &src) in argmax.iter().enumerate() {
                let d = &mut gx.data_mut()[src as usize];
                *d = *d + g.data()[k];
            }
            accumulate(nodes, grads, *x, gx);
        }
        Op::GlobalAvgPool { x } => {
            let xs = nodes[x.0].value.shape();
            let inv = T::one() / T::from_usize(xs.plane()).unwrap();
            let gx = (0..xs.numel()).map(|k| g.data()[k / xs.plane()] * inv).collect();
            accumulate(nodes, grads, *x, Tensor::from_vec(xs, gx).expect("gap grad"));
        }
        Op::ScaleChannels { x, s } => {
            let xv = &nodes[x.0].value;
            let sv = &nodes[s.0].value;
            let p = xv.shape().plane();
            if wants(nodes, *x) {
                let gx = (0..xv.len()).map(|k| g.data()[k] * sv.data()[k / p]).collect();
                accumulate(nodes, grads, *x, Tensor::from_vec(xv.shape(), gx).expect("scale grad"));
            }
            if wants(nodes, *s) {
                let gs = (0..sv.len())
                    .map(|q| {
                        let gp = &g.data()[q * p..(q + 1) * p];
                        let xp = &xv.data()[q * p..(q + 1) * p];
                        gp.iter().zip(xp).map(|(a, b)| *a * *b).sum::<T>()
                    })
                    .collect();
                accumulate(nodes, grads, *s, Tensor::from_vec(sv.shape(), gs).expect("scale grad"));
            }
        }
        Op::SumAll { x } => {
            let xs = nodes[x.0].value.shape();
            accumulate(nodes, grads, *x, Tensor::full(xs, g.data()[0]));
        }
        Op::MeanAll { x } => {
            let xs = nodes[x.0].value.shape();
            let v = g.data()[0] / T::from_usize(xs.numel()).unwrap();
            accumulate(nodes, grads, *x, Tensor::full(xs, v));
        }
        Op::Bce { p, target, eps } => {
            let pv = &nodes[p.0].value;
            let scale = g.data()[0] / T::from_usize(pv.len()).unwrap();
            let hi = T::one() - *eps;
            let gp = pv
                .data()
                .iter()
                .zip(target.data())
                .map(|(&pi, &yi)| {
                    if pi < *eps || pi > hi {
                        T::zero()
                    } else {
                        scale * (-(yi / pi) + (T::one() - yi) / (T::one() - pi))
                    }
                })
                .collect();
            accumulate(nodes, grads, *p, Tensor::from_vec(pv.shape(), gp).expect("bce grad"));
        }
        Op::Iou { p, target, eps } => {
            let pv = &nodes[p.0].value;
            let ps = pv.shape();
            let per = ps.c * ps.plane();
            let scale = g.data()[0] / T::from_usize(ps.n).unwrap();
            let mut gp = Vec::with_capacity(pv.len());
            for n in 0..ps.n {
                let pn = &pv.data()[n * per..(n + 1) * per];
                let yn = &target.data()[n * per..(n + 1) * per];
                let (inter, union) = iou_terms(pn, yn);
                let den = union + *eps;
                let den2 = den * den;
                // d/dp_i of -(I / U): -(y_i U - I (1 - y_i)) / U^2
                gp.extend(yn.iter().map(|&yi| -scale * (yi * den - inter * (T::one() - yi)) / den2));
            }
            accumulate(nodes, grads, *p, Tensor::from_vec(ps, gp).expect("iou grad"));
        }
    }
}
