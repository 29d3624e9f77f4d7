//! Forward definitions of every differentiable operation family.

use std::rc::Rc;

use crate::error::{invalid, mismatch, Result};
use crate::graph::{Broadcast, ExecMode, Graph, Op, Var};
use crate::kernels::conv::{self, ConvGeom};
use crate::kernels::sample;
use crate::{Element, Shape, Tensor};

/// Default clamp for probabilities entering the cross-entropy and the
/// denominator guard of the soft IoU.
pub const LOSS_EPS: f64 = 1e-7;

pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<'p, T: Element> Graph<'p, T> {
    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires_grad(*v))
    }

    fn emit(
        &self,
        name: &'static str,
        shape: Shape,
        flops: u64,
        op: Op<T>,
        inputs: &[Var],
        compute: impl FnOnce() -> Tensor<T>,
    ) -> Var {
        self.record(name, shape, flops);
        let value = match self.mode() {
            ExecMode::Full => compute(),
            ExecMode::ShapeOnly => Tensor::shape_only(shape),
        };
        let rg = self.any_grad(inputs);
        self.push(value, op, rg)
    }

    /// 2-D cross-correlation. `w` is `[out_c, in_c, kh, kw]`, `b` is `[1, out_c, 1, 1]`.
    pub fn conv2d(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws.c != xs.c {
            return Err(mismatch(OP, "weight", format!("[out_c]x{}x[kh]x[kw]", xs.c), ws));
        }
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != Shape::new(1, ws.n, 1, 1) {
                return Err(mismatch(OP, "bias", format!("1x{}x1x1", ws.n), bs));
            }
        }
        if stride == 0 || dilation == 0 || ws.h == 0 || ws.w == 0 {
            return Err(invalid(OP, "stride, dilation and kernel extent must be positive"));
        }
        let geom = ConvGeom { kh: ws.h, kw: ws.w, stride, padding, dilation };
        let (Some(oh), Some(ow)) = (geom.out_len(xs.h, ws.h), geom.out_len(xs.w, ws.w)) else {
            return Err(mismatch(OP, "input", "spatial extent covering the dilated kernel", xs));
        };
        let os = Shape::new(xs.n, ws.n, oh, ow);
        let flops = 2 * (xs.c * ws.h * ws.w) as u64 * os.numel() as u64;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.emit(OP, os, flops, Op::Conv2d { x, w, b, geom }, &inputs, || {
            let xv = self.value(x);
            let wv = self.value(w);
            let bv = b.map(|b| self.value(b));
            let mut out = Tensor::zeros(os);
            conv::conv2d_forward(
                xv.data(),
                xs,
                wv.data(),
                bv.as_ref().map(|t| t.data()),
                ws.n,
                &geom,
                out.data_mut(),
                os,
            );
            out
        }))
    }

    /// Transposed convolution without padding. `w` is `[in_c, out_c, kh, kw]`.
    pub fn conv_transpose2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws.n != xs.c {
            return Err(mismatch(OP, "weight", format!("{}x[out_c]x[kh]x[kw]", xs.c), ws));
        }
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != Shape::new(1, ws.c, 1, 1) {
                return Err(mismatch(OP, "bias", format!("1x{}x1x1", ws.c), bs));
            }
        }
        if stride == 0 || ws.h == 0 || ws.w == 0 {
            return Err(invalid(OP, "stride and kernel extent must be positive"));
        }
        let geom = ConvGeom { kh: ws.h, kw: ws.w, stride, padding: 0, dilation: 1 };
        let os = Shape::new(xs.n, ws.c, (xs.h - 1) * stride + ws.h, (xs.w - 1) * stride + ws.w);
        let flops = 2 * (ws.c * ws.h * ws.w) as u64 * xs.numel() as u64;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.emit(OP, os, flops, Op::ConvTranspose2d { x, w, b, geom }, &inputs, || {
            let xv = self.value(x);
            let wv = self.value(w);
            let bv = b.map(|b| self.value(b));
            let mut out = Tensor::zeros(os);
            conv::conv_transpose2d_forward(
                xv.data(),
                xs,
                wv.data(),
                bv.as_ref().map(|t| t.data()),
                &geom,
                out.data_mut(),
                os,
            );
            out
        }))
    }

    /// Bilinear resize (half-pixel centres, border replication).
    pub fn resize(&self, x: Var, h: usize, w: usize) -> Result<Var> {
        const OP: &str = "bilinear_resize";
        if h == 0 || w == 0 {
            return Err(invalid(OP, format!("target size {h}x{w} must be positive")));
        }
        let xs = self.shape(x);
        if xs.h == h && xs.w == w {
            // identical taps would reproduce the input exactly; skip the copy
            return Ok(x);
        }
        let os = xs.with_hw(h, w);
        Ok(self.emit(OP, os, 8 * os.numel() as u64, Op::Resize { x }, &[x], || {
            let xv = self.value(x);
            let mut out = Tensor::zeros(os);
            sample::resize_forward(xv.data(), xs, out.data_mut(), os);
            out
        }))
    }

    /// Warp `x` by a 2-channel pixel flow (`[Δx, Δy]`), clamping at the border.
    pub fn grid_sample(&self, x: Var, flow: Var) -> Result<Var> {
        const OP: &str = "grid_sample";
        let xs = self.shape(x);
        let fs = self.shape(flow);
        if fs != Shape::new(xs.n, 2, xs.h, xs.w) {
            return Err(mismatch(OP, "flow", format!("{}x2x{}x{}", xs.n, xs.h, xs.w), fs));
        }
        Ok(self.emit(OP, xs, 8 * xs.numel() as u64, Op::GridSample { x, flow }, &[x, flow], || {
            let xv = self.value(x);
            let fv = self.value(flow);
            let mut out = Tensor::zeros(xs);
            sample::grid_sample_forward(xv.data(), xs, fv.data(), out.data_mut());
            out
        }))
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Broadcast, Shape)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok((Broadcast::Same, sa));
        }
        let same_nhw = sa.n == sb.n && sa.h == sb.h && sa.w == sb.w;
        if same_nhw && sb.c == 1 {
            Ok((Broadcast::RhsChannels, sa))
        } else if same_nhw && sa.c == 1 {
            Ok((Broadcast::LhsChannels, sb))
        } else {
            Err(mismatch(op, "rhs", format!("{sa} or a 1-channel map of {}x1x{}x{}", sa.n, sa.h, sa.w), sb))
        }
    }

    fn binary(&self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Var, Broadcast)> {
        let (bc, os) = self.broadcast(name, a, b)?;
        let op = if name == "add" { Op::Add { a, b, bc } } else { Op::Mul { a, b, bc } };
        let v = self.emit(name, os, os.numel() as u64, op, &[a, b], || {
            let av = self.value(a);
            let bv = self.value(b);
            let p = os.plane();
            let out: Vec<T> = match bc {
                Broadcast::Same => av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect(),
                Broadcast::RhsChannels => (0..os.numel())
                    .map(|i| {
                        let (n, r) = (i / (os.c * p), i % p);
                        f(av.data()[i], bv.data()[n * p + r])
                    })
                    .collect(),
                Broadcast::LhsChannels => (0..os.numel())
                    .map(|i| {
                        let (n, r) = (i / (os.c * p), i % p);
                        f(av.data()[n * p + r], bv.data()[i])
                    })
                    .collect(),
            };
            Tensor::from_vec(os, out).expect("broadcast output length")
        });
        Ok((v, bc))
    }

    /// Elementwise sum; a 1-channel operand broadcasts across channels.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        Ok(self.binary("add", a, b, |x, y| x + y)?.0)
    }

    /// Elementwise product; a 1-channel operand broadcasts across channels.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        Ok(self.binary("mul", a, b, |x, y| x * y)?.0)
    }

    pub fn add_scalar(&self, x: Var, s: T) -> Var {
        let xs = self.shape(x);
        self.emit("add_scalar", xs, xs.numel() as u64, Op::AddScalar { x }, &[x], || {
            self.value(x).map(|v| v + s)
        })
    }

    pub fn mul_scalar(&self, x: Var, s: T) -> Var {
        let xs = self.shape(x);
        self.emit("mul_scalar", xs, xs.numel() as u64, Op::MulScalar { x, s }, &[x], || {
            self.value(x).map(|v| v * s)
        })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let xs = self.shape(x);
        self.emit("sigmoid", xs, xs.numel() as u64, Op::Sigmoid { x }, &[x], || {
            self.value(x).map(sigmoid)
        })
    }

    pub fn relu(&self, x: Var) -> Var {
        let xs = self.shape(x);
        self.emit("relu", xs, xs.numel() as u64, Op::Relu { x }, &[x], || {
            // NaN passes through, so a corrupted input still surfaces in the loss
            self.value(x).map(|v| if v > T::zero() || v.is_nan() { v } else { T::zero() })
        })
    }

    /// Concatenate along the channel axis, preserving operand order.
    pub fn concat(&self, xs: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let Some(&first) = xs.first() else {
            return Err(invalid(OP, "no operands"));
        };
        if xs.len() == 1 {
            return Ok(first);
        }
        let s0 = self.shape(first);
        let mut c = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.n != s0.n || s.h != s0.h || s.w != s0.w {
                return Err(mismatch(OP, "operand", format!("{}x[c]x{}x{}", s0.n, s0.h, s0.w), s));
            }
            c += s.c;
        }
        let os = s0.with_c(c);
        Ok(self.emit(OP, os, 0, Op::Concat { xs: xs.to_vec() }, xs, || {
            let vals: Vec<_> = xs.iter().map(|v| self.value(*v)).collect();
            let mut out = Vec::with_capacity(os.numel());
            for n in 0..os.n {
                for t in &vals {
                    out.extend_from_slice(t.item(n));
                }
            }
            Tensor::from_vec(os, out).expect("concat length")
        }))
    }

    /// 2x2 max pooling with stride 2; ties resolve to the first element in
    /// row-major order.
    pub fn maxpool2(&self, x: Var) -> Result<Var> {
        const OP: &str = "maxpool2";
        let xs = self.shape(x);
        if !xs.h.is_multiple_of(2) || !xs.w.is_multiple_of(2) || xs.h == 0 || xs.w == 0 {
            return Err(mismatch(OP, "input", "even, non-zero height and width", xs));
        }
        let os = xs.with_hw(xs.h / 2, xs.w / 2);
        self.record(OP, os, 3 * os.numel() as u64);
        let rg = self.requires_grad(x);
        if self.mode() == ExecMode::ShapeOnly {
            return Ok(self.push(Tensor::shape_only(os), Op::MaxPool2 { x, argmax: Vec::new() }, rg));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(os.numel());
        let mut argmax = Vec::with_capacity(os.numel());
        for p in 0..xs.n * xs.c {
            let base = p * xs.plane();
            for i in 0..os.h {
                for j in 0..os.w {
                    let mut best = base + 2 * i * xs.w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let k = base + (2 * i + di) * xs.w + 2 * j + dj;
                        if xv.data()[k] > xv.data()[best] || xv.data()[k].is_nan() {
                            best = k;
                        }
                    }
                    out.push(xv.data()[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::from_vec(os, out)?;
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Per-channel spatial mean, `[n, c, 1, 1]`.
    pub fn global_avg_pool(&self, x: Var) -> Var {
        let xs = self.shape(x);
        let os = xs.with_hw(1, 1);
        self.emit("global_avg_pool", os, xs.numel() as u64, Op::GlobalAvgPool { x }, &[x], || {
            let xv = self.value(x);
            let inv = T::one() / T::from_usize(xs.plane()).unwrap();
            let out = (0..xs.n * xs.c)
                .map(|p| xv.data()[p * xs.plane()..(p + 1) * xs.plane()].iter().copied().sum::<T>() * inv)
                .collect();
            Tensor::from_vec(os, out).expect("pool length")
        })
    }

    /// Multiplies every `(n, c)` plane of `x` by `s[n, c, 0, 0]`.
    pub fn scale_channels(&self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ss = self.shape(s);
        if ss != xs.with_hw(1, 1) {
            return Err(mismatch("scale_channels", "scale", format!("{}x{}x1x1", xs.n, xs.c), ss));
        }
        Ok(self.emit("scale_channels", xs, xs.numel() as u64, Op::ScaleChannels { x, s }, &[x, s], || {
            let xv = self.value(x);
            let sv = self.value(s);
            let p = xs.plane();
            let out = xv.data().iter().enumerate().map(|(i, v)| *v * sv.data()[i / p]).collect();
            Tensor::from_vec(xs, out).expect("scale length")
        }))
    }

    pub fn sum_all(&self, x: Var) -> Var {
        let xs = self.shape(x);
        self.emit("sum", Shape::scalar(), xs.numel() as u64, Op::SumAll { x }, &[x], || {
            Tensor::scalar(self.value(x).sum())
        })
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let xs = self.shape(x);
        self.emit("mean", Shape::scalar(), xs.numel() as u64, Op::MeanAll { x }, &[x], || {
            Tensor::scalar(self.value(x).sum() / T::from_usize(xs.numel()).unwrap())
        })
    }

    fn check_target(&self, op: &'static str, p: Var, target: &Tensor<T>) -> Result<()> {
        let ps = self.shape(p);
        if target.shape() != ps {
            return Err(mismatch(op, "target", ps.to_string(), target.shape()));
        }
        Ok(())
    }

    /// Mean binary cross-entropy of probabilities `p` (clamped to
    /// `[eps, 1 − eps]`) against `target`, over every pixel of the batch.
    pub fn bce(&self, p: Var, target: Tensor<T>) -> Result<Var> {
        self.check_target("bce_loss", p, &target)?;
        let eps = T::from_f64_lossy(LOSS_EPS);
        let target = Rc::new(target);
        let n = target.len();
        let t2 = Rc::clone(&target);
        Ok(self.emit("bce_loss", Shape::scalar(), 6 * n as u64, Op::Bce { p, target, eps }, &[p], || {
            let pv = self.value(p);
            let total: T = pv
                .data()
                .iter()
                .zip(t2.data())
                .map(|(&pi, &yi)| {
                    // comparisons rather than max/min, so a NaN probability stays NaN
                    let pc = if pi < eps {
                        eps
                    } else if pi > T::one() - eps {
                        T::one() - eps
                    } else {
                        pi
                    };
                    -(yi * pc.ln() + (T::one() - yi) * (T::one() - pc).ln())
                })
                .sum();
            Tensor::scalar(total / T::from_usize(n).unwrap())
        }))
    }

    /// Soft IoU complement `1 − Σpy / (Σ(p + y − py) + eps)` per image,
    /// averaged over the batch.
    pub fn iou(&self, p: Var, target: Tensor<T>) -> Result<Var> {
        self.check_target("iou_loss", p, &target)?;
        let eps = T::from_f64_lossy(LOSS_EPS);
        let target = Rc::new(target);
        let t2 = Rc::clone(&target);
        let ps = self.shape(p);
        Ok(self.emit("iou_loss", Shape::scalar(), 5 * ps.numel() as u64, Op::Iou { p, target, eps }, &[p], || {
            let pv = self.value(p);
            let per = ps.c * ps.plane();
            let mut total = T::zero();
            for n in 0..ps.n {
                let (inter, union) = iou_terms(&pv.data()[n * per..(n + 1) * per], &t2.data()[n * per..(n + 1) * per]);
                total = total + T::one() - inter / (union + eps);
            }
            Tensor::scalar(total / T::from_usize(ps.n).unwrap())
        }))
    }
}

pub(crate) fn iou_terms<T: Element>(p: &[T], y: &[T]) -> (T, T) {
    p.iter().zip(y).fold((T::zero(), T::zero()), |(i, u), (&pi, &yi)| (i + pi * yi, u + pi + yi - pi * yi))
}
