//! Bilinear resampling: fixed-ratio resize and flow-driven grid sampling.
//!
//! Resize uses the half-pixel (align-corners = false) convention: output
//! sample `i` reads source coordinate `(i + 0.5) · in / out − 0.5`, clamped
//! at zero, with the upper neighbour replicated at the far border. Grid
//! sampling displaces every pixel by a flow given in source pixels and clamps
//! the displaced coordinate into `[0, size − 1]`.

use crate::{Element, Shape};

/// Per-axis interpolation taps for a resize.
#[derive(Debug, Clone)]
pub(crate) struct AxisTaps<T> {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub w_lo: Vec<T>,
    pub w_hi: Vec<T>,
}

pub(crate) fn axis_taps<T: Element>(input: usize, output: usize) -> AxisTaps<T> {
    let scale = input as f64 / output as f64;
    let mut taps = AxisTaps {
        lo: Vec::with_capacity(output),
        hi: Vec::with_capacity(output),
        w_lo: Vec::with_capacity(output),
        w_hi: Vec::with_capacity(output),
    };
    for i in 0..output {
        let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(input - 1);
        let hi = if lo + 1 < input { lo + 1 } else { lo };
        let frac = if hi == lo { 0.0 } else { src - lo as f64 };
        taps.lo.push(lo);
        taps.hi.push(hi);
        taps.w_lo.push(T::from_f64_lossy(1.0 - frac));
        taps.w_hi.push(T::from_f64_lossy(frac));
    }
    taps
}

pub(crate) fn resize_forward<T: Element>(x: &[T], xs: Shape, out: &mut [T], os: Shape) {
    let ty = axis_taps::<T>(xs.h, os.h);
    let tx = axis_taps::<T>(xs.w, os.w);
    let (ip, op) = (xs.plane(), os.plane());
    for p in 0..xs.n * xs.c {
        let src = &x[p * ip..(p + 1) * ip];
        let dst = &mut out[p * op..(p + 1) * op];
        for i in 0..os.h {
            let r0 = &src[ty.lo[i] * xs.w..(ty.lo[i] + 1) * xs.w];
            let r1 = &src[ty.hi[i] * xs.w..(ty.hi[i] + 1) * xs.w];
            for j in 0..os.w {
                let top = tx.w_lo[j] * r0[tx.lo[j]] + tx.w_hi[j] * r0[tx.hi[j]];
                let bot = tx.w_lo[j] * r1[tx.lo[j]] + tx.w_hi[j] * r1[tx.hi[j]];
                dst[i * os.w + j] = ty.w_lo[i] * top + ty.w_hi[i] * bot;
            }
        }
    }
}

pub(crate) fn resize_backward<T: Element>(gy: &[T], os: Shape, gx: &mut [T], xs: Shape) {
    let ty = axis_taps::<T>(xs.h, os.h);
    let tx = axis_taps::<T>(xs.w, os.w);
    let (ip, op) = (xs.plane(), os.plane());
    for p in 0..xs.n * xs.c {
        let g = &gy[p * op..(p + 1) * op];
        let dst = &mut gx[p * ip..(p + 1) * ip];
        for i in 0..os.h {
            for j in 0..os.w {
                let v = g[i * os.w + j];
                let (a, b) = (ty.w_lo[i] * v, ty.w_hi[i] * v);
                let r0 = ty.lo[i] * xs.w;
                let r1 = ty.hi[i] * xs.w;
                dst[r0 + tx.lo[j]] = dst[r0 + tx.lo[j]] + a * tx.w_lo[j];
                dst[r0 + tx.hi[j]] = dst[r0 + tx.hi[j]] + a * tx.w_hi[j];
                dst[r1 + tx.lo[j]] = dst[r1 + tx.lo[j]] + b * tx.w_lo[j];
                dst[r1 + tx.hi[j]] = dst[r1 + tx.hi[j]] + b * tx.w_hi[j];
            }
        }
    }
}

/// One clamped bilinear tap along an axis of length `len` at coordinate `pos`.
#[derive(Clone, Copy)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
    /// false when the coordinate was clamped; the coordinate gradient vanishes
    live: bool,
}

fn tap<T: Element>(pos: T, len: usize) -> Tap<T> {
    let max = T::from_usize(len - 1).unwrap();
    let live = pos >= T::zero() && pos <= max;
    let p = pos.max(T::zero()).min(max);
    let lo = p.floor().to_usize().unwrap_or(0).min(len - 1);
    let hi = (lo + 1).min(len - 1);
    let frac = p - T::from_usize(lo).unwrap();
    Tap { lo, hi, frac, live }
}

/// `out[n,c,i,j] = x[n,c]` sampled at `(i + flow[n,1,i,j], j + flow[n,0,i,j])`.
pub(crate) fn grid_sample_forward<T: Element>(x: &[T], xs: Shape, flow: &[T], out: &mut [T]) {
    let (h, w, p) = (xs.h, xs.w, xs.plane());
    for n in 0..xs.n {
        let fx = &flow[(2 * n) * p..(2 * n + 1) * p];
        let fy = &flow[(2 * n + 1) * p..(2 * n + 2) * p];
        for i in 0..h {
            for j in 0..w {
                let k = i * w + j;
                let ty = tap(T::from_usize(i).unwrap() + fy[k], h);
                let tx = tap(T::from_usize(j).unwrap() + fx[k], w);
                let (w00, w01) = ((T::one() - ty.frac) * (T::one() - tx.frac), (T::one() - ty.frac) * tx.frac);
                let (w10, w11) = (ty.frac * (T::one() - tx.frac), ty.frac * tx.frac);
                for c in 0..xs.c {
                    let src = &x[(n * xs.c + c) * p..(n * xs.c + c + 1) * p];
                    out[(n * xs.c + c) * p + k] = w00 * src[ty.lo * w + tx.lo]
                        + w01 * src[ty.lo * w + tx.hi]
                        + w10 * src[ty.hi * w + tx.lo]
                        + w11 * src[ty.hi * w + tx.hi];
                }
            }
        }
    }
}

pub(crate) fn grid_sample_backward<T: Element>(
    x: &[T],
    xs: Shape,
    flow: &[T],
    gy: &[T],
    mut gx: Option<&mut [T]>,
    mut gflow: Option<&mut [T]>,
) {
    let (h, w, p) = (xs.h, xs.w, xs.plane());
    for n in 0..xs.n {
        let fbase = 2 * n * p;
        for i in 0..h {
            for j in 0..w {
                let k = i * w + j;
                let ty = tap(T::from_usize(i).unwrap() + flow[fbase + p + k], h);
                let tx = tap(T::from_usize(j).unwrap() + flow[fbase + k], w);
                let (oy, ox) = (T::one() - ty.frac, T::one() - tx.frac);
                let (mut dfx, mut dfy) = (T::zero(), T::zero());
                for c in 0..xs.c {
                    let base = (n * xs.c + c) * p;
                    let g = gy[base + k];
                    let i00 = base + ty.lo * w + tx.lo;
                    let i01 = base + ty.lo * w + tx.hi;
                    let i10 = base + ty.hi * w + tx.lo;
                    let i11 = base + ty.hi * w + tx.hi;
                    if let Some(gx) = gx.as_deref_mut() {
                        gx[i00] = gx[i00] + g * oy * ox;
                        gx[i01] = gx[i01] + g * oy * tx.frac;
                        gx[i10] = gx[i10] + g * ty.frac * ox;
                        gx[i11] = gx[i11] + g * ty.frac * tx.frac;
                    }
                    if gflow.is_some() {
                        let (v00, v01, v10, v11) = (x[i00], x[i01], x[i10], x[i11]);
                        dfx = dfx + g * (oy * (v01 - v00) + ty.frac * (v11 - v10));
                        dfy = dfy + g * (ox * (v10 - v00) + tx.frac * (v11 - v01));
                    }
                }
                if let Some(gf) = gflow.as_deref_mut() {
                    if tx.live {
                        gf[fbase + k] = gf[fbase + k] + dfx;
                    }
                    if ty.live {
                        gf[fbase + p + k] = gf[fbase + p + k] + dfy;
                    }
                }
            }
        }
    }
}
