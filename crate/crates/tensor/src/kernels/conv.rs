//! Convolution kernels built on im2col / col2im and a strided GEMM.

#![allow(clippy::too_many_arguments)] // kernels take raw buffers plus their geometry

use crate::element::{gemm, MatRef};
use crate::{Element, Shape};

/// Spatial hyper-parameters of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    /// Output extent along one axis, `None` when it would be empty.
    pub fn out_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output columns `lo..hi` whose input index `o·stride + offset − padding`
/// falls inside `0..len`.
fn valid_range(out: usize, len: usize, stride: usize, offset: usize, padding: usize) -> (usize, usize) {
    // first o with o·stride + offset ≥ padding
    let lo = if offset >= padding { 0 } else { (padding - offset).div_ceil(stride) };
    // first o with o·stride + offset ≥ len + padding
    let hi = if offset >= len + padding { 0 } else { (len + padding - offset).div_ceil(stride) };
    (lo.min(out), hi.min(out).max(lo.min(out)))
}

/// Unfolds one `[c, h, w]` image into `[c·kh·kw, oh·ow]` columns.
pub(crate) fn im2col<T: Element>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    geom: &ConvGeom,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let ConvGeom { kh, kw, stride, padding, dilation } = *geom;
    let ohw = oh * ow;
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            let (ylo, yhi) = valid_range(oh, h, stride, ki * dilation, padding);
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                let (xlo, xhi) = valid_range(ow, w, stride, kj * dilation, padding);
                dst[..ylo * ow].fill(T::zero());
                dst[yhi * ow..].fill(T::zero());
                for oy in ylo..yhi {
                    let iy = oy * stride + ki * dilation - padding;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    line[..xlo].fill(T::zero());
                    line[xhi..].fill(T::zero());
                    if xlo == xhi {
                        continue;
                    }
                    let src = &plane[iy * w..(iy + 1) * w];
                    let ix0 = xlo * stride + kj * dilation - padding;
                    if stride == 1 {
                        line[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for (v, ix) in line[xlo..xhi].iter_mut().zip((ix0..).step_by(stride)) {
                            *v = src[ix];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into a `[c, h, w]` image.
pub(crate) fn col2im<T: Element>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    geom: &ConvGeom,
    oh: usize,
    ow: usize,
    img: &mut [T],
) {
    let ConvGeom { kh, kw, stride, padding, dilation } = *geom;
    let ohw = oh * ow;
    for ch in 0..c {
        let plane = &mut img[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            let (ylo, yhi) = valid_range(oh, h, stride, ki * dilation, padding);
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                let (xlo, xhi) = valid_range(ow, w, stride, kj * dilation, padding);
                if xlo == xhi {
                    continue;
                }
                for oy in ylo..yhi {
                    let iy = oy * stride + ki * dilation - padding;
                    let dst = &mut plane[iy * w..(iy + 1) * w];
                    let line = &src[oy * ow + xlo..oy * ow + xhi];
                    let ix0 = xlo * stride + kj * dilation - padding;
                    if stride == 1 {
                        for (d, v) in dst[ix0..ix0 + line.len()].iter_mut().zip(line) {
                            *d = *d + *v;
                        }
                    } else {
                        for (v, ix) in line.iter().zip((ix0..).step_by(stride)) {
                            dst[ix] = dst[ix] + *v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward cross-correlation. `w` is `[oc, ic, kh, kw]`, output preallocated.
pub(crate) fn conv2d_forward<T: Element>(
    x: &[T],
    xs: Shape,
    weight: &[T],
    bias: Option<&[T]>,
    oc: usize,
    geom: &ConvGeom,
    out: &mut [T],
    os: Shape,
) {
    let k = xs.c * geom.kh * geom.kw;
    let ohw = os.plane();
    let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); k * ohw] };
    for n in 0..xs.n {
        let xi = &x[n * xs.c * xs.plane()..(n + 1) * xs.c * xs.plane()];
        let oi = &mut out[n * oc * ohw..(n + 1) * oc * ohw];
        let colsref: &[T] = if geom.is_pointwise() {
            xi
        } else {
            im2col(xi, xs.c, xs.h, xs.w, geom, os.h, os.w, &mut cols);
            &cols
        };
        gemm(MatRef::new(weight, oc, k), MatRef::new(colsref, k, ohw), oi, false);
        if let Some(b) = bias {
            for (o, bv) in b.iter().enumerate() {
                oi[o * ohw..(o + 1) * ohw].iter_mut().for_each(|v| *v = *v + *bv);
            }
        }
    }
}

/// Gradients of [`conv2d_forward`]; any of the outputs may be skipped.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Element>(
    x: &[T],
    xs: Shape,
    weight: &[T],
    oc: usize,
    geom: &ConvGeom,
    gy: &[T],
    os: Shape,
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    mut gb: Option<&mut [T]>,
) {
    let k = xs.c * geom.kh * geom.kw;
    let ohw = os.plane();
    let xlen = xs.c * xs.plane();
    let pointwise = geom.is_pointwise();
    let mut cols = if pointwise || gw.is_none() { Vec::new() } else { vec![T::zero(); k * ohw] };
    let mut dcols = if pointwise || gx.is_none() { Vec::new() } else { vec![T::zero(); k * ohw] };
    for n in 0..xs.n {
        let gyi = &gy[n * oc * ohw..(n + 1) * oc * ohw];
        if let Some(gb) = gb.as_deref_mut() {
            for (o, b) in gb.iter_mut().enumerate() {
                *b = *b + gyi[o * ohw..(o + 1) * ohw].iter().copied().sum::<T>();
            }
        }
        if let Some(gw) = gw.as_deref_mut() {
            let xi = &x[n * xlen..(n + 1) * xlen];
            let colsref: &[T] = if pointwise {
                xi
            } else {
                im2col(xi, xs.c, xs.h, xs.w, geom, os.h, os.w, &mut cols);
                &cols
            };
            gemm(MatRef::new(gyi, oc, ohw), MatRef::transposed(colsref, k, ohw), gw, true);
        }
        if let Some(gx) = gx.as_deref_mut() {
            let gxi = &mut gx[n * xlen..(n + 1) * xlen];
            if pointwise {
                gemm(MatRef::transposed(weight, oc, k), MatRef::new(gyi, oc, ohw), gxi, true);
            } else {
                gemm(MatRef::transposed(weight, oc, k), MatRef::new(gyi, oc, ohw), &mut dcols, false);
                col2im(&dcols, xs.c, xs.h, xs.w, geom, os.h, os.w, gxi);
            }
        }
    }
}

/// Transposed convolution (no padding, unit dilation). `w` is `[ic, oc, kh, kw]`.
pub(crate) fn conv_transpose2d_forward<T: Element>(
    x: &[T],
    xs: Shape,
    weight: &[T],
    bias: Option<&[T]>,
    geom: &ConvGeom,
    out: &mut [T],
    os: Shape,
) {
    let oc = os.c;
    let k = oc * geom.kh * geom.kw;
    let hw = xs.plane();
    let ohw = os.plane();
    let mut cols = vec![T::zero(); k * hw];
    for n in 0..xs.n {
        let xi = &x[n * xs.c * hw..(n + 1) * xs.c * hw];
        let oi = &mut out[n * oc * ohw..(n + 1) * oc * ohw];
        gemm(MatRef::transposed(weight, xs.c, k), MatRef::new(xi, xs.c, hw), &mut cols, false);
        oi.iter_mut().for_each(|v| *v = T::zero());
        col2im(&cols, oc, os.h, os.w, geom, xs.h, xs.w, oi);
        if let Some(b) = bias {
            for (o, bv) in b.iter().enumerate() {
                oi[o * ohw..(o + 1) * ohw].iter_mut().for_each(|v| *v = *v + *bv);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2d_backward<T: Element>(
    x: &[T],
    xs: Shape,
    weight: &[T],
    geom: &ConvGeom,
    gy: &[T],
    os: Shape,
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    mut gb: Option<&mut [T]>,
) {
    let oc = os.c;
    let k = oc * geom.kh * geom.kw;
    let hw = xs.plane();
    let ohw = os.plane();
    let mut dcols = vec![T::zero(); k * hw];
    for n in 0..xs.n {
        let gyi = &gy[n * oc * ohw..(n + 1) * oc * ohw];
        if let Some(gb) = gb.as_deref_mut() {
            for (o, b) in gb.iter_mut().enumerate() {
                *b = *b + gyi[o * ohw..(o + 1) * ohw].iter().copied().sum::<T>();
            }
        }
        if gx.is_none() && gw.is_none() {
            continue;
        }
        // the data gradient of a transposed convolution is a forward convolution of gy
        im2col(gyi, oc, os.h, os.w, geom, xs.h, xs.w, &mut dcols);
        if let Some(gx) = gx.as_deref_mut() {
            let gxi = &mut gx[n * xs.c * hw..(n + 1) * xs.c * hw];
            gemm(MatRef::new(weight, xs.c, k), MatRef::new(&dcols, k, hw), gxi, true);
        }
        if let Some(gw) = gw.as_deref_mut() {
            let xi = &x[n * xs.c * hw..(n + 1) * xs.c * hw];
            gemm(MatRef::new(xi, xs.c, hw), MatRef::transposed(&dcols, k, hw), gw, true);
        }
    }
}
