//! 2-D cross-correlation via im2col + GEMM.

use crate::error::{shape, Result};
use crate::par;
use crate::tensor::{gemm, MatRef, Real, Tensor};

/// Samples per partial weight-gradient sum. Fixed so that the reduction order,
/// and therefore the result, does not depend on the thread count.
const GRAD_GROUP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], c_out: usize, kernel: usize, stride: usize, pad: usize) -> Result<Self, String> {
        let &[c_in, h, w] = input else {
            return Err(format!("conv2d expects a [C, H, W] input, got {input:?}"));
        };
        if kernel == 0 || stride == 0 || c_out == 0 {
            return Err("conv2d kernel, stride and channel count must be positive".into());
        }
        if h + 2 * pad < kernel || w + 2 * pad < kernel {
            return Err(format!(
                "kernel {kernel} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        let h_out = (h + 2 * pad - kernel) / stride + 1;
        let w_out = (w + 2 * pad - kernel) / stride + 1;
        Ok(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kernel,
            stride,
            pad,
            h_out,
            w_out,
        })
    }

    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.h_out * self.w_out
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfolds one sample into `[C_in * k * k, H_out * W_out]`.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c_in {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oi in 0..g.h_out {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oi * g.w_out..(oi + 1) * g.w_out];
                    if ii < 0 || ii >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + ii as usize) * g.w..][..g.w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *v = if jj < 0 || jj >= g.w as isize {
                            T::zero()
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dx`.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c_in {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oi in 0..g.h_out {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * g.h + ii as usize) * g.w..][..g.w];
                    for oj in 0..g.w_out {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[jj as usize] = dst[jj as usize] + src[oi * g.w_out + oj];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward_batch<T: Real>(x: &[T], batch: usize, g: &ConvGeom, weight: &[T], bias: &[T]) -> Vec<T> {
    let (in_len, out_len, p) = (g.in_len(), g.out_len(), g.positions());
    let mut out = vec![T::zero(); batch * out_len];
    par::for_each_chunk_mut(&mut out, out_len, |b, y| {
        let mut cols = vec![T::zero(); g.patch_len() * p];
        im2col(&x[b * in_len..(b + 1) * in_len], g, &mut cols);
        for (c, row) in y.chunks_exact_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v = bias[c]);
        }
        gemm(
            MatRef::new(weight, g.c_out, g.patch_len()),
            MatRef::new(&cols, g.patch_len(), p),
            T::one(),
            y,
        );
    });
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Vec<T>,
    pub params: Option<(Vec<T>, Vec<T>)>,
}

pub(crate) fn backward_batch<T: Real>(
    x: &[T],
    dy: &[T],
    batch: usize,
    g: &ConvGeom,
    weight: &[T],
    want_params: bool,
) -> ConvGrads<T> {
    let (in_len, out_len, p, q) = (g.in_len(), g.out_len(), g.positions(), g.patch_len());
    let groups = batch.div_ceil(GRAD_GROUP);
    let parts = par::map_indexed(groups, |gi| {
        let lo = gi * GRAD_GROUP;
        let hi = (lo + GRAD_GROUP).min(batch);
        let mut dx = vec![T::zero(); (hi - lo) * in_len];
        let mut dw = if want_params {
            vec![T::zero(); g.c_out * q]
        } else {
            Vec::new()
        };
        let mut db = if want_params {
            vec![T::zero(); g.c_out]
        } else {
            Vec::new()
        };
        let mut cols = vec![T::zero(); q * p];
        for b in lo..hi {
            let dyb = &dy[b * out_len..(b + 1) * out_len];
            if want_params {
                im2col(&x[b * in_len..(b + 1) * in_len], g, &mut cols);
                gemm(
                    MatRef::new(dyb, g.c_out, p),
                    MatRef::transposed(&cols, q, p),
                    T::one(),
                    &mut dw,
                );
                for (c, row) in dyb.chunks_exact(p).enumerate() {
                    db[c] = db[c] + row.iter().copied().sum::<T>();
                }
            }
            gemm(
                MatRef::transposed(weight, g.c_out, q),
                MatRef::new(dyb, g.c_out, p),
                T::zero(),
                &mut cols,
            );
            col2im(&cols, g, &mut dx[(b - lo) * in_len..(b - lo + 1) * in_len]);
        }
        (dx, dw, db)
    });

    let mut input = Vec::with_capacity(batch * in_len);
    let mut dw = vec![T::zero(); if want_params { g.c_out * q } else { 0 }];
    let mut db = vec![T::zero(); if want_params { g.c_out } else { 0 }];
    for (dx, pw, pb) in parts {
        input.extend(dx);
        if want_params {
            dw.iter_mut().zip(pw).for_each(|(a, b)| *a = *a + b);
            db.iter_mut().zip(pb).for_each(|(a, b)| *a = *a + b);
        }
    }
    ConvGrads {
        input,
        params: want_params.then_some((dw, db)),
    }
}

/// Single-sample convolution: `x` is `[C, H, W]`, `weights` `[C', C, k, k]`, `bias` `[C']`.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let &[c_out, c_in, kh, kw] = weights.shape() else {
        return Err(shape(format!(
            "conv weights must be [C', C, k, k], got {:?}",
            weights.shape()
        )));
    };
    if kh != kw {
        return Err(shape("only square kernels are supported"));
    }
    if bias.shape() != [c_out] {
        return Err(shape(format!(
            "bias shape {:?} for {c_out} output channels",
            bias.shape()
        )));
    }
    let g = ConvGeom::new(x.shape(), c_out, kh, stride, padding).map_err(shape)?;
    if g.c_in != c_in {
        return Err(shape(format!("input has {} channels, kernel expects {c_in}", g.c_in)));
    }
    let out = forward_batch(x.data(), 1, &g, weights.data(), bias.data());
    Tensor::new(vec![c_out, g.h_out, g.w_out], out)
}
