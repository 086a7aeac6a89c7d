//! Dense-tensor kernel: valid (no-padding) convolution, max pooling, ReLU,
//! bicubic resampling, channel-wise cross-correlation, and the central
//! finite-difference oracle that every analytic gradient is checked against.
//!
//! All "convolutions" are cross-correlations (no kernel flip), the
//! deep-learning convention. Operations are pure functions; internal loops
//! keep a fixed summation order so repeat runs are bit-identical.

#![allow(clippy::needless_range_loop)] // index loops mirror the math in kernels

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense 4-D array in batch-outer row-major order: `[batch, channels, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {:?} (needs {})",
                data.len(),
                shape,
                n
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::ZERO; n],
        }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                for y in 0..shape[2] {
                    for x in 0..shape[3] {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    pub fn channels(&self) -> usize {
        self.shape[1]
    }
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    pub fn width(&self) -> usize {
        self.shape[3]
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(b, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, c: usize, y: usize, x: usize) -> &mut T {
        let i = self.index(b, c, y, x);
        &mut self.data[i]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// 2-D grid of scalars (score maps, single-channel images).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T = f32> {
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::ShapeMismatch(format!(
                "grid data length {} does not match {}x{}",
                data.len(),
                h,
                w
            )));
        }
        Ok(Grid { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Grid {
            h,
            w,
            data: vec![T::ZERO; h * w],
        }
    }

    pub fn filled(h: usize, w: usize, v: T) -> Self {
        Grid {
            h,
            w,
            data: vec![v; h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.w + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut T {
        &mut self.data[r * self.w + c]
    }

    pub fn cast<U: Scalar>(&self) -> Grid<U> {
        Grid {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Position and value of the maximum; ties go to the first cell in
    /// row-major scan order.
    pub fn argmax(&self) -> ((usize, usize), T) {
        let mut best = self.data[0];
        let mut at = 0usize;
        for (i, &v) in self.data.iter().enumerate() {
            if v > best {
                best = v;
                at = i;
            }
        }
        ((at / self.w, at % self.w), best)
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let m = n & !3;
    let (mut s0, mut s1, mut s2, mut s3) = (T::ZERO, T::ZERO, T::ZERO, T::ZERO);
    let mut i = 0;
    while i < m {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        i += 4;
    }
    let mut s = (s0 + s1) + (s2 + s3);
    while i < n {
        s += a[i] * b[i];
        i += 1;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(acc: &mut [T], x: &[T], a: T) {
    debug_assert_eq!(acc.len(), x.len());
    for (o, v) in acc.iter_mut().zip(x) {
        *o += a * *v;
    }
}

fn conv_out_len(input: usize, kernel: usize, stride: usize) -> usize {
    (input - kernel) / stride + 1
}

fn check_conv_shapes<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &[T],
    stride: usize,
) -> Result<()> {
    if stride == 0 {
        return Err(Error::InvalidArgument(
            "conv2d stride must be positive".into(),
        ));
    }
    if kernels.channels() != input.channels() {
        return Err(Error::ShapeMismatch(format!(
            "conv2d: kernel shape {:?} does not match input shape {:?} (channel count)",
            kernels.shape(),
            input.shape()
        )));
    }
    if kernels.height() > input.height() || kernels.width() > input.width() {
        return Err(Error::ShapeMismatch(format!(
            "conv2d: kernel shape {:?} exceeds input shape {:?} spatially",
            kernels.shape(),
            input.shape()
        )));
    }
    if bias.len() != kernels.batch() {
        return Err(Error::ShapeMismatch(format!(
            "conv2d: bias length {} does not match {} output channels",
            bias.len(),
            kernels.batch()
        )));
    }
    Ok(())
}

/// Accumulate `w * in_row` into the output row; `step` is the input
/// column stride.
#[inline]
fn accumulate_row<T: Scalar>(out_row: &mut [T], in_row: &[T], w: T, step: usize) {
    if step == 1 {
        axpy(out_row, &in_row[..out_row.len()], w);
    } else {
        let mut s = 0;
        for o in out_row.iter_mut() {
            *o += w * in_row[s];
            s += step;
        }
    }
}

/// `out[j] += sum_v taps[v] * inp[j + v]` with a compile-time tap count,
/// so the tap loop unrolls and the `j` loop vectorizes.
#[inline]
fn fma_row_k<const K: usize, T: Scalar>(out: &mut [T], inp: &[T], taps: &[T]) {
    let mut kk = [T::ZERO; K];
    kk.copy_from_slice(&taps[..K]);
    for (o, w) in out.iter_mut().zip(inp.windows(K)) {
        let mut acc = *o;
        for v in 0..K {
            acc += kk[v] * w[v];
        }
        *o = acc;
    }
}

#[inline]
fn fma_row<T: Scalar>(out: &mut [T], inp: &[T], taps: &[T]) {
    debug_assert!(inp.len() >= out.len() + taps.len() - 1);
    match taps.len() {
        1 => fma_row_k::<1, T>(out, inp, taps),
        2 => fma_row_k::<2, T>(out, inp, taps),
        3 => fma_row_k::<3, T>(out, inp, taps),
        4 => fma_row_k::<4, T>(out, inp, taps),
        5 => fma_row_k::<5, T>(out, inp, taps),
        6 => fma_row_k::<6, T>(out, inp, taps),
        7 => fma_row_k::<7, T>(out, inp, taps),
        8 => fma_row_k::<8, T>(out, inp, taps),
        11 => fma_row_k::<11, T>(out, inp, taps),
        _ => {
            for (v, &w) in taps.iter().enumerate() {
                axpy(out, &inp[v..v + out.len()], w);
            }
        }
    }
}

/// Valid cross-correlation. `kernels` is `[out_channels, in_channels, kh, kw]`;
/// output spatial size is `floor((in - k) / stride) + 1` per axis.
///
/// Stride-1 kernel rows run as fused multi-tap row passes; stride 2 first
/// de-interleaves input columns into even/odd planes so the same row passes
/// apply. Summation order is fixed, so repeat runs are bit-identical.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &[T],
    stride: usize,
) -> Result<Tensor<T>> {
    check_conv_shapes(input, kernels, bias, stride)?;
    let (batch, in_c) = (input.batch(), input.channels());
    let (out_c, kh, kw) = (kernels.batch(), kernels.height(), kernels.width());
    let oh = conv_out_len(input.height(), kh, stride);
    let ow = conv_out_len(input.width(), kw, stride);
    let mut out = Tensor::zeros([batch, out_c, oh, ow]);
    let iw = input.width();

    if stride == 2 {
        // Column polyphase: evens[x'] = row[2x'], odds[x'] = row[2x'+1];
        // then in[2j + v] is evens[j + v/2] for even v, odds[j + (v-1)/2]
        // for odd v, and every tap pass is contiguous in j.
        let ew = iw.div_ceil(2);
        let ow_half = iw / 2;
        let ih = input.height();
        let plane = ih * ew;
        let mut evens = vec![T::ZERO; batch * in_c * plane];
        let mut odds = vec![T::ZERO; batch * in_c * ih * ow_half];
        for bc in 0..batch * in_c {
            for y in 0..ih {
                let src = &input.data[(bc * ih + y) * iw..(bc * ih + y) * iw + iw];
                let erow = &mut evens[bc * plane + y * ew..bc * plane + y * ew + ew];
                for (e, chunk) in erow.iter_mut().zip(src.chunks(2)) {
                    *e = chunk[0];
                }
                let orow = &mut odds[(bc * ih + y) * ow_half..(bc * ih + y) * ow_half + ow_half];
                for (o, chunk) in orow.iter_mut().zip(src.chunks_exact(2)) {
                    *o = chunk[1];
                }
            }
        }
        let n_even = kw.div_ceil(2);
        let n_odd = kw / 2;
        let mut taps_even = vec![T::ZERO; n_even];
        let mut taps_odd = vec![T::ZERO; n_odd];
        for b in 0..batch {
            for o in 0..out_c {
                let obase = out.index(b, o, 0, 0);
                out.data[obase..obase + oh * ow].fill(bias[o]);
                for c in 0..in_c {
                    let bc = b * in_c + c;
                    let kbase = kernels.index(o, c, 0, 0);
                    for u in 0..kh {
                        for (t, tap) in taps_even.iter_mut().enumerate() {
                            *tap = kernels.data[kbase + u * kw + 2 * t];
                        }
                        for (t, tap) in taps_odd.iter_mut().enumerate() {
                            *tap = kernels.data[kbase + u * kw + 2 * t + 1];
                        }
                        for i in 0..oh {
                            let y = 2 * i + u;
                            let orow = obase + i * ow;
                            let erow = bc * plane + y * ew;
                            fma_row(
                                &mut out.data[orow..orow + ow],
                                &evens[erow..erow + ew],
                                &taps_even,
                            );
                            if n_odd > 0 {
                                let orow2 = (bc * ih + y) * ow_half;
                                fma_row(
                                    &mut out.data[orow..orow + ow],
                                    &odds[orow2..orow2 + ow_half],
                                    &taps_odd,
                                );
                            }
                        }
                    }
                }
            }
        }
        return Ok(out);
    }

    for b in 0..batch {
        for o in 0..out_c {
            let obase = out.index(b, o, 0, 0);
            out.data[obase..obase + oh * ow].fill(bias[o]);
            for c in 0..in_c {
                let ibase = input.index(b, c, 0, 0);
                let kbase = kernels.index(o, c, 0, 0);
                for u in 0..kh {
                    if stride == 1 {
                        let krow = &kernels.data[kbase + u * kw..kbase + u * kw + kw];
                        for i in 0..oh {
                            let irow = ibase + (i + u) * iw;
                            let orow = obase + i * ow;
                            fma_row(
                                &mut out.data[orow..orow + ow],
                                &input.data[irow..irow + iw],
                                krow,
                            );
                        }
                    } else {
                        for v in 0..kw {
                            let w = kernels.data[kbase + u * kw + v];
                            for i in 0..oh {
                                let irow = ibase + (i * stride + u) * iw + v;
                                let orow = obase + i * ow;
                                accumulate_row(
                                    &mut out.data[orow..orow + ow],
                                    &input.data[irow..],
                                    w,
                                    stride,
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One backward row pass: per tap, a dot for the kernel gradient and an
/// axpy scatter for the input gradient. Both primitives vectorize across
/// the row; a fused variant cannot, because the scatter windows overlap.
#[inline]
fn grad_row<T: Scalar>(g_row: &[T], in_row: &[T], gi_row: &mut [T], taps: &[T], acc: &mut [T]) {
    let n = g_row.len();
    for (v, (&w, a)) in taps.iter().zip(acc.iter_mut()).enumerate() {
        *a += dot(g_row, &in_row[v..v + n]);
        axpy(&mut gi_row[v..v + n], g_row, w);
    }
}

/// Gradients of `sum(upstream * conv2d(input, kernels, bias, stride))`
/// with respect to input, kernels, and bias. Mirrors the forward loop
/// structure: fused multi-tap row passes, with stride 2 handled through
/// even/odd column phases.
pub fn conv2d_grad<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let out_c = kernels.batch();
    check_conv_shapes(input, kernels, &vec![T::ZERO; out_c], stride)?;
    let (kh, kw) = (kernels.height(), kernels.width());
    let oh = conv_out_len(input.height(), kh, stride);
    let ow = conv_out_len(input.width(), kw, stride);
    let expect = [input.batch(), out_c, oh, ow];
    if upstream.shape() != expect {
        return Err(Error::ShapeMismatch(format!(
            "conv2d_grad: upstream shape {:?} does not match output shape {:?}",
            upstream.shape(),
            expect
        )));
    }

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_kernels = Tensor::zeros(kernels.shape());
    let mut grad_bias = vec![T::ZERO; out_c];
    let (batch, in_c, ih, iw) = (
        input.batch(),
        input.channels(),
        input.height(),
        input.width(),
    );

    if stride == 2 {
        let ew = iw.div_ceil(2);
        let ohw = iw / 2;
        let eplane = ih * ew;
        let oplane = ih * ohw;
        let mut evens = vec![T::ZERO; batch * in_c * eplane];
        let mut odds = vec![T::ZERO; batch * in_c * oplane];
        for bc in 0..batch * in_c {
            for y in 0..ih {
                let src = &input.data[(bc * ih + y) * iw..(bc * ih + y) * iw + iw];
                let er = bc * eplane + y * ew;
                for (e, chunk) in evens[er..er + ew].iter_mut().zip(src.chunks(2)) {
                    *e = chunk[0];
                }
                let or = bc * oplane + y * ohw;
                for (o, chunk) in odds[or..or + ohw].iter_mut().zip(src.chunks_exact(2)) {
                    *o = chunk[1];
                }
            }
        }
        let mut gi_even = vec![T::ZERO; batch * in_c * eplane];
        let mut gi_odd = vec![T::ZERO; batch * in_c * oplane];
        let n_even = kw.div_ceil(2);
        let n_odd = kw / 2;
        let mut taps_even = vec![T::ZERO; n_even];
        let mut taps_odd = vec![T::ZERO; n_odd];
        let mut acc_even = vec![T::ZERO; n_even];
        let mut acc_odd = vec![T::ZERO; n_odd];
        for b in 0..batch {
            for o in 0..out_c {
                let ubase = upstream.index(b, o, 0, 0);
                for &g in &upstream.data[ubase..ubase + oh * ow] {
                    grad_bias[o] += g;
                }
                for c in 0..in_c {
                    let bc = b * in_c + c;
                    let kbase = kernels.index(o, c, 0, 0);
                    for u in 0..kh {
                        for (t, tap) in taps_even.iter_mut().enumerate() {
                            *tap = kernels.data[kbase + u * kw + 2 * t];
                        }
                        for (t, tap) in taps_odd.iter_mut().enumerate() {
                            *tap = kernels.data[kbase + u * kw + 2 * t + 1];
                        }
                        acc_even.fill(T::ZERO);
                        acc_odd.fill(T::ZERO);
                        for i in 0..oh {
                            let y = 2 * i + u;
                            let urow = ubase + i * ow;
                            let g_row = &upstream.data[urow..urow + ow];
                            let er = bc * eplane + y * ew;
                            grad_row(
                                g_row,
                                &evens[er..er + ew],
                                &mut gi_even[er..er + ew],
                                &taps_even,
                                &mut acc_even,
                            );
                            if n_odd > 0 {
                                let or = bc * oplane + y * ohw;
                                grad_row(
                                    g_row,
                                    &odds[or..or + ohw],
                                    &mut gi_odd[or..or + ohw],
                                    &taps_odd,
                                    &mut acc_odd,
                                );
                            }
                        }
                        for (t, &a) in acc_even.iter().enumerate() {
                            grad_kernels.data[kbase + u * kw + 2 * t] += a;
                        }
                        for (t, &a) in acc_odd.iter().enumerate() {
                            grad_kernels.data[kbase + u * kw + 2 * t + 1] += a;
                        }
                    }
                }
            }
        }
        // Interleave the phase gradients back into pixel order.
        for bc in 0..batch * in_c {
            for y in 0..ih {
                let dst = &mut grad_input.data[(bc * ih + y) * iw..(bc * ih + y) * iw + iw];
                let er = bc * eplane + y * ew;
                for (chunk, &e) in dst.chunks_mut(2).zip(&gi_even[er..er + ew]) {
                    chunk[0] = e;
                }
                let or = bc * oplane + y * ohw;
                for (chunk, &o) in dst.chunks_exact_mut(2).zip(&gi_odd[or..or + ohw]) {
                    chunk[1] = o;
                }
            }
        }
        return Ok((grad_input, grad_kernels, grad_bias));
    }

    for b in 0..batch {
        for o in 0..out_c {
            let ubase = upstream.index(b, o, 0, 0);
            for &g in &upstream.data[ubase..ubase + oh * ow] {
                grad_bias[o] += g;
            }
            for c in 0..in_c {
                let ibase = input.index(b, c, 0, 0);
                let kbase = kernels.index(o, c, 0, 0);
                for u in 0..kh {
                    if stride == 1 {
                        let krow = &kernels.data[kbase + u * kw..kbase + u * kw + kw];
                        let mut acc = vec![T::ZERO; kw];
                        for i in 0..oh {
                            let irow = ibase + (i + u) * iw;
                            let urow = ubase + i * ow;
                            grad_row(
                                &upstream.data[urow..urow + ow],
                                &input.data[irow..irow + iw],
                                &mut grad_input.data[irow..irow + iw],
                                krow,
                                &mut acc,
                            );
                        }
                        for (v, &a) in acc.iter().enumerate() {
                            grad_kernels.data[kbase + u * kw + v] += a;
                        }
                    } else {
                        for v in 0..kw {
                            let kidx = kbase + u * kw + v;
                            let w = kernels.data[kidx];
                            let mut acc = T::ZERO;
                            for i in 0..oh {
                                let irow = ibase + (i * stride + u) * iw + v;
                                let urow = ubase + i * ow;
                                let g_row = &upstream.data[urow..urow + ow];
                                let mut s = irow;
                                for &g in g_row {
                                    acc += g * input.data[s];
                                    grad_input.data[s] += g * w;
                                    s += stride;
                                }
                            }
                            grad_kernels.data[kidx] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok((grad_input, grad_kernels, grad_bias))
}

/// Elementwise `max(0, x)`.
pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: input.shape(),
        data: input.data.iter().map(|&v| v.max(T::ZERO)).collect(),
    }
}

/// Backward of [`relu`]: upstream gated by `input > 0`.
pub fn relu_grad<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != upstream.shape() {
        return Err(Error::ShapeMismatch(format!(
            "relu_grad: upstream shape {:?} does not match input shape {:?}",
            upstream.shape(),
            input.shape()
        )));
    }
    Ok(Tensor {
        shape: input.shape(),
        data: input
            .data
            .iter()
            .zip(&upstream.data)
            .map(|(&x, &g)| if x > T::ZERO { g } else { T::ZERO })
            .collect(),
    })
}

/// Per-window maximum with stored argmax positions (flat indices into the
/// input); ties break to the first element in row-major scan order.
pub fn max_pool<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "max_pool window and stride must be positive".into(),
        ));
    }
    if window > input.height() || window > input.width() {
        return Err(Error::InvalidArgument(format!(
            "max_pool window {} larger than input {:?}",
            window,
            input.shape()
        )));
    }
    let oh = conv_out_len(input.height(), window, stride);
    let ow = conv_out_len(input.width(), window, stride);
    let mut out = Tensor::zeros([input.batch(), input.channels(), oh, ow]);
    let mut argmax = vec![0usize; out.data.len()];

    let iw = input.width();
    let mut oi = 0;
    for b in 0..input.batch() {
        for c in 0..input.channels() {
            for i in 0..oh {
                for j in 0..ow {
                    let base = input.index(b, c, i * stride, j * stride);
                    let mut best = input.data[base];
                    let mut best_at = base;
                    for u in 0..window {
                        for v in 0..window {
                            let idx = base + u * iw + v;
                            if input.data[idx] > best {
                                best = input.data[idx];
                                best_at = idx;
                            }
                        }
                    }
                    out.data[oi] = best;
                    argmax[oi] = best_at;
                    oi += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// [`max_pool`] without argmax bookkeeping, for inference: a vertical max
/// over the window rows followed by a horizontal max. Values are identical
/// to [`max_pool`]'s.
pub fn max_pool_values<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "max_pool window and stride must be positive".into(),
        ));
    }
    if window > input.height() || window > input.width() {
        return Err(Error::InvalidArgument(format!(
            "max_pool window {} larger than input {:?}",
            window,
            input.shape()
        )));
    }
    let oh = conv_out_len(input.height(), window, stride);
    let ow = conv_out_len(input.width(), window, stride);
    let mut out = Tensor::zeros([input.batch(), input.channels(), oh, ow]);
    let iw = input.width();
    let mut vmax = vec![T::ZERO; iw];
    let mut oi = 0;
    for bc in 0..input.batch() * input.channels() {
        let base = bc * input.height() * iw;
        for i in 0..oh {
            let top = base + i * stride * iw;
            vmax.copy_from_slice(&input.data[top..top + iw]);
            for u in 1..window {
                let row = &input.data[top + u * iw..top + u * iw + iw];
                for (m, &v) in vmax.iter_mut().zip(row) {
                    *m = m.max(v);
                }
            }
            for j in 0..ow {
                let s = j * stride;
                let mut m = vmax[s];
                for v in 1..window {
                    m = m.max(vmax[s + v]);
                }
                out.data[oi] = m;
                oi += 1;
            }
        }
    }
    Ok(out)
}

/// Backward of [`max_pool`]: routes upstream only to the stored argmaxes.
pub fn max_pool_grad<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
    argmax: &[usize],
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    let oh = conv_out_len(input.height(), window, stride);
    let ow = conv_out_len(input.width(), window, stride);
    let expect = [input.batch(), input.channels(), oh, ow];
    if upstream.shape() != expect {
        return Err(Error::ShapeMismatch(format!(
            "max_pool_grad: upstream shape {:?} does not match pooled shape {:?}",
            upstream.shape(),
            expect
        )));
    }
    if argmax.len() != upstream.data.len() {
        return Err(Error::ShapeMismatch(format!(
            "max_pool_grad: argmax length {} does not match pooled element count {}",
            argmax.len(),
            upstream.data.len()
        )));
    }
    let mut grad = Tensor::zeros(input.shape());
    for (&src, &g) in argmax.iter().zip(&upstream.data) {
        grad.data[src] += g;
    }
    Ok(grad)
}

/// Catmull-Rom weights (a = -0.5) for taps at `floor(src) - 1 .. floor(src) + 2`.
#[inline]
pub(crate) fn cubic_weights(t: f64) -> [f64; 4] {
    // Horner forms of the a = -0.5 cubic convolution kernel.
    let w0 = ((-0.5 * t + 1.0) * t - 0.5) * t;
    let w1 = (1.5 * t - 2.5) * t * t + 1.0;
    let w2 = ((-1.5 * t + 2.0) * t + 0.5) * t;
    let w3 = (0.5 * t - 0.5) * t * t;
    [w0, w1, w2, w3]
}

#[derive(Clone, Copy)]
struct AxisTap {
    idx: [usize; 4],
    w: [f64; 4],
}

/// Taps for an affine sample grid `src = a * dst + b`, edge-clamped.
fn axis_taps(in_len: usize, out_len: usize, a: f64, b: f64) -> Vec<AxisTap> {
    (0..out_len)
        .map(|d| {
            let src = a * d as f64 + b;
            let base = crate::math::floor(src);
            let t = src - base;
            let w = cubic_weights(t);
            let mut idx = [0usize; 4];
            for (k, slot) in idx.iter_mut().enumerate() {
                let i = base as i64 - 1 + k as i64;
                *slot = i.clamp(0, in_len as i64 - 1) as usize;
            }
            AxisTap { idx, w }
        })
        .collect()
}

fn resample_grid<T: Scalar>(grid: &Grid<T>, rows: &[AxisTap], cols: &[AxisTap]) -> Grid<T> {
    // Separable two-pass: vertical gather into an f64 buffer, then horizontal.
    let (ih, iw) = (grid.height(), grid.width());
    let (oh, ow) = (rows.len(), cols.len());
    let mut tmp = vec![0.0f64; oh * iw];
    for (r, tap) in rows.iter().enumerate() {
        let dst = &mut tmp[r * iw..(r + 1) * iw];
        for k in 0..4 {
            let srow = &grid.data[tap.idx[k] * iw..tap.idx[k] * iw + iw];
            let wk = tap.w[k];
            for (d, &s) in dst.iter_mut().zip(srow) {
                *d += wk * s.to_f64();
            }
        }
    }
    let _ = ih;
    let mut out = Grid::zeros(oh, ow);
    for r in 0..oh {
        let srow = &tmp[r * iw..(r + 1) * iw];
        for (c, tap) in cols.iter().enumerate() {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += tap.w[k] * srow[tap.idx[k]];
            }
            *out.at_mut(r, c) = T::from_f64(acc);
        }
    }
    out
}

/// Bicubic resize of a 2-D grid to `out_h x out_w`.
///
/// The sample grid is anchored at the origin (`src = dst * in / out`), so
/// an integer upsample factor maps source cell `k` exactly onto output
/// cell `k * factor`; boundaries are edge-clamped and constant inputs are
/// reproduced as constants.
pub fn bicubic_resize<T: Scalar>(grid: &Grid<T>, out_h: usize, out_w: usize) -> Result<Grid<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(
            "bicubic_resize: requested output size is zero".into(),
        ));
    }
    if grid.height() < 2 || grid.width() < 2 {
        return Err(Error::InvalidArgument(format!(
            "bicubic_resize: input {}x{} is smaller than 2x2",
            grid.height(),
            grid.width()
        )));
    }
    let rows = axis_taps(
        grid.height(),
        out_h,
        grid.height() as f64 / out_h as f64,
        0.0,
    );
    let cols = axis_taps(grid.width(), out_w, grid.width() as f64 / out_w as f64, 0.0);
    Ok(resample_grid(grid, &rows, &cols))
}

/// Bicubic resample of a square patch of side `side` (frame pixels)
/// centered at `center`, to `out x out` output pixels per channel.
///
/// Output pixel `(out - 1) / 2` lands exactly on `center`. Taps outside
/// the frame use the frame's per-channel mean (context padding).
pub fn sample_patch<T: Scalar>(
    frame: &Tensor<T>,
    center: (f64, f64),
    side: f64,
    out: usize,
) -> Result<Tensor<T>> {
    if frame.batch() != 1 {
        return Err(Error::InvalidArgument(format!(
            "sample_patch expects a single-image tensor, got batch {}",
            frame.batch()
        )));
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must be rejected too
    if !(side > 0.0) || out == 0 {
        return Err(Error::InvalidArgument(
            "sample_patch: side and output size must be positive".into(),
        ));
    }
    let (ch, ih, iw) = (frame.channels(), frame.height(), frame.width());
    let scale = side / out as f64;
    let half = (out - 1) as f64 / 2.0;
    // src = scale * dst + (center - half * scale), per axis; taps may fall
    // outside the frame and are then filled with the channel mean.
    type Taps = Vec<([i64; 4], [f64; 4])>;
    let taps_axis = |len: usize, c: f64| -> Taps {
        (0..out)
            .map(|d| {
                let src = scale * (d as f64 - half) + c;
                let base = crate::math::floor(src);
                let t = src - base;
                let w = cubic_weights(t);
                let mut idx = [0i64; 4];
                for (k, slot) in idx.iter_mut().enumerate() {
                    *slot = base as i64 - 1 + k as i64;
                }
                let _ = len;
                (idx, w)
            })
            .collect()
    };
    let rows = taps_axis(ih, center.1);
    let cols = taps_axis(iw, center.0);

    let mut output = Tensor::zeros([1, ch, out, out]);
    let mut tmp = vec![0.0f64; out * iw];
    for c in 0..ch {
        let plane = &frame.data[frame.index(0, c, 0, 0)..frame.index(0, c, 0, 0) + ih * iw];
        let mean = plane.iter().map(|v| v.to_f64()).sum::<f64>() / (ih * iw) as f64;
        for (r, (idx, w)) in rows.iter().enumerate() {
            let dst = &mut tmp[r * iw..(r + 1) * iw];
            dst.fill(0.0);
            for k in 0..4 {
                let y = idx[k];
                if y < 0 || y >= ih as i64 {
                    for d in dst.iter_mut() {
                        *d += w[k] * mean;
                    }
                } else {
                    let srow = &plane[y as usize * iw..y as usize * iw + iw];
                    for (d, &s) in dst.iter_mut().zip(srow) {
                        *d += w[k] * s.to_f64();
                    }
                }
            }
        }
        for r in 0..out {
            let srow = &tmp[r * iw..(r + 1) * iw];
            for (x, (idx, w)) in cols.iter().enumerate() {
                let mut acc = 0.0;
                for k in 0..4 {
                    let xi = idx[k];
                    acc += w[k]
                        * if xi < 0 || xi >= iw as i64 {
                            mean
                        } else {
                            srow[xi as usize]
                        };
                }
                *output.at_mut(0, c, r, x) = T::from_f64(acc);
            }
        }
    }
    Ok(output)
}

/// Valid sliding-window inner product over all channels; output size is
/// `search - exemplar + 1` per axis. Summation is a single accumulator in
/// `(channel, row, column)` order, matching the brute-force definition
/// term for term.
pub fn cross_correlate<T: Scalar>(
    exemplar_feat: &Tensor<T>,
    search_feat: &Tensor<T>,
) -> Result<Grid<T>> {
    if exemplar_feat.batch() != 1 || search_feat.batch() != 1 {
        return Err(Error::InvalidArgument(
            "cross_correlate expects single-batch feature maps".into(),
        ));
    }
    if exemplar_feat.channels() != search_feat.channels() {
        return Err(Error::ShapeMismatch(format!(
            "cross_correlate: exemplar channels {} != search channels {}",
            exemplar_feat.channels(),
            search_feat.channels()
        )));
    }
    if exemplar_feat.height() > search_feat.height() || exemplar_feat.width() > search_feat.width()
    {
        return Err(Error::ShapeMismatch(format!(
            "cross_correlate: exemplar {:?} exceeds search {:?} spatially",
            exemplar_feat.shape(),
            search_feat.shape()
        )));
    }
    let (ch, eh, ew) = (
        exemplar_feat.channels(),
        exemplar_feat.height(),
        exemplar_feat.width(),
    );
    let oh = search_feat.height() - eh + 1;
    let ow = search_feat.width() - ew + 1;
    let mut out = Grid::zeros(oh, ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = T::ZERO;
            for c in 0..ch {
                for ky in 0..eh {
                    let e = exemplar_feat.index(0, c, ky, 0);
                    let s = search_feat.index(0, c, oy + ky, ox);
                    for kx in 0..ew {
                        acc += exemplar_feat.data[e + kx] * search_feat.data[s + kx];
                    }
                }
            }
            *out.at_mut(oy, ox) = acc;
        }
    }
    Ok(out)
}

/// Central finite differences `(f(x + e) - f(x - e)) / 2e` per coordinate,
/// evaluated in 64-bit. This is the independent oracle for every analytic
/// gradient in the crate.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    point: &[f64],
    epsilon: f64,
) -> Vec<f64> {
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + epsilon;
        let fp = f(&x);
        x[i] = orig - epsilon;
        let fm = f(&x);
        x[i] = orig;
        grad.push((fp - fm) / (2.0 * epsilon));
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(shape: [usize; 4], rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _, _, _| rng.uniform(-1.0, 1.0))
    }

    pub(crate) fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        let scale = analytic
            .iter()
            .chain(numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-9);
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-3 * scale))
            .fold(0.0, f64::max)
    }

    #[test]
    fn conv_all_ones_sums_to_nine() {
        let x = Tensor::new([1, 1, 3, 3], vec![1.0f32; 9]).unwrap();
        let k = Tensor::new([1, 1, 3, 3], vec![1.0f32; 9]).unwrap();
        let y = conv2d(&x, &k, &[0.0], 1).unwrap();
        assert_eq!(y.shape(), [1, 1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn conv_impulse_response_is_flipped_kernel() {
        // Correlation convention: the response to a centered impulse is the
        // kernel flipped in both axes.
        let mut x = Tensor::zeros([1, 1, 5, 5]);
        *x.at_mut(0, 0, 2, 2) = 1.0f32;
        let k = Tensor::new([1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let y = conv2d(&x, &k, &[0.0], 1).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(y.at(0, 0, r, c), k.at(0, 0, 2 - r, 2 - c));
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch_naming_shapes() {
        let x = Tensor::zeros([1, 2, 4, 4]);
        let k = Tensor::zeros([1, 3, 3, 3]);
        let err = conv2d(&x, &k, &[0.0f32], 1).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(
            msg.contains("[1, 3, 3, 3]") && msg.contains("[1, 2, 4, 4]"),
            "{msg}"
        );
    }

    #[test]
    fn conv_grad_zero_upstream_is_zero() {
        let mut rng = Rng::from_seed(5);
        let x = random_tensor([1, 2, 5, 5], &mut rng);
        let k = random_tensor([3, 2, 3, 3], &mut rng);
        let up = Tensor::zeros([1, 3, 3, 3]);
        let (gi, gk, gb) = conv2d_grad(&x, &k, 1, &up).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gk.data().iter().all(|&v| v == 0.0));
        assert!(gb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_grad_scalar_case_is_product_rule() {
        let x = Tensor::new([1, 1, 1, 1], vec![3.0f64]).unwrap();
        let k = Tensor::new([1, 1, 1, 1], vec![5.0f64]).unwrap();
        let up = Tensor::new([1, 1, 1, 1], vec![2.0f64]).unwrap();
        let (gi, gk, gb) = conv2d_grad(&x, &k, 1, &up).unwrap();
        assert_eq!(gi.data()[0], 10.0); // k * g
        assert_eq!(gk.data()[0], 6.0); // x * g
        assert_eq!(gb[0], 2.0);
    }

    #[test]
    fn conv_grad_matches_finite_differences() {
        let mut rng = Rng::from_seed(42);
        let x = random_tensor([2, 2, 5, 6], &mut rng);
        let k = random_tensor([3, 2, 3, 3], &mut rng);
        let bias: Vec<f64> = (0..3).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let stride = 2;
        let up = random_tensor([2, 3, 2, 2], &mut rng);
        let (gi, gk, gb) = conv2d_grad(&x, &k, stride, &up).unwrap();

        let loss = |xs: &[f64], ks: &[f64], bs: &[f64]| -> f64 {
            let xt = Tensor::new(x.shape(), xs.to_vec()).unwrap();
            let kt = Tensor::new(k.shape(), ks.to_vec()).unwrap();
            let y = conv2d(&xt, &kt, bs, stride).unwrap();
            y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-5;
        let gi_n = finite_diff_grad(|xs| loss(xs, k.data(), &bias), x.data(), eps);
        let gk_n = finite_diff_grad(|ks| loss(x.data(), ks, &bias), k.data(), eps);
        let gb_n = finite_diff_grad(|bs| loss(x.data(), k.data(), bs), &bias, eps);
        assert!(max_rel_err(gi.data(), &gi_n) < 1e-6);
        assert!(max_rel_err(gk.data(), &gk_n) < 1e-6);
        assert!(max_rel_err(&gb, &gb_n) < 1e-6);
    }

    #[test]
    fn relu_and_grad() {
        let x = Tensor::new([1, 1, 1, 3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let up = Tensor::new([1, 1, 1, 3], vec![5.0f32, 5.0, 5.0]).unwrap();
        assert_eq!(relu_grad(&x, &up).unwrap().data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn max_pool_basic_and_ties() {
        let x = Tensor::new([1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, am) = max_pool(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(am, vec![3]);

        let flat = Tensor::new([1, 1, 2, 2], vec![7.0f32; 4]).unwrap();
        let (_, am) = max_pool(&flat, 2, 2).unwrap();
        assert_eq!(am, vec![0], "ties break to first row-major index");
    }

    #[test]
    fn max_pool_window_too_large_rejected() {
        let x = Tensor::zeros([1, 1, 2, 2]);
        assert!(max_pool::<f32>(&x, 3, 1).is_err());
    }

    #[test]
    fn max_pool_grad_matches_finite_differences() {
        let mut rng = Rng::from_seed(9);
        let x = random_tensor([1, 2, 6, 6], &mut rng);
        let (_, argmax) = max_pool(&x, 3, 2).unwrap();
        let up = random_tensor([1, 2, 2, 2], &mut rng);
        let g = max_pool_grad(&x, 3, 2, &argmax, &up).unwrap();
        let loss = |xs: &[f64]| -> f64 {
            let xt = Tensor::new(x.shape(), xs.to_vec()).unwrap();
            let (y, _) = max_pool(&xt, 3, 2).unwrap();
            y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        let g_n = finite_diff_grad(loss, x.data(), 1e-6);
        assert!(max_rel_err(g.data(), &g_n) < 1e-6);
    }

    #[test]
    fn bicubic_shape_and_constant() {
        let g = Grid::filled(17, 17, 3.5f32);
        let up = bicubic_resize(&g, 272, 272).unwrap();
        assert_eq!((up.height(), up.width()), (272, 272));
        for &v in up.data() {
            assert!((v - 3.5).abs() < 1e-6);
        }
    }

    #[test]
    fn bicubic_rejects_zero_output() {
        let g = Grid::filled(4, 4, 1.0f32);
        assert!(bicubic_resize(&g, 0, 8).is_err());
    }

    #[test]
    fn bicubic_integer_factor_reproduces_samples() {
        let mut rng = Rng::from_seed(3);
        let g = Grid::new(
            5,
            5,
            (0..25).map(|_| rng.uniform(0.0, 1.0)).collect::<Vec<f64>>(),
        )
        .unwrap();
        let up = bicubic_resize(&g, 20, 20).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                assert!((up.at(4 * r, 4 * c) - g.at(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bicubic_peak_argmax_matches_direct_evaluation() {
        // Independent oracle: direct (non-separable) 2-D cubic evaluation.
        let peak = (3usize, 5usize);
        let g = Grid::new(
            9,
            9,
            (0..81)
                .map(|i| {
                    let (r, c) = (i / 9, i % 9);
                    let d2 =
                        (r as f64 - peak.0 as f64).powi(2) + (c as f64 - peak.1 as f64).powi(2);
                    crate::math::exp(-d2 / 2.0) as f32
                })
                .collect(),
        )
        .unwrap();
        let factor = 16;
        let up = bicubic_resize(&g, 9 * factor, 9 * factor).unwrap();

        let direct = |r: usize, c: usize| -> f64 {
            let sample = |y: f64, x: f64| -> f64 {
                let (by, bx) = (crate::math::floor(y), crate::math::floor(x));
                let (wy, wx) = (cubic_weights(y - by), cubic_weights(x - bx));
                let mut acc = 0.0;
                for ky in 0..4 {
                    for kx in 0..4 {
                        let yy = (by as i64 - 1 + ky as i64).clamp(0, 8) as usize;
                        let xx = (bx as i64 - 1 + kx as i64).clamp(0, 8) as usize;
                        acc += wy[ky] * wx[kx] * g.at(yy, xx) as f64;
                    }
                }
                acc
            };
            sample(r as f64 * 9.0 / 144.0, c as f64 * 9.0 / 144.0)
        };

        let mut best = ((0usize, 0usize), f64::NEG_INFINITY);
        for r in 0..144 {
            for c in 0..144 {
                let v = direct(r, c);
                if v > best.1 {
                    best = ((r, c), v);
                }
            }
        }
        let (impl_at, _) = up.argmax();
        assert_eq!(impl_at, best.0);
        let expect = (peak.0 * factor, peak.1 * factor);
        assert!(
            (impl_at.0 as i64 - expect.0 as i64).abs() <= 1
                && (impl_at.1 as i64 - expect.1 as i64).abs() <= 1,
            "argmax {impl_at:?} vs peak*factor {expect:?}"
        );
    }

    #[test]
    fn xcorr_shapes_and_zero() {
        let z = Tensor::zeros([1, 4, 6, 6]);
        let x = Tensor::<f32>::from_fn([1, 4, 22, 22], |_, c, y, xx| (c + y + xx) as f32);
        let g = cross_correlate(&z, &x).unwrap();
        assert_eq!((g.height(), g.width()), (17, 17));
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn xcorr_channel_mismatch_rejected() {
        let z = Tensor::<f32>::zeros([1, 2, 3, 3]);
        let x = Tensor::<f32>::zeros([1, 3, 5, 5]);
        assert!(cross_correlate(&z, &x).is_err());
    }

    #[test]
    fn xcorr_unit_normalized_subwindow_peaks_at_offset() {
        // A unit-normalized exemplar equal to a sub-window of the search map
        // has its global maximum at that sub-window's offset (Cauchy-Schwarz
        // over every window, checked by exhaustive score evaluation).
        let mut rng = Rng::from_seed(17);
        let search =
            Tensor::<f32>::from_fn([1, 3, 10, 10], |_, _, _, _| rng.uniform(-1.0, 1.0) as f32);
        let (oy, ox) = (4usize, 2usize);
        let mut z =
            Tensor::<f32>::from_fn([1, 3, 4, 4], |_, c, y, x| search.at(0, c, oy + y, ox + x));
        let norm: f32 = z.data().iter().map(|v| v * v).sum::<f32>().sqrt();
        for v in z.data_mut() {
            *v /= norm;
        }
        let g = cross_correlate(&z, &search).unwrap();
        // exhaustive re-evaluation oracle
        let mut best = ((0usize, 0usize), f32::NEG_INFINITY);
        for r in 0..g.height() {
            for c in 0..g.width() {
                let mut acc = 0.0f32;
                for ch in 0..3 {
                    for y in 0..4 {
                        for x in 0..4 {
                            acc += z.at(0, ch, y, x) * search.at(0, ch, r + y, c + x);
                        }
                    }
                }
                assert_eq!(acc, g.at(r, c), "brute-force equality must be exact");
                if acc > best.1 {
                    best = ((r, c), acc);
                }
            }
        }
        assert_eq!(best.0, (oy, ox));
        assert_eq!(g.argmax().0, (oy, ox));
    }

    #[test]
    fn finite_diff_on_square_and_constant() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-4);
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_grad(|_| 2.5, &[1.0, 2.0], 1e-4);
        assert!(g.iter().all(|&v| v == 0.0));
    }
}
