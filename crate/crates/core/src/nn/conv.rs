//! SAME convolution and its adjoint (transposed convolution), both lowered
//! to matrix products over an im2col patch matrix.
//!
//! Filters use the `(kh, kw, c_in, c_out)` layout, flattened row-major, so a
//! filter is directly the `K × c_out` right-hand matrix with
//! `K = kh·kw·c_in` and patch columns ordered `(ky, kx, ci)`.

use super::{NnError, Tensor};

/// Geometry of one SAME-padded sliding window along both spatial axes.
/// The odd padding pixel goes to the bottom/right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub s_h: usize,
    pub s_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

pub fn same_out_dim(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

fn same_pad(input: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = same_out_dim(input, stride);
    let total = ((out.saturating_sub(1)) * stride + k).saturating_sub(input);
    (out, total / 2)
}

impl Window {
    pub fn same(in_h: usize, in_w: usize, k: (usize, usize), s: (usize, usize)) -> Result<Self, NnError> {
        let (k_h, k_w) = k;
        let (s_h, s_w) = s;
        if k_h == 0 || k_w == 0 || s_h == 0 || s_w == 0 {
            return Err(NnError::Shape(format!(
                "window sizes and strides must be >= 1 (kernel {k_h}x{k_w}, stride {s_h}x{s_w})"
            )));
        }
        if in_h == 0 || in_w == 0 {
            return Err(NnError::Degenerate(format!(
                "spatial input {in_h}x{in_w} is empty"
            )));
        }
        let (out_h, pad_top) = same_pad(in_h, k_h, s_h);
        let (out_w, pad_left) = same_pad(in_w, k_w, s_w);
        Ok(Self {
            in_h,
            in_w,
            k_h,
            k_w,
            s_h,
            s_w,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    pub fn patches(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input row for output row `oy` and kernel row `ky`, if not padding.
    #[inline]
    pub fn src_y(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.s_h + ky).checked_sub(self.pad_top).filter(|&y| y < self.in_h)
    }

    #[inline]
    pub fn src_x(&self, ox: usize, kx: usize) -> Option<usize> {
        (ox * self.s_w + kx).checked_sub(self.pad_left).filter(|&x| x < self.in_w)
    }
}

/// `c = a·b + beta·c` on row-major matrices with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the callers pass buffers whose extents cover the strided
    // m×k, k×n and m×n views; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-major `(rows × cols)` with normal strides.
fn rm(cols: usize) -> (isize, isize) {
    (cols as isize, 1)
}

/// Transposed view of a row-major `(rows × cols)` matrix.
fn tr(cols: usize) -> (isize, isize) {
    (1, cols as isize)
}

/// Unrolls one image (`in_h × in_w × c`) into a `patches × (kh·kw·c)` matrix.
fn im2col(img: &[f64], c: usize, g: &Window, cols: &mut [f64]) {
    let k = g.k_h * g.k_w * c;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * k..][..k];
            for ky in 0..g.k_h {
                let y = g.src_y(oy, ky);
                for kx in 0..g.k_w {
                    let dst = &mut row[(ky * g.k_w + kx) * c..][..c];
                    match (y, g.src_x(ox, kx)) {
                        (Some(y), Some(x)) => {
                            dst.copy_from_slice(&img[(y * g.in_w + x) * c..][..c]);
                        }
                        _ => dst.fill(0.0),
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch matrix back onto an image; adjoint of [`im2col`].
fn col2im(cols: &[f64], c: usize, g: &Window, img: &mut [f64]) {
    let k = g.k_h * g.k_w * c;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * k..][..k];
            for ky in 0..g.k_h {
                let Some(y) = g.src_y(oy, ky) else { continue };
                for kx in 0..g.k_w {
                    let Some(x) = g.src_x(ox, kx) else { continue };
                    let src = &row[(ky * g.k_w + kx) * c..][..c];
                    let dst = &mut img[(y * g.in_w + x) * c..][..c];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Filter tensor shape `(kh, kw, c_in, c_out)` plus stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterSpec {
    pub k_h: usize,
    pub k_w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub s_h: usize,
    pub s_w: usize,
}

impl FilterSpec {
    pub fn len(&self) -> usize {
        self.k_h * self.k_w * self.c_in * self.c_out
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.c_in
    }

    fn window(&self, in_h: usize, in_w: usize) -> Result<Window, NnError> {
        Window::same(in_h, in_w, (self.k_h, self.k_w), (self.s_h, self.s_w))
    }

    fn check(&self, filters: &[f64], bias: Option<&[f64]>, bias_len: usize) -> Result<(), NnError> {
        if filters.len() != self.len() {
            return Err(NnError::Shape(format!(
                "filter buffer has {} values, spec {:?} needs {}",
                filters.len(),
                self,
                self.len()
            )));
        }
        if let Some(b) = bias {
            if b.len() != bias_len {
                return Err(NnError::Shape(format!(
                    "bias has {} values, expected {bias_len}",
                    b.len()
                )));
            }
        }
        Ok(())
    }
}

/// SAME convolution. Output spatial size is `ceil(in / stride)`.
pub fn conv2d_same(
    input: &Tensor,
    filters: &[f64],
    bias: Option<&[f64]>,
    spec: &FilterSpec,
) -> Result<Tensor, NnError> {
    spec.check(filters, bias, spec.c_out)?;
    if input.channels() != spec.c_in {
        return Err(NnError::Shape(format!(
            "conv expects {} input channels, got {}",
            spec.c_in,
            input.channels()
        )));
    }
    let g = spec.window(input.height(), input.width())?;
    let (p, k) = (g.patches(), spec.patch_len());
    let mut out = Tensor::zeros([input.batch(), g.out_h, g.out_w, spec.c_out]);
    let mut cols = vec![0.0; p * k];
    let out_item = p * spec.c_out;
    for b in 0..input.batch() {
        im2col(input.item(b), spec.c_in, &g, &mut cols);
        let dst = &mut out.data_mut()[b * out_item..][..out_item];
        if let Some(bias) = bias {
            for row in dst.chunks_exact_mut(spec.c_out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(p, k, spec.c_out, &cols, rm(k), filters, rm(spec.c_out), 1.0, dst);
    }
    Ok(out)
}

/// Gradients of [`conv2d_same`]. Filter and bias gradients are accumulated
/// into the given buffers; the input gradient is returned when requested.
pub fn conv2d_same_backward(
    input: &Tensor,
    filters: &[f64],
    spec: &FilterSpec,
    grad_out: &Tensor,
    grad_filters: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Result<Option<Tensor>, NnError> {
    spec.check(filters, Some(grad_bias), spec.c_out)?;
    spec.check(grad_filters, None, 0)?;
    let g = spec.window(input.height(), input.width())?;
    if grad_out.shape() != [input.batch(), g.out_h, g.out_w, spec.c_out] {
        return Err(NnError::Shape(format!(
            "conv output gradient has shape {:?}",
            grad_out.shape()
        )));
    }
    let (p, k) = (g.patches(), spec.patch_len());
    let mut cols = vec![0.0; p * k];
    let mut dcols = vec![0.0; p * k];
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(input.shape()));
    let in_item = input.item_len();
    for b in 0..input.batch() {
        let dy = grad_out.item(b);
        for row in dy.chunks_exact(spec.c_out) {
            for (gb, v) in grad_bias.iter_mut().zip(row) {
                *gb += v;
            }
        }
        im2col(input.item(b), spec.c_in, &g, &mut cols);
        // dW (K×C) += colsᵀ (K×P) · dy (P×C)
        gemm(k, p, spec.c_out, &cols, tr(k), dy, rm(spec.c_out), 1.0, grad_filters);
        if let Some(gi) = grad_in.as_mut() {
            // dcols (P×K) = dy (P×C) · Wᵀ (C×K)
            gemm(p, spec.c_out, k, dy, rm(spec.c_out), filters, tr(spec.c_out), 0.0, &mut dcols);
            col2im(&dcols, spec.c_in, &g, &mut gi.data_mut()[b * in_item..][..in_item]);
        }
    }
    Ok(grad_in)
}

/// Transposed convolution: the adjoint of [`conv2d_same`] with the same
/// filter, mapping a `c_out`-channel map back to a `c_in`-channel map of the
/// given target size. `bias` (if any) has `c_in` entries.
pub fn deconv(
    input: &Tensor,
    filters: &[f64],
    bias: Option<&[f64]>,
    spec: &FilterSpec,
    target_hw: (usize, usize),
) -> Result<Tensor, NnError> {
    spec.check(filters, bias, spec.c_in)?;
    let g = deconv_window(input, spec, target_hw)?;
    let (p, k) = (g.patches(), spec.patch_len());
    let mut out = Tensor::zeros([input.batch(), target_hw.0, target_hw.1, spec.c_in]);
    let mut cols = vec![0.0; p * k];
    let out_item = out.item_len();
    for b in 0..input.batch() {
        // cols (P×K) = y (P×C) · Wᵀ (C×K)
        gemm(p, spec.c_out, k, input.item(b), rm(spec.c_out), filters, tr(spec.c_out), 0.0, &mut cols);
        let dst = &mut out.data_mut()[b * out_item..][..out_item];
        col2im(&cols, spec.c_in, &g, dst);
        if let Some(bias) = bias {
            for px in dst.chunks_exact_mut(spec.c_in) {
                for (v, b) in px.iter_mut().zip(bias) {
                    *v += b;
                }
            }
        }
    }
    Ok(out)
}

fn deconv_window(input: &Tensor, spec: &FilterSpec, target_hw: (usize, usize)) -> Result<Window, NnError> {
    if input.channels() != spec.c_out {
        return Err(NnError::Shape(format!(
            "deconv expects {} input channels, got {}",
            spec.c_out,
            input.channels()
        )));
    }
    let g = spec.window(target_hw.0, target_hw.1)?;
    if (g.out_h, g.out_w) != (input.height(), input.width()) {
        return Err(NnError::Shape(format!(
            "deconv cannot map {}x{} to {}x{} with stride {}x{}",
            input.height(),
            input.width(),
            target_hw.0,
            target_hw.1,
            spec.s_h,
            spec.s_w
        )));
    }
    Ok(g)
}

/// Gradients of [`deconv`].
pub fn deconv_backward(
    input: &Tensor,
    filters: &[f64],
    spec: &FilterSpec,
    grad_out: &Tensor,
    grad_filters: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Result<Option<Tensor>, NnError> {
    spec.check(filters, Some(grad_bias), spec.c_in)?;
    spec.check(grad_filters, None, 0)?;
    let target = (grad_out.height(), grad_out.width());
    let g = deconv_window(input, spec, target)?;
    let (p, k) = (g.patches(), spec.patch_len());
    let mut cols = vec![0.0; p * k];
    let mut grad_in = need_input_grad.then(|| Tensor::zeros(input.shape()));
    let in_item = input.item_len();
    for b in 0..input.batch() {
        let dz = grad_out.item(b);
        for px in dz.chunks_exact(spec.c_in) {
            for (gb, v) in grad_bias.iter_mut().zip(px) {
                *gb += v;
            }
        }
        im2col(dz, spec.c_in, &g, &mut cols);
        // dW (K×C) += colsᵀ (K×P) · y (P×C)
        gemm(k, p, spec.c_out, &cols, tr(k), input.item(b), rm(spec.c_out), 1.0, grad_filters);
        if let Some(gi) = grad_in.as_mut() {
            // dy (P×C) = cols (P×K) · W (K×C)
            let dst = &mut gi.data_mut()[b * in_item..][..in_item];
            gemm(p, k, spec.c_out, &cols, rm(k), filters, rm(spec.c_out), 0.0, dst);
        }
    }
    Ok(grad_in)
}

/// `out (N×U) = x (N×D) · W (D×U) + b`.
pub fn dense(x: &[f64], n: usize, d: usize, w: &[f64], b: &[f64], u: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * u);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    gemm(n, d, u, x, rm(d), w, rm(u), 1.0, &mut out);
    out
}

/// Backward of [`dense`]; accumulates into `gw`/`gb`, returns `dx` if asked.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    x: &[f64],
    n: usize,
    d: usize,
    w: &[f64],
    u: usize,
    dy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    for row in dy.chunks_exact(u) {
        for (g, v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
    gemm(d, n, u, x, tr(d), dy, rm(u), 1.0, gw);
    need_input_grad.then(|| {
        let mut dx = vec![0.0; n * d];
        gemm(n, u, d, dy, rm(u), w, tr(u), 0.0, &mut dx);
        dx
    })
}
