//! Forward and backward kernels over plain [`Tensor`] values.
//!
//! These never touch a tape; [`super::Tape`] composes them into
//! differentiable operations. Calling a kernel on a detached tensor gives
//! exactly the forward value the tape would record.

use super::Tensor;
use crate::error::{Error, Result};

/// Convolution implementation. Both paths compute the same cross-correlation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvAlgo {
    /// Nested loops over every tap. Slow, used as a reference.
    Direct,
    /// Unfold patches into a column matrix and multiply with a GEMM.
    #[default]
    Im2col,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative expressed through the input `x` and the output `y`.
    /// The ReLU derivative at exactly zero is taken to be zero.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    // Split by sign so exp never overflows.
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    x.map(|v| kind.apply(v))
}

/// Spatial output extent of a stride-1 convolution.
fn conv_out_extent(input: usize, kernel: usize, padding: usize) -> Result<usize> {
    (input + 2 * padding)
        .checked_sub(kernel)
        .map(|v| v + 1)
        .ok_or_else(|| {
            Error::shape(
                "conv2d",
                format!("kernel {kernel} larger than padded input {input}+2*{padding}"),
            )
        })
}

struct ConvGeometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(x: &Tensor, weight: &Tensor, padding: usize) -> Result<Self> {
        let [n, cin, h, w] = x.dims4("conv2d")?;
        let [cout, wcin, kh, kw] = weight.dims4("conv2d")?;
        if wcin != cin {
            return Err(Error::mismatch("conv2d", x.shape(), weight.shape()));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            ho: conv_out_extent(h, kh, padding)?,
            wo: conv_out_extent(w, kw, padding)?,
            pad: padding,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// True when the column matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.pad == 0
    }

    fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.ho, self.wo]
    }
}

fn check_bias(bias: &Tensor, cout: usize) -> Result<()> {
    if bias.shape() != [cout] {
        return Err(Error::mismatch("conv2d bias", bias.shape(), &[cout]));
    }
    Ok(())
}

/// Stride-1 2-D cross-correlation with symmetric zero padding.
///
/// `x` is `[N, Cin, H, W]`, `weight` is `[Cout, Cin, kh, kw]`, `bias` is
/// `[Cout]`.
pub fn conv2d(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    padding: usize,
    algo: ConvAlgo,
) -> Result<Tensor> {
    let g = ConvGeometry::new(x, weight, padding)?;
    check_bias(bias, g.cout)?;
    let mut out = Tensor::zeros(&g.out_shape());
    match algo {
        ConvAlgo::Direct => conv_direct(&g, x.data(), weight.data(), out.data_mut()),
        ConvAlgo::Im2col => conv_im2col(&g, x.data(), weight.data(), out.data_mut()),
    }
    let p = g.p();
    if p > 0 {
        for (idx, plane) in out.data_mut().chunks_mut(p).enumerate() {
            let b = bias.data()[idx % g.cout];
            plane.iter_mut().for_each(|v| *v += b);
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    padding: usize,
    algo: ConvAlgo,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = ConvGeometry::new(x, weight, padding)?;
    if grad_out.shape() != g.out_shape() {
        return Err(Error::mismatch("conv2d backward", grad_out.shape(), &g.out_shape()));
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[g.cout]);
    match algo {
        ConvAlgo::Direct => conv_direct_backward(
            &g,
            x.data(),
            weight.data(),
            grad_out.data(),
            dx.data_mut(),
            dw.data_mut(),
        ),
        ConvAlgo::Im2col => conv_im2col_backward(
            &g,
            x.data(),
            weight.data(),
            grad_out.data(),
            dx.data_mut(),
            dw.data_mut(),
        ),
    }
    let p = g.p();
    if p > 0 {
        for (idx, plane) in grad_out.data().chunks(p).enumerate() {
            db.data_mut()[idx % g.cout] += plane.iter().sum::<f64>();
        }
    }
    Ok((dx, dw, db))
}

fn conv_direct(g: &ConvGeometry, x: &[f64], w: &[f64], out: &mut [f64]) {
    for n in 0..g.n {
        for co in 0..g.cout {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = 0.0;
                    for ci in 0..g.cin {
                        for ky in 0..g.kh {
                            let Some(iy) = (oy + ky).checked_sub(g.pad).filter(|&v| v < g.h)
                            else {
                                continue;
                            };
                            for kx in 0..g.kw {
                                let Some(ix) =
                                    (ox + kx).checked_sub(g.pad).filter(|&v| v < g.w)
                                else {
                                    continue;
                                };
                                acc += w[((co * g.cin + ci) * g.kh + ky) * g.kw + kx]
                                    * x[((n * g.cin + ci) * g.h + iy) * g.w + ix];
                            }
                        }
                    }
                    out[((n * g.cout + co) * g.ho + oy) * g.wo + ox] = acc;
                }
            }
        }
    }
}

fn conv_direct_backward(
    g: &ConvGeometry,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    dx: &mut [f64],
    dw: &mut [f64],
) {
    for n in 0..g.n {
        for co in 0..g.cout {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let go = gout[((n * g.cout + co) * g.ho + oy) * g.wo + ox];
                    for ci in 0..g.cin {
                        for ky in 0..g.kh {
                            let Some(iy) = (oy + ky).checked_sub(g.pad).filter(|&v| v < g.h)
                            else {
                                continue;
                            };
                            for kx in 0..g.kw {
                                let Some(ix) =
                                    (ox + kx).checked_sub(g.pad).filter(|&v| v < g.w)
                                else {
                                    continue;
                                };
                                let wi = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                                let xi = ((n * g.cin + ci) * g.h + iy) * g.w + ix;
                                dx[xi] += w[wi] * go;
                                dw[wi] += x[xi] * go;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Unfolds one sample `[Cin, H, W]` into `[Cin*kh*kw, Ho*Wo]`.
fn im2col(g: &ConvGeometry, x: &[f64], cols: &mut [f64]) {
    let p = g.p();
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(ci * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto one sample `[Cin, H, W]`.
fn col2im(g: &ConvGeometry, cols: &[f64], dx: &mut [f64]) {
    let p = g.p();
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(ci * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in src[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                        let ix = (ox + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Row-major strides of a matrix operand, `(row_stride, col_stride)`.
type Strides = (usize, usize);

/// `c = a·b + beta·c` for an `m×k` by `k×n` product; `c` is dense row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
) {
    let last = |rows: usize, cols: usize, s: Strides| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * s.0 + (cols - 1) * s.1 + 1
        }
    };
    assert!(a.len() >= last(m, k, sa), "gemm: lhs too short");
    assert!(b.len() >= last(k, n, sb), "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the routine can touch for
    // the given dimensions and strides; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_im2col(g: &ConvGeometry, x: &[f64], w: &[f64], out: &mut [f64]) {
    let (k, p) = (g.k(), g.p());
    let in_stride = g.cin * g.h * g.w;
    let out_stride = g.cout * p;
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; k * p]
    };
    for n in 0..g.n {
        let xn = &x[n * in_stride..(n + 1) * in_stride];
        let on = &mut out[n * out_stride..(n + 1) * out_stride];
        let b: &[f64] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        gemm(g.cout, k, p, w, (k, 1), b, (p, 1), 0.0, on);
    }
}

fn conv_im2col_backward(
    g: &ConvGeometry,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    dx: &mut [f64],
    dw: &mut [f64],
) {
    let (k, p) = (g.k(), g.p());
    let in_stride = g.cin * g.h * g.w;
    let out_stride = g.cout * p;
    let mut cols = vec![0.0; k * p];
    let mut dcols = vec![0.0; k * p];
    for n in 0..g.n {
        let xn = &x[n * in_stride..(n + 1) * in_stride];
        let gn = &gout[n * out_stride..(n + 1) * out_stride];
        let dxn = &mut dx[n * in_stride..(n + 1) * in_stride];
        if g.is_pointwise() {
            gemm(g.cout, p, k, gn, (p, 1), xn, (1, p), 1.0, dw);
            gemm(k, g.cout, p, w, (1, k), gn, (p, 1), 1.0, dxn);
        } else {
            im2col(g, xn, &mut cols);
            gemm(g.cout, p, k, gn, (p, 1), &cols, (1, p), 1.0, dw);
            gemm(k, g.cout, p, w, (1, k), gn, (p, 1), 0.0, &mut dcols);
            col2im(g, &dcols, dxn);
        }
    }
}

/// Mean over the spatial axes: `[N, C, H, W] -> [N, C, 1, 1]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4("global_avg_pool")?;
    if h == 0 || w == 0 {
        return Err(Error::shape("global_avg_pool", "empty spatial extent"));
    }
    let area = (h * w) as f64;
    let data = x
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().sum::<f64>() / area)
        .collect();
    Tensor::new(&[n, c, 1, 1], data)
}

/// Sub-pixel rearrangement `[N, C·r², H, W] -> [N, C, rH, rW]` with
/// `out[n, c, h·r+i, w·r+j] = in[n, c·r²+i·r+j, h, w]`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let [n, cr2, h, w] = x.dims4("pixel_shuffle")?;
    if r == 0 || cr2 % (r * r) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{cr2} channels not divisible by r²={}", r * r),
        ));
    }
    let c = cr2 / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let ic = ch * r * r + i * r + j;
                    for y in 0..h {
                        for xx in 0..w {
                            dst[((b * c + ch) * oh + y * r + i) * ow + xx * r + j] =
                                src[((b * cr2 + ic) * h + y) * w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`]: `[N, C, rH, rW] -> [N, C·r², H, W]`.
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let [n, c, oh, ow] = x.dims4("pixel_unshuffle")?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("spatial extent {oh}x{ow} not divisible by r={r}"),
        ));
    }
    let (h, w) = (oh / r, ow / r);
    let cr2 = c * r * r;
    let mut out = Tensor::zeros(&[n, cr2, h, w]);
    let src = x.data();
    let dst = out.data_mut();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let oc = ch * r * r + i * r + j;
                    for y in 0..h {
                        for xx in 0..w {
                            dst[((b * cr2 + oc) * h + y) * w + xx] =
                                src[((b * c + ch) * oh + y * r + i) * ow + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Stacks 4-D tensors along the channel axis.
pub fn concat_channels(xs: &[&Tensor]) -> Result<Tensor> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    let [n, _, h, w] = first.dims4("concat_channels")?;
    let mut total = 0;
    for x in xs {
        let [xn, xc, xh, xw] = x.dims4("concat_channels")?;
        if (xn, xh, xw) != (n, h, w) {
            return Err(Error::mismatch("concat_channels", first.shape(), x.shape()));
        }
        total += xc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for x in xs {
            let c = x.shape()[1];
            data.extend_from_slice(&x.data()[b * c * plane..(b + 1) * c * plane]);
        }
    }
    Tensor::new(&[n, total, h, w], data)
}

/// Channels `start..end` of a 4-D tensor.
pub fn slice_channels(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4("slice_channels")?;
    if start > end || end > c {
        return Err(Error::shape(
            "slice_channels",
            format!("range {start}..{end} outside {c} channels"),
        ));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * (end - start) * plane);
    for b in 0..n {
        data.extend_from_slice(&x.data()[(b * c + start) * plane..(b * c + end) * plane]);
    }
    Tensor::new(&[n, end - start, h, w], data)
}

/// `x · weightᵀ + bias` for `x: [N, C]`, `weight: [K, C]`, `bias: [K]`.
pub fn fully_connected(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, c, k) = fc_dims(x, weight, bias)?;
    let mut out = Tensor::zeros(&[n, k]);
    gemm(n, c, k, x.data(), (c, 1), weight.data(), (1, c), 0.0, out.data_mut());
    for row in out.data_mut().chunks_mut(k) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(out)
}

/// Gradients of [`fully_connected`] with respect to input, weight and bias.
pub fn fully_connected_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [n, c] = dims2(x, "fully_connected")?;
    let [k, _] = dims2(weight, "fully_connected")?;
    if grad_out.shape() != [n, k] {
        return Err(Error::mismatch("fully_connected backward", grad_out.shape(), &[n, k]));
    }
    let mut dx = Tensor::zeros(&[n, c]);
    let mut dw = Tensor::zeros(&[k, c]);
    gemm(n, k, c, grad_out.data(), (k, 1), weight.data(), (c, 1), 0.0, dx.data_mut());
    gemm(k, n, c, grad_out.data(), (1, k), x.data(), (c, 1), 0.0, dw.data_mut());
    let mut db = Tensor::zeros(&[k]);
    for row in grad_out.data().chunks(k) {
        for (d, g) in db.data_mut().iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok((dx, dw, db))
}

fn dims2(x: &Tensor, op: &'static str) -> Result<[usize; 2]> {
    match x.shape() {
        &[a, b] => Ok([a, b]),
        other => Err(Error::shape(op, format!("expected 2-D tensor, got {other:?}"))),
    }
}

fn fc_dims(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let [n, c] = dims2(x, "fully_connected")?;
    let [k, wc] = dims2(weight, "fully_connected")?;
    if wc != c {
        return Err(Error::mismatch("fully_connected", x.shape(), weight.shape()));
    }
    if bias.shape() != [k] {
        return Err(Error::mismatch("fully_connected bias", bias.shape(), &[k]));
    }
    Ok((n, c, k))
}

/// How the right operand of a binary op lines up with the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// `[N, C, 1, 1]` against `[N, C, H, W]`; the payload is `H·W`.
    PerChannel(usize),
}

pub(crate) fn broadcast_of(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Result<Broadcast> {
    if lhs.shape() == rhs.shape() {
        return Ok(Broadcast::Same);
    }
    if let (&[n, c, h, w], &[rn, rc, 1, 1]) = (lhs.shape(), rhs.shape()) {
        if (n, c) == (rn, rc) {
            return Ok(Broadcast::PerChannel(h * w));
        }
    }
    Err(Error::mismatch(op, lhs.shape(), rhs.shape()))
}

/// Elementwise `f(lhs, rhs)` with `rhs` optionally broadcast per channel.
pub(crate) fn binary(
    op: &'static str,
    lhs: &Tensor,
    rhs: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    match broadcast_of(op, lhs, rhs)? {
        Broadcast::Same => lhs.zip_map(rhs, f),
        Broadcast::PerChannel(plane) => {
            let mut out = lhs.clone();
            for (chunk, &s) in out.data_mut().chunks_mut(plane).zip(rhs.data()) {
                chunk.iter_mut().for_each(|v| *v = f(*v, s));
            }
            Ok(out)
        }
    }
}

/// Sums a full-size gradient down to the `[N, C, 1, 1]` operand's shape.
pub(crate) fn reduce_per_channel(grad: &Tensor, plane: usize, shape: &[usize]) -> Tensor {
    let data = grad.data().chunks(plane).map(|c| c.iter().sum()).collect();
    Tensor::new(shape, data).expect("per-channel reduction preserves N*C")
}

/// Forward difference `x[i+1] - x[i]` along `axis`; that axis shrinks by one.
pub fn forward_diff(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::shape(
            "forward_diff",
            format!("axis {axis} out of range for {shape:?}"),
        ));
    }
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = extent.saturating_sub(1);
    let mut data = Vec::with_capacity(outer * out_shape[axis] * inner);
    let src = x.data();
    for o in 0..outer {
        for i in 0..out_shape[axis] {
            let a = (o * extent + i) * inner;
            let b = a + inner;
            data.extend((0..inner).map(|j| src[b + j] - src[a + j]));
        }
    }
    Tensor::new(&out_shape, data)
}

/// Adjoint of [`forward_diff`]: maps a gradient on the differences back to
/// the input of shape `shape`.
pub fn forward_diff_backward(grad: &Tensor, shape: &[usize], axis: usize) -> Tensor {
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = Tensor::zeros(shape);
    let g = grad.data();
    let dst = out.data_mut();
    let diffs = extent.saturating_sub(1);
    for o in 0..outer {
        for i in 0..diffs {
            let gi = (o * diffs + i) * inner;
            let a = (o * extent + i) * inner;
            let b = a + inner;
            for j in 0..inner {
                dst[b + j] += g[gi + j];
                dst[a + j] -= g[gi + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn ramp(shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |i| ((i * 37 % 101) as f64 / 50.0) - 1.0)
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = ramp(&[1, 1, 4, 5]);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        for algo in [ConvAlgo::Direct, ConvAlgo::Im2col] {
            let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 1, algo).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn pointwise_ones_kernel_sums_channels() {
        let mut x = Tensor::zeros(&[1, 2, 3, 3]);
        x.data_mut()[..9].fill(3.0);
        x.data_mut()[9..].fill(5.0);
        let w = Tensor::full(&[1, 2, 1, 1], 1.0);
        for algo in [ConvAlgo::Direct, ConvAlgo::Im2col] {
            let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 0, algo).unwrap();
            assert!(y.data().iter().all(|&v| v == 8.0));
        }
    }

    #[test]
    fn conv_shape_law_and_mismatch() {
        let x = ramp(&[1, 2, 4, 4]);
        let w = ramp(&[8, 2, 3, 3]);
        let y = conv2d(&x, &w, &Tensor::zeros(&[8]), 1, ConvAlgo::Im2col).unwrap();
        assert_eq!(y.shape(), &[1, 8, 4, 4]);

        let bad = ramp(&[8, 3, 3, 3]);
        let err = conv2d(&x, &bad, &Tensor::zeros(&[8]), 1, ConvAlgo::Im2col)
            .unwrap_err()
            .to_string();
        assert!(err.contains("[1, 2, 4, 4]") && err.contains("[8, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn conv_paths_agree() {
        let x = ramp(&[2, 3, 5, 6]);
        let w = ramp(&[4, 3, 3, 3]).map(|v| v * 0.3);
        let b = t(&[4], &[0.1, -0.2, 0.3, 0.0]);
        let direct = conv2d(&x, &w, &b, 1, ConvAlgo::Direct).unwrap();
        let fast = conv2d(&x, &w, &b, 1, ConvAlgo::Im2col).unwrap();
        for (a, b) in direct.data().iter().zip(fast.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = ramp(direct.shape());
        let (dx1, dw1, db1) = conv2d_backward(&x, &w, &g, 1, ConvAlgo::Direct).unwrap();
        let (dx2, dw2, db2) = conv2d_backward(&x, &w, &g, 1, ConvAlgo::Im2col).unwrap();
        for (a, b) in [(dx1, dx2), (dw1, dw2), (db1, db2)] {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn activations() {
        assert_eq!(Activation::Relu.apply(-2.0), 0.0);
        assert_eq!(Activation::Relu.apply(3.0), 3.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert!((Activation::Sigmoid.apply(3f64.ln()) - 0.75).abs() < 1e-15);
        assert_eq!(Activation::Relu.derivative(0.0, 0.0), 0.0);
        assert!(Activation::Sigmoid.apply(-800.0).is_finite());
    }

    #[test]
    fn pooling() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
        let y = global_avg_pool(&Tensor::zeros(&[2, 5, 7, 9])).unwrap();
        assert_eq!(y.shape(), &[2, 5, 1, 1]);
        let c = Tensor::full(&[1, 1, 3, 3], 0.7);
        assert!((global_avg_pool(&c).unwrap().data()[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn pixel_shuffle_mapping() {
        let x = t(&[1, 4, 1, 1], &[1.0, 2.0, 3.0, 4.0]);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        let z = ramp(&[2, 3, 2, 3]);
        assert_eq!(pixel_shuffle(&z, 1).unwrap(), z);
        assert!(pixel_shuffle(&ramp(&[1, 6, 2, 2]), 2).is_err());
        let big = ramp(&[2, 8, 3, 2]);
        assert_eq!(pixel_unshuffle(&pixel_shuffle(&big, 2).unwrap(), 2).unwrap(), big);
    }

    #[test]
    fn concat_and_slice() {
        let a = ramp(&[1, 3, 4, 4]);
        let b = ramp(&[1, 5, 4, 4]);
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[1, 8, 4, 4]);
        assert_eq!(slice_channels(&c, 0, 3).unwrap(), a);
        assert_eq!(slice_channels(&c, 3, 8).unwrap(), b);
        assert!(concat_channels(&[&a, &ramp(&[1, 2, 4, 3])]).is_err());
    }

    #[test]
    fn fully_connected_hand_values() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let w = t(&[2, 2], &[1.0, 1.0, 0.0, 1.0]);
        let b = t(&[2], &[0.0, 1.0]);
        assert_eq!(fully_connected(&x, &w, &b).unwrap().data(), &[3.0, 3.0]);
        let y = fully_connected(
            &ramp(&[4, 16]),
            &ramp(&[2, 16]),
            &Tensor::zeros(&[2]),
        )
        .unwrap();
        assert_eq!(y.shape(), &[4, 2]);
        assert!(fully_connected(&x, &ramp(&[2, 3]), &b).is_err());
    }

    #[test]
    fn broadcast_rules() {
        let x = Tensor::full(&[1, 2, 2, 2], 4.0);
        let s = t(&[1, 2, 1, 1], &[0.5, 1.0]);
        let y = binary("mul", &x, &s, |a, b| a * b).unwrap();
        assert_eq!(&y.data()[..4], &[2.0; 4]);
        assert_eq!(&y.data()[4..], &[4.0; 4]);
        assert!(binary("mul", &x, &Tensor::zeros(&[1, 3, 1, 1]), |a, b| a * b).is_err());
    }

    #[test]
    fn diff_and_adjoint() {
        let x = t(&[2, 3], &[1.0, 4.0, 9.0, 0.0, 2.0, 1.0]);
        let d0 = forward_diff(&x, 0).unwrap();
        assert_eq!(d0.data(), &[-1.0, -2.0, -8.0]);
        let d1 = forward_diff(&x, 1).unwrap();
        assert_eq!(d1.shape(), &[2, 2]);
        assert_eq!(d1.data(), &[3.0, 5.0, 2.0, -1.0]);
        // <D x, g> == <x, Dᵀ g>
        let g = t(&[2, 2], &[0.3, -1.0, 2.0, 0.5]);
        let lhs: f64 = d1.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let back = forward_diff_backward(&g, x.shape(), 1);
        let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
