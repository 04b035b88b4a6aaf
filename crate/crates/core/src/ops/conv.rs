//! 2-D convolution (dense and depthwise) with explicit adjoints.
//!
//! All kernels are applied as cross-correlation: `y(m, n) = Σ w(a, b) x(m + a - N, n + b - N)`.
//! A filter written as a convolution sum is the same operator with its taps
//! mirrored, so for learned weights the two conventions are interchangeable.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Shape, Tensor, Transpose};

/// Upper bound on im2col columns materialized at once.
const COL_BUDGET: usize = 8192;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T: Scalar = f32> {
    /// `(out_ch, in_ch, k, k)`, or `(c, 1, k, k)` when depthwise.
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
    pub depthwise: bool,
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T: Scalar = f32> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    /// Stride-1 convolution with "same" padding `(k - 1) / 2`.
    pub fn same(weight: Tensor<T>, bias: Vec<T>) -> Self {
        let padding = (weight.shape().h.saturating_sub(1)) / 2;
        ConvParams {
            weight,
            bias,
            stride: 1,
            padding,
            depthwise: false,
        }
    }

    pub fn depthwise_same(weight: Tensor<T>, bias: Vec<T>) -> Self {
        ConvParams {
            depthwise: true,
            ..Self::same(weight, bias)
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().h
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        if self.depthwise {
            self.weight.shape().n
        } else {
            self.weight.shape().c
        }
    }

    /// Validates the parameters against an input shape and returns the output shape.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let ws = self.weight.shape();
        if ws.h != ws.w {
            return Err(Error::config(format!("non-square kernel {}x{}", ws.h, ws.w)));
        }
        if ws.h.is_multiple_of(2) {
            return Err(Error::config(format!("kernel size {} is not odd", ws.h)));
        }
        if self.stride == 0 {
            return Err(Error::config("stride must be positive"));
        }
        if self.depthwise && ws.c != 1 {
            return Err(Error::config(format!(
                "depthwise weights must be (c, 1, k, k), got {ws}"
            )));
        }
        if self.bias.len() != ws.n {
            return Err(Error::config(format!(
                "bias length {} does not match {} output channels",
                self.bias.len(),
                ws.n
            )));
        }
        if input.c != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {} ({input})",
                self.in_channels(),
                input.c
            )));
        }
        let k = ws.h;
        if input.h + 2 * self.padding < k || input.w + 2 * self.padding < k {
            return Err(Error::shape(format!(
                "input {input} smaller than kernel {k} with padding {}",
                self.padding
            )));
        }
        let ho = (input.h + 2 * self.padding - k) / self.stride + 1;
        let wo = (input.w + 2 * self.padding - k) / self.stride + 1;
        Ok(Shape::new(input.n, ws.n, ho, wo))
    }
}

pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let out_shape = p.output_shape(x.shape())?;
    if p.depthwise {
        let mut y = depthwise_apply(x, &p.weight, p.padding, p.stride, out_shape);
        add_bias(&mut y, &p.bias);
        return Ok(y);
    }
    let mut y = Tensor::zeros(out_shape);
    let geom = Geometry::new(x.shape(), p, out_shape);
    let kk = geom.kk();
    let hw = out_shape.plane();
    let chunk = (COL_BUDGET / hw).max(1);
    let cout = out_shape.c;
    let mut cols = Vec::new();
    let mut prod = Vec::new();
    for n0 in (0..x.shape().n).step_by(chunk) {
        let cn = chunk.min(x.shape().n - n0);
        let ncols = cn * hw;
        cols.resize(kk * ncols, T::zero());
        im2col(x, n0, cn, &geom, &mut cols);
        prod.resize(cout * ncols, T::zero());
        gemm(
            cout,
            kk,
            ncols,
            p.weight.data(),
            Transpose::No,
            &cols,
            Transpose::No,
            T::zero(),
            &mut prod,
        );
        for i in 0..cn {
            for o in 0..cout {
                let src = &prod[o * ncols + i * hw..o * ncols + (i + 1) * hw];
                y.plane_mut(n0 + i, o).copy_from_slice(src);
            }
        }
    }
    add_bias(&mut y, &p.bias);
    Ok(y)
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let out_shape = p.output_shape(x.shape())?;
    dy.expect_shape(out_shape, "conv2d_backward dy")?;
    let db = bias_grad(dy);
    if p.depthwise {
        let (dx, dw) = depthwise_adjoint(x, &p.weight, p.padding, p.stride, dy);
        return Ok(ConvGrads { dx, dw, db });
    }
    let geom = Geometry::new(x.shape(), p, out_shape);
    let kk = geom.kk();
    let hw = out_shape.plane();
    let cout = out_shape.c;
    let chunk = (COL_BUDGET / hw).max(1);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(p.weight.shape());
    let mut cols = Vec::new();
    let mut dmat = Vec::new();
    let mut dcols = Vec::new();
    for n0 in (0..x.shape().n).step_by(chunk) {
        let cn = chunk.min(x.shape().n - n0);
        let ncols = cn * hw;
        cols.resize(kk * ncols, T::zero());
        im2col(x, n0, cn, &geom, &mut cols);
        dmat.resize(cout * ncols, T::zero());
        for i in 0..cn {
            for o in 0..cout {
                dmat[o * ncols + i * hw..o * ncols + (i + 1) * hw]
                    .copy_from_slice(dy.plane(n0 + i, o));
            }
        }
        // dW += D · colsᵀ
        gemm(
            cout,
            ncols,
            kk,
            &dmat,
            Transpose::No,
            &cols,
            Transpose::Yes,
            T::one(),
            dw.data_mut(),
        );
        // dcols = Wᵀ · D
        dcols.resize(kk * ncols, T::zero());
        gemm(
            kk,
            cout,
            ncols,
            p.weight.data(),
            Transpose::Yes,
            &dmat,
            Transpose::No,
            T::zero(),
            &mut dcols,
        );
        col2im(&dcols, n0, cn, &geom, &mut dx);
    }
    Ok(ConvGrads { dx, dw, db })
}

/// Per-channel correlation without bias: the frontend filtering primitive.
/// `w` has shape `(c, 1, k, k)`; stride 1, padding `(k - 1) / 2`.
pub fn depthwise_filter<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let p = check_depthwise(x, w)?;
    Ok(depthwise_apply(x, w, p, 1, x.shape()))
}

/// Adjoint of [`depthwise_filter`]: returns `(dx, dw)`.
pub fn depthwise_filter_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let p = check_depthwise(x, w)?;
    dy.expect_shape(x.shape(), "depthwise_filter_backward dy")?;
    Ok(depthwise_adjoint(x, w, p, 1, dy))
}

/// Input-gradient half of [`depthwise_filter_backward`].
pub fn depthwise_filter_input_grad<T: Scalar>(w: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let p = check_depthwise(dy, w)?;
    Ok(depthwise_dx(w, p, 1, dy, dy.shape()))
}

fn check_depthwise<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<usize> {
    let ws = w.shape();
    if ws.c != 1 || ws.h != ws.w || ws.h.is_multiple_of(2) {
        return Err(Error::config(format!(
            "depthwise filter must be (c, 1, k, k) with odd k, got {ws}"
        )));
    }
    if ws.n != x.shape().c {
        return Err(Error::shape(format!(
            "depthwise filter has {} channels, input {} has {}",
            ws.n,
            x.shape(),
            x.shape().c
        )));
    }
    Ok((ws.h - 1) / 2)
}

fn depthwise_apply<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    pad: usize,
    stride: usize,
    out_shape: Shape,
) -> Tensor<T> {
    let xs = x.shape();
    let k = w.shape().h;
    let mut y = Tensor::zeros(Shape::new(xs.n, xs.c, out_shape.h, out_shape.w));
    for n in 0..xs.n {
        for c in 0..xs.c {
            let taps = w.plane(c, 0);
            let src = x.plane(n, c);
            let dst = y.plane_mut(n, c);
            for oy in 0..out_shape.h {
                for ox in 0..out_shape.w {
                    let mut acc = T::zero();
                    for a in 0..k {
                        let iy = (oy * stride + a) as isize - pad as isize;
                        if iy < 0 || iy >= xs.h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * xs.w..(iy as usize + 1) * xs.w];
                        for b in 0..k {
                            let ix = (ox * stride + b) as isize - pad as isize;
                            if ix < 0 || ix >= xs.w as isize {
                                continue;
                            }
                            acc += taps[a * k + b] * row[ix as usize];
                        }
                    }
                    dst[oy * out_shape.w + ox] = acc;
                }
            }
        }
    }
    y
}

fn depthwise_dx<T: Scalar>(
    w: &Tensor<T>,
    pad: usize,
    stride: usize,
    dy: &Tensor<T>,
    in_shape: Shape,
) -> Tensor<T> {
    let k = w.shape().h;
    let ds = dy.shape();
    let mut dx = Tensor::zeros(in_shape);
    for n in 0..ds.n {
        for c in 0..ds.c {
            let taps = w.plane(c, 0);
            let g = dy.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for oy in 0..ds.h {
                for ox in 0..ds.w {
                    let gv = g[oy * ds.w + ox];
                    if gv == T::zero() {
                        continue;
                    }
                    for a in 0..k {
                        let iy = (oy * stride + a) as isize - pad as isize;
                        if iy < 0 || iy >= in_shape.h as isize {
                            continue;
                        }
                        for b in 0..k {
                            let ix = (ox * stride + b) as isize - pad as isize;
                            if ix < 0 || ix >= in_shape.w as isize {
                                continue;
                            }
                            dst[iy as usize * in_shape.w + ix as usize] += taps[a * k + b] * gv;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn depthwise_adjoint<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    pad: usize,
    stride: usize,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let xs = x.shape();
    let ds = dy.shape();
    let k = w.shape().h;
    let dx = depthwise_dx(w, pad, stride, dy, xs);
    let mut dw = Tensor::zeros(w.shape());
    for c in 0..xs.c {
        for a in 0..k {
            for b in 0..k {
                let mut acc = T::zero();
                for n in 0..xs.n {
                    let src = x.plane(n, c);
                    let g = dy.plane(n, c);
                    for oy in 0..ds.h {
                        let iy = (oy * stride + a) as isize - pad as isize;
                        if iy < 0 || iy >= xs.h as isize {
                            continue;
                        }
                        for ox in 0..ds.w {
                            let ix = (ox * stride + b) as isize - pad as isize;
                            if ix < 0 || ix >= xs.w as isize {
                                continue;
                            }
                            acc += g[oy * ds.w + ox] * src[iy as usize * xs.w + ix as usize];
                        }
                    }
                }
                dw.set(c, 0, a, b, acc);
            }
        }
    }
    (dx, dw)
}

fn add_bias<T: Scalar>(y: &mut Tensor<T>, bias: &[T]) {
    let s = y.shape();
    for n in 0..s.n {
        for (c, &b) in bias.iter().enumerate().take(s.c) {
            if b != T::zero() {
                for v in y.plane_mut(n, c) {
                    *v += b;
                }
            }
        }
    }
}

fn bias_grad<T: Scalar>(dy: &Tensor<T>) -> Vec<T> {
    let s = dy.shape();
    (0..s.c)
        .map(|c| {
            let mut acc = T::zero();
            for n in 0..s.n {
                acc += dy.plane(n, c).iter().copied().sum::<T>();
            }
            acc
        })
        .collect()
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new<T: Scalar>(input: Shape, p: &ConvParams<T>, out: Shape) -> Self {
        Geometry {
            cin: input.c,
            h: input.h,
            w: input.w,
            k: p.kernel(),
            stride: p.stride,
            pad: p.padding,
            ho: out.h,
            wo: out.w,
        }
    }

    fn kk(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Rows are `(ci, a, b)` taps, columns `(image, oy, ox)`.
fn im2col<T: Scalar>(x: &Tensor<T>, n0: usize, cn: usize, g: &Geometry, cols: &mut [T]) {
    let hw = g.ho * g.wo;
    let ncols = cn * hw;
    for ci in 0..g.cin {
        for a in 0..g.k {
            for b in 0..g.k {
                let row = (ci * g.k + a) * g.k + b;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for i in 0..cn {
                    let src = x.plane(n0 + i, ci);
                    let dst = &mut dst_row[i * hw..(i + 1) * hw];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + a) as isize - g.pad as isize;
                        let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        if iy < 0 || iy >= g.h as isize {
                            out_row.fill(T::zero());
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + b) as isize - g.pad as isize;
                            *v = if ix < 0 || ix >= g.w as isize {
                                T::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(dcols: &[T], n0: usize, cn: usize, g: &Geometry, dx: &mut Tensor<T>) {
    let hw = g.ho * g.wo;
    let ncols = cn * hw;
    for ci in 0..g.cin {
        for a in 0..g.k {
            for b in 0..g.k {
                let row = (ci * g.k + a) * g.k + b;
                let src_row = &dcols[row * ncols..(row + 1) * ncols];
                for i in 0..cn {
                    let src = &src_row[i * hw..(i + 1) * hw];
                    let dst = dx.plane_mut(n0 + i, ci);
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + a) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + b) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += src[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scalar operation tally from an instrumented convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCount {
    pub mults: u64,
    pub adds: u64,
}

/// Direct-loop dense convolution that counts every scalar multiply and add it
/// performs. Padding is materialized, so padded taps are multiplied like in the
/// im2col path. The accumulator starts at the bias and every product is added
/// to it: `k·k·in_ch` multiplies and adds per output sample.
pub fn conv2d_forward_instrumented<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    count: &mut OpCount,
) -> Result<Tensor<T>> {
    let out = p.output_shape(x.shape())?;
    let xs = x.shape();
    let k = p.kernel();
    let pad = p.padding;
    let (hp, wp) = (xs.h + 2 * pad, xs.w + 2 * pad);
    let padded = Tensor::from_fn(Shape::new(xs.n, xs.c, hp, wp), |n, c, h, w| {
        if h < pad || w < pad || h >= xs.h + pad || w >= xs.w + pad {
            T::zero()
        } else {
            x.at(n, c, h - pad, w - pad)
        }
    });
    let mut y = Tensor::zeros(out);
    for n in 0..out.n {
        for o in 0..out.c {
            let (taps_from, taps_to) = if p.depthwise { (o, o + 1) } else { (0, xs.c) };
            for oy in 0..out.h {
                for ox in 0..out.w {
                    let mut acc = p.bias[o];
                    for ci in taps_from..taps_to {
                        let wc = if p.depthwise { 0 } else { ci };
                        for a in 0..k {
                            for b in 0..k {
                                let prod = p.weight.at(o, wc, a, b)
                                    * padded.at(n, ci, oy * p.stride + a, ox * p.stride + b);
                                count.mults += 1;
                                acc += prod;
                                count.adds += 1;
                            }
                        }
                    }
                    y.set(n, o, oy, ox, acc);
                }
            }
        }
    }
    Ok(y)
}
