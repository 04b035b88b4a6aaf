use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Per-output index (within the input plane) of the selected maximum.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input: Shape,
    argmax: Vec<u32>,
}

/// Non-overlapping 2×2 max pooling. Ties go to the first element in
/// row-major scan order.
pub fn maxpool2x2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape(format!("maxpool2x2 needs even spatial dims, got {s}")));
    }
    let out = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut y = Tensor::zeros(out);
    let mut argmax = Vec::with_capacity(out.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = y.plane_mut(n, c);
            for oy in 0..out.h {
                for ox in 0..out.w {
                    let base = 2 * oy * s.w + 2 * ox;
                    let mut best = base;
                    for cand in [base + 1, base + s.w, base + s.w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    dst[oy * out.w + ox] = src[best];
                    argmax.push(best as u32);
                }
            }
        }
    }
    Ok((y, PoolIndices { input: s, argmax }))
}

pub fn maxpool2x2_backward<T: Scalar>(dy: &Tensor<T>, idx: &PoolIndices) -> Result<Tensor<T>> {
    let s = idx.input;
    dy.expect_shape(Shape::new(s.n, s.c, s.h / 2, s.w / 2), "maxpool2x2_backward dy")?;
    let mut dx = Tensor::zeros(s);
    let plane_out = (s.h / 2) * (s.w / 2);
    for n in 0..s.n {
        for c in 0..s.c {
            let g = dy.plane(n, c);
            let base = (n * s.c + c) * plane_out;
            let dst = dx.plane_mut(n, c);
            for (j, &gv) in g.iter().enumerate() {
                dst[idx.argmax[base + j] as usize] += gv;
            }
        }
    }
    Ok(dx)
}
