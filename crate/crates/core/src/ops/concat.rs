use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Channel-axis concatenation in list order.
pub fn concat_channels<T: Scalar>(xs: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("concat_channels of an empty list"))?
        .shape();
    for x in xs {
        let s = x.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape(format!(
                "concat_channels: {s} incompatible with {first}"
            )));
        }
    }
    let total_c: usize = xs.iter().map(|x| x.shape().c).sum();
    let out_shape = Shape::new(first.n, total_c, first.h, first.w);
    let mut data = Vec::with_capacity(out_shape.len());
    for n in 0..first.n {
        for x in xs {
            data.extend_from_slice(x.sample(n));
        }
    }
    Tensor::from_vec(out_shape, data)
}

/// Inverse of [`concat_channels`]: splits `y` into pieces with the given channel counts.
pub fn split_channels<T: Scalar>(y: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let s = y.shape();
    if channels.iter().sum::<usize>() != s.c {
        return Err(Error::shape(format!(
            "split_channels: parts {channels:?} do not sum to {} channels",
            s.c
        )));
    }
    let plane = s.plane();
    let mut parts: Vec<Vec<T>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(s.n * c * plane))
        .collect();
    for n in 0..s.n {
        let mut offset = 0;
        let sample = y.sample(n);
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&sample[offset * plane..(offset + c) * plane]);
            offset += c;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_vec(Shape::new(s.n, c, s.h, s.w), d))
        .collect()
}
