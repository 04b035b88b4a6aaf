use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Kept positions of an inverted-dropout pass; survivors are scaled by
/// `1 / (1 - rate)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    keep: Vec<bool>,
    scale: f64,
}

impl DropoutMask {
    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Returns the output and, in training mode with a nonzero rate, the mask
/// needed for the backward pass. The mask depends only on `seed`.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    seed: u64,
    training: bool,
) -> Result<(Tensor<T>, Option<DropoutMask>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: Vec<bool> = (0..x.len()).map(|_| rng.random::<f64>() >= rate).collect();
    let scale = 1.0 / (1.0 - rate);
    let s = T::from_f64_lossy(scale);
    let mut y = x.clone();
    for (v, &k) in y.data_mut().iter_mut().zip(&keep) {
        *v = if k { *v * s } else { T::zero() };
    }
    Ok((y, Some(DropoutMask { keep, scale })))
}

pub fn dropout_backward<T: Scalar>(dy: &Tensor<T>, mask: Option<&DropoutMask>) -> Result<Tensor<T>> {
    let Some(mask) = mask else {
        return Ok(dy.clone());
    };
    if mask.keep.len() != dy.len() {
        return Err(Error::shape(format!(
            "dropout mask covers {} elements, gradient has {}",
            mask.keep.len(),
            dy.len()
        )));
    }
    let s = T::from_f64_lossy(mask.scale);
    let mut dx = dy.clone();
    for (v, &k) in dx.data_mut().iter_mut().zip(&mask.keep) {
        *v = if k { *v * s } else { T::zero() };
    }
    Ok(dx)
}
