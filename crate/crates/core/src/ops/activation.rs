use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Default negative-side slope (10% leakage).
pub const DEFAULT_LEAK: f64 = 0.1;

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { slope * v })
}

/// Gradient through [`leaky_relu`] given the pre-activation `x`. At exactly
/// zero the slope is used.
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>, slope: T) -> Result<Tensor<T>> {
    x.zip_map(dy, |v, g| if v > T::zero() { g } else { slope * g })
}
