use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Shape, Tensor, Transpose};

/// Fully connected layer; `weight` is stored row-major as `(out_dim, in_dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T: Scalar = f32> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrads<T: Scalar = f32> {
    pub dx: Tensor<T>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::config(format!(
                "linear {in_dim}->{out_dim}: got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Linear {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().sample_len() != self.in_dim {
            return Err(Error::shape(format!(
                "fully connected layer expects {} inputs per sample, got {} ({})",
                self.in_dim,
                x.shape().sample_len(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// `y = W·flatten(x) + b` per sample; output shape `(n, out_dim, 1, 1)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let n = x.shape().n;
        let mut y = Vec::with_capacity(n * self.out_dim);
        for _ in 0..n {
            y.extend_from_slice(&self.bias);
        }
        gemm(
            n,
            self.in_dim,
            self.out_dim,
            x.data(),
            Transpose::No,
            &self.weight,
            Transpose::Yes,
            T::one(),
            &mut y,
        );
        Tensor::from_vec(Shape::new(n, self.out_dim, 1, 1), y)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<LinearGrads<T>> {
        self.check_input(x)?;
        let n = x.shape().n;
        dy.expect_shape(Shape::new(n, self.out_dim, 1, 1), "linear backward dy")?;
        let mut dw = vec![T::zero(); self.weight.len()];
        gemm(
            self.out_dim,
            n,
            self.in_dim,
            dy.data(),
            Transpose::Yes,
            x.data(),
            Transpose::No,
            T::zero(),
            &mut dw,
        );
        let mut dx = vec![T::zero(); x.len()];
        gemm(
            n,
            self.out_dim,
            self.in_dim,
            dy.data(),
            Transpose::No,
            &self.weight,
            Transpose::No,
            T::zero(),
            &mut dx,
        );
        let mut db = vec![T::zero(); self.out_dim];
        for row in dy.data().chunks(self.out_dim) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        Ok(LinearGrads {
            dx: Tensor::from_vec(x.shape(), dx)?,
            dw,
            db,
        })
    }
}
