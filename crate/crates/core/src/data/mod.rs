//! Datasets, augmentation and batching.
//!
//! Expected layouts:
//!
//! * MNIST: `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
//!   `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte` (uncompressed; the
//!   `name.idx3-ubyte` spelling is also accepted).
//! * CIFAR-10: `data_batch_{1..5}.bin` and `test_batch.bin`, directly in the
//!   directory or under `cifar-10-batches-bin/`.
//! * CIFAR-100: `train.bin` and `test.bin`, directly or under
//!   `cifar-100-binary/`. Fine labels are used.

mod augment;
mod batch;
mod cifar;
mod mnist;

pub use augment::{augment, gaussian_blur3, gaussian_kernel3, shift, AugmentConfig};
pub(crate) use augment::five_patch_offsets;
pub use batch::{batches, standardize, Batch, BatchOptions, Batches};
pub use cifar::{cifar_record, load_cifar, CifarVariant};
pub use mnist::{load_mnist, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Images in `[0, 1]` with their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTest {
    pub train: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.shape().n != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.shape().n,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::config(format!("label {bad} outside {classes} classes")));
        }
        Ok(Dataset { images, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(c, h, w)` of one image.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s.c, s.h, s.w)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.gather_samples(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// First `n` samples (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Seeded `(train, validation)` split with `fraction` held out.
    pub fn split_validation(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::config(format!("validation fraction {fraction} outside [0, 1)")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = (self.len() as f64 * fraction).round() as usize;
        let (val, train) = idx.split_at(n_val);
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        Ok((self.subset(&train), self.subset(&val)))
    }

    /// Synthetic data for smoke tests: class `k` images carry a bright bar at a
    /// class-dependent row, plus seeded noise.
    pub fn synthetic(n: usize, dims: (usize, usize, usize), classes: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let (c, h, w) = dims;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let mut images = Tensor::zeros(Shape::new(n, c, h, w));
        for (i, &l) in labels.iter().enumerate() {
            let row = (l * h) / classes + (h / classes) / 2;
            for ch in 0..c {
                for x in 0..w {
                    let noise: f32 = rng.random_range(0.0..0.2);
                    images.set(i, ch, row.min(h - 1), x, 0.8 + noise);
                }
            }
        }
        Dataset { images, labels, classes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_split_is_seeded_and_disjoint() {
        let ds = Dataset::synthetic(100, (1, 8, 8), 4, 0);
        let (a, b) = ds.split_validation(0.1, 5).unwrap();
        assert_eq!((a.len(), b.len()), (90, 10));
        let (a2, b2) = ds.split_validation(0.1, 5).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        let (_, b3) = ds.split_validation(0.1, 6).unwrap();
        assert_ne!(b, b3);
    }

    #[test]
    fn label_bounds_checked() {
        let img = Tensor::zeros(Shape::new(2, 1, 2, 2));
        assert!(Dataset::new(img.clone(), vec![0, 3], 3).is_err());
        assert!(Dataset::new(img, vec![0], 3).is_err());
    }
}
