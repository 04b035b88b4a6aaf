use std::sync::mpsc::sync_channel;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, shift, AugmentConfig};
use super::Dataset;
use crate::error::{Error, Result};
use crate::quant::quantize_input;
use crate::seed::derive_seed;
use crate::tensor::{Scalar, Tensor};

const STD_EPS: f32 = 1e-6;

/// How a dataset is turned into model inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchOptions {
    pub size: usize,
    pub shuffle: bool,
    pub augment: Option<AugmentConfig>,
    /// Fixed translation applied to every image, for patch evaluation.
    pub offset: (isize, isize),
    /// Input quantisation applied to the `[0, 1]` pixels.
    pub input_bits: Option<u32>,
    pub standardize: bool,
}

impl BatchOptions {
    /// Shuffled, augmented, standardised batches of `size`.
    pub fn training(size: usize) -> Self {
        BatchOptions {
            size,
            shuffle: true,
            augment: Some(AugmentConfig::default()),
            offset: (0, 0),
            input_bits: None,
            standardize: true,
        }
    }

    /// In-order, unaugmented, standardised batches.
    pub fn inference(size: usize) -> Self {
        BatchOptions { shuffle: false, augment: None, ..Self::training(size) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Dataset positions of the samples.
    pub indices: Vec<usize>,
}

/// Per-image standardisation: zero mean, unit standard deviation.
pub fn standardize<T: Scalar>(x: &mut Tensor<T>) {
    let n = x.shape().n;
    let eps = T::from_f64_lossy(STD_EPS as f64);
    for i in 0..n {
        let s = x.sample_mut(i);
        let len = T::from_usize(s.len()).expect("length fits");
        let mean = s.iter().copied().sum::<T>() / len;
        let var = s.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / len;
        let inv = T::one() / (var.sqrt() + eps);
        for v in s.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
}

/// Deterministic batch iterator over one epoch.
pub struct Batches<'a> {
    ds: &'a Dataset,
    opts: BatchOptions,
    seed: u64,
    order: Vec<usize>,
    pos: usize,
}

pub fn batches<'a>(ds: &'a Dataset, opts: &BatchOptions, seed: u64) -> Result<Batches<'a>> {
    if opts.size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if let Some(bits) = opts.input_bits {
        if bits == 0 {
            return Err(Error::config("input quantisation needs at least 1 bit"));
        }
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    if opts.shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(Batches { ds, opts: opts.clone(), seed, order, pos: 0 })
}

impl Batches<'_> {
    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.opts.size)
    }

    fn build(&self, idx: &[usize]) -> Result<Batch> {
        let mut images = self.ds.images.gather_samples(idx);
        let (c, h, w) = self.ds.image_dims();
        let per = c * h * w;
        if self.opts.offset != (0, 0) {
            images = shift(&images, self.opts.offset.0, self.opts.offset.1);
        }
        if let Some(cfg) = &self.opts.augment {
            for (k, &i) in idx.iter().enumerate() {
                let one = images.batch_slice(k, 1)?;
                let out = augment(&one, cfg, derive_seed(self.seed, i as u64))?;
                images.data_mut()[k * per..(k + 1) * per].copy_from_slice(out.data());
            }
        }
        if let Some(bits) = self.opts.input_bits {
            images = quantize_input(&images, bits)?;
        }
        if self.opts.standardize {
            standardize(&mut images);
        }
        Ok(Batch {
            images,
            labels: idx.iter().map(|&i| self.ds.labels[i]).collect(),
            indices: idx.to_vec(),
        })
    }

    /// Runs `f` on every batch while a producer thread prepares up to
    /// `depth` batches ahead.
    pub fn prefetch(self, depth: usize, mut f: impl FnMut(Batch) -> Result<()>) -> Result<()> {
        let (tx, rx) = sync_channel::<Result<Batch>>(depth.max(1));
        std::thread::scope(|scope| {
            scope.spawn(move || {
                for b in self {
                    let stop = b.is_err();
                    if tx.send(b).is_err() || stop {
                        break;
                    }
                }
            });
            // Dropping `rx` on early exit unblocks the producer.
            for b in rx {
                f(b?)?;
            }
            Ok(())
        })
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.opts.size).min(self.order.len());
        let idx = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(self.build(&idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn sizes_64_64_2() {
        let ds = Dataset::synthetic(130, (1, 4, 4), 3, 0);
        let sizes: Vec<usize> = batches(&ds, &BatchOptions::training(64), 1)
            .unwrap()
            .map(|b| b.unwrap().labels.len())
            .collect();
        assert_eq!(sizes, [64, 64, 2]);
    }

    #[test]
    fn epoch_covers_each_sample_once() {
        let ds = Dataset::synthetic(130, (1, 4, 4), 3, 0);
        let mut seen: Vec<usize> = batches(&ds, &BatchOptions::training(64), 7)
            .unwrap()
            .flat_map(|b| b.unwrap().indices)
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..130).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_batches() {
        let ds = Dataset::synthetic(50, (1, 6, 6), 3, 0);
        let opts = BatchOptions::training(16);
        let a: Vec<Batch> = batches(&ds, &opts, 3).unwrap().map(Result::unwrap).collect();
        let b: Vec<Batch> = batches(&ds, &opts, 3).unwrap().map(Result::unwrap).collect();
        assert_eq!(a, b);
        let c: Vec<Batch> = batches(&ds, &opts, 4).unwrap().map(Result::unwrap).collect();
        assert_ne!(a[0].indices, c[0].indices);
    }

    #[test]
    fn prefetch_matches_iteration() {
        let ds = Dataset::synthetic(70, (1, 6, 6), 3, 0);
        let opts = BatchOptions::training(16);
        let direct: Vec<Batch> = batches(&ds, &opts, 3).unwrap().map(Result::unwrap).collect();
        let mut fetched = Vec::new();
        batches(&ds, &opts, 3)
            .unwrap()
            .prefetch(2, |b| {
                fetched.push(b);
                Ok(())
            })
            .unwrap();
        assert_eq!(direct, fetched);
        let mut count = 0;
        let err = batches(&ds, &opts, 3).unwrap().prefetch(1, |_| {
            count += 1;
            Err(Error::Numeric("stop".into()))
        });
        assert!(err.is_err());
        assert_eq!(count, 1);
    }

    #[test]
    fn standardized_images_have_zero_mean_unit_std() {
        let mut x = Tensor::from_fn(Shape::new(2, 1, 5, 5), |n, _, h, w| (n * 3 + h * w) as f32 * 0.1);
        standardize(&mut x);
        for i in 0..2 {
            let s = x.sample(i);
            let mean: f32 = s.iter().sum::<f32>() / 25.0;
            let var: f32 = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 25.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
        let mut flat = Tensor::full(Shape::new(1, 1, 3, 3), 0.5f32);
        standardize(&mut flat);
        assert!(flat.data().iter().all(|&v| v == 0.0));
    }
}
