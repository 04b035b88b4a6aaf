use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Random translation plus Gaussian blur.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Maximum translation in pixels along each axis.
    pub max_shift: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { max_shift: 2, sigma_min: 0.5, sigma_max: 1.5 }
    }
}

/// Translates every plane by `(dy, dx)`, filling with zeros.
pub fn shift(img: &Tensor<f32>, dy: isize, dx: isize) -> Tensor<f32> {
    let s = img.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = img.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                let sy = y as isize - dy;
                if sy < 0 || sy >= s.h as isize {
                    continue;
                }
                for x in 0..s.w {
                    let sx = x as isize - dx;
                    if sx >= 0 && sx < s.w as isize {
                        dst[y * s.w + x] = src[sy as usize * s.w + sx as usize];
                    }
                }
            }
        }
    }
    out
}

/// Normalised 3x3 Gaussian; `sigma <= 0` gives the delta kernel.
pub fn gaussian_kernel3(sigma: f64) -> [[f32; 3]; 3] {
    let mut k = [[0.0f32; 3]; 3];
    if sigma <= 0.0 {
        k[1][1] = 1.0;
        return k;
    }
    let mut raw = [[0.0f64; 3]; 3];
    let mut total = 0.0;
    for (i, row) in raw.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (a, b) = (i as f64 - 1.0, j as f64 - 1.0);
            *v = (-(a * a + b * b) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (raw[i][j] / total) as f32;
        }
    }
    k
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// 3x3 Gaussian blur with reflective borders (`x[-1] = x[1]`).
pub fn gaussian_blur3(img: &Tensor<f32>, sigma: f64) -> Tensor<f32> {
    let k = gaussian_kernel3(sigma);
    let s = img.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = img.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut acc = 0.0f32;
                    for (a, row) in k.iter().enumerate() {
                        let sy = reflect(y as isize + a as isize - 1, s.h);
                        for (b, &kv) in row.iter().enumerate() {
                            let sx = reflect(x as isize + b as isize - 1, s.w);
                            acc += kv * src[sy * s.w + sx];
                        }
                    }
                    dst[y * s.w + x] = acc;
                }
            }
        }
    }
    out
}

/// Augments one image `(1, c, h, w)`: a uniform random shift within
/// `±max_shift` pixels, then a blur with `σ ~ U(sigma_min, sigma_max)`.
pub fn augment(img: &Tensor<f32>, cfg: &AugmentConfig, seed: u64) -> Result<Tensor<f32>> {
    let s = img.shape();
    if cfg.max_shift >= s.h || cfg.max_shift >= s.w {
        return Err(Error::config(format!("shift {} does not fit a {}x{} image", cfg.max_shift, s.h, s.w)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = cfg.max_shift as i64;
    let dy = rng.random_range(-m..=m) as isize;
    let dx = rng.random_range(-m..=m) as isize;
    let sigma = if cfg.sigma_max > cfg.sigma_min {
        rng.random_range(cfg.sigma_min..cfg.sigma_max)
    } else {
        cfg.sigma_min
    };
    Ok(gaussian_blur3(&shift(img, dy, dx), sigma))
}

/// Shifts used by five-patch evaluation: centre plus the four diagonal corners.
pub(crate) fn five_patch_offsets(max_shift: usize) -> [(isize, isize); 5] {
    let m = max_shift as isize;
    [(0, 0), (-m, -m), (-m, m), (m, -m), (m, m)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn zero_sigma_is_identity() {
        let x = Tensor::from_fn(Shape::new(1, 2, 5, 5), |_, c, h, w| (c + h * w) as f32 / 30.0);
        assert_eq!(gaussian_blur3(&x, 0.0), x);
    }

    #[test]
    fn blur_preserves_constants() {
        let x = Tensor::full(Shape::new(1, 1, 6, 6), 0.4f32);
        for sigma in [0.5, 1.0, 1.5] {
            let y = gaussian_blur3(&x, sigma);
            assert!(y.data().iter().all(|v| (v - 0.4).abs() < 1e-6));
        }
    }

    #[test]
    fn impulse_response_is_the_closed_form_kernel() {
        let sigma = 0.8f64;
        let mut x = Tensor::zeros(Shape::new(1, 1, 7, 7));
        x.set(0, 0, 3, 3, 1.0f32);
        let y = gaussian_blur3(&x, sigma);
        let z: f64 = (-1..=1)
            .flat_map(|a| (-1..=1).map(move |b| (a, b)))
            .map(|(a, b): (i32, i32)| (-((a * a + b * b) as f64) / (2.0 * sigma * sigma)).exp())
            .sum();
        for a in -1i32..=1 {
            for b in -1i32..=1 {
                let want = (-((a * a + b * b) as f64) / (2.0 * sigma * sigma)).exp() / z;
                let got = y.at(0, 0, (3 + a) as usize, (3 + b) as usize) as f64;
                assert!((got - want).abs() < 1e-7);
            }
        }
        assert_eq!(y.at(0, 0, 1, 3), 0.0);
    }

    #[test]
    fn shift_moves_and_zero_fills() {
        let x = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, h, w| (1 + h * 3 + w) as f32);
        let y = shift(&x, 1, -1);
        assert_eq!(y.data(), &[0.0, 0.0, 0.0, 2.0, 3.0, 0.0, 5.0, 6.0, 0.0]);
    }

    #[test]
    fn augment_is_seeded_and_shape_preserving() {
        let x = Tensor::from_fn(Shape::new(1, 1, 28, 28), |_, _, h, w| ((h + w) % 5) as f32 / 5.0);
        let cfg = AugmentConfig::default();
        let a = augment(&x, &cfg, 11).unwrap();
        assert_eq!(a, augment(&x, &cfg, 11).unwrap());
        assert_eq!(a.shape(), x.shape());
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let big = AugmentConfig { max_shift: 30, ..cfg };
        assert!(augment(&x, &big, 0).is_err());
    }
}
