//! Fixed analysis filters for the wavelet frontend.

use serde::{Deserialize, Serialize};

/// Wavelet family used by the fixed frontend.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    /// Daubechies with two vanishing moments (4 taps).
    #[default]
    Db2,
    /// Two-tap Haar.
    Haar,
}

const S3: f64 = 1.732_050_807_568_877_2;
const SQRT2: f64 = std::f64::consts::SQRT_2;

impl Wavelet {
    /// Analysis lowpass and highpass taps, ordered for correlation
    /// (`y[m] = Σ t[j]·x[m + j - origin]`).
    pub fn taps(self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Wavelet::Db2 => {
                let d = 4.0 * SQRT2;
                let h = [(1.0 + S3) / d, (3.0 + S3) / d, (3.0 - S3) / d, (1.0 - S3) / d];
                let g: Vec<f64> = (0..4)
                    .map(|k| if k % 2 == 0 { h[3 - k] } else { -h[3 - k] })
                    .collect();
                (h.to_vec(), g)
            }
            Wavelet::Haar => {
                let r = 1.0 / SQRT2;
                (vec![r, r], vec![r, -r])
            }
        }
    }

    /// Odd kernel length that holds the taps.
    pub fn kernel_size(self) -> usize {
        match self {
            Wavelet::Db2 => 5,
            Wavelet::Haar => 3,
        }
    }

    /// Index in the odd-length kernel where the first tap is placed. Chosen so
    /// that with even-phase decimation output `m` reads samples `2m - 1 ..= 2m + 2`
    /// (db2) or `2m, 2m + 1` (Haar).
    pub fn first_tap(self) -> usize {
        1
    }

    /// Taps embedded in an odd-length 1-D kernel.
    pub fn embedded(self) -> (Vec<f64>, Vec<f64>) {
        let k = self.kernel_size();
        let (lo, hi) = self.taps();
        let place = |taps: &[f64]| {
            let mut out = vec![0.0; k];
            out[self.first_tap()..self.first_tap() + taps.len()].copy_from_slice(taps);
            out
        };
        (place(&lo), place(&hi))
    }
}
