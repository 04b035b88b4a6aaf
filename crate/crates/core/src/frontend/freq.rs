//! Magnitude responses of frontend filters.

use std::io::Write;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Magnitude grid for one channel. `values[r * grid + c]` is the response at
/// `(fy, fx) = (freqs[r], freqs[c])`, frequencies in units of π.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseGrid {
    pub grid: usize,
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
}

impl ResponseGrid {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.grid + col]
    }

    /// Index of the zero frequency along either axis.
    pub fn dc_index(&self) -> usize {
        self.grid / 2
    }
}

/// |DTFT| of each channel's kernel sampled at `ω = -π + 2πi/grid`.
pub fn frequency_response<T: Scalar>(filter: &Tensor<T>, grid: usize) -> Result<Vec<ResponseGrid>> {
    let s = filter.shape();
    if s.c != 1 || s.h != s.w {
        return Err(Error::shape(format!("expected a (c, 1, k, k) filter bank, got {s}")));
    }
    if grid < s.h {
        return Err(Error::config(format!("grid {grid} smaller than kernel size {}", s.h)));
    }
    let k = s.h;
    let freqs: Vec<f64> = (0..grid).map(|i| -1.0 + 2.0 * i as f64 / grid as f64).collect();
    // per-axis phasors e^{-jωt}, t = 0..k
    let phasor: Vec<Vec<(f64, f64)>> = freqs
        .iter()
        .map(|&f| {
            (0..k)
                .map(|t| {
                    let a = -f * std::f64::consts::PI * t as f64;
                    (a.cos(), a.sin())
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(s.n);
    for ch in 0..s.n {
        let w = filter.plane(ch, 0);
        let w: Vec<f64> = w.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        let mut values = Vec::with_capacity(grid * grid);
        for py in &phasor {
            // row transform first: R[b] = Σ_a w[a, b] e^{-jωy a}
            let mut row = vec![(0.0, 0.0); k];
            for (a, &(cy, sy)) in py.iter().enumerate() {
                for (b, r) in row.iter_mut().enumerate() {
                    let v = w[a * k + b];
                    r.0 += v * cy;
                    r.1 += v * sy;
                }
            }
            for px in &phasor {
                let (mut re, mut im) = (0.0, 0.0);
                for (&(rr, ri), &(cx, sx)) in row.iter().zip(px) {
                    re += rr * cx - ri * sx;
                    im += rr * sx + ri * cx;
                }
                values.push(re.hypot(im));
            }
        }
        out.push(ResponseGrid { grid, freqs: freqs.clone(), values });
    }
    Ok(out)
}

/// CSV with a header of `Fx/π` values; each row starts with its `Fy/π`.
pub fn write_response_csv(r: &ResponseGrid, mut out: impl Write) -> std::io::Result<()> {
    write!(out, "fy\\fx")?;
    for f in &r.freqs {
        write!(out, ",{f}")?;
    }
    writeln!(out)?;
    for (row, fy) in r.freqs.iter().enumerate() {
        write!(out, "{fy}")?;
        for col in 0..r.grid {
            write!(out, ",{}", r.at(row, col))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Binary 8-bit PGM, min-max scaled. A flat grid maps to mid grey.
pub fn write_response_pgm(r: &ResponseGrid, mut out: impl Write) -> std::io::Result<()> {
    let lo = r.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = r.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    write!(out, "P5\n{} {}\n255\n", r.grid, r.grid)?;
    let pixels: Vec<u8> = r
        .values
        .iter()
        .map(|&v| {
            if span > 1e-12 * hi.abs().max(1.0) {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                128
            }
        })
        .collect();
    out.write_all(&pixels)
}
