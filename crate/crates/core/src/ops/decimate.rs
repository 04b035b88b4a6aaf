//! Decimation-by-2 along one spatial axis.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    Height,
    Width,
}

/// Which sample of each pair survives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Phase {
    #[default]
    Even,
    Odd,
}

impl Phase {
    fn offset(self) -> usize {
        match self {
            Phase::Even => 0,
            Phase::Odd => 1,
        }
    }
}

fn decimated_shape(s: Shape, axis: Axis) -> Result<Shape> {
    let len = match axis {
        Axis::Height => s.h,
        Axis::Width => s.w,
    };
    if len % 2 != 0 {
        return Err(Error::shape(format!(
            "cannot decimate odd {axis:?} length {len} of {s}"
        )));
    }
    Ok(match axis {
        Axis::Height => Shape { h: s.h / 2, ..s },
        Axis::Width => Shape { w: s.w / 2, ..s },
    })
}

pub fn decimate2<T: Scalar>(x: &Tensor<T>, axis: Axis, phase: Phase) -> Result<Tensor<T>> {
    let out = decimated_shape(x.shape(), axis)?;
    let s = x.shape();
    let off = phase.offset();
    let mut y = Tensor::zeros(out);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = y.plane_mut(n, c);
            match axis {
                Axis::Height => {
                    for oy in 0..out.h {
                        let iy = 2 * oy + off;
                        dst[oy * out.w..(oy + 1) * out.w]
                            .copy_from_slice(&src[iy * s.w..(iy + 1) * s.w]);
                    }
                }
                Axis::Width => {
                    for oy in 0..out.h {
                        for ox in 0..out.w {
                            dst[oy * out.w + ox] = src[oy * s.w + 2 * ox + off];
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Scatters `dy` back to the kept positions of a tensor of shape `input`;
/// dropped positions receive zero.
pub fn decimate2_backward<T: Scalar>(
    dy: &Tensor<T>,
    input: Shape,
    axis: Axis,
    phase: Phase,
) -> Result<Tensor<T>> {
    let out = decimated_shape(input, axis)?;
    dy.expect_shape(out, "decimate2_backward dy")?;
    let off = phase.offset();
    let mut dx = Tensor::zeros(input);
    for n in 0..input.n {
        for c in 0..input.c {
            let src = dy.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for oy in 0..out.h {
                for ox in 0..out.w {
                    let (iy, ix) = match axis {
                        Axis::Height => (2 * oy + off, ox),
                        Axis::Width => (oy, 2 * ox + off),
                    };
                    dst[iy * input.w + ix] = src[oy * out.w + ox];
                }
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_even_then_odd_samples() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let even = decimate2(&x, Axis::Width, Phase::Even).unwrap();
        let odd = decimate2(&x, Axis::Width, Phase::Odd).unwrap();
        assert_eq!(even.data(), &[1.0, 3.0]);
        assert_eq!(odd.data(), &[2.0, 4.0]);
    }

    #[test]
    fn halves_axis_length() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 2, 224));
        assert_eq!(
            decimate2(&x, Axis::Width, Phase::Even).unwrap().shape(),
            Shape::new(1, 3, 2, 112)
        );
    }

    #[test]
    fn odd_length_is_an_error() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 5, 4));
        assert!(decimate2(&x, Axis::Height, Phase::Even).is_err());
    }

    #[test]
    fn four_phase_outputs_partition_the_input() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 1, 28, 28), |_, _, h, w| (h * 28 + w) as f64);
        let mut seen = Vec::new();
        for ph in [Phase::Even, Phase::Odd] {
            let rows = decimate2(&x, Axis::Height, ph).unwrap();
            for pw in [Phase::Even, Phase::Odd] {
                let band = decimate2(&rows, Axis::Width, pw).unwrap();
                assert_eq!(band.shape(), Shape::new(1, 1, 14, 14));
                seen.extend(band.data().iter().map(|&v| v as usize));
            }
        }
        assert_eq!(seen.len(), 28 * 28);
        seen.sort_unstable();
        assert!(seen.iter().enumerate().all(|(i, &v)| i == v));
    }

    #[test]
    fn backward_scatters_to_kept_positions() {
        let dy = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 2), vec![5.0, 7.0]).unwrap();
        let dx = decimate2_backward(&dy, Shape::new(1, 1, 2, 2), Axis::Height, Phase::Odd).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 5.0, 7.0]);
    }
}
