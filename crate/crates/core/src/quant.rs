//! Post-training quantisation of inputs and parameters. Quantised values are
//! stored back as floats, so inference arithmetic stays in f32.

use std::io::Write;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Scalar, Tensor};
use crate::train::{evaluate, Protocol};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuantTarget {
    Input,
    WeightsAndBiases,
}

impl std::fmt::Display for QuantTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QuantTarget::Input => "input",
            QuantTarget::WeightsAndBiases => "weights",
        })
    }
}

impl std::str::FromStr for QuantTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(QuantTarget::Input),
            "weights" | "weights_and_biases" => Ok(QuantTarget::WeightsAndBiases),
            other => Err(Error::config(format!("unknown quantisation target {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantSpec {
    pub target: QuantTarget,
    pub bits: u32,
}

pub const INPUT_BITS: [u32; 5] = [1, 2, 4, 6, 8];
pub const WEIGHT_BITS: [u32; 3] = [8, 16, 32];

impl QuantSpec {
    pub fn new(target: QuantTarget, bits: u32) -> Result<Self> {
        let allowed: &[u32] = match target {
            QuantTarget::Input => &INPUT_BITS,
            QuantTarget::WeightsAndBiases => &WEIGHT_BITS,
        };
        if !allowed.contains(&bits) {
            return Err(Error::config(format!("{target} quantisation supports {allowed:?} bits, not {bits}")));
        }
        Ok(QuantSpec { target, bits })
    }

    /// Parses `input@4` or `weights@16`.
    pub fn parse(s: &str) -> Result<Self> {
        let (t, b) = s
            .split_once('@')
            .ok_or_else(|| Error::config(format!("quant spec {s:?} is not target@bits")))?;
        let bits = b.parse().map_err(|e| Error::config(format!("quant spec {s:?}: {e}")))?;
        Self::new(t.parse()?, bits)
    }
}

/// Uniform mid-tread quantiser on `[0, 1]` with `2^bits` levels, rounding
/// halves up. Inputs outside the range are clamped first.
pub fn quantize_input<T: Scalar>(x: &Tensor<T>, bits: u32) -> Result<Tensor<T>> {
    if bits == 0 || bits > 24 {
        return Err(Error::config(format!("input quantisation bits {bits} outside 1..=24")));
    }
    let levels = ((1u64 << bits) - 1) as f64;
    Ok(x.map(|v| {
        let v = v.to_f64().unwrap_or(0.0).clamp(0.0, 1.0);
        T::from_f64_lossy((v * levels + 0.5).floor() / levels)
    }))
}

/// Symmetric per-tensor quantisation with `2^(bits-1) - 1` positive levels.
/// All-zero tensors are left unchanged.
pub fn quantize_slice<T: Scalar>(w: &mut [T], bits: u32) -> Result<()> {
    if !(2..=32).contains(&bits) {
        return Err(Error::config(format!("weight quantisation bits {bits} outside 2..=32")));
    }
    if bits == 32 {
        return Ok(());
    }
    let max = w.iter().map(|v| v.to_f64().unwrap_or(0.0).abs()).fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(());
    }
    let levels = ((1u64 << (bits - 1)) - 1) as f64;
    let scale = max / levels;
    for v in w.iter_mut() {
        let x = v.to_f64().unwrap_or(0.0);
        *v = T::from_f64_lossy((x / scale).round() * scale);
    }
    Ok(())
}

/// Copy of `m` with every parameter tensor quantised to `bits`. At 32 bits
/// the copy is bit-identical.
pub fn quantize_weights<T: Scalar>(m: &Model<T>, bits: u32) -> Result<Model<T>> {
    let mut q = m.clone();
    for p in q.params_mut() {
        quantize_slice(p, bits)?;
    }
    Ok(q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantRow {
    pub spec: QuantSpec,
    pub top1: f64,
}

/// Centre-protocol top-1 accuracy under each spec, in spec order.
pub fn quant_sweep(m: &Model<f32>, data: &Dataset, specs: &[QuantSpec], batch: usize) -> Result<Vec<QuantRow>> {
    specs
        .iter()
        .map(|&spec| {
            let r = match spec.target {
                QuantTarget::Input => evaluate(m, data, Protocol::Center, batch, Some(spec.bits))?,
                QuantTarget::WeightsAndBiases => {
                    evaluate(&quantize_weights(m, spec.bits)?, data, Protocol::Center, batch, None)?
                }
            };
            Ok(QuantRow { spec, top1: r.top1 })
        })
        .collect()
}

/// CSV with columns `target,bits,top1` (top-1 in percent).
pub fn write_sweep_csv(rows: &[QuantRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "target,bits,top1")?;
    for r in rows {
        writeln!(out, "{},{},{:.4}", r.spec.target, r.spec.bits, r.top1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn grid(n: usize) -> Tensor<f32> {
        Tensor::from_fn(Shape::new(1, 1, 1, n), |_, _, _, w| w as f32 / (n - 1) as f32)
    }

    #[test]
    fn one_bit_thresholds_at_half() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.4f32, 0.6, 0.5]).unwrap();
        assert_eq!(quantize_input(&x, 1).unwrap().data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn input_error_bound_and_idempotence() {
        let x = grid(100_001);
        for bits in [1u32, 2, 4, 6, 8] {
            let q = quantize_input(&x, bits).unwrap();
            let bound = 1.0 / (2.0 * ((1u32 << bits) - 1) as f32);
            let err = x.data().iter().zip(q.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            assert!(err <= bound + 1e-6, "bits {bits}: {err} > {bound}");
            assert_eq!(quantize_input(&q, bits).unwrap(), q);
        }
        assert!(quantize_input(&x, 0).is_err());
    }

    #[test]
    fn weight_lattice() {
        let mut w = vec![-1.0f32, 0.5];
        quantize_slice(&mut w, 8).unwrap();
        assert_eq!(w[0], -1.0);
        assert!((w[1] - 0.5).abs() <= 1.0 / 254.0);
        let once = w.clone();
        quantize_slice(&mut w, 8).unwrap();
        assert_eq!(w, once);
        let mut zeros = vec![0.0f32; 4];
        quantize_slice(&mut zeros, 8).unwrap();
        assert_eq!(zeros, vec![0.0; 4]);
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(QuantSpec::parse("input@4").unwrap(), QuantSpec { target: QuantTarget::Input, bits: 4 });
        assert!(QuantSpec::parse("input@3").is_err());
        assert!(QuantSpec::parse("weights@12").is_err());
        assert!(QuantSpec::parse("weights16").is_err());
    }

    #[test]
    fn csv_schema() {
        let rows = vec![QuantRow { spec: QuantSpec::parse("weights@32").unwrap(), top1: 99.5 }];
        let mut out = Vec::new();
        write_sweep_csv(&rows, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "target,bits,top1\nweights,32,99.5000\n");
        assert!(quant_sweep(
            &Model::build(&crate::ModelConfig::preset("mnist-msr-asd").unwrap(), 0).unwrap(),
            &Dataset::synthetic(2, (1, 28, 28), 10, 0),
            &[],
            8
        )
        .unwrap()
        .is_empty());
    }
}
