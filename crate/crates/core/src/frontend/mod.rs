//! Subband decomposition frontends.
//!
//! A depth-`M` frontend is a binary tree of `2M` split levels stored in heap
//! order: node `i` feeds its upper branch to `2i + 1` and its lower branch to
//! `2i + 2`. Even levels decimate along height, odd levels along width, so
//! every pair of levels turns one band into four at half resolution. The
//! `4^M` leaves, read left to right, are the subbands in depth-first
//! upper-before-lower order.
//!
//! * ASD: every split owns an upper and a lower trainable filter.
//! * CASD: every split owns an upper filter `U`; the lower branch is `X - U*X`.
//! * WSD: fixed separable wavelet filters, upper = highpass, lower = lowpass.

mod freq;
mod wavelet;

pub use freq::{frequency_response, write_response_csv, write_response_pgm, ResponseGrid};
pub use wavelet::Wavelet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::conv::{depthwise_filter, depthwise_filter_backward, depthwise_filter_input_grad};
use crate::ops::decimate::{decimate2, decimate2_backward, Axis, Phase};
use crate::tensor::{Scalar, Shape, Tensor};

/// Standard deviation of the Gaussian used for trainable frontend filters.
pub const FILTER_INIT_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontendMode {
    Asd,
    Casd,
    Wsd,
}

impl std::str::FromStr for FrontendMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "asd" => Ok(FrontendMode::Asd),
            "casd" => Ok(FrontendMode::Casd),
            "wsd" => Ok(FrontendMode::Wsd),
            other => Err(Error::config(format!(
                "unknown frontend mode {other:?} (expected asd, casd or wsd)"
            ))),
        }
    }
}

impl std::fmt::Display for FrontendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FrontendMode::Asd => "asd",
            FrontendMode::Casd => "casd",
            FrontendMode::Wsd => "wsd",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontendSpec {
    pub mode: FrontendMode,
    pub depth: usize,
    /// Odd kernel size of trainable filters (ignored by WSD).
    pub filter_order: usize,
    pub channels: usize,
    pub wavelet: Wavelet,
}

impl FrontendSpec {
    pub fn new(mode: FrontendMode, depth: usize, channels: usize) -> Self {
        FrontendSpec {
            mode,
            depth,
            filter_order: 5,
            channels,
            wavelet: Wavelet::Db2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("frontend depth must be at least 1"));
        }
        if self.depth > 6 {
            return Err(Error::config(format!("frontend depth {} is unreasonably deep", self.depth)));
        }
        if self.channels == 0 {
            return Err(Error::config("frontend needs at least one channel"));
        }
        if self.mode != FrontendMode::Wsd && self.filter_order.is_multiple_of(2) {
            return Err(Error::config(format!(
                "filter order {} is not odd",
                self.filter_order
            )));
        }
        Ok(())
    }

    pub fn subband_count(&self) -> usize {
        1 << (2 * self.depth)
    }

    /// Split nodes in the tree, `4^M - 1`.
    pub fn node_count(&self) -> usize {
        self.subband_count() - 1
    }

    /// Learnable per-channel filter banks: `2(4^M - 1)` for ASD, `4^M - 1` for CASD.
    pub fn filter_bank_count(&self) -> usize {
        match self.mode {
            FrontendMode::Asd => 2 * self.node_count(),
            FrontendMode::Casd => self.node_count(),
            FrontendMode::Wsd => 0,
        }
    }

    /// Output shape of each subband for an input shape.
    pub fn subband_shape(&self, input: Shape) -> Result<Shape> {
        let f = 1 << self.depth;
        if input.c != self.channels {
            return Err(Error::shape(format!(
                "frontend built for {} channels, input {input} has {}",
                self.channels, input.c
            )));
        }
        if !input.h.is_multiple_of(f) || !input.w.is_multiple_of(f) {
            return Err(Error::shape(format!(
                "input {input} spatial dims not divisible by 2^{} = {f}",
                self.depth
            )));
        }
        Ok(Shape::new(input.n, input.c, input.h / f, input.w / f))
    }

    pub fn trainable(&self) -> bool {
        self.mode != FrontendMode::Wsd
    }
}

/// One split of the tree.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterNode<T: Scalar = f32> {
    pub axis: Axis,
    /// Per-channel filters, shape `(c, 1, k, k)`.
    pub upper: Tensor<T>,
    /// Present for ASD and WSD; CASD derives the lower branch from `upper`.
    pub lower: Option<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frontend<T: Scalar = f32> {
    spec: FrontendSpec,
    nodes: Vec<FilterNode<T>>,
}

/// Subbands in canonical leaf order.
pub type SubbandSet<T> = Vec<Tensor<T>>;

/// Node inputs retained by the forward pass.
#[derive(Clone, Debug)]
pub struct FrontendCache<T: Scalar = f32> {
    input_shape: Shape,
    node_inputs: Vec<Tensor<T>>,
}

impl<T: Scalar> FrontendCache<T> {
    pub fn node_input(&self, node: usize) -> &Tensor<T> {
        &self.node_inputs[node]
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }
}

/// Filter gradients per node; `None` where the node owns no such filter.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontendGrads<T: Scalar = f32> {
    pub upper: Vec<Option<Tensor<T>>>,
    pub lower: Vec<Option<Tensor<T>>>,
}

pub fn node_axis(node: usize) -> Axis {
    if node_level(node).is_multiple_of(2) {
        Axis::Height
    } else {
        Axis::Width
    }
}

/// Tree level of a heap index (root is level 0).
pub fn node_level(node: usize) -> usize {
    (usize::BITS - 1 - (node + 1).leading_zeros()) as usize
}

/// Branch path from the root, e.g. `"UL"`; the root is `"R"`.
pub fn node_label(node: usize) -> String {
    if node == 0 {
        return "R".to_string();
    }
    let mut path = Vec::new();
    let mut i = node;
    while i > 0 {
        path.push(if i % 2 == 1 { 'U' } else { 'L' });
        i = (i - 1) / 2;
    }
    path.iter().rev().collect()
}

/// Label of subband `j` of a depth-`depth` tree, e.g. `"UL"` for `M = 1`.
pub fn subband_label(depth: usize, j: usize) -> String {
    let first_leaf = (1usize << (2 * depth)) - 1;
    node_label(first_leaf + j)
}

impl<T: Scalar> Frontend<T> {
    /// Draws trainable filters i.i.d. from N(0, 0.01²) or installs the fixed
    /// wavelet pair, depending on the mode.
    pub fn init(spec: FrontendSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let c = spec.channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, FILTER_INIT_STD).expect("valid std");
        let k = spec.filter_order;
        let draw = |rng: &mut ChaCha8Rng| {
            Tensor::from_fn(Shape::new(c, 1, k, k), |_, _, _, _| {
                T::from_f64_lossy(normal.sample(rng))
            })
        };
        let nodes = (0..spec.node_count())
            .map(|i| {
                let axis = node_axis(i);
                match spec.mode {
                    FrontendMode::Asd => {
                        let upper = draw(&mut rng);
                        let lower = draw(&mut rng);
                        FilterNode { axis, upper, lower: Some(lower) }
                    }
                    FrontendMode::Casd => FilterNode { axis, upper: draw(&mut rng), lower: None },
                    FrontendMode::Wsd => {
                        let (lo, hi) = spec.wavelet.embedded();
                        FilterNode {
                            axis,
                            upper: separable_kernel(&hi, axis, c),
                            lower: Some(separable_kernel(&lo, axis, c)),
                        }
                    }
                }
            })
            .collect();
        Ok(Frontend { spec, nodes })
    }

    pub fn from_nodes(spec: FrontendSpec, nodes: Vec<FilterNode<T>>) -> Result<Self> {
        spec.validate()?;
        if nodes.len() != spec.node_count() {
            return Err(Error::config(format!(
                "frontend of depth {} needs {} nodes, got {}",
                spec.depth,
                spec.node_count(),
                nodes.len()
            )));
        }
        for (i, n) in nodes.iter().enumerate() {
            let has_lower = spec.mode != FrontendMode::Casd;
            if n.lower.is_some() != has_lower || n.axis != node_axis(i) {
                return Err(Error::config(format!("node {i} does not match {:?} layout", spec.mode)));
            }
        }
        Ok(Frontend { spec, nodes })
    }

    pub fn spec(&self) -> &FrontendSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &[FilterNode<T>] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [FilterNode<T>] {
        &mut self.nodes
    }

    pub fn cast<U: Scalar>(&self) -> Frontend<U> {
        Frontend {
            spec: self.spec,
            nodes: self
                .nodes
                .iter()
                .map(|n| FilterNode {
                    axis: n.axis,
                    upper: n.upper.cast(),
                    lower: n.lower.as_ref().map(|l| l.cast()),
                })
                .collect(),
        }
    }

    /// Pre-decimation branch outputs `(Y1, Y2)` of one split.
    pub fn split(&self, node: usize, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let n = &self.nodes[node];
        let y1 = depthwise_filter(x, &n.upper)?;
        let y2 = match &n.lower {
            Some(lower) => depthwise_filter(x, lower)?,
            None => x.sub(&y1)?,
        };
        Ok((y1, y2))
    }

    pub fn decompose(&self, x: &Tensor<T>) -> Result<(SubbandSet<T>, FrontendCache<T>)> {
        self.spec.subband_shape(x.shape())?;
        let count = self.spec.node_count();
        let mut node_inputs: Vec<Option<Tensor<T>>> = vec![None; count];
        let mut leaves = Vec::with_capacity(self.spec.subband_count());
        // Explicit depth-first stack, upper branch first.
        let mut stack = vec![(0usize, x.clone())];
        while let Some((i, input)) = stack.pop() {
            if i >= count {
                leaves.push(input);
                continue;
            }
            let (y1, y2) = self.split(i, &input)?;
            let axis = self.nodes[i].axis;
            let d1 = decimate2(&y1, axis, Phase::Even)?;
            let d2 = decimate2(&y2, axis, Phase::Even)?;
            node_inputs[i] = Some(input);
            stack.push((2 * i + 2, d2));
            stack.push((2 * i + 1, d1));
        }
        let cache = FrontendCache {
            input_shape: x.shape(),
            node_inputs: node_inputs.into_iter().map(|t| t.expect("visited")).collect(),
        };
        Ok((leaves, cache))
    }

    /// Backpropagates subband gradients to the input and the filters.
    pub fn backward(
        &self,
        d_subbands: &[Tensor<T>],
        cache: &FrontendCache<T>,
    ) -> Result<(Tensor<T>, FrontendGrads<T>)> {
        let count = self.spec.node_count();
        if d_subbands.len() != self.spec.subband_count() {
            return Err(Error::shape(format!(
                "expected {} subband gradients, got {}",
                self.spec.subband_count(),
                d_subbands.len()
            )));
        }
        if cache.node_inputs.len() != count {
            return Err(Error::shape("frontend cache does not match this frontend"));
        }
        let band_shape = self.spec.subband_shape(cache.input_shape)?;
        for d in d_subbands {
            d.expect_shape(band_shape, "subband gradient")?;
        }
        let mut upper = vec![None; count];
        let mut lower = vec![None; count];
        // grads[i] holds dL/d(input of node i) once computed; leaves come from d_subbands.
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; count];
        for i in (0..count).rev() {
            let take_child = |j: usize, grads: &mut Vec<Option<Tensor<T>>>| -> Tensor<T> {
                if j >= count {
                    d_subbands[j - count].clone()
                } else {
                    grads[j].take().expect("child processed before parent")
                }
            };
            let gu = take_child(2 * i + 1, &mut grads);
            let gl = take_child(2 * i + 2, &mut grads);
            let x = &cache.node_inputs[i];
            let node = &self.nodes[i];
            let g1 = decimate2_backward(&gu, x.shape(), node.axis, Phase::Even)?;
            let g2 = decimate2_backward(&gl, x.shape(), node.axis, Phase::Even)?;
            let dx = match (self.spec.mode, &node.lower) {
                (FrontendMode::Casd, _) => {
                    // dL/dY = g1 - g2 drives both the filter and the filtered path.
                    let g = g1.sub(&g2)?;
                    let (mut dx, dw) = depthwise_filter_backward(x, &node.upper, &g)?;
                    dx.add_assign(&g2)?;
                    upper[i] = Some(dw);
                    dx
                }
                (FrontendMode::Asd, Some(l)) => {
                    let (mut dx, dwu) = depthwise_filter_backward(x, &node.upper, &g1)?;
                    let (dxl, dwl) = depthwise_filter_backward(x, l, &g2)?;
                    dx.add_assign(&dxl)?;
                    upper[i] = Some(dwu);
                    lower[i] = Some(dwl);
                    dx
                }
                (FrontendMode::Wsd, Some(l)) => {
                    let mut dx = depthwise_filter_input_grad(&node.upper, &g1)?;
                    dx.add_assign(&depthwise_filter_input_grad(l, &g2)?)?;
                    dx
                }
                _ => unreachable!("node layout validated at construction"),
            };
            grads[i] = Some(dx);
        }
        let dx = grads[0].take().expect("root gradient");
        Ok((dx, FrontendGrads { upper, lower }))
    }
}

/// 1-D taps placed on the centre row (width axis) or centre column (height
/// axis) of a `(c, 1, k, k)` depthwise kernel.
fn separable_kernel<T: Scalar>(taps: &[f64], axis: Axis, channels: usize) -> Tensor<T> {
    let k = taps.len();
    let mid = k / 2;
    Tensor::from_fn(Shape::new(channels, 1, k, k), |_, _, a, b| {
        let v = match axis {
            Axis::Width if a == mid => taps[b],
            Axis::Height if b == mid => taps[a],
            _ => 0.0,
        };
        T::from_f64_lossy(v)
    })
}
