//! MSR, SSR and BCNN networks built from a [`ModelConfig`].

mod config;

pub use config::{preset_names, Architecture, InitScheme, LayerSpec, ModelConfig};

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frontend::{Frontend, FrontendCache, FrontendMode};
use crate::ops::{
    concat_channels, conv2d_backward, conv2d_forward, dropout, dropout_backward, leaky_relu,
    leaky_relu_backward, maxpool2x2, maxpool2x2_backward, split_channels, ConvParams, DropoutMask,
    Linear, PoolIndices, DEFAULT_LEAK,
};
use crate::seed::derive_seed;
use crate::tensor::{Scalar, Shape, Tensor};

/// Learning-rate group of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Main,
    Frontend,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub group: Group,
    /// False for the fixed wavelet filters.
    pub trainable: bool,
    pub dims: Vec<usize>,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active; masks derive from `seed`.
    Train { seed: u64 },
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PathStep {
    /// Conv + leaky ReLU; `skip_from` adds that conv's activated output.
    Conv { idx: usize, skip_from: Option<usize> },
    Pool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum HeadStep {
    Fc { idx: usize, act: bool },
    Dropout { rate: f64, tag: u64 },
}

/// Residual links `(source conv, destination conv)` implied by the layer list.
///
/// Within each block (closed by `pool`, `block` or the end of the list) the
/// earliest conv whose output width matches the block's last conv feeds an
/// identity skip into that last conv's activated output.
pub fn residual_links(layers: &[LayerSpec]) -> Vec<(usize, usize)> {
    let mut links = Vec::new();
    let mut block: Vec<(usize, usize)> = Vec::new();
    let mut conv_idx = 0;
    let mut close = |block: &mut Vec<(usize, usize)>| {
        if let Some(&(last, out)) = block.last() {
            if let Some(&(src, _)) = block[..block.len() - 1].iter().find(|&&(_, o)| o == out) {
                links.push((src, last));
            }
        }
        block.clear();
    };
    for l in layers {
        match *l {
            LayerSpec::Conv { out_ch, .. } => {
                block.push((conv_idx, out_ch));
                conv_idx += 1;
            }
            LayerSpec::Pool | LayerSpec::Block => close(&mut block),
            _ => {}
        }
    }
    close(&mut block);
    links
}

fn path_plan(layers: &[LayerSpec]) -> Vec<PathStep> {
    let links = residual_links(layers);
    let mut idx = 0;
    let mut plan = Vec::new();
    for l in layers {
        match l {
            LayerSpec::Conv { .. } => {
                let skip_from = links.iter().find(|&&(_, d)| d == idx).map(|&(s, _)| s);
                plan.push(PathStep::Conv { idx, skip_from });
                idx += 1;
            }
            LayerSpec::Pool => plan.push(PathStep::Pool),
            _ => {}
        }
    }
    plan
}

fn head_plan(head: &[LayerSpec]) -> Vec<HeadStep> {
    let n_fc = head.iter().filter(|l| matches!(l, LayerSpec::Fc { .. })).count();
    let mut plan = Vec::new();
    let mut idx = 0;
    for (pos, l) in head.iter().enumerate() {
        match *l {
            LayerSpec::Fc { .. } => {
                plan.push(HeadStep::Fc { idx, act: idx + 1 < n_fc });
                idx += 1;
            }
            LayerSpec::Dropout(rate) => plan.push(HeadStep::Dropout { rate, tag: pos as u64 }),
            _ => {}
        }
    }
    plan
}

static NEXT_MODEL_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MODEL_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    frontend: Option<Frontend<T>>,
    paths: Vec<Vec<ConvParams<T>>>,
    head: Vec<Linear<T>>,
    path_plan: Vec<PathStep>,
    head_plan: Vec<HeadStep>,
    parallel: bool,
    /// Changes whenever parameters may have been mutated; guards stale caches.
    version: u64,
}

impl<T: Scalar> Clone for Model<T> {
    fn clone(&self) -> Self {
        Model {
            config: self.config.clone(),
            frontend: self.frontend.clone(),
            paths: self.paths.clone(),
            head: self.head.clone(),
            path_plan: self.path_plan.clone(),
            head_plan: self.head_plan.clone(),
            parallel: self.parallel,
            version: fresh_id(),
        }
    }
}

impl<T: Scalar> PartialEq for Model<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.frontend == other.frontend
            && self.paths == other.paths
            && self.head == other.head
    }
}

/// Input gradient of one path and the (weight, bias) gradients of its convs.
type PathGrads<T> = (Tensor<T>, Vec<(Vec<T>, Vec<T>)>);

struct PathCache<T: Scalar> {
    conv_in: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
    pools: Vec<PoolIndices>,
    out_shape: Shape,
}

struct HeadCache<T: Scalar> {
    fc_in: Vec<Tensor<T>>,
    pre: Vec<Option<Tensor<T>>>,
    masks: Vec<Option<DropoutMask>>,
}

/// Intermediate values of one forward pass, consumed by [`Model::backward`].
pub struct ForwardCache<T: Scalar = f32> {
    version: u64,
    batch: usize,
    frontend: Option<FrontendCache<T>>,
    bands: Vec<Tensor<T>>,
    paths: Vec<PathCache<T>>,
    head: HeadCache<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Named intermediate tensors, in forward order.
    pub fn activations(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (j, b) in self.bands.iter().enumerate() {
            out.push((format!("frontend.band{j}"), b));
        }
        for (p, pc) in self.paths.iter().enumerate() {
            for (i, t) in pc.pre.iter().enumerate() {
                out.push((format!("path{p}.conv{i}.pre"), t));
            }
        }
        for (i, t) in self.head.pre.iter().enumerate() {
            if let Some(t) = t {
                out.push((format!("head.fc{i}.pre"), t));
            }
        }
        out
    }

    pub fn frontend(&self) -> Option<&FrontendCache<T>> {
        self.frontend.as_ref()
    }

    /// Subband tensors the paths consumed (empty for BCNN).
    pub fn subbands(&self) -> &[Tensor<T>] {
        &self.bands
    }
}

/// Gradients aligned with [`Model::param_info`]; `None` for frozen tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSet<T: Scalar = f32> {
    pub grads: Vec<Option<Vec<T>>>,
    /// Gradient with respect to the model input.
    pub input: Tensor<T>,
}

impl<T: Scalar> GradSet<T> {
    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
            && self.input.all_finite()
    }
}

fn normal_vec<T: Scalar>(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<T> {
    let d = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| T::from_f64_lossy(d.sample(rng))).collect()
}

fn init_std_and_bias(init: InitScheme, fan_in: usize, output_layer: bool) -> (f64, f64) {
    match init {
        InitScheme::Small => (0.01, 1.0),
        InitScheme::He if output_layer => (0.01, 0.0),
        InitScheme::He => ((2.0 / fan_in as f64).sqrt(), 0.0),
    }
}

impl<T: Scalar> Model<T> {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let frontend = match config.frontend {
            Some(spec) => Some(Frontend::init(spec, derive_seed(seed, 0))?),
            None => None,
        };
        let paths = (0..config.path_count())
            .map(|p| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1 + p as u64));
                config
                    .conv_layers()
                    .map(|(k, i, o)| {
                        let (std, b) = init_std_and_bias(config.init, k * k * i, false);
                        let w = normal_vec(&mut rng, o * i * k * k, std);
                        ConvParams::same(
                            Tensor::from_vec(Shape::new(o, i, k, k), w).expect("sized"),
                            vec![T::from_f64_lossy(b); o],
                        )
                    })
                    .collect()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u32::MAX as u64));
        let fcs = config.fc_layers().count();
        let head = config
            .fc_layers()
            .enumerate()
            .map(|(n, (i, o))| {
                let (std, b) = init_std_and_bias(config.init, i, n + 1 == fcs);
                Linear::new(i, o, normal_vec(&mut rng, i * o, std), vec![T::from_f64_lossy(b); o])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            config: config.clone(),
            frontend,
            paths,
            head,
            path_plan: path_plan(&config.layers),
            head_plan: head_plan(&config.head),
            parallel: true,
            version: fresh_id(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn frontend(&self) -> Option<&Frontend<T>> {
        self.frontend.as_ref()
    }

    pub fn frontend_mut(&mut self) -> Option<&mut Frontend<T>> {
        self.version = fresh_id();
        self.frontend.as_mut()
    }

    pub fn paths(&self) -> &[Vec<ConvParams<T>>] {
        &self.paths
    }

    pub fn head(&self) -> &[Linear<T>] {
        &self.head
    }

    /// Runs MSR paths on the rayon pool. Results do not depend on this flag.
    pub fn set_parallel(&mut self, on: bool) {
        self.parallel = on;
    }

    pub fn residual_links(&self) -> Vec<(usize, usize)> {
        residual_links(&self.config.layers)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            frontend: self.frontend.as_ref().map(|f| f.cast()),
            paths: self
                .paths
                .iter()
                .map(|p| {
                    p.iter()
                        .map(|c| ConvParams {
                            weight: c.weight.cast(),
                            bias: c.bias.iter().map(|&b| U::from_f64_lossy(b.to_f64().unwrap_or(f64::NAN))).collect(),
                            stride: c.stride,
                            padding: c.padding,
                            depthwise: c.depthwise,
                        })
                        .collect()
                })
                .collect(),
            head: self
                .head
                .iter()
                .map(|l| Linear {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weight: l.weight.iter().map(|&w| U::from_f64_lossy(w.to_f64().unwrap_or(f64::NAN))).collect(),
                    bias: l.bias.iter().map(|&b| U::from_f64_lossy(b.to_f64().unwrap_or(f64::NAN))).collect(),
                })
                .collect(),
            path_plan: self.path_plan.clone(),
            head_plan: self.head_plan.clone(),
            parallel: self.parallel,
            version: fresh_id(),
        }
    }

    /// Parameter metadata in canonical order: frontend nodes (upper then
    /// lower), each path's convs (weight then bias), then the FC head.
    pub fn param_info(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        if let Some(f) = &self.frontend {
            let trainable = f.spec().trainable();
            for (i, n) in f.nodes().iter().enumerate() {
                let dims = n.upper.shape().dims().to_vec();
                out.push(ParamInfo { name: format!("frontend.node{i}.upper"), group: Group::Frontend, trainable, dims: dims.clone() });
                if n.lower.is_some() {
                    out.push(ParamInfo { name: format!("frontend.node{i}.lower"), group: Group::Frontend, trainable, dims });
                }
            }
        }
        for (p, path) in self.paths.iter().enumerate() {
            for (i, c) in path.iter().enumerate() {
                out.push(ParamInfo { name: format!("path{p}.conv{i}.weight"), group: Group::Main, trainable: true, dims: c.weight.shape().dims().to_vec() });
                out.push(ParamInfo { name: format!("path{p}.conv{i}.bias"), group: Group::Main, trainable: true, dims: vec![c.bias.len()] });
            }
        }
        for (i, l) in self.head.iter().enumerate() {
            out.push(ParamInfo { name: format!("head.fc{i}.weight"), group: Group::Main, trainable: true, dims: vec![l.out_dim, l.in_dim] });
            out.push(ParamInfo { name: format!("head.fc{i}.bias"), group: Group::Main, trainable: true, dims: vec![l.out_dim] });
        }
        out
    }

    /// Parameter storage in [`Model::param_info`] order.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        if let Some(f) = &self.frontend {
            for n in f.nodes() {
                out.push(n.upper.data());
                if let Some(l) = &n.lower {
                    out.push(l.data());
                }
            }
        }
        for path in &self.paths {
            for c in path {
                out.push(c.weight.data());
                out.push(&c.bias);
            }
        }
        for l in &self.head {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    /// Mutable parameter storage in [`Model::param_info`] order. Invalidates
    /// outstanding forward caches.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.version = fresh_id();
        let mut out: Vec<&mut [T]> = Vec::new();
        if let Some(f) = &mut self.frontend {
            for n in f.nodes_mut() {
                out.push(n.upper.data_mut());
                if let Some(l) = &mut n.lower {
                    out.push(l.data_mut());
                }
            }
        }
        for path in &mut self.paths {
            for c in path {
                out.push(c.weight.data_mut());
                out.push(&mut c.bias);
            }
        }
        for l in &mut self.head {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    /// Scalar parameter count and its size in bytes at f32.
    pub fn parameter_count(&self) -> (usize, usize) {
        let n: usize = self.params().iter().map(|p| p.len()).sum();
        (n, 4 * n)
    }

    fn leak(&self) -> T {
        T::from_f64_lossy(DEFAULT_LEAK)
    }

    fn path_forward(&self, p: usize, x: Tensor<T>) -> Result<(Tensor<T>, PathCache<T>)> {
        let convs = &self.paths[p];
        let leak = self.leak();
        let mut cache = PathCache {
            conv_in: Vec::with_capacity(convs.len()),
            pre: Vec::with_capacity(convs.len()),
            pools: Vec::new(),
            out_shape: x.shape(),
        };
        let mut act: Vec<Option<Tensor<T>>> = vec![None; convs.len()];
        let sources: Vec<usize> = self.residual_links().iter().map(|&(s, _)| s).collect();
        let mut a = x;
        for step in &self.path_plan {
            match *step {
                PathStep::Conv { idx, skip_from } => {
                    let z = conv2d_forward(&a, &convs[idx])?;
                    let mut y = leaky_relu(&z, leak);
                    if sources.contains(&idx) {
                        act[idx] = Some(y.clone());
                    }
                    if let Some(s) = skip_from {
                        y.add_assign(act[s].as_ref().expect("skip source precedes destination"))?;
                    }
                    cache.conv_in.push(a);
                    cache.pre.push(z);
                    a = y;
                }
                PathStep::Pool => {
                    let (y, idx) = maxpool2x2(&a)?;
                    cache.pools.push(idx);
                    a = y;
                }
            }
        }
        cache.out_shape = a.shape();
        Ok((a, cache))
    }

    fn path_backward(&self, p: usize, cache: &PathCache<T>, dy: Tensor<T>) -> Result<PathGrads<T>> {
        let convs = &self.paths[p];
        let leak = self.leak();
        let mut grads: Vec<(Vec<T>, Vec<T>)> = vec![(Vec::new(), Vec::new()); convs.len()];
        let mut pending: Vec<Option<Tensor<T>>> = vec![None; convs.len()];
        let mut pool_i = cache.pools.len();
        let mut g = dy;
        for step in self.path_plan.iter().rev() {
            match *step {
                PathStep::Pool => {
                    pool_i -= 1;
                    g = maxpool2x2_backward(&g, &cache.pools[pool_i])?;
                }
                PathStep::Conv { idx, skip_from } => {
                    if let Some(s) = skip_from {
                        pending[s] = Some(g.clone());
                    }
                    if let Some(extra) = pending[idx].take() {
                        g.add_assign(&extra)?;
                    }
                    let gz = leaky_relu_backward(&cache.pre[idx], &g, leak)?;
                    let cg = conv2d_backward(&cache.conv_in[idx], &convs[idx], &gz)?;
                    grads[idx] = (cg.dw.into_vec(), cg.db);
                    g = cg.dx;
                }
            }
        }
        Ok((g, grads))
    }

    /// Logits of shape `(n, classes, 1, 1)` and the cache for backward.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let [c, h, w] = self.config.input;
        let s = x.shape();
        if (s.c, s.h, s.w) != (c, h, w) {
            return Err(Error::shape(format!(
                "{} expects {c}x{h}x{w} inputs, got {s}",
                self.config.name
            )));
        }
        let (bands, fcache) = match &self.frontend {
            Some(f) => {
                let (b, fc) = f.decompose(x)?;
                (b, Some(fc))
            }
            None => (Vec::new(), None),
        };
        let inputs: Vec<Tensor<T>> = match self.config.architecture {
            Architecture::Bcnn => vec![x.clone()],
            Architecture::Ssr => vec![concat_channels(&bands)?],
            Architecture::Msr => bands.clone(),
        };
        let run = |(p, t): (usize, Tensor<T>)| self.path_forward(p, t);
        let outs: Vec<(Tensor<T>, PathCache<T>)> = if self.parallel && inputs.len() > 1 {
            inputs.into_par_iter().enumerate().map(run).collect::<Result<_>>()?
        } else {
            inputs.into_iter().enumerate().map(run).collect::<Result<_>>()?
        };
        let (feats, pcaches): (Vec<_>, Vec<_>) = outs.into_iter().unzip();
        let merged = if feats.len() == 1 {
            feats.into_iter().next().expect("one path")
        } else {
            concat_channels(&feats)?
        };
        let n = s.n;
        let mut a = merged.reshape(Shape::new(n, self.config.flattened_dim(), 1, 1))?;
        let leak = self.leak();
        let mut hc = HeadCache { fc_in: Vec::new(), pre: Vec::new(), masks: Vec::new() };
        for step in &self.head_plan {
            match *step {
                HeadStep::Fc { idx, act } => {
                    let z = self.head[idx].forward(&a)?;
                    hc.fc_in.push(a);
                    if act {
                        a = leaky_relu(&z, leak);
                        hc.pre.push(Some(z));
                    } else {
                        a = z;
                        hc.pre.push(None);
                    }
                }
                HeadStep::Dropout { rate, tag } => {
                    let (training, seed) = match mode {
                        Mode::Train { seed } => (true, derive_seed(seed, tag)),
                        Mode::Eval => (false, 0),
                    };
                    let (y, mask) = dropout(&a, rate, seed, training)?;
                    hc.masks.push(mask);
                    a = y;
                }
            }
        }
        let cache = ForwardCache {
            version: self.version,
            batch: n,
            frontend: fcache,
            bands: if self.config.architecture == Architecture::Bcnn { Vec::new() } else { bands },
            paths: pcaches,
            head: hc,
        };
        Ok((a, cache))
    }

    /// Inference-mode logits.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(x, Mode::Eval).map(|(y, _)| y)
    }

    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &Tensor<T>) -> Result<GradSet<T>> {
        if cache.version != self.version {
            return Err(Error::shape("forward cache is stale: parameters changed since the forward pass"));
        }
        dlogits.expect_shape(Shape::new(cache.batch, self.config.classes, 1, 1), "dlogits")?;
        let leak = self.leak();
        let mut fc_grads: Vec<(Vec<T>, Vec<T>)> = vec![(Vec::new(), Vec::new()); self.head.len()];
        let mut mask_i = cache.head.masks.len();
        let mut g = dlogits.clone();
        for step in self.head_plan.iter().rev() {
            match *step {
                HeadStep::Dropout { .. } => {
                    mask_i -= 1;
                    g = dropout_backward(&g, cache.head.masks[mask_i].as_ref())?;
                }
                HeadStep::Fc { idx, .. } => {
                    if let Some(pre) = &cache.head.pre[idx] {
                        g = leaky_relu_backward(pre, &g, leak)?;
                    }
                    let lg = self.head[idx].backward(&cache.head.fc_in[idx], &g)?;
                    fc_grads[idx] = (lg.dw, lg.db);
                    g = lg.dx;
                }
            }
        }
        let out = cache.paths[0].out_shape;
        let per_path = out.c;
        let total = Shape::new(cache.batch, per_path * cache.paths.len(), out.h, out.w);
        let g = g.reshape(total)?;
        let slices = if cache.paths.len() == 1 {
            vec![g]
        } else {
            split_channels(&g, &vec![per_path; cache.paths.len()])?
        };
        let run = |(p, d): (usize, Tensor<T>)| self.path_backward(p, &cache.paths[p], d);
        let back: Vec<PathGrads<T>> = if self.parallel && slices.len() > 1 {
            slices.into_par_iter().enumerate().map(run).collect::<Result<_>>()?
        } else {
            slices.into_iter().enumerate().map(run).collect::<Result<_>>()?
        };
        let (dins, conv_grads): (Vec<_>, Vec<_>) = back.into_iter().unzip();

        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        let input = match (&self.frontend, &cache.frontend) {
            (Some(f), Some(fc)) => {
                let dbands = match self.config.architecture {
                    Architecture::Ssr => {
                        let c = self.config.input[0];
                        split_channels(&dins[0], &vec![c; f.spec().subband_count()])?
                    }
                    _ => dins,
                };
                let (dx, fg) = f.backward(&dbands, fc)?;
                let frozen = f.spec().mode == FrontendMode::Wsd;
                for (i, n) in f.nodes().iter().enumerate() {
                    grads.push(if frozen { None } else { fg.upper[i].clone().map(Tensor::into_vec) });
                    if n.lower.is_some() {
                        grads.push(if frozen { None } else { fg.lower[i].clone().map(Tensor::into_vec) });
                    }
                }
                dx
            }
            _ => dins.into_iter().next().expect("one path"),
        };
        for path in conv_grads {
            for (dw, db) in path {
                grads.push(Some(dw));
                grads.push(Some(db));
            }
        }
        for (dw, db) in fc_grads {
            grads.push(Some(dw));
            grads.push(Some(db));
        }
        Ok(GradSet { grads, input })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(arch: &str, frontend: Option<&str>) -> ModelConfig {
        let (input_c, conv0_in, fc_in) = match arch {
            "bcnn" => (1, 1, 4 * 4 * 3),
            "ssr" => (1, 4, 2 * 2 * 3),
            _ => (1, 1, 2 * 2 * 3 * 4),
        };
        let mut text = format!(
            "architecture = \"{arch}\"\ninput = [{input_c}, 8, 8]\nclasses = 3\ninit = \"he\"\n\
             layers = [\"conv 3 {conv0_in} 2\", \"conv 3 2 3\", \"pool\"]\n\
             head = [\"fc {fc_in} 5\", \"dropout 0.5\", \"fc 5 3\"]\n"
        );
        if let Some(m) = frontend {
            text.push_str(&format!("[frontend]\nmode = \"{m}\"\ndepth = 1\n"));
        }
        ModelConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn residual_rule() {
        let l = |s: &[&str]| s.iter().map(|x| LayerSpec::parse(x).unwrap()).collect::<Vec<_>>();
        let mnist = ModelConfig::preset("mnist-msr-asd").unwrap();
        assert!(residual_links(&mnist.layers).is_empty());
        let img = ModelConfig::preset("imagenet-bcnn").unwrap();
        assert_eq!(residual_links(&img.layers), vec![(0, 4), (5, 9), (10, 14)]);
        assert_eq!(
            residual_links(&l(&["conv 3 1 4", "conv 3 4 8", "conv 3 8 4", "block", "conv 3 4 4"])),
            vec![(0, 2)]
        );
    }

    #[test]
    fn mnist_shapes_and_counts() {
        let m = Model::<f32>::build(&ModelConfig::preset("mnist-msr-asd").unwrap(), 1).unwrap();
        assert_eq!(m.paths().len(), 4);
        assert_eq!(m.paths()[0][0].out_channels(), 16);
        let x = Tensor::zeros(Shape::new(2, 1, 28, 28));
        let (y, cache) = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 10, 1, 1));
        assert_eq!(cache.subbands().len(), 4);
        assert_eq!(cache.paths[0].out_shape, Shape::new(2, 32, 7, 7));
    }

    #[test]
    fn constant_network() {
        let cfg = ModelConfig::preset("mnist-bcnn").unwrap();
        let mut m = Model::<f32>::build(&cfg, 0).unwrap();
        for (info, p) in m.param_info().into_iter().zip(m.params_mut()) {
            let v = if info.name.ends_with("bias") { 1.0 } else { 0.0 };
            p.iter_mut().for_each(|x| *x = v);
        }
        let a = Tensor::from_fn(Shape::new(1, 1, 28, 28), |_, _, h, w| (h * w) as f32 / 784.0);
        let b = Tensor::full(Shape::new(1, 1, 28, 28), 0.3);
        assert_eq!(m.predict(&a).unwrap(), m.predict(&b).unwrap());
    }

    #[test]
    fn he_init_scales() {
        let m = Model::<f64>::build(&ModelConfig::preset("mnist-bcnn").unwrap(), 3).unwrap();
        let std = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        let conv = &m.paths()[0][1];
        assert!((std(conv.weight.data()) / (2.0 / (9.0 * 64.0f64)).sqrt() - 1.0).abs() < 0.02);
        let fc1 = &m.head()[0];
        assert!((std(&fc1.weight) / (2.0 / 6272.0f64).sqrt() - 1.0).abs() < 0.02);
        let out = m.head().last().unwrap();
        assert!((std(&out.weight) / 0.01 - 1.0).abs() < 0.05);
        assert!(m.head().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn param_order_and_groups() {
        let m = Model::<f32>::build(&tiny("msr", Some("casd")), 0).unwrap();
        let info = m.param_info();
        assert_eq!(info.len(), m.params().len());
        assert_eq!(info[0].name, "frontend.node0.upper");
        assert_eq!(info[3].name, "path0.conv0.weight");
        assert!(info[..3].iter().all(|p| p.group == Group::Frontend && p.trainable));
        assert_eq!(info.last().unwrap().name, "head.fc1.bias");
        for (i, p) in info.iter().zip(m.params()) {
            assert_eq!(i.len(), p.len());
        }
        let one = Model::<f32>::build(&ModelConfig::from_toml(
            "architecture = \"bcnn\"\ninput = [3, 2, 2]\nclasses = 1\nlayers = [\"conv 3 3 64\"]\nhead = [\"fc 256 1\"]\n",
        ).unwrap(), 0).unwrap();
        assert_eq!(one.param_info()[0].len() + one.param_info()[1].len(), 1792);
    }

    #[test]
    fn zero_dlogits_zero_grads() {
        for (arch, fe) in [("bcnn", None), ("ssr", Some("asd")), ("msr", Some("wsd"))] {
            let m = Model::<f64>::build(&tiny(arch, fe), 4).unwrap();
            let x = Tensor::from_fn(Shape::new(2, 1, 8, 8), |n, _, h, w| ((n + h * 3 + w) as f64).cos());
            let (_, cache) = m.forward(&x, Mode::Train { seed: 9 }).unwrap();
            let g = m.backward(&cache, &Tensor::zeros(Shape::new(2, 3, 1, 1))).unwrap();
            assert_eq!(g.grads.len(), m.params().len());
            assert!(g.grads.iter().flatten().all(|v| v.iter().all(|&x| x == 0.0)));
            if fe == Some("wsd") {
                assert!(g.grads[0].is_none());
            }
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut m = Model::<f64>::build(&tiny("bcnn", None), 4).unwrap();
        let x = Tensor::zeros(Shape::new(1, 1, 8, 8));
        let (_, cache) = m.forward(&x, Mode::Eval).unwrap();
        m.params_mut()[0][0] = 1.0;
        assert!(m.backward(&cache, &Tensor::zeros(Shape::new(1, 3, 1, 1))).is_err());
    }

    #[test]
    fn parallel_and_serial_agree_bitwise() {
        let mut m = Model::<f32>::build(&tiny("msr", Some("asd")), 2).unwrap();
        let x = Tensor::from_fn(Shape::new(3, 1, 8, 8), |n, _, h, w| ((n * 7 + h * 3 + w) as f32).sin());
        let (y1, c1) = m.forward(&x, Mode::Train { seed: 1 }).unwrap();
        let d = Tensor::full(y1.shape(), 0.1);
        let g1 = m.backward(&c1, &d).unwrap();
        m.set_parallel(false);
        let (y2, c2) = m.forward(&x, Mode::Train { seed: 1 }).unwrap();
        let g2 = m.backward(&c2, &d).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn wrong_input_shape() {
        let m = Model::<f32>::build(&tiny("bcnn", None), 0).unwrap();
        assert!(m.predict(&Tensor::zeros(Shape::new(1, 1, 6, 6))).is_err());
    }
}
