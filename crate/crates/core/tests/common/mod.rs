//! Helpers shared by the integration tests and the acceptance target:
//! finite-difference gradient checks (each returns the largest relative
//! error found) and a tiny training setup.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use subband::checkpoint::Checkpoint;
use subband::data::Dataset;
use subband::frontend::FilterNode;
use subband::ops::{
    concat_channels, conv2d_backward, conv2d_forward, decimate2, decimate2_backward, depthwise_filter,
    depthwise_filter_backward, dropout, dropout_backward, leaky_relu, leaky_relu_backward, maxpool2x2,
    maxpool2x2_backward, softmax_cross_entropy, split_channels, Axis, ConvParams, Linear, Phase,
};
use subband::train::{run_epoch, TrainConfig, TrainRecord, TrainState};
use subband::{Frontend, FrontendMode, FrontendSpec, Mode, Model, ModelConfig, Shape, Tensor};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor so entries that are both ~0 compare absolutely.
const FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: Shape, std: f64) -> Tensor<f64> {
    let d = Normal::new(0.0, std).unwrap();
    Tensor::from_fn(shape, |_, _, _, _| d.sample(rng))
}

pub fn randv(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    let d = Normal::new(0.0, std).unwrap();
    (0..len).map(|_| d.sample(rng)).collect()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// `<y, r>`, the scalar every primitive check differentiates.
pub fn dot(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Central differences of `f` at every entry of `v` against `analytic`.
pub fn fd_slice(v: &mut [f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(v.len(), analytic.len());
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        let orig = v[i];
        v[i] = orig + STEP;
        let up = f(v);
        v[i] = orig - STEP;
        let down = f(v);
        v[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

fn fd_tensor(x: &Tensor<f64>, analytic: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> f64 {
    let shape = x.shape();
    let mut v = x.data().to_vec();
    fd_slice(&mut v, analytic.data(), |d| f(&Tensor::from_vec(shape, d.to_vec()).unwrap()))
}

pub fn conv_dense() -> f64 {
    let mut r = rng(1);
    let x = randn(&mut r, Shape::new(2, 3, 6, 5), 1.0);
    let w = randn(&mut r, Shape::new(4, 3, 3, 3), 0.5);
    let b = randv(&mut r, 4, 0.5);
    let p = ConvParams::same(w.clone(), b.clone());
    let proj = randn(&mut r, p.output_shape(x.shape()).unwrap(), 1.0);
    let g = conv2d_backward(&x, &p, &proj).unwrap();
    let ex = fd_tensor(&x, &g.dx, |x| dot(&conv2d_forward(x, &p).unwrap(), &proj));
    let ew = fd_tensor(&w, &g.dw, |w| dot(&conv2d_forward(&x, &ConvParams::same(w.clone(), b.clone())).unwrap(), &proj));
    let mut bv = b.clone();
    let eb = fd_slice(&mut bv, &g.db, |b| dot(&conv2d_forward(&x, &ConvParams::same(w.clone(), b.to_vec())).unwrap(), &proj));
    ex.max(ew).max(eb)
}

pub fn conv_depthwise() -> f64 {
    let mut r = rng(2);
    let x = randn(&mut r, Shape::new(2, 3, 7, 6), 1.0);
    let w = randn(&mut r, Shape::new(3, 1, 5, 5), 0.3);
    let proj = randn(&mut r, x.shape(), 1.0);
    let (dx, dw) = depthwise_filter_backward(&x, &w, &proj).unwrap();
    let ex = fd_tensor(&x, &dx, |x| dot(&depthwise_filter(x, &w).unwrap(), &proj));
    let ew = fd_tensor(&w, &dw, |w| dot(&depthwise_filter(&x, w).unwrap(), &proj));
    let b = randv(&mut r, 3, 0.5);
    let p = ConvParams::depthwise_same(w.clone(), b.clone());
    let g = conv2d_backward(&x, &p, &proj).unwrap();
    let mut bv = b.clone();
    let eb = fd_slice(&mut bv, &g.db, |b| {
        dot(&conv2d_forward(&x, &ConvParams::depthwise_same(w.clone(), b.to_vec())).unwrap(), &proj)
    });
    ex.max(ew).max(eb)
}

pub fn leaky() -> f64 {
    let mut r = rng(3);
    let x = randn(&mut r, Shape::new(2, 3, 4, 4), 1.0);
    let proj = randn(&mut r, x.shape(), 1.0);
    let dx = leaky_relu_backward(&x, &proj, 0.1).unwrap();
    fd_tensor(&x, &dx, |x| dot(&leaky_relu(x, 0.1), &proj))
}

pub fn pool() -> f64 {
    let mut r = rng(4);
    let x = randn(&mut r, Shape::new(2, 2, 6, 4), 1.0);
    let (y, idx) = maxpool2x2(&x).unwrap();
    let proj = randn(&mut r, y.shape(), 1.0);
    let dx = maxpool2x2_backward(&proj, &idx).unwrap();
    fd_tensor(&x, &dx, |x| dot(&maxpool2x2(x).unwrap().0, &proj))
}

pub fn decimation() -> f64 {
    let mut r = rng(5);
    let x = randn(&mut r, Shape::new(1, 2, 6, 4), 1.0);
    let mut worst: f64 = 0.0;
    for axis in [Axis::Height, Axis::Width] {
        for phase in [Phase::Even, Phase::Odd] {
            let y = decimate2(&x, axis, phase).unwrap();
            let proj = randn(&mut r, y.shape(), 1.0);
            let dx = decimate2_backward(&proj, x.shape(), axis, phase).unwrap();
            worst = worst.max(fd_tensor(&x, &dx, |x| dot(&decimate2(x, axis, phase).unwrap(), &proj)));
        }
    }
    worst
}

pub fn linear() -> f64 {
    let mut r = rng(6);
    let x = randn(&mut r, Shape::new(3, 7, 1, 1), 1.0);
    let w = randv(&mut r, 5 * 7, 0.5);
    let b = randv(&mut r, 5, 0.5);
    let l = Linear::new(7, 5, w.clone(), b.clone()).unwrap();
    let proj = randn(&mut r, Shape::new(3, 5, 1, 1), 1.0);
    let g = l.backward(&x, &proj).unwrap();
    let ex = fd_tensor(&x, &g.dx, |x| dot(&l.forward(x).unwrap(), &proj));
    let mut wv = w.clone();
    let ew = fd_slice(&mut wv, &g.dw, |w| dot(&Linear::new(7, 5, w.to_vec(), b.clone()).unwrap().forward(&x).unwrap(), &proj));
    let mut bv = b.clone();
    let eb = fd_slice(&mut bv, &g.db, |b| dot(&Linear::new(7, 5, w.clone(), b.to_vec()).unwrap().forward(&x).unwrap(), &proj));
    ex.max(ew).max(eb)
}

pub fn cross_entropy() -> f64 {
    let mut r = rng(7);
    let x = randn(&mut r, Shape::new(4, 6, 1, 1), 2.0);
    let labels = [0, 5, 2, 2];
    let (_, d) = softmax_cross_entropy(&x, &labels).unwrap();
    fd_tensor(&x, &d, |x| softmax_cross_entropy(x, &labels).unwrap().0)
}

pub fn dropout_fixed_mask() -> f64 {
    let mut r = rng(8);
    let x = randn(&mut r, Shape::new(2, 10, 1, 1), 1.0);
    let proj = randn(&mut r, x.shape(), 1.0);
    let (_, mask) = dropout(&x, 0.5, 99, true).unwrap();
    let dx = dropout_backward(&proj, mask.as_ref()).unwrap();
    fd_tensor(&x, &dx, |x| dot(&dropout(x, 0.5, 99, true).unwrap().0, &proj))
}

pub fn concat_split() -> f64 {
    let mut r = rng(9);
    let a = randn(&mut r, Shape::new(2, 2, 3, 3), 1.0);
    let b = randn(&mut r, Shape::new(2, 3, 3, 3), 1.0);
    let proj = randn(&mut r, Shape::new(2, 5, 3, 3), 1.0);
    let parts = split_channels(&proj, &[2, 3]).unwrap();
    let ea = fd_tensor(&a, &parts[0], |a| dot(&concat_channels(&[a.clone(), b.clone()]).unwrap(), &proj));
    let eb = fd_tensor(&b, &parts[1], |b| dot(&concat_channels(&[a.clone(), b.clone()]).unwrap(), &proj));
    ea.max(eb)
}

/// Frontend with N(0, 0.3²) filters so every branch carries signal.
pub fn random_frontend(mode: FrontendMode, depth: usize, channels: usize, seed: u64) -> Frontend<f64> {
    let spec = FrontendSpec::new(mode, depth, channels);
    let mut fe: Frontend<f64> = Frontend::init(spec, seed).unwrap();
    let mut r = rng(seed ^ 0xF00D);
    for n in fe.nodes_mut() {
        let s = n.upper.shape();
        n.upper = randn(&mut r, s, 0.3);
        if let Some(l) = n.lower.as_mut() {
            *l = randn(&mut r, s, 0.3);
        }
    }
    fe
}

fn frontend_loss(fe: &Frontend<f64>, x: &Tensor<f64>, proj: &[Tensor<f64>]) -> f64 {
    let (bands, _) = fe.decompose(x).unwrap();
    bands.iter().zip(proj).map(|(b, p)| dot(b, p)).sum()
}

/// Input and filter gradients of a trainable frontend.
pub fn frontend(mode: FrontendMode, depth: usize) -> f64 {
    let fe = random_frontend(mode, depth, 2, 40 + depth as u64);
    let side = 4 << depth;
    let mut r = rng(11 + depth as u64);
    let x = randn(&mut r, Shape::new(1, 2, side, side), 1.0);
    let (bands, cache) = fe.decompose(&x).unwrap();
    let proj: Vec<Tensor<f64>> = bands.iter().map(|b| randn(&mut r, b.shape(), 1.0)).collect();
    let (dx, grads) = fe.backward(&proj, &cache).unwrap();
    let mut worst = fd_tensor(&x, &dx, |x| frontend_loss(&fe, x, &proj));
    for i in 0..fe.nodes().len() {
        let branches: [(bool, Option<&Tensor<f64>>); 2] =
            [(true, grads.upper[i].as_ref()), (false, grads.lower[i].as_ref())];
        for (upper, g) in branches {
            let Some(g) = g else { continue };
            let node: &FilterNode<f64> = &fe.nodes()[i];
            let w = if upper { node.upper.clone() } else { node.lower.clone().unwrap() };
            let e = fd_tensor(&w, g, |w| {
                let mut f = fe.clone();
                let n = &mut f.nodes_mut()[i];
                if upper {
                    n.upper = w.clone();
                } else {
                    n.lower = Some(w.clone());
                }
                frontend_loss(&f, &x, &proj)
            });
            worst = worst.max(e);
        }
    }
    worst
}

/// 8x8 input, one-level ASD, two convs per path, pooled, dropout in the head.
pub fn reduced_msr_config() -> ModelConfig {
    ModelConfig::from_toml(
        r#"
name = "reduced-msr"
architecture = "msr"
input = [1, 8, 8]
classes = 3
init = "he"
layers = ["conv 3 1 2", "conv 3 2 3", "pool"]
head = ["fc 48 6", "dropout 0.5", "fc 6 3", "softmax"]

[frontend]
mode = "asd"
depth = 1
"#,
    )
    .unwrap()
}

/// Every parameter and the input of the reduced MSR model, through the
/// training-mode loss.
pub fn end_to_end_msr() -> f64 {
    let cfg = reduced_msr_config();
    let mut model: Model<f64> = Model::build(&cfg, 5).unwrap();
    let mut r = rng(12);
    // Give the frontend non-trivial filters so the paths see signal.
    for n in model.frontend_mut().unwrap().nodes_mut() {
        let s = n.upper.shape();
        n.upper = randn(&mut r, s, 0.3);
        n.lower = Some(randn(&mut r, s, 0.3));
    }
    let x = randn(&mut r, Shape::new(2, 1, 8, 8), 1.0);
    let labels = [1usize, 2];
    let mode = Mode::Train { seed: 77 };
    let loss = |m: &Model<f64>, x: &Tensor<f64>| softmax_cross_entropy(&m.forward(x, mode).unwrap().0, &labels).unwrap().0;
    let (logits, cache) = model.forward(&x, mode).unwrap();
    let (_, d) = softmax_cross_entropy(&logits, &labels).unwrap();
    let grads = model.backward(&cache, &d).unwrap();
    let mut worst = fd_tensor(&x, &grads.input, |x| loss(&model, x));
    for (i, g) in grads.grads.iter().enumerate() {
        let g = g.as_ref().expect("ASD model has no frozen tensors");
        for (j, &gj) in g.iter().enumerate() {
            let orig = model.params()[i][j];
            model.params_mut()[i][j] = orig + STEP;
            let up = loss(&model, &x);
            model.params_mut()[i][j] = orig - STEP;
            let down = loss(&model, &x);
            model.params_mut()[i][j] = orig;
            worst = worst.max(rel_err(gj, (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

/// Named checks behind the gradient-exactness criterion.
pub fn all_gradient_checks() -> Vec<(&'static str, f64)> {
    vec![
        ("conv", conv_dense()),
        ("depthwise", conv_depthwise()),
        ("leaky_relu", leaky()),
        ("maxpool", pool()),
        ("decimate", decimation()),
        ("linear", linear()),
        ("softmax_xent", cross_entropy()),
        ("dropout", dropout_fixed_mask()),
        ("concat", concat_split()),
        ("asd_m1", frontend(FrontendMode::Asd, 1)),
        ("asd_m2", frontend(FrontendMode::Asd, 2)),
        ("casd_m1", frontend(FrontendMode::Casd, 1)),
        ("casd_m2", frontend(FrontendMode::Casd, 2)),
        ("msr_end_to_end", end_to_end_msr()),
    ]
}

/// Small MSR-ASD model on 16x16 synthetic data for fast training checks.
pub fn tiny_msr_config() -> ModelConfig {
    ModelConfig::from_toml(
        r#"
name = "tiny-msr"
architecture = "msr"
input = [1, 16, 16]
classes = 4
init = "he"
layers = ["conv 3 1 4", "pool", "conv 3 4 4"]
head = ["fc 256 16", "dropout 0.5", "fc 16 4", "softmax"]

[frontend]
mode = "asd"
depth = 1
"#,
    )
    .unwrap()
}

pub fn tiny_train_cfg() -> TrainConfig {
    TrainConfig { batch_size: 16, val_fraction: 0.25, ..TrainConfig::default() }
}

pub fn tiny_data() -> (Dataset, Dataset) {
    Dataset::synthetic(96, (1, 16, 16), 4, 7).split_validation(0.25, 1).unwrap()
}

/// Single-threaded run of `epochs` epochs; returns the records (wall time
/// zeroed) and the final checkpoint bytes.
pub fn tiny_run(seed: u64, epochs: usize) -> (Vec<TrainRecord>, Vec<u8>) {
    let (train, val) = tiny_data();
    let tcfg = tiny_train_cfg();
    let mut model: Model = Model::build(&tiny_msr_config(), seed).unwrap();
    model.set_parallel(false);
    let mut state = TrainState::new(&model, &tcfg, seed);
    let recs = (0..epochs)
        .map(|_| run_epoch(&mut model, &train, &val, &mut state, &tcfg, &mut |_, _, _| {}).unwrap().without_time())
        .collect();
    (recs, Checkpoint::capture(&model, Some((&state, &tcfg))).to_bytes())
}

/// Trains one epoch, round-trips through a checkpoint file, trains the rest,
/// and returns the same pair as [`tiny_run`].
pub fn tiny_run_resumed(seed: u64, epochs: usize) -> (Vec<TrainRecord>, Vec<u8>) {
    let (train, val) = tiny_data();
    let tcfg = tiny_train_cfg();
    let mut model: Model = Model::build(&tiny_msr_config(), seed).unwrap();
    model.set_parallel(false);
    let mut state = TrainState::new(&model, &tcfg, seed);
    let mut recs = vec![run_epoch(&mut model, &train, &val, &mut state, &tcfg, &mut |_, _, _| {}).unwrap().without_time()];
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("e1.ckpt");
    Checkpoint::capture(&model, Some((&state, &tcfg))).save(&path).unwrap();
    drop((model, state));

    let ck = Checkpoint::load(&path).unwrap();
    let mut model: Model = ck.model().unwrap();
    model.set_parallel(false);
    let (mut state, tcfg) = ck.train_state(&model).unwrap();
    for _ in 1..epochs {
        recs.push(run_epoch(&mut model, &train, &val, &mut state, &tcfg, &mut |_, _, _| {}).unwrap().without_time());
    }
    (recs, Checkpoint::capture(&model, Some((&state, &tcfg))).to_bytes())
}
