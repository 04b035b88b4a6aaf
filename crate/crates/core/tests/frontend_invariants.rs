mod common;

use rand::Rng;
use subband::frontend::subband_label;
use subband::ops::Axis;
use subband::{Frontend, FrontendMode, FrontendSpec, Shape, Tensor, Wavelet};

fn delta(c: usize, k: usize, dy: isize, dx: isize) -> Tensor<f64> {
    let mid = (k / 2) as isize;
    Tensor::from_fn(Shape::new(c, 1, k, k), |_, _, h, w| {
        f64::from(h as isize == mid + dy && w as isize == mid + dx)
    })
}

/// ASD frontend whose upper filters keep the even phase and whose lower
/// filters read one sample ahead, so the lower branch keeps the odd phase.
fn polyphase_frontend(depth: usize, c: usize) -> Frontend<f64> {
    let mut fe: Frontend<f64> = Frontend::init(FrontendSpec::new(FrontendMode::Asd, depth, c), 0).unwrap();
    for n in fe.nodes_mut() {
        n.upper = delta(c, 5, 0, 0);
        n.lower = Some(match n.axis {
            Axis::Height => delta(c, 5, 1, 0),
            Axis::Width => delta(c, 5, 0, 1),
        });
    }
    fe
}

#[test]
fn casd_branches_sum_to_node_input() {
    let mut r = common::rng(100);
    for draw in 0..100 {
        let depth = 1 + draw % 2;
        let side = 4 << depth;
        let c = 1 + draw % 3;
        let fe: Frontend<f32> = common::random_frontend(FrontendMode::Casd, depth, c, draw as u64).cast();
        let x: Tensor<f32> = common::randn(&mut r, Shape::new(2, c, side, side + 4), 1.0).cast();
        let (_, cache) = fe.decompose(&x).unwrap();
        for i in 0..fe.nodes().len() {
            let xi = cache.node_input(i);
            let (y1, y2) = fe.split(i, xi).unwrap();
            let scale = xi.max_abs();
            let err = y1.add(&y2).unwrap().sub(xi).unwrap().max_abs();
            assert!(err <= 1e-6 * scale, "draw {draw} node {i}: {err} vs {scale}");
        }
    }
}

#[test]
fn subband_count_and_size_conserve_the_input() {
    let mut r = common::rng(101);
    for depth in 1..=3 {
        for _ in 0..5 {
            let unit = 1 << depth;
            let (h, w) = (unit * r.random_range(1..4), unit * r.random_range(1..4));
            let c = r.random_range(1..4);
            let fe = common::random_frontend(FrontendMode::Asd, depth, c, depth as u64);
            let x = common::randn(&mut r, Shape::new(1, c, h, w), 1.0);
            let (bands, _) = fe.decompose(&x).unwrap();
            assert_eq!(bands.len(), 4usize.pow(depth as u32));
            assert_eq!(bands.iter().map(Tensor::len).sum::<usize>(), x.len());
        }
    }
}

#[test]
fn delta_filters_permute_the_samples() {
    for depth in 1..=3 {
        let side = 2 << depth;
        let x = Tensor::from_fn(Shape::new(1, 2, side, side * 2), |_, c, h, w| (c * 10_000 + h * 100 + w) as f64);
        let (bands, _) = polyphase_frontend(depth, 2).decompose(&x).unwrap();
        let mut got: Vec<f64> = bands.iter().flat_map(|b| b.data().to_vec()).collect();
        let mut want = x.data().to_vec();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        assert_eq!(got, want, "depth {depth}");
    }
}

#[test]
fn one_level_delta_bands_are_the_four_polyphase_components() {
    let x = Tensor::from_fn(Shape::new(1, 1, 4, 6), |_, _, h, w| (h * 6 + w) as f64);
    let (bands, _) = polyphase_frontend(1, 1).decompose(&x).unwrap();
    // U keeps even rows/cols, L keeps odd ones.
    let phase = |label: &str| {
        let b = label.as_bytes();
        (usize::from(b[0] == b'L'), usize::from(b[1] == b'L'))
    };
    for (j, band) in bands.iter().enumerate() {
        let (py, px) = phase(&subband_label(1, j));
        for m in 0..2 {
            for n in 0..3 {
                assert_eq!(band.at(0, 0, m, n), x.at(0, 0, 2 * m + py, 2 * n + px));
            }
        }
    }
}

/// db2 analysis pair from the closed form, independent of the crate.
fn db2() -> ([f64; 4], [f64; 4]) {
    let s3 = 3f64.sqrt();
    let d = 4.0 * 2f64.sqrt();
    let h = [(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d];
    let g = [h[3], -h[2], h[1], -h[0]];
    (h, g)
}

/// One periodic analysis step along rows (`rows = true`) or columns:
/// `y[m] = Σ t[j] x[(2m + j - 1) mod n]`.
fn periodic_step(x: &[Vec<f64>], t: &[f64; 4], rows: bool) -> Vec<Vec<f64>> {
    let (hh, ww) = (x.len(), x[0].len());
    if rows {
        (0..hh / 2)
            .map(|m| (0..ww).map(|c| (0..4).map(|j| t[j] * x[(2 * m + j + hh - 1) % hh][c]).sum()).collect())
            .collect()
    } else {
        x.iter()
            .map(|row| (0..ww / 2).map(|m| (0..4).map(|j| t[j] * row[(2 * m + j + ww - 1) % ww]).sum()).collect())
            .collect()
    }
}

fn energy(x: &[Vec<f64>]) -> f64 {
    x.iter().flatten().map(|v| v * v).sum()
}

#[test]
fn wsd_matches_a_periodic_orthogonal_oracle_in_the_interior() {
    let (h, g) = db2();
    let (hh, ww) = (12, 16);
    let mut r = common::rng(102);
    let img = common::randn(&mut r, Shape::new(1, 1, hh, ww), 1.0);
    let x: Vec<Vec<f64>> = (0..hh).map(|i| (0..ww).map(|j| img.at(0, 0, i, j)).collect()).collect();
    // Oracle bands in leaf order UU, UL, LU, LL with U = highpass.
    let hi = periodic_step(&x, &g, true);
    let lo = periodic_step(&x, &h, true);
    let oracle = [
        periodic_step(&hi, &g, false),
        periodic_step(&hi, &h, false),
        periodic_step(&lo, &g, false),
        periodic_step(&lo, &h, false),
    ];
    let total: f64 = oracle.iter().map(|b| energy(b)).sum();
    assert!((total - energy(&x)).abs() < 1e-10 * energy(&x), "oracle is not energy preserving");

    let fe: Frontend<f64> = Frontend::init(FrontendSpec::new(FrontendMode::Wsd, 1, 1), 0).unwrap();
    let (bands, _) = fe.decompose(&img).unwrap();
    for (j, band) in bands.iter().enumerate() {
        for (m, row) in oracle[j].iter().enumerate().take(hh / 2 - 1).skip(1) {
            for (n, &b) in row.iter().enumerate().take(ww / 2 - 1).skip(1) {
                let a = band.at(0, 0, m, n);
                assert!((a - b).abs() < 1e-12, "band {j} ({m},{n}): {a} vs {b}");
            }
        }
    }
}

#[test]
fn wsd_constant_image_has_no_detail_in_the_interior() {
    for (depth, wavelet) in [(1, Wavelet::Db2), (2, Wavelet::Db2), (1, Wavelet::Haar)] {
        let v = 0.7;
        let side = 16 << depth;
        let mut spec = FrontendSpec::new(FrontendMode::Wsd, depth, 1);
        spec.wavelet = wavelet;
        let fe: Frontend<f64> = Frontend::init(spec, 0).unwrap();
        let x = Tensor::full(Shape::new(1, 1, side, side), v);
        let (bands, _) = fe.decompose(&x).unwrap();
        let ll = bands.last().unwrap();
        let n = ll.shape().h;
        let interior = |b: &Tensor<f64>| -> Vec<f64> {
            (2..n - 2).flat_map(|m| (2..n - 2).map(move |k| (m, k))).map(|(m, k)| b.at(0, 0, m, k)).collect()
        };
        let dc = 2f64.powi(depth as i32) * v;
        for s in interior(ll) {
            assert!((s - dc).abs() < 1e-12, "LL sample {s}, expected {dc}");
        }
        for b in &bands[..bands.len() - 1] {
            let worst = interior(b).iter().fold(0f64, |a, s| a.max(s.abs()));
            assert!(worst <= 1e-5 * dc, "{wavelet:?} depth {depth}: detail {worst}");
        }
    }
}
