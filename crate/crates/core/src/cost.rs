//! Analytic operation counts.
//!
//! Conventions, applied identically to every model:
//!
//! * A same-padded conv with `f_prev` input and `f` output channels, an
//!   `s x s` kernel and a `p_h x p_w` output costs `f_prev·s²·f·p_h·p_w`
//!   multiplies and as many adds (`f_prev·s² - 1` for the tap sum plus one
//!   for the bias). Padding taps are counted.
//! * Frontend filters are depthwise `k x k` convs evaluated over each node's
//!   full pre-decimation extent, without bias. A CASD split adds one
//!   subtraction per element.
//! * FC layers cost `in·out` multiplies and adds.
//! * Pool comparisons (3 per output) and leaky ReLUs (1 multiply per element)
//!   are reported in the separate `other` column.
//! * One training iteration for one sample is the forward pass plus two
//!   forward-sized backward passes (input and weight gradients) plus the
//!   update: 3 multiplies and 3 adds per trainable parameter.

use std::io::Write;

use crate::frontend::FrontendMode;
use crate::model::{LayerSpec, ModelConfig};

/// `(mults, adds)` of one same-padded conv.
pub fn conv_cost(f_prev: u64, s: u64, f: u64, p_h: u64, p_w: u64) -> (u64, u64) {
    let m = f_prev * s * s * f * p_h * p_w;
    (m, m)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Totals {
    pub mults: u64,
    pub adds: u64,
    pub other: u64,
}

impl Totals {
    pub fn macs(&self) -> u64 {
        self.mults
    }

    fn add(&mut self, mults: u64, adds: u64, other: u64) {
        self.mults += mults;
        self.adds += adds;
        self.other += other;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub id: String,
    /// Instances summed into this row (subband paths or tree nodes).
    pub count: u64,
    pub mults: u64,
    pub adds: u64,
    pub other: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub name: String,
    pub rows: Vec<LayerCost>,
    pub inference: Totals,
    pub training: Totals,
    pub trainable_params: u64,
}

/// `100·(1 - candidate/baseline)`.
pub fn reduction(candidate: u64, baseline: u64) -> f64 {
    if baseline == 0 {
        return 0.0;
    }
    100.0 * (1.0 - candidate as f64 / baseline as f64)
}

fn frontend_rows(cfg: &ModelConfig, rows: &mut Vec<LayerCost>) {
    let Some(f) = cfg.frontend else { return };
    let [c, h, w] = cfg.input;
    let k = match f.mode {
        FrontendMode::Wsd => f.wavelet.kernel_size(),
        _ => f.filter_order,
    } as u64;
    let (mut nh, mut nw) = (h as u64, w as u64);
    for level in 0..2 * f.depth {
        let nodes = 1u64 << level;
        let elems = c as u64 * nh * nw;
        let filters = if f.mode == FrontendMode::Casd { 1 } else { 2 };
        let mults = nodes * filters * elems * k * k;
        // tap sums: k² - 1 adds per output; CASD adds the complement subtraction
        let mut adds = nodes * filters * elems * (k * k - 1);
        if f.mode == FrontendMode::Casd {
            adds += nodes * elems;
        }
        rows.push(LayerCost { id: format!("frontend.level{level}"), count: nodes, mults, adds, other: 0 });
        if level % 2 == 0 {
            nh /= 2;
        } else {
            nw /= 2;
        }
    }
}

pub fn model_cost(cfg: &ModelConfig) -> CostReport {
    let mut rows = Vec::new();
    frontend_rows(cfg, &mut rows);
    let paths = cfg.path_count() as u64;
    let (h0, w0) = cfg.path_input_hw();
    let (mut h, mut w) = (h0 as u64, w0 as u64);
    let mut conv_i = 0;
    let mut pool_i = 0;
    let mut conv_params = 0u64;
    for l in &cfg.layers {
        match *l {
            LayerSpec::Conv { k, in_ch, out_ch } => {
                let (m, a) = conv_cost(in_ch as u64, k as u64, out_ch as u64, h, w);
                let act = out_ch as u64 * h * w;
                rows.push(LayerCost {
                    id: format!("conv{conv_i}"),
                    count: paths,
                    mults: m * paths,
                    adds: a * paths,
                    other: act * paths,
                });
                conv_params += paths * (in_ch * k * k * out_ch + out_ch) as u64;
                conv_i += 1;
            }
            LayerSpec::Pool => {
                let ch = rows
                    .iter()
                    .rev()
                    .find(|r| r.id.starts_with("conv"))
                    .map(|r| r.other / (h * w * paths))
                    .unwrap_or(0);
                h /= 2;
                w /= 2;
                rows.push(LayerCost { id: format!("pool{pool_i}"), count: paths, mults: 0, adds: 0, other: 3 * ch * h * w * paths });
                pool_i += 1;
            }
            _ => {}
        }
    }
    let mut fc_params = 0u64;
    let fcs: Vec<_> = cfg.fc_layers().collect();
    for (i, &(a, b)) in fcs.iter().enumerate() {
        let m = (a * b) as u64;
        let act = if i + 1 < fcs.len() { b as u64 } else { 0 };
        rows.push(LayerCost { id: format!("fc{i}"), count: 1, mults: m, adds: m, other: act });
        fc_params += m + b as u64;
    }
    let frontend_params = match cfg.frontend {
        Some(f) if f.mode != FrontendMode::Wsd => (f.filter_bank_count() * f.channels * f.filter_order * f.filter_order) as u64,
        _ => 0,
    };
    let mut inference = Totals::default();
    for r in &rows {
        inference.add(r.mults, r.adds, r.other);
    }
    let trainable_params = conv_params + fc_params + frontend_params;
    let mut training = Totals::default();
    training.add(3 * inference.mults, 3 * inference.adds, 3 * inference.other);
    training.add(3 * trainable_params, 3 * trainable_params, 0);
    CostReport { name: cfg.name.clone(), rows, inference, training, trainable_params }
}

/// Conv, frontend and FC multiply-accumulates for one inference.
pub fn mac_total(cfg: &ModelConfig) -> u64 {
    if cfg.layers.is_empty() && cfg.head.is_empty() {
        return 0;
    }
    model_cost(cfg).inference.macs()
}

/// Per-layer CSV, then total rows with reduction columns against `baseline`
/// when given.
pub fn write_cost_csv(r: &CostReport, baseline: Option<&CostReport>, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "layer,count,mults,adds,macs,other,mult_reduction_pct,add_reduction_pct")?;
    for l in &r.rows {
        writeln!(out, "{},{},{},{},{},{},,", l.id, l.count, l.mults, l.adds, l.mults, l.other)?;
    }
    for (id, t, b) in [
        ("total_inference", &r.inference, baseline.map(|b| &b.inference)),
        ("total_training", &r.training, baseline.map(|b| &b.training)),
    ] {
        let (rm, ra) = match b {
            Some(b) => (format!("{:.2}", reduction(t.mults, b.mults)), format!("{:.2}", reduction(t.adds, b.adds))),
            None => (String::new(), String::new()),
        };
        writeln!(out, "{id},,{},{},{},{},{rm},{ra}", t.mults, t.adds, t.macs(), t.other)?;
    }
    Ok(())
}

fn human(v: u64) -> String {
    let v = v as f64;
    if v >= 1e9 {
        format!("{:.2}G", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.2}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.1}K", v / 1e3)
    } else {
        format!("{v}")
    }
}

/// Aligned text table.
pub fn write_cost_table(r: &CostReport, baseline: Option<&CostReport>, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", r.name)?;
    writeln!(out, "{:<18} {:>6} {:>10} {:>10} {:>10}", "layer", "count", "mults", "adds", "other")?;
    for l in &r.rows {
        writeln!(out, "{:<18} {:>6} {:>10} {:>10} {:>10}", l.id, l.count, human(l.mults), human(l.adds), human(l.other))?;
    }
    for (id, t) in [("inference", &r.inference), ("training/sample", &r.training)] {
        writeln!(out, "{:<18} {:>6} {:>10} {:>10} {:>10}", id, "", human(t.mults), human(t.adds), human(t.other))?;
    }
    if let Some(b) = baseline {
        writeln!(
            out,
            "vs {}: inference mults -{:.2}%, adds -{:.2}%; training mults -{:.2}%, adds -{:.2}%",
            b.name,
            reduction(r.inference.mults, b.inference.mults),
            reduction(r.inference.adds, b.inference.adds),
            reduction(r.training.mults, b.training.mults),
            reduction(r.training.adds, b.training.adds)
        )?;
    }
    Ok(())
}
