//! Declarative model configuration.
//!
//! Configs are TOML documents:
//!
//! ```toml
//! name = "mnist-msr-asd"
//! architecture = "msr"        # msr | ssr | bcnn
//! input = [1, 28, 28]         # channels, height, width
//! classes = 10
//! init = "he"                 # he | small (default small)
//! layers = ["conv 3 1 16", "conv 3 16 32", "pool", "block", ...]
//! head = ["fc 6272 4096", "dropout 0.5", "fc 4096 10", "softmax"]
//!
//! [frontend]                  # required for msr and ssr, absent for bcnn
//! mode = "asd"                # asd | casd | wsd
//! depth = 1
//! filter_order = 5
//! wavelet = "db2"             # db2 | haar
//! ```
//!
//! `conv k in out` is a same-padded stride-1 convolution followed by a leaky
//! ReLU. For MSR the layer list describes one subband path; every path shares
//! it. `pool` is a 2x2 max pool and closes a residual block, `block` closes
//! one without pooling. Every `fc` except the last is followed by a leaky ReLU.

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::frontend::{FrontendMode, FrontendSpec, Wavelet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Msr,
    Ssr,
    Bcnn,
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msr" => Ok(Architecture::Msr),
            "ssr" => Ok(Architecture::Ssr),
            "bcnn" => Ok(Architecture::Bcnn),
            other => Err(Error::config(format!("unknown architecture {other:?}"))),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Msr => "msr",
            Architecture::Ssr => "ssr",
            Architecture::Bcnn => "bcnn",
        })
    }
}

/// Parameter initialisation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitScheme {
    /// Weights N(0, 0.01²), biases 1.
    #[default]
    Small,
    /// Weights N(0, 2/fan_in), biases 0. The output layer is drawn from
    /// N(0, 0.01²) so the first logits sit near zero.
    He,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Ok(InitScheme::Small),
            "he" => Ok(InitScheme::He),
            other => Err(Error::config(format!("unknown init scheme {other:?} (expected he or small)"))),
        }
    }
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitScheme::Small => "small",
            InitScheme::He => "he",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Conv { k: usize, in_ch: usize, out_ch: usize },
    Pool,
    /// Residual block boundary without pooling.
    Block,
    Fc { in_dim: usize, out_dim: usize },
    Dropout(f64),
    Softmax,
}

impl LayerSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let toks: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            toks.get(i)
                .ok_or_else(|| Error::config(format!("layer {s:?}: missing argument {i}")))?
                .parse::<usize>()
                .map_err(|e| Error::config(format!("layer {s:?}: {e}")))
        };
        let arity = |n: usize| -> Result<()> {
            if toks.len() == n {
                Ok(())
            } else {
                Err(Error::config(format!("layer {s:?}: expected {} arguments", n - 1)))
            }
        };
        match toks.first().copied() {
            Some("conv") => {
                arity(4)?;
                Ok(LayerSpec::Conv { k: num(1)?, in_ch: num(2)?, out_ch: num(3)? })
            }
            Some("pool") => arity(1).map(|_| LayerSpec::Pool),
            Some("block") => arity(1).map(|_| LayerSpec::Block),
            Some("fc") => {
                arity(3)?;
                Ok(LayerSpec::Fc { in_dim: num(1)?, out_dim: num(2)? })
            }
            Some("dropout") => {
                arity(2)?;
                let rate: f64 = toks[1]
                    .parse()
                    .map_err(|e| Error::config(format!("layer {s:?}: {e}")))?;
                Ok(LayerSpec::Dropout(rate))
            }
            Some("softmax") => arity(1).map(|_| LayerSpec::Softmax),
            _ => Err(Error::config(format!("unrecognised layer {s:?}"))),
        }
    }
}

impl std::fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            LayerSpec::Conv { k, in_ch, out_ch } => write!(f, "conv {k} {in_ch} {out_ch}"),
            LayerSpec::Pool => f.write_str("pool"),
            LayerSpec::Block => f.write_str("block"),
            LayerSpec::Fc { in_dim, out_dim } => write!(f, "fc {in_dim} {out_dim}"),
            LayerSpec::Dropout(r) => write!(f, "dropout {r}"),
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub architecture: Architecture,
    /// Input channels, height, width.
    pub input: [usize; 3],
    pub classes: usize,
    pub init: InitScheme,
    pub frontend: Option<FrontendSpec>,
    pub layers: Vec<LayerSpec>,
    pub head: Vec<LayerSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    architecture: String,
    input: [usize; 3],
    classes: usize,
    init: Option<String>,
    layers: Vec<String>,
    head: Vec<String>,
    frontend: Option<RawFrontend>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrontend {
    mode: String,
    depth: usize,
    filter_order: Option<usize>,
    wavelet: Option<Wavelet>,
}

const PRESETS: &[(&str, &str)] = &[
    ("mnist-bcnn", include_str!("../../presets/mnist-bcnn.toml")),
    ("mnist-ssr-asd", include_str!("../../presets/mnist-ssr-asd.toml")),
    ("mnist-msr-asd", include_str!("../../presets/mnist-msr-asd.toml")),
    ("mnist-msr-casd", include_str!("../../presets/mnist-msr-casd.toml")),
    ("mnist-msr-wsd", include_str!("../../presets/mnist-msr-wsd.toml")),
    ("cifar10-bcnn", include_str!("../../presets/cifar10-bcnn.toml")),
    ("cifar10-ssr-asd", include_str!("../../presets/cifar10-ssr-asd.toml")),
    ("cifar10-msr-asd", include_str!("../../presets/cifar10-msr-asd.toml")),
    ("cifar100-bcnn", include_str!("../../presets/cifar100-bcnn.toml")),
    ("cifar100-ssr-asd", include_str!("../../presets/cifar100-ssr-asd.toml")),
    ("cifar100-msr-asd", include_str!("../../presets/cifar100-msr-asd.toml")),
    ("imagenet-bcnn", include_str!("../../presets/imagenet-bcnn.toml")),
    ("imagenet-ssr-1l", include_str!("../../presets/imagenet-ssr-1l.toml")),
    ("imagenet-msr-1l", include_str!("../../presets/imagenet-msr-1l.toml")),
    ("imagenet-msr-2l", include_str!("../../presets/imagenet-msr-2l.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

impl ModelConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                Error::config(format!(
                    "no preset named {name:?}; available: {}",
                    preset_names().collect::<Vec<_>>().join(", ")
                ))
            })?;
        Self::from_toml(text)
    }

    /// Preset name, or a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        let path = std::path::Path::new(name_or_path);
        if path.exists() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            Self::from_toml(&text)
        } else {
            Self::preset(name_or_path)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let architecture: Architecture = raw.architecture.parse()?;
        let frontend = match raw.frontend {
            None => None,
            Some(f) => {
                let mode: FrontendMode = f.mode.parse()?;
                let mut spec = FrontendSpec::new(mode, f.depth, raw.input[0]);
                if let Some(k) = f.filter_order {
                    spec.filter_order = k;
                }
                if let Some(w) = f.wavelet {
                    spec.wavelet = w;
                }
                Some(spec)
            }
        };
        let parse_all = |v: &[String]| v.iter().map(|s| LayerSpec::parse(s)).collect::<Result<Vec<_>>>();
        let cfg = ModelConfig {
            name: raw.name.unwrap_or_else(|| "custom".to_string()),
            architecture,
            input: raw.input,
            classes: raw.classes,
            init: raw.init.as_deref().map(str::parse).transpose()?.unwrap_or_default(),
            frontend,
            layers: parse_all(&raw.layers)?,
            head: parse_all(&raw.head)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        let quote = |l: &[LayerSpec]| {
            l.iter().map(|x| format!("    \"{x}\",\n")).collect::<String>()
        };
        let mut s = format!(
            "name = \"{}\"\narchitecture = \"{}\"\ninput = [{}, {}, {}]\nclasses = {}\ninit = \"{}\"\nlayers = [\n{}]\nhead = [\n{}]\n",
            self.name,
            self.architecture,
            self.input[0],
            self.input[1],
            self.input[2],
            self.classes,
            self.init,
            quote(&self.layers),
            quote(&self.head)
        );
        if let Some(f) = &self.frontend {
            let wavelet = match f.wavelet {
                Wavelet::Db2 => "db2",
                Wavelet::Haar => "haar",
            };
            s.push_str(&format!(
                "\n[frontend]\nmode = \"{}\"\ndepth = {}\nfilter_order = {}\nwavelet = \"{wavelet}\"\n",
                f.mode, f.depth, f.filter_order
            ));
        }
        s
    }

    /// Swaps the frontend mode, keeping depth and filter order.
    pub fn with_frontend_mode(mut self, mode: FrontendMode) -> Result<Self> {
        match &mut self.frontend {
            Some(f) => {
                f.mode = mode;
                Ok(self)
            }
            None => Err(Error::config(format!("{} has no frontend to switch to {mode}", self.name))),
        }
    }

    pub fn depth(&self) -> usize {
        self.frontend.map_or(0, |f| f.depth)
    }

    /// Number of CNN paths: `4^M` for MSR, otherwise 1.
    pub fn path_count(&self) -> usize {
        match self.architecture {
            Architecture::Msr => 1 << (2 * self.depth()),
            _ => 1,
        }
    }

    /// Channels entering the first conv of each path.
    pub fn path_input_channels(&self) -> usize {
        match self.architecture {
            Architecture::Ssr => self.input[0] << (2 * self.depth()),
            _ => self.input[0],
        }
    }

    /// Spatial size entering each path.
    pub fn path_input_hw(&self) -> (usize, usize) {
        let f = 1 << self.depth();
        (self.input[1] / f, self.input[2] / f)
    }

    pub fn pool_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Pool)).count()
    }

    /// `(channels, height, width)` of each path's final feature map.
    pub fn path_output(&self) -> (usize, usize, usize) {
        let (mut h, mut w) = self.path_input_hw();
        let mut c = self.path_input_channels();
        for l in &self.layers {
            match *l {
                LayerSpec::Conv { out_ch, .. } => c = out_ch,
                LayerSpec::Pool => {
                    h /= 2;
                    w /= 2;
                }
                _ => {}
            }
        }
        (c, h, w)
    }

    /// Length of the vector entering the first FC layer.
    pub fn flattened_dim(&self) -> usize {
        let (c, h, w) = self.path_output();
        c * h * w * self.path_count()
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.layers.iter().filter_map(|l| match *l {
            LayerSpec::Conv { k, in_ch, out_ch } => Some((k, in_ch, out_ch)),
            _ => None,
        })
    }

    pub fn fc_layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.head.iter().filter_map(|l| match *l {
            LayerSpec::Fc { in_dim, out_dim } => Some((in_dim, out_dim)),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config(format!("input {:?} has a zero dimension", self.input)));
        }
        if self.classes == 0 {
            return Err(Error::config("classes must be positive"));
        }
        match (self.architecture, &self.frontend) {
            (Architecture::Bcnn, Some(_)) => {
                return Err(Error::config("bcnn takes the full-band input and has no frontend"))
            }
            (Architecture::Msr | Architecture::Ssr, None) => {
                return Err(Error::config(format!("{} needs a [frontend] section", self.architecture)))
            }
            (_, Some(f)) => {
                f.validate()?;
                if f.channels != c {
                    return Err(Error::config("frontend channel count differs from input channels"));
                }
            }
            _ => {}
        }
        let f = 1usize << self.depth();
        let total = f << self.pool_count();
        if h % total != 0 || w % total != 0 {
            return Err(Error::config(format!(
                "input {h}x{w} is not divisible by 2^(depth + pools) = {total}"
            )));
        }
        if self.conv_layers().next().is_none() {
            return Err(Error::config("no conv layers"));
        }
        let mut ch = self.path_input_channels();
        for (i, (k, in_ch, out_ch)) in self.conv_layers().enumerate() {
            if k % 2 == 0 {
                return Err(Error::config(format!("conv {i}: kernel {k} is not odd")));
            }
            if in_ch != ch {
                return Err(Error::config(format!(
                    "conv {i}: expects {in_ch} input channels but receives {ch}"
                )));
            }
            if out_ch == 0 {
                return Err(Error::config(format!("conv {i}: zero output channels")));
            }
            ch = out_ch;
        }
        for l in &self.layers {
            if matches!(l, LayerSpec::Fc { .. } | LayerSpec::Dropout(_) | LayerSpec::Softmax) {
                return Err(Error::config(format!("{l} belongs in head, not layers")));
            }
        }
        let fcs: Vec<_> = self.fc_layers().collect();
        if fcs.is_empty() {
            return Err(Error::config("head has no fc layer"));
        }
        let expected = self.flattened_dim();
        if fcs[0].0 != expected {
            let (pc, ph, pw) = self.path_output();
            return Err(Error::config(format!(
                "FC-1 input is {} but the feature maps flatten to {expected} ({}x{ph}x{pw}x{pc})",
                fcs[0].0,
                self.path_count()
            )));
        }
        for pair in fcs.windows(2) {
            if pair[0].1 != pair[1].0 {
                return Err(Error::config(format!(
                    "fc chain broken: {} outputs feed a layer expecting {}",
                    pair[0].1, pair[1].0
                )));
            }
        }
        if fcs[fcs.len() - 1].1 != self.classes {
            return Err(Error::config(format!(
                "last fc has {} outputs for {} classes",
                fcs[fcs.len() - 1].1,
                self.classes
            )));
        }
        for (i, l) in self.head.iter().enumerate() {
            match *l {
                LayerSpec::Dropout(r) if !(0.0..1.0).contains(&r) => {
                    return Err(Error::config(format!("dropout rate {r} outside [0, 1)")))
                }
                LayerSpec::Softmax if i + 1 != self.head.len() => {
                    return Err(Error::config("softmax must be the last head entry"))
                }
                LayerSpec::Conv { .. } | LayerSpec::Pool | LayerSpec::Block => {
                    return Err(Error::config(format!("{l} belongs in layers, not head")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_round_trips() {
        for name in preset_names() {
            let cfg = ModelConfig::preset(name).unwrap();
            assert_eq!(cfg.name, name);
            assert_eq!(ModelConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn mnist_flattened_dims() {
        for name in ["mnist-bcnn", "mnist-ssr-asd", "mnist-msr-asd"] {
            assert_eq!(ModelConfig::preset(name).unwrap().flattened_dim(), 7 * 7 * 128, "{name}");
        }
        let msr = ModelConfig::preset("mnist-msr-asd").unwrap();
        assert_eq!(msr.conv_layers().next(), Some((3, 1, 16)));
        let ssr = ModelConfig::preset("mnist-ssr-asd").unwrap();
        assert_eq!(ssr.conv_layers().next(), Some((3, 4, 64)));
    }

    #[test]
    fn msr_filter_budget_matches_bcnn() {
        let msr = ModelConfig::preset("mnist-msr-asd").unwrap();
        let bcnn = ModelConfig::preset("mnist-bcnn").unwrap();
        for ((_, _, m), (_, _, b)) in msr.conv_layers().zip(bcnn.conv_layers()) {
            assert_eq!(m * msr.path_count(), b);
        }
    }

    #[test]
    fn wrong_fc_dimension_names_expected_size() {
        let text = ModelConfig::preset("mnist-bcnn")
            .unwrap()
            .to_toml()
            .replace("fc 6272 4096", "fc 6000 4096");
        let err = ModelConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("6272"), "{err}");
    }

    #[test]
    fn bad_layers_rejected() {
        assert!(LayerSpec::parse("conv 3 1").is_err());
        assert!(LayerSpec::parse("relu").is_err());
        assert_eq!(LayerSpec::parse("dropout 0.5").unwrap(), LayerSpec::Dropout(0.5));
        let even = ModelConfig::preset("mnist-bcnn")
            .unwrap()
            .to_toml()
            .replace("conv 3 1 64", "conv 4 1 64");
        assert!(ModelConfig::from_toml(&even).is_err());
    }

    #[test]
    fn unknown_preset_lists_choices() {
        let err = ModelConfig::preset("nope").unwrap_err().to_string();
        assert!(err.contains("mnist-msr-asd"));
    }

    #[test]
    fn frontend_switch() {
        let cfg = ModelConfig::preset("mnist-msr-asd").unwrap().with_frontend_mode(FrontendMode::Wsd).unwrap();
        assert_eq!(cfg.frontend.unwrap().mode, FrontendMode::Wsd);
        assert!(ModelConfig::preset("mnist-bcnn").unwrap().with_frontend_mode(FrontendMode::Asd).is_err());
    }

    #[test]
    fn missing_init_means_small() {
        let text = ModelConfig::preset("mnist-bcnn").unwrap().to_toml().replace("init = \"he\"\n", "");
        assert_eq!(ModelConfig::from_toml(&text).unwrap().init, InitScheme::Small);
    }
}
