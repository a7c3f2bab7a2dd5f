//! Declarative experiment descriptions: the channel chain, the compensation
//! network's shape and initial parameters, pilot allocation, sweep grids and
//! Monte-Carlo settings.
//!
//! # File format
//!
//! Scenario files are flat `key = value` text with one `layer = ...` line
//! per channel layer, in order. Lines starting with `#` are comments.
//!
//! ```text
//! format_version = 1
//! name = simple
//! constellation = qam16
//! n = 500
//! num_pilots = 50
//! allocation = preamble        # preamble | periodic | mixed
//! snr_grid = 0 5 10 15 20 25 30 35 40
//! np_grid = 15 20 25 30 40 50 60 80
//! snr_fixed = 30               # SNR used by the pilot sweep
//! trials = 100
//! seed = 1
//! methods = clairvoyant phycom1 phycom2
//! kp = 0                       # phase-tracking blocks per stochastic layer
//! layer = fir taps=0.9+0.1j,0.3+0.3j
//! layer = cfo omega=0.005
//! layer = iq params=1.8,0.1,0.13,0.8
//! ```
//!
//! Layer attributes by kind: `fir taps=<complex list>`,
//! `cfo omega=<real>`, `iq params=<4 reals>`, `qspn phases=<real list>`,
//! `wiener var=<real>`. Each deterministic layer also accepts
//! `init=zeros|identity|<real list>` (starting point of the matching
//! compensation layer; default is zeros for IQ and CFO, identity for FIR
//! and QSPN) and `frozen=true` (compensate but do not train).
//!
//! Optional keys: `mixed_preamble` (pilot count in the preamble part of a
//! mixed allocation), `truncate` (train on the first N_t samples only),
//! `dense_fir`, `timings` (measured seconds in the CSV time column; off by
//! default so output stays byte-reproducible), and LM overrides
//! `max_iterations`, `ftol`, `xtol`, `gtol`.

use std::path::Path;

use num_complex::Complex64;

use crate::augmented::AllocationStrategy;
use crate::channel::ChannelModel;
use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::layers::{Layer, LayerKind};
use crate::network::{CompLayer, PhycomNetwork};
use crate::trainer::LmConfig;

pub const FORMAT_VERSION: u32 = 1;

/// Compensation methods the harness can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Mirror of the true (pinned) channel; the oracle baseline.
    Clairvoyant,
    /// Supervised training on the pilots only.
    Phycom1,
    /// Supervised plus self-labeled refinement over the whole block.
    Phycom2,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Clairvoyant => "clairvoyant",
            Method::Phycom1 => "phycom1",
            Method::Phycom2 => "phycom2",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "clairvoyant" => Ok(Method::Clairvoyant),
            "phycom1" => Ok(Method::Phycom1),
            "phycom2" => Ok(Method::Phycom2),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Initial parameters for a compensation layer.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    /// The per-kind default: zeros for IQ and CFO, identity for FIR and
    /// quasi-static phase noise.
    Default,
    Zeros,
    Identity,
    Explicit(Vec<f64>),
}

/// One channel layer plus the build instructions for its mirror.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub layer: Layer,
    pub init: InitSpec,
    pub frozen: bool,
}

impl LayerSpec {
    pub fn new(layer: Layer) -> Self {
        Self { layer, init: InitSpec::Default, frozen: false }
    }

    fn default_init(kind: LayerKind) -> Vec<f64> {
        match kind {
            // Zero-effect starting points used by the catalogue scenarios.
            LayerKind::Iq | LayerKind::Cfo => vec![0.0; kind.param_count()],
            _ => kind.identity_params(),
        }
    }

    fn initial_params(&self, kind: LayerKind) -> Result<Vec<f64>> {
        let params = match &self.init {
            InitSpec::Default => Self::default_init(kind),
            InitSpec::Zeros => vec![0.0; kind.param_count()],
            InitSpec::Identity => kind.identity_params(),
            InitSpec::Explicit(v) => v.clone(),
        };
        if params.len() != kind.param_count() {
            return Err(Error::Config(format!(
                "init vector of length {} for a {} layer expecting {}",
                params.len(),
                kind.name(),
                kind.param_count()
            )));
        }
        Ok(params)
    }
}

/// A full experiment description.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub constellation: String,
    pub n: usize,
    pub n_p: usize,
    pub allocation: AllocationStrategy,
    pub mixed_preamble: Option<usize>,
    pub snr_grid: Vec<f64>,
    pub np_grid: Vec<usize>,
    pub snr_fixed: f64,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Quasi-static phase-tracking blocks mirroring each stochastic
    /// phase-noise layer; zero drops the tracking layer entirely.
    pub kp: usize,
    pub truncate: Option<usize>,
    pub dense_fir: bool,
    /// Write measured wall time into the CSV time column. Off by default:
    /// measured times break byte-for-byte reproducibility of the output,
    /// so the default writes `nan` and keeps timings in the manifest.
    pub timings: bool,
    pub lm: LmConfig,
    pub layers: Vec<LayerSpec>,
}

impl Scenario {
    /// A named builtin: `simple` (FIR + CFO + receiver IQ, preamble pilots)
    /// or `phase_noise` (transmitter/receiver IQ and Wiener phase noise
    /// around a FIR channel, periodic pilots).
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "simple" => Ok(Self::simple()),
            "phase_noise" => Ok(Self::phase_noise()),
            other => Err(Error::Config(format!(
                "unknown builtin scenario '{other}' (expected 'simple' or 'phase_noise')"
            ))),
        }
    }

    fn reference_fir_taps() -> Vec<Complex64> {
        vec![
            Complex64::new(0.9, 0.1),
            Complex64::new(0.3, 0.3),
            Complex64::new(0.1, 0.05),
            Complex64::new(0.02, 0.1),
            Complex64::new(0.1, -0.05),
            Complex64::new(0.02, -0.1),
            Complex64::new(0.1, 0.03),
            Complex64::new(0.04, -0.012),
        ]
    }

    /// Eight-tap FIR channel, receiver CFO of 0.005 rad/sample and receiver
    /// IQ imbalance, with a preamble of pilots.
    pub fn simple() -> Self {
        Self {
            name: "simple".into(),
            constellation: "qam16".into(),
            n: 500,
            n_p: 50,
            allocation: AllocationStrategy::Preamble,
            mixed_preamble: None,
            snr_grid: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
            np_grid: vec![15, 20, 25, 30, 40, 50, 60, 80],
            snr_fixed: 30.0,
            trials: 100,
            seed: 1,
            methods: vec![Method::Clairvoyant, Method::Phycom1, Method::Phycom2],
            kp: 0,
            truncate: None,
            dense_fir: false,
            timings: false,
            lm: LmConfig::default(),
            layers: vec![
                LayerSpec::new(Layer::fir(&Self::reference_fir_taps())),
                LayerSpec::new(Layer::cfo(0.005)),
                LayerSpec::new(Layer::iq([1.8, 0.1, 0.13, 0.8])),
            ],
        }
    }

    /// Transmitter IQ and Wiener phase noise, FIR channel, receiver Wiener
    /// phase noise and IQ, with periodic pilots. The compensation network
    /// tracks each phase-noise process with a `kp`-block quasi-static layer.
    pub fn phase_noise() -> Self {
        let sigma_b_sq = 2.0 * std::f64::consts::PI * 5e-5;
        // The IQ compensation layers start at identity here: starting both
        // at zeros puts the whole stack at an exactly stationary point of
        // the pilot cost (the output and every Jacobian block vanish).
        let iq_tx = LayerSpec {
            layer: Layer::iq([0.9, 0.4, -0.4, 0.6]),
            init: InitSpec::Identity,
            frozen: false,
        };
        let iq_rx = LayerSpec {
            layer: Layer::iq([1.8, 0.1, 0.13, 0.8]),
            init: InitSpec::Identity,
            frozen: false,
        };
        Self {
            name: "phase_noise".into(),
            constellation: "qam16".into(),
            n: 500,
            n_p: 50,
            allocation: AllocationStrategy::Periodic,
            mixed_preamble: None,
            snr_grid: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
            np_grid: vec![15, 20, 25, 30, 40, 50, 60, 80],
            snr_fixed: 30.0,
            trials: 100,
            seed: 1,
            methods: vec![Method::Clairvoyant, Method::Phycom1, Method::Phycom2],
            kp: 10,
            truncate: None,
            dense_fir: false,
            timings: false,
            lm: LmConfig::default(),
            layers: vec![
                iq_tx,
                LayerSpec::new(Layer::wiener_phase_noise(sigma_b_sq)),
                LayerSpec::new(Layer::fir(&Self::reference_fir_taps())),
                LayerSpec::new(Layer::wiener_phase_noise(sigma_b_sq)),
                iq_rx,
            ],
        }
    }

    /// Resolve `--scenario` arguments: a builtin name or a file path.
    pub fn resolve(arg: &str) -> Result<Self> {
        if arg == "simple" || arg == "phase_noise" {
            Self::builtin(arg)
        } else {
            Self::from_file(arg)
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    /// Parse the flat key/value format described in the module docs.
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        let mut sc = Scenario {
            name: String::new(),
            constellation: "qam16".into(),
            n: 0,
            n_p: 0,
            allocation: AllocationStrategy::Preamble,
            mixed_preamble: None,
            snr_grid: Vec::new(),
            np_grid: Vec::new(),
            snr_fixed: 30.0,
            trials: 100,
            seed: 1,
            methods: vec![Method::Clairvoyant, Method::Phycom1, Method::Phycom2],
            kp: 0,
            truncate: None,
            dense_fir: false,
            timings: false,
            lm: LmConfig::default(),
            layers: Vec::new(),
        };
        let mut saw_version = false;

        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(Error::ScenarioParse {
                line,
                msg: format!("expected 'key = value', got '{content}'"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let fail = |msg: String| Error::ScenarioParse { line, msg };

            match key {
                "format_version" => {
                    let v: u32 = value.parse().map_err(|_| fail("bad format_version".into()))?;
                    if v != FORMAT_VERSION {
                        return Err(fail(format!(
                            "unsupported format_version {v} (this build reads {FORMAT_VERSION})"
                        )));
                    }
                    saw_version = true;
                }
                "name" => sc.name = value.to_string(),
                "constellation" => sc.constellation = value.to_string(),
                "n" => sc.n = value.parse().map_err(|_| fail("bad n".into()))?,
                "num_pilots" => sc.n_p = value.parse().map_err(|_| fail("bad num_pilots".into()))?,
                "allocation" => {
                    sc.allocation = AllocationStrategy::from_name(value)
                        .map_err(|e| fail(e.to_string()))?
                }
                "mixed_preamble" => {
                    sc.mixed_preamble =
                        Some(value.parse().map_err(|_| fail("bad mixed_preamble".into()))?)
                }
                "snr_grid" => {
                    sc.snr_grid = parse_list(value).map_err(fail)?;
                }
                "np_grid" => {
                    sc.np_grid = parse_list(value).map_err(fail)?;
                }
                "snr_fixed" => sc.snr_fixed = value.parse().map_err(|_| fail("bad snr_fixed".into()))?,
                "trials" => sc.trials = value.parse().map_err(|_| fail("bad trials".into()))?,
                "seed" => sc.seed = value.parse().map_err(|_| fail("bad seed".into()))?,
                "methods" => {
                    sc.methods = value
                        .split_whitespace()
                        .map(Method::from_name)
                        .collect::<Result<_>>()
                        .map_err(|e| fail(e.to_string()))?;
                }
                "kp" => sc.kp = value.parse().map_err(|_| fail("bad kp".into()))?,
                "truncate" => {
                    sc.truncate = Some(value.parse().map_err(|_| fail("bad truncate".into()))?)
                }
                "dense_fir" => sc.dense_fir = parse_bool(value).map_err(fail)?,
                "timings" => sc.timings = parse_bool(value).map_err(fail)?,
                "max_iterations" => {
                    sc.lm.max_iterations =
                        value.parse().map_err(|_| fail("bad max_iterations".into()))?
                }
                "ftol" => sc.lm.ftol = value.parse().map_err(|_| fail("bad ftol".into()))?,
                "xtol" => sc.lm.xtol = value.parse().map_err(|_| fail("bad xtol".into()))?,
                "gtol" => sc.lm.gtol = value.parse().map_err(|_| fail("bad gtol".into()))?,
                "layer" => {
                    let spec = parse_layer(value).map_err(fail)?;
                    sc.layers.push(spec);
                }
                other => return Err(fail(format!("unknown key '{other}'"))),
            }
        }

        if !saw_version {
            return Err(Error::ScenarioParse {
                line: 0,
                msg: "missing format_version".into(),
            });
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("scenario needs n >= 1".into()));
        }
        if self.n_p == 0 || self.n_p > self.n {
            return Err(Error::Config(format!(
                "num_pilots {} must satisfy 1 <= n_p <= n = {}",
                self.n_p, self.n
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method required".into()));
        }
        if self.snr_grid.is_empty() && self.np_grid.is_empty() {
            return Err(Error::Config("scenario needs a non-empty sweep grid".into()));
        }
        Constellation::by_name(&self.constellation)?;
        self.lm.validate()?;
        ChannelModel::new(self.layers.iter().map(|l| l.layer.clone()).collect())?;
        Ok(())
    }

    /// The noiseless channel described by the layer list.
    pub fn channel(&self) -> Result<ChannelModel> {
        ChannelModel::new(self.layers.iter().map(|l| l.layer.clone()).collect())
    }

    /// The compensation network at its initial parameters: the channel
    /// mirrored layer by layer, stochastic phase noise replaced by `kp`
    /// quasi-static tracking blocks (or dropped when `kp` is zero).
    pub fn network(&self) -> Result<PhycomNetwork> {
        let constellation = Constellation::by_name(&self.constellation)?;
        let mut comp = Vec::new();
        for spec in self.layers.iter().rev() {
            let kind = spec.layer.kind();
            match kind {
                LayerKind::WienerPhaseNoise { .. } => {
                    if self.kp > 0 {
                        comp.push(CompLayer {
                            layer: Layer::qs_phase_noise(vec![0.0; self.kp]),
                            frozen: spec.frozen,
                        });
                    }
                }
                LayerKind::Awgn { .. } => {}
                k => {
                    let layer = Layer::new(k, spec.initial_params(k)?)?;
                    comp.push(CompLayer { layer, frozen: spec.frozen });
                }
            }
        }
        let mut net = PhycomNetwork::new(comp, constellation)?;
        net.set_dense_fir(self.dense_fir);
        Ok(net)
    }

    /// Serialize back to the file format (used by the run manifest).
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("format_version", FORMAT_VERSION.to_string());
        push("name", self.name.clone());
        push("constellation", self.constellation.clone());
        push("n", self.n.to_string());
        push("num_pilots", self.n_p.to_string());
        push("allocation", self.allocation.name().to_string());
        if let Some(m) = self.mixed_preamble {
            push("mixed_preamble", m.to_string());
        }
        push("snr_grid", join_values(&self.snr_grid));
        push(
            "np_grid",
            self.np_grid.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
        );
        push("snr_fixed", format_float(self.snr_fixed));
        push("trials", self.trials.to_string());
        push("seed", self.seed.to_string());
        push(
            "methods",
            self.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(" "),
        );
        push("kp", self.kp.to_string());
        if let Some(t) = self.truncate {
            push("truncate", t.to_string());
        }
        if self.dense_fir {
            push("dense_fir", "true".into());
        }
        if self.timings {
            push("timings", "true".into());
        }
        push("max_iterations", self.lm.max_iterations.to_string());
        push("ftol", format!("{:e}", self.lm.ftol));
        push("xtol", format!("{:e}", self.lm.xtol));
        push("gtol", format!("{:e}", self.lm.gtol));
        for spec in &self.layers {
            push("layer", layer_to_string(spec));
        }
        out
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(format!("expected a boolean, got '{other}'")),
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split_whitespace()
        .map(|tok| tok.parse().map_err(|_| format!("bad list entry '{tok}'")))
        .collect()
}

fn parse_real_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',')
        .map(|tok| tok.trim().parse().map_err(|_| format!("bad number '{tok}'")))
        .collect()
}

/// Parse `a`, `bj`, `a+bj`, `a-bj` (also accepts `i` as the unit).
pub fn parse_complex(tok: &str) -> std::result::Result<Complex64, String> {
    let s = tok.trim().replace('i', "j");
    let err = || format!("bad complex number '{tok}'");
    if let Some(body) = s.strip_suffix('j') {
        // Find the split between real and imaginary parts: the last +/-
        // that is neither leading nor part of an exponent.
        let bytes = body.as_bytes();
        let mut split = None;
        for (i, &b) in bytes.iter().enumerate().skip(1) {
            if (b == b'+' || b == b'-') && bytes[i - 1] != b'e' && bytes[i - 1] != b'E' {
                split = Some(i);
            }
        }
        match split {
            Some(i) => {
                let re: f64 = body[..i].parse().map_err(|_| err())?;
                let imag_str = &body[i..];
                let im: f64 = if imag_str == "+" {
                    1.0
                } else if imag_str == "-" {
                    -1.0
                } else {
                    imag_str.parse().map_err(|_| err())?
                };
                Ok(Complex64::new(re, im))
            }
            None => {
                let im: f64 = if body.is_empty() {
                    1.0
                } else if body == "-" {
                    -1.0
                } else {
                    body.parse().map_err(|_| err())?
                };
                Ok(Complex64::new(0.0, im))
            }
        }
    } else {
        Ok(Complex64::new(s.parse().map_err(|_| err())?, 0.0))
    }
}

fn format_complex(z: Complex64) -> String {
    if z.im == 0.0 {
        format_float(z.re)
    } else if z.im < 0.0 {
        format!("{}{}j", format_float(z.re), format_float(z.im))
    } else {
        format!("{}+{}j", format_float(z.re), format_float(z.im))
    }
}

fn format_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

fn join_values(vals: &[f64]) -> String {
    vals.iter().map(|v| format_float(*v)).collect::<Vec<_>>().join(" ")
}

fn parse_layer(value: &str) -> std::result::Result<LayerSpec, String> {
    let mut parts = value.split_whitespace();
    let kind = parts.next().ok_or("empty layer line")?;
    let mut attrs = Vec::new();
    for tok in parts {
        let (k, v) = tok.split_once('=').ok_or(format!("bad layer attribute '{tok}'"))?;
        attrs.push((k, v));
    }
    let take = |name: &str| attrs.iter().find(|(k, _)| *k == name).map(|(_, v)| *v);

    let layer = match kind {
        "iq" => {
            let p = parse_real_list(take("params").ok_or("iq layer needs params=")?)?;
            if p.len() != 4 {
                return Err(format!("iq params need 4 entries, got {}", p.len()));
            }
            Layer::iq([p[0], p[1], p[2], p[3]])
        }
        "cfo" => Layer::cfo(
            take("omega")
                .ok_or("cfo layer needs omega=")?
                .parse()
                .map_err(|_| "bad omega")?,
        ),
        "fir" => {
            let taps: Vec<Complex64> = take("taps")
                .ok_or("fir layer needs taps=")?
                .split(',')
                .map(parse_complex)
                .collect::<std::result::Result<_, _>>()?;
            if taps.is_empty() {
                return Err("fir layer needs at least one tap".into());
            }
            Layer::fir(&taps)
        }
        "qspn" => {
            let phases = parse_real_list(take("phases").ok_or("qspn layer needs phases=")?)?;
            Layer::qs_phase_noise(phases)
        }
        "wiener" => Layer::wiener_phase_noise(
            take("var")
                .ok_or("wiener layer needs var=")?
                .parse()
                .map_err(|_| "bad var")?,
        ),
        "awgn" => Layer::awgn(
            take("var")
                .ok_or("awgn layer needs var=")?
                .parse()
                .map_err(|_| "bad var")?,
        ),
        other => return Err(format!("unknown layer kind '{other}'")),
    };

    let init = match take("init") {
        None => InitSpec::Default,
        Some("zeros") => InitSpec::Zeros,
        Some("identity") => InitSpec::Identity,
        Some(list) => InitSpec::Explicit(parse_real_list(list)?),
    };
    let frozen = match take("frozen") {
        None => false,
        Some(v) => parse_bool(v)?,
    };
    Ok(LayerSpec { layer, init, frozen })
}

fn layer_to_string(spec: &LayerSpec) -> String {
    let l = &spec.layer;
    let mut s = match l.kind() {
        LayerKind::Iq => format!(
            "iq params={}",
            l.params().iter().map(|p| format_float(*p)).collect::<Vec<_>>().join(",")
        ),
        LayerKind::Cfo => format!("cfo omega={}", format_float(l.params()[0])),
        LayerKind::Fir { .. } => format!(
            "fir taps={}",
            l.fir_taps().iter().map(|z| format_complex(*z)).collect::<Vec<_>>().join(",")
        ),
        LayerKind::QsPhaseNoise { .. } => format!(
            "qspn phases={}",
            l.params().iter().map(|p| format_float(*p)).collect::<Vec<_>>().join(",")
        ),
        LayerKind::WienerPhaseNoise { increment_var } => {
            format!("wiener var={increment_var}")
        }
        LayerKind::Awgn { variance } => format!("awgn var={variance}"),
    };
    match &spec.init {
        InitSpec::Default => {}
        InitSpec::Zeros => s.push_str(" init=zeros"),
        InitSpec::Identity => s.push_str(" init=identity"),
        InitSpec::Explicit(v) => {
            s.push_str(" init=");
            s.push_str(&v.iter().map(|p| format_float(*p)).collect::<Vec<_>>().join(","));
        }
    }
    if spec.frozen {
        s.push_str(" frozen=true");
    }
    s
}
