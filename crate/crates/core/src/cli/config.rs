//! Flat `key = value` run configuration shared by every command.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::camera::{NoiseParams, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{AlignConfig, SsimConfig};
use crate::forward::KernelKind;
use crate::motion::MotionModel;
use crate::registration::{FlowConfig, LkConfig};
use crate::solver::{HqsConfig, PgdConfig, Prior, TvSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Hqs,
    Pgd,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hqs" => Ok(Method::Hqs),
            "pgd" => Ok(Method::Pgd),
            other => Err(Error::Config(format!("unknown method {other:?} (expected hqs or pgd)"))),
        }
    }
}

/// Rows of the benchmark table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum BenchMethod {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "hqs")]
    Hqs,
    #[serde(rename = "pgd")]
    Pgd,
    #[serde(rename = "hqs+tta")]
    HqsTta,
}

impl BenchMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMethod::Baseline => "baseline",
            BenchMethod::Hqs => "hqs",
            BenchMethod::Pgd => "pgd",
            BenchMethod::HqsTta => "hqs+tta",
        }
    }
}

impl FromStr for BenchMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(BenchMethod::Baseline),
            "hqs" => Ok(BenchMethod::Hqs),
            "pgd" => Ok(BenchMethod::Pgd),
            "hqs+tta" | "tta" => Ok(BenchMethod::HqsTta),
            other => Err(Error::Config(format!("unknown bench method {other:?}"))),
        }
    }
}

/// Regularization weight on the HQS (unweighted data term) scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    /// Derived from the noise level of each burst.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub motion_model: MotionModel,
    pub lk: LkConfig,
    pub method: Method,
    /// Prior family; TV settings live in `tv`.
    pub prior: Prior,
    pub tv: TvSettings,
    pub lambda: Lambda,
    /// Blur kernel of the reconstruction model; `None` follows the burst metadata.
    pub model_kernel: Option<KernelKind>,
    pub hqs: HqsConfig,
    pub pgd: PgdConfig,
    pub tta: bool,
    pub subset_size: Option<usize>,
    pub peak: f64,
    pub aligned: bool,
    pub flow_block: usize,
    pub ssim: SsimConfig,
    pub bench_methods: Vec<BenchMethod>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            motion_model: MotionModel::Euclidean,
            lk: LkConfig::default(),
            method: Method::Hqs,
            prior: Prior::tv(),
            tv: TvSettings::default(),
            lambda: Lambda::Auto,
            model_kernel: None,
            hqs: HqsConfig::default(),
            pgd: PgdConfig::default(),
            tta: false,
            subset_size: None,
            peak: 1.0,
            aligned: false,
            flow_block: FlowConfig::default().block,
            ssim: SsimConfig::default(),
            bench_methods: vec![BenchMethod::Baseline, BenchMethod::Hqs, BenchMethod::Pgd, BenchMethod::HqsTta],
        }
    }
}

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "seed",
    "frames",
    "sr_factor",
    "lr_height",
    "lr_width",
    "max_translation",
    "max_rotation",
    "noise",
    "shot_slope",
    "read_var",
    "cfa",
    "kernel",
    "motion_model",
    "lk_levels",
    "lk_iters",
    "lk_robust",
    "lk_tol",
    "method",
    "prior",
    "lambda",
    "model_kernel",
    "hqs_iters",
    "mu0",
    "mu_growth",
    "cg_iters",
    "cg_tol",
    "motion_refine",
    "gn_iters",
    "pgd_iters",
    "pgd_step",
    "power_iters",
    "tv_inner_iters",
    "tv_tol",
    "tta",
    "subset_size",
    "peak",
    "aligned",
    "flow_block",
    "ssim_window",
    "ssim_sigma",
    "bench_methods",
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "on" | "yes" => Ok(true),
        "0" | "false" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected on/off, got {v:?}"))),
    }
}

fn config_err(key: &str, e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(m),
        other => Error::Config(format!("{key}: {other}")),
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => {
                self.seed = parse(key, v)?;
                self.synth.seed = self.seed;
            }
            "frames" => self.synth.frames = parse(key, v)?,
            "sr_factor" => self.synth.sr_factor = parse(key, v)?,
            "lr_height" => self.synth.lr_dims.0 = parse(key, v)?,
            "lr_width" => self.synth.lr_dims.1 = parse(key, v)?,
            "max_translation" => self.synth.max_translation = parse(key, v)?,
            "max_rotation" => self.synth.max_rotation = parse(key, v)?,
            "noise" => {
                self.synth.noise = match v.to_ascii_lowercase().as_str() {
                    "off" | "none" => NoiseParams::NONE,
                    "on" | "challenge" => NoiseParams::challenge(),
                    _ => return Err(Error::Config(format!("noise: expected on/off, got {v:?}"))),
                }
            }
            "shot_slope" => {
                self.synth.noise = NoiseParams::new(parse(key, v)?, self.synth.noise.read_var).map_err(|e| config_err(key, e))?
            }
            "read_var" => {
                self.synth.noise = NoiseParams::new(self.synth.noise.shot_slope, parse(key, v)?).map_err(|e| config_err(key, e))?
            }
            "cfa" => self.synth.cfa = v.parse().map_err(|e| config_err(key, e))?,
            "kernel" => self.synth.kernel = v.parse().map_err(|e| config_err(key, e))?,
            "motion_model" => self.motion_model = v.parse().map_err(|e| config_err(key, e))?,
            "lk_levels" => self.lk.pyramid_levels = parse(key, v)?,
            "lk_iters" => self.lk.iters_per_level = parse(key, v)?,
            "lk_robust" => self.lk.robust_threshold = if v.eq_ignore_ascii_case("off") { f64::INFINITY } else { parse(key, v)? },
            "lk_tol" => self.lk.convergence_tol = parse(key, v)?,
            "method" => self.method = v.parse()?,
            "prior" => self.prior = v.parse().map_err(|e| config_err(key, e))?,
            "lambda" => {
                self.lambda = if v.eq_ignore_ascii_case("auto") {
                    Lambda::Auto
                } else {
                    let l: f64 = parse(key, v)?;
                    if !(l >= 0.0 && l.is_finite()) {
                        return Err(Error::Config("lambda must be a non-negative number or auto".into()));
                    }
                    Lambda::Fixed(l)
                }
            }
            "model_kernel" => {
                self.model_kernel = if v.eq_ignore_ascii_case("auto") { None } else { Some(v.parse().map_err(|e| config_err(key, e))?) }
            }
            "hqs_iters" => self.hqs.outer_iters = parse(key, v)?,
            "mu0" => self.hqs.mu0 = parse(key, v)?,
            "mu_growth" => self.hqs.mu_growth = parse(key, v)?,
            "cg_iters" => self.hqs.cg_iters = parse(key, v)?,
            "cg_tol" => self.hqs.cg_tol = parse(key, v)?,
            "motion_refine" => self.hqs.motion_refine = parse_bool(key, v)?,
            "gn_iters" => self.hqs.gn_iters = parse(key, v)?,
            "pgd_iters" => self.pgd.iters = parse(key, v)?,
            "pgd_step" => self.pgd.step = if v.eq_ignore_ascii_case("auto") { None } else { Some(parse(key, v)?) },
            "power_iters" => self.pgd.power_iters = parse(key, v)?,
            "tv_inner_iters" => self.tv.inner_iters = parse(key, v)?,
            "tv_tol" => self.tv.tol = parse(key, v)?,
            "tta" => self.tta = parse_bool(key, v)?,
            "subset_size" => self.subset_size = if v.eq_ignore_ascii_case("off") { None } else { Some(parse(key, v)?) },
            "peak" => self.peak = parse(key, v)?,
            "aligned" => self.aligned = parse_bool(key, v)?,
            "flow_block" => self.flow_block = parse(key, v)?,
            "ssim_window" => self.ssim.window = parse(key, v)?,
            "ssim_sigma" => self.ssim.sigma = parse(key, v)?,
            "bench_methods" => {
                let mut m = v.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<Vec<_>>>()?;
                m.sort();
                m.dedup();
                if m.is_empty() {
                    return Err(Error::Config("bench_methods must list at least one method".into()));
                }
                self.bench_methods = m;
            }
            other => {
                return Err(Error::Config(format!("unknown key {other:?}; valid keys: {}", KEYS.join(", "))));
            }
        }
        Ok(())
    }
}

impl RunConfig {
    /// Parses `key = value` lines; blank lines and `#` comments are ignored.
    pub fn parse_text(text: &str, base: RunConfig) -> Result<Self> {
        let mut cfg = base;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, RunConfig::default()).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies `key=value` overrides in order.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, String)>) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, &v)?;
        }
        Ok(())
    }

    /// The prior with its TV settings filled in.
    pub fn prior(&self) -> Prior {
        match self.prior {
            Prior::Tv(_) => Prior::Tv(self.tv),
            p => p,
        }
    }

    pub fn flow(&self) -> FlowConfig {
        FlowConfig { block: self.flow_block, ..FlowConfig::default() }
    }

    pub fn align(&self) -> AlignConfig {
        AlignConfig { flow: self.flow(), peak: self.peak, ssim: self.ssim }
    }

    /// Canonical text form; parsing it reproduces the config.
    pub fn to_text(&self) -> String {
        let s = &self.synth;
        let opt = |v: Option<String>, none: &str| v.unwrap_or_else(|| none.to_string());
        let lines: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("frames", s.frames.to_string()),
            ("sr_factor", s.sr_factor.to_string()),
            ("lr_height", s.lr_dims.0.to_string()),
            ("lr_width", s.lr_dims.1.to_string()),
            ("max_translation", s.max_translation.to_string()),
            ("max_rotation", s.max_rotation.to_string()),
            ("shot_slope", s.noise.shot_slope.to_string()),
            ("read_var", s.noise.read_var.to_string()),
            ("cfa", s.cfa.to_string()),
            ("kernel", s.kernel.to_string()),
            ("motion_model", self.motion_model.to_string()),
            ("lk_levels", self.lk.pyramid_levels.to_string()),
            ("lk_iters", self.lk.iters_per_level.to_string()),
            ("lk_robust", if self.lk.robust_threshold.is_finite() { self.lk.robust_threshold.to_string() } else { "off".into() }),
            ("lk_tol", self.lk.convergence_tol.to_string()),
            ("method", format!("{:?}", self.method).to_ascii_lowercase()),
            ("prior", self.prior.to_string()),
            (
                "lambda",
                match self.lambda {
                    Lambda::Auto => "auto".into(),
                    Lambda::Fixed(l) => l.to_string(),
                },
            ),
            ("model_kernel", opt(self.model_kernel.map(|k| k.to_string()), "auto")),
            ("hqs_iters", self.hqs.outer_iters.to_string()),
            ("mu0", self.hqs.mu0.to_string()),
            ("mu_growth", self.hqs.mu_growth.to_string()),
            ("cg_iters", self.hqs.cg_iters.to_string()),
            ("cg_tol", self.hqs.cg_tol.to_string()),
            ("motion_refine", if self.hqs.motion_refine { "on" } else { "off" }.into()),
            ("gn_iters", self.hqs.gn_iters.to_string()),
            ("pgd_iters", self.pgd.iters.to_string()),
            ("pgd_step", opt(self.pgd.step.map(|v| v.to_string()), "auto")),
            ("power_iters", self.pgd.power_iters.to_string()),
            ("tv_inner_iters", self.tv.inner_iters.to_string()),
            ("tv_tol", self.tv.tol.to_string()),
            ("tta", if self.tta { "on" } else { "off" }.into()),
            ("subset_size", opt(self.subset_size.map(|v| v.to_string()), "off")),
            ("peak", self.peak.to_string()),
            ("aligned", if self.aligned { "on" } else { "off" }.into()),
            ("flow_block", self.flow_block.to_string()),
            ("ssim_window", self.ssim.window.to_string()),
            ("ssim_sigma", self.ssim.sigma.to_string()),
            ("bench_methods", self.bench_methods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(",")),
        ];
        let mut out = String::new();
        for (k, v) in lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
