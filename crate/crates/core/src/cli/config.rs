//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::clustering::{Algorithm, ClusterParams, Init};
use crate::kernel::KernelParams;
use crate::metrics::EqfParams;
use crate::noise::{NoiseKind, NoiseSpec};
use crate::susan::{SusanParams, WeightMode};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("bad value for {key}: {message}")]
    BadValue { key: String, message: String },
}

/// Every tunable of a run. Paths are filled in by the subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub algo: Algorithm,
    pub cluster: ClusterParams,
    pub kernel: KernelParams,
    pub susan: SusanParams,
    pub weights: WeightMode,
    pub damping: bool,
    pub noise: Option<NoiseSpec>,
    pub eqf: EqfParams,
    pub runs: usize,
    pub entropy_base: f64,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algo: Algorithm::Kwsfcm,
            cluster: ClusterParams::default(),
            kernel: KernelParams::default(),
            susan: SusanParams::default(),
            weights: WeightMode::Circular,
            damping: true,
            noise: None,
            eqf: EqfParams::default(),
            runs: 1,
            entropy_base: std::f64::consts::E,
            input: None,
            output: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        message: e.to_string(),
    })
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(bad(key, format!("expected a boolean, got '{}'", value))),
    }
}

fn parse_entropy_base(key: &str, value: &str) -> Result<f64, ConfigError> {
    let base = match value {
        "e" | "ln" | "natural" => std::f64::consts::E,
        "2" => 2.0,
        "10" => 10.0,
        other => parse(key, other)?,
    };
    if base > 0.0 && base != 1.0 && base.is_finite() {
        Ok(base)
    } else {
        Err(bad(key, "base must be positive and not 1"))
    }
}

/// `equispaced`, `random:<seed>` or a comma-separated prototype list.
pub fn parse_init(value: &str) -> Result<Init, String> {
    if value == "equispaced" {
        return Ok(Init::Equispaced);
    }
    if let Some(seed) = value.strip_prefix("random:") {
        return seed
            .parse()
            .map(Init::SeededRandom)
            .map_err(|e| format!("bad seed: {}", e));
    }
    value
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()
        .map(Init::Explicit)
        .map_err(|e| format!("expected equispaced, random:<seed> or a list: {}", e))
}

fn format_init(init: &Init) -> String {
    match init {
        Init::Equispaced => "equispaced".into(),
        Init::SeededRandom(s) => format!("random:{}", s),
        Init::Explicit(v) => v
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(","),
    }
}

pub fn format_base(base: f64) -> String {
    if base == std::f64::consts::E {
        "e".into()
    } else {
        base.to_string()
    }
}

impl RunConfig {
    fn noise_mut(&mut self) -> &mut NoiseSpec {
        self.noise
            .get_or_insert(NoiseSpec::new(NoiseKind::SaltPepper, 0.0, 0))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key {
            "algo" => self.algo = parse(key, value)?,
            "c" => {
                let c: usize = parse(key, value)?;
                if c == 0 {
                    return Err(bad(key, "c must be >= 1"));
                }
                self.cluster.clusters = c;
            }
            "m" => self.cluster.m = parse(key, value)?,
            "alpha" => self.cluster.alpha = parse(key, value)?,
            "epsilon" => self.cluster.epsilon = parse(key, value)?,
            "max_iter" => self.cluster.max_iter = parse(key, value)?,
            "init" => self.cluster.init = parse_init(value).map_err(|e| bad(key, e))?,
            "parallel" => self.cluster.parallel = parse_bool(key, value)?,
            "kernel.kind" => self.kernel.kind = parse(key, value)?,
            "kernel.sigma" => self.kernel.sigma = parse(key, value)?,
            "kernel.a" => self.kernel.a = parse(key, value)?,
            "kernel.b" => self.kernel.b = parse(key, value)?,
            "kernel.degree" => self.kernel.degree = parse(key, value)?,
            "susan.t" => self.susan.t = parse(key, value)?,
            "susan.min_ratio" => {
                let r: f64 = parse(key, value)?;
                let p = SusanParams::new(r, self.susan.max_dev, self.susan.exponent)
                    .map_err(|e| bad(key, e.to_string()))?;
                self.susan = p;
            }
            "susan.max_dev" => {
                let d: f64 = parse(key, value)?;
                self.susan = SusanParams::new(self.susan.min_ratio, d, self.susan.exponent)
                    .map_err(|e| bad(key, e.to_string()))?;
            }
            "susan.exponent" => {
                let n: u32 = parse(key, value)?;
                self.susan = SusanParams::new(self.susan.min_ratio, self.susan.max_dev, n)
                    .map_err(|e| bad(key, e.to_string()))?;
            }
            "susan.weights" => self.weights = parse(key, value)?,
            "damping" => self.damping = parse_bool(key, value)?,
            "noise" => {
                if value == "none" {
                    self.noise = None;
                } else {
                    return Err(bad(key, "only 'none' is accepted; use noise.kind"));
                }
            }
            "noise.kind" => self.noise_mut().kind = parse(key, value)?,
            "noise.level" => self.noise_mut().level = parse(key, value)?,
            "noise.seed" | "seed" => self.noise_mut().seed = parse(key, value)?,
            "eqf.window" => self.eqf.window = parse(key, value)?,
            "eqf.alpha_k" => self.eqf.alpha_k = parse(key, value)?,
            "eqf.gamma" => self.eqf.gamma = parse(key, value)?,
            "eqf.threshold" => self.eqf.threshold = parse(key, value)?,
            "eqf.levels" => self.eqf.levels = parse(key, value)?,
            "eqf.ignore_flat" => self.eqf.ignore_flat = parse_bool(key, value)?,
            "runs" => {
                let r: usize = parse(key, value)?;
                if r == 0 {
                    return Err(bad(key, "runs must be >= 1"));
                }
                self.runs = r;
            }
            "entropy.base" => self.entropy_base = parse_entropy_base(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies a config file body: `key = value` lines, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                text: raw.to_string(),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Effective parameters as `key = value` lines, readable by
    /// [`RunConfig::from_text`].
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{} = {}", k, v);
        };
        kv("algo", self.algo.name().into());
        kv("c", self.cluster.clusters.to_string());
        kv("m", self.cluster.m.to_string());
        kv("alpha", self.cluster.alpha.to_string());
        kv("epsilon", self.cluster.epsilon.to_string());
        kv("max_iter", self.cluster.max_iter.to_string());
        kv("init", format_init(&self.cluster.init));
        kv("parallel", self.cluster.parallel.to_string());
        kv("kernel.kind", self.kernel.kind.name().into());
        kv("kernel.sigma", self.kernel.sigma.to_string());
        kv("kernel.a", self.kernel.a.to_string());
        kv("kernel.b", self.kernel.b.to_string());
        kv("kernel.degree", self.kernel.degree.to_string());
        kv("susan.min_ratio", self.susan.min_ratio.to_string());
        kv("susan.max_dev", self.susan.max_dev.to_string());
        kv("susan.exponent", self.susan.exponent.to_string());
        kv("susan.t", self.susan.t.to_string());
        kv("susan.weights", self.weights.name().into());
        kv("damping", self.damping.to_string());
        match &self.noise {
            None => kv("noise", "none".into()),
            Some(n) => {
                kv("noise.kind", n.kind.name().into());
                kv("noise.level", n.level.to_string());
                kv("noise.seed", n.seed.to_string());
            }
        }
        kv("eqf.window", self.eqf.window.to_string());
        kv("eqf.alpha_k", self.eqf.alpha_k.to_string());
        kv("eqf.gamma", self.eqf.gamma.to_string());
        kv("eqf.threshold", self.eqf.threshold.to_string());
        kv("eqf.levels", self.eqf.levels.to_string());
        kv("eqf.ignore_flat", self.eqf.ignore_flat.to_string());
        kv("runs", self.runs.to_string());
        kv("entropy.base", format_base(self.entropy_base));
        out
    }

    /// Checks every component's parameters.
    pub fn validate(&self) -> Result<(), String> {
        self.cluster.validate().map_err(|e| e.to_string())?;
        self.kernel.validate().map_err(|e| e.to_string())?;
        self.susan.validate().map_err(|e| e.to_string())?;
        self.eqf.validate().map_err(|e| e.to_string())?;
        if let Some(n) = &self.noise {
            n.validate().map_err(|e| e.to_string())?;
        }
        if let Init::Explicit(v) = &self.cluster.init {
            if v.len() != self.cluster.clusters {
                return Err(format!(
                    "init lists {} prototypes but c = {}",
                    v.len(),
                    self.cluster.clusters
                ));
            }
        }
        for p in [&self.input, &self.output].into_iter().flatten() {
            if p.as_os_str().is_empty() {
                return Err("paths must be nonempty".into());
            }
        }
        Ok(())
    }
}
