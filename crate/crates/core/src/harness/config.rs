use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::WhiteningFilters;
use crate::error::{Error, Result};
use crate::mltp::MltpConfig;
use crate::nn::ModelSpec;
use crate::optim::{OptConfig, Schedule};

/// Label smoothing used by the improved-preprocessing bundle.
pub const IP_SMOOTHING: f64 = 0.1;
/// Weight-decay factor used by the improved-preprocessing bundle.
pub const IP_LAMBDA: f64 = 0.0005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Sam,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "sam" => Ok(OptimizerKind::Sam),
            _ => Err(Error::Config(format!("optimizer must be sgd or sam, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

impl Precision {
    pub fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "32" => Ok(Precision::F32),
            "64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("precision must be 32 or 64, got `{s}`"))),
        }
    }
}

/// The named experiment rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Recipe {
    Baseline,
    Sam,
    SamIp,
    SamGc,
    Mltp,
}

impl Recipe {
    pub const ALL: [Recipe; 5] = [
        Recipe::Baseline,
        Recipe::Sam,
        Recipe::SamIp,
        Recipe::SamGc,
        Recipe::Mltp,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Recipe::Baseline => "baseline",
            Recipe::Sam => "sam",
            Recipe::SamIp => "sam+ip",
            Recipe::SamGc => "sam+gc",
            Recipe::Mltp => "mltp",
        }
    }

    /// `base` with this recipe's toggles; everything else is kept.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.gc = false;
        cfg.ip = false;
        cfg.mltp = false;
        match self {
            Recipe::Baseline => {}
            Recipe::Sam => cfg.optimizer = OptimizerKind::Sam,
            Recipe::SamIp => {
                cfg.optimizer = OptimizerKind::Sam;
                cfg.ip = true;
            }
            Recipe::SamGc => {
                cfg.optimizer = OptimizerKind::Sam;
                cfg.gc = true;
            }
            Recipe::Mltp => cfg.mltp = true,
        }
        cfg
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Recipe {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Recipe::ALL
            .into_iter()
            .find(|r| r.tag() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown recipe `{s}`")))
    }
}

/// Fully resolved run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub per_class: usize,
    /// Test images per class; 0 evaluates on the whole test file.
    pub test_per_class: usize,
    pub seed: u64,
    pub budget_seconds: f64,
    pub optimizer: OptimizerKind,
    pub gc: bool,
    pub ip: bool,
    pub mltp: bool,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub momentum: f64,
    pub rho: f64,
    /// Explicit weight-decay factor; otherwise 0, or the bundle value with `ip`.
    pub lambda: Option<f64>,
    pub warmup_fraction: f64,
    pub precision: Precision,
    pub metrics_out: PathBuf,
    pub deterministic: bool,
    /// Divides every channel width of the network.
    pub width_divisor: usize,
    pub augment: bool,
    pub whitening_patches: usize,
    pub mltp_beta: f64,
    pub mltp_inner_steps: Option<usize>,
    /// Meta-rounds; defaults to `max_epochs`.
    pub meta_iterations: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("cifar-10-batches-bin"),
            per_class: 500,
            test_per_class: 100,
            seed: 0,
            budget_seconds: 600.0,
            optimizer: OptimizerKind::Sgd,
            gc: false,
            ip: false,
            mltp: false,
            max_epochs: 200,
            batch_size: 256,
            lr_peak: 0.4,
            momentum: 0.9,
            rho: 0.05,
            lambda: None,
            warmup_fraction: 0.2,
            precision: Precision::F32,
            metrics_out: PathBuf::from("metrics.csv"),
            deterministic: false,
            width_divisor: 1,
            augment: true,
            whitening_patches: WhiteningFilters::DEFAULT_SAMPLES,
            mltp_beta: 0.5,
            mltp_inner_steps: None,
            meta_iterations: None,
        }
    }
}

/// Every key accepted in a config file (and, with dashes, on the command line).
pub const KEYS: &[&str] = &[
    "data_dir",
    "per_class",
    "test_per_class",
    "seed",
    "budget_seconds",
    "optimizer",
    "gc",
    "ip",
    "mltp",
    "max_epochs",
    "batch_size",
    "lr_peak",
    "momentum",
    "rho",
    "lambda",
    "warmup_fraction",
    "precision",
    "metrics_out",
    "deterministic",
    "width_divisor",
    "augment",
    "whitening_patches",
    "mltp_beta",
    "mltp_inner_steps",
    "meta_iterations",
];

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for {key}"))),
    }
}

/// Normalizes `--lr-peak` / `lr-peak` / `lr_peak` to `lr_peak`.
pub fn canonical_key(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

impl RunConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match canonical_key(key).as_str() {
            "data_dir" => self.data_dir = PathBuf::from(v),
            "per_class" => self.per_class = parse(key, v)?,
            "test_per_class" => self.test_per_class = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "budget_seconds" => self.budget_seconds = parse(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "gc" => self.gc = parse_bool(key, v)?,
            "ip" => self.ip = parse_bool(key, v)?,
            "mltp" => self.mltp = parse_bool(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr_peak" => self.lr_peak = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "rho" => self.rho = parse(key, v)?,
            "lambda" => self.lambda = Some(parse(key, v)?),
            "warmup_fraction" => self.warmup_fraction = parse(key, v)?,
            "precision" => self.precision = v.parse()?,
            "metrics_out" => self.metrics_out = PathBuf::from(v),
            "deterministic" => self.deterministic = parse_bool(key, v)?,
            "width_divisor" => self.width_divisor = parse(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "whitening_patches" => self.whitening_patches = parse(key, v)?,
            "mltp_beta" => self.mltp_beta = parse(key, v)?,
            "mltp_inner_steps" => self.mltp_inner_steps = Some(parse(key, v)?),
            "meta_iterations" => self.meta_iterations = Some(parse(key, v)?),
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.budget_seconds > 0.0 && self.budget_seconds.is_finite()) {
            return bad(format!("budget_seconds must be positive, got {}", self.budget_seconds));
        }
        if self.per_class == 0 {
            return bad("per_class must be positive".into());
        }
        if self.mltp && self.per_class < 2 {
            return bad("mltp needs per_class >= 2 to form two tasks".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.width_divisor == 0 {
            return bad("width_divisor must be positive".into());
        }
        if self.ip && self.whitening_patches < crate::nn::WHITENING_FILTERS {
            return bad(format!(
                "whitening_patches must be at least {}",
                crate::nn::WHITENING_FILTERS
            ));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("lambda must be non-negative, got {l}"));
            }
        }
        self.opt_config(1).validate()?;
        if self.mltp {
            self.mltp_config(1).validate()?;
        }
        Ok(())
    }

    pub fn weight_decay(&self) -> f64 {
        self.lambda.unwrap_or(if self.ip { IP_LAMBDA } else { 0.0 })
    }

    pub fn smoothing(&self) -> f64 {
        if self.ip {
            IP_SMOOTHING
        } else {
            0.0
        }
    }

    pub fn opt_config(&self, total_steps: usize) -> OptConfig {
        OptConfig {
            lr_peak: self.lr_peak,
            momentum: self.momentum,
            weight_decay: self.weight_decay(),
            rho: self.rho,
            gc_enabled: self.gc,
            sam_enabled: self.optimizer == OptimizerKind::Sam,
            schedule: Schedule::OneCycle {
                warmup_fraction: self.warmup_fraction,
            },
            total_steps: total_steps.max(1),
        }
    }

    pub fn meta_rounds(&self) -> usize {
        self.meta_iterations.unwrap_or(self.max_epochs)
    }

    pub fn mltp_config(&self, total_steps: usize) -> MltpConfig {
        MltpConfig {
            inner_steps: self.mltp_inner_steps,
            inner_lr: None,
            beta: self.mltp_beta,
            meta_iterations: self.meta_rounds(),
            inner_optimizer: self.opt_config(total_steps),
            batch_size: self.batch_size,
            shuffle: true,
            augment: self.augment,
            smoothing: self.smoothing(),
            seed: self.seed,
        }
    }

    /// Network layout; without `ip` the stem is plain and the activation ReLU.
    pub fn model_spec(&self, whitening: Option<&WhiteningFilters>) -> ModelSpec {
        let spec = ModelSpec::default().narrowed(self.width_divisor);
        match (self.ip, whitening) {
            (true, Some(w)) => spec.with_celu().with_whitening(w.filters.clone()),
            (true, None) => spec.with_celu(),
            (false, _) => spec,
        }
    }

    /// Short label of the enabled toggles, matching [`Recipe::tag`] for the
    /// named rows.
    pub fn recipe_tag(&self) -> String {
        let mut parts = Vec::new();
        let sam = self.optimizer == OptimizerKind::Sam;
        if sam {
            parts.push("sam");
        }
        if self.ip {
            parts.push("ip");
        }
        if self.gc {
            parts.push("gc");
        }
        if self.mltp {
            parts.push("mltp");
        }
        match parts.as_slice() {
            [] => "baseline".into(),
            [first, ..] if !sam && *first != "mltp" => format!("sgd+{}", parts.join("+")),
            _ => parts.join("+"),
        }
    }
}

/// Raw `key -> value` settings from one source.
pub type ConfigLayer = BTreeMap<String, String>;

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<ConfigLayer> {
    let mut layer = ConfigLayer::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
        let key = canonical_key(k);
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "config line {}: unknown key `{}`",
                n + 1,
                k.trim()
            )));
        }
        layer.insert(key, v.trim().to_string());
    }
    Ok(layer)
}

pub fn read_config_file(path: &Path) -> Result<ConfigLayer> {
    let text = fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
    parse_config_text(&text)
}

/// Where each setting came from, kept for the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigSources {
    pub file_path: Option<PathBuf>,
    pub file: ConfigLayer,
    pub cli: ConfigLayer,
    pub env_data_dir: Option<String>,
}

impl ConfigSources {
    /// Defaults, then `CIFAR_DIR`, then the file, then command-line flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(dir) = &self.env_data_dir {
            cfg.data_dir = PathBuf::from(dir);
        }
        for (k, v) in self.file.iter().chain(&self.cli) {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_is_settable() {
        let mut cfg = RunConfig::default();
        for k in KEYS {
            let v = match *k {
                "optimizer" => "sam",
                "precision" => "64",
                "gc" | "ip" | "mltp" | "deterministic" | "augment" => "true",
                "data_dir" | "metrics_out" => "x",
                _ => "3",
            };
            cfg.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
        assert!(cfg.set("nope", "1").is_err());
    }

    #[test]
    fn precedence_flag_file_env_default() {
        let mut s = ConfigSources {
            env_data_dir: Some("/env".into()),
            ..Default::default()
        };
        assert_eq!(s.resolve().unwrap().data_dir, PathBuf::from("/env"));
        s.file = parse_config_text("data_dir = /file\nlr_peak = 0.2 # from file\n").unwrap();
        let cfg = s.resolve().unwrap();
        assert_eq!((cfg.data_dir.to_str().unwrap(), cfg.lr_peak), ("/file", 0.2));
        s.cli.insert("lr_peak".into(), "0.3".into());
        assert_eq!(s.resolve().unwrap().lr_peak, 0.3);
    }

    #[test]
    fn bad_file_lines() {
        assert!(parse_config_text("lr_peak 0.2").is_err());
        assert!(parse_config_text("colour = red").is_err());
        assert!(parse_config_text("# only a comment\n\n").unwrap().is_empty());
    }

    #[test]
    fn ip_bundle() {
        let cfg = Recipe::SamIp.apply(&RunConfig::default());
        assert_eq!(cfg.smoothing(), 0.1);
        assert_eq!(cfg.weight_decay(), 0.0005);
        assert_eq!(cfg.recipe_tag(), "sam+ip");
        let plain = Recipe::Baseline.apply(&cfg);
        assert_eq!((plain.smoothing(), plain.weight_decay()), (0.0, 0.0));
        assert_eq!(plain.model_spec(None), ModelSpec::default());
    }

    #[test]
    fn recipe_tags_round_trip() {
        for r in Recipe::ALL {
            assert_eq!(r.tag().parse::<Recipe>().unwrap(), r);
            assert_eq!(r.apply(&RunConfig::default()).recipe_tag(), r.tag());
        }
        let c = RunConfig {
            gc: true,
            ..Default::default()
        };
        assert_eq!(c.recipe_tag(), "sgd+gc");
    }

    #[test]
    fn invalid_values() {
        for c in [
            RunConfig {
                budget_seconds: 0.0,
                ..Default::default()
            },
            RunConfig {
                momentum: 1.0,
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err());
        }
        assert!(RunConfig::default().set("precision", "16").is_err());
    }
}
