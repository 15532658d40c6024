//! Command-line front end for the training harness.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;
use swiftnet_core::harness::{read_config_file, ConfigLayer, ConfigSources, Recipe, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "swiftnet", version, about = "Budgeted ResNet-9 training on CIFAR-10 subsets")]
pub struct Cli {
    /// key = value file; flags given here take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with the CIFAR-10 binary batches (falls back to CIFAR_DIR).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Test images per class; 0 uses the whole test file.
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget_seconds: Option<f64>,
    #[arg(long, value_parser = ["sgd", "sam"])]
    pub optimizer: Option<String>,
    /// Gradient centralization.
    #[arg(long)]
    pub gc: bool,
    /// Label smoothing, CELU, patch whitening and weight decay.
    #[arg(long)]
    pub ip: bool,
    /// Two-task meta-training.
    #[arg(long)]
    pub mltp: bool,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_peak: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// SAM neighbourhood radius.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Weight-decay factor.
    #[arg(long = "lambda")]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    #[arg(long, value_parser = ["32", "64"])]
    pub precision: Option<String>,
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    #[arg(long)]
    pub deterministic: bool,
    /// Divide every channel width by this (2 = half width).
    #[arg(long)]
    pub width_divisor: Option<usize>,
    /// Disable crop/flip augmentation.
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub whitening_patches: Option<usize>,
    #[arg(long)]
    pub mltp_beta: Option<f64>,
    #[arg(long)]
    pub mltp_inner_steps: Option<usize>,
    #[arg(long)]
    pub meta_iterations: Option<usize>,
    /// Run several recipes in turn (comma separated; all five when no list).
    #[arg(long, num_args = 0..=1, default_missing_value = "baseline,sam,sam+ip,sam+gc,mltp", value_delimiter = ',')]
    pub recipe_matrix: Option<Vec<String>>,
}

impl Cli {
    /// Only the settings given on the command line.
    pub fn layer(&self) -> ConfigLayer {
        let mut l = ConfigLayer::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                l.insert(k.to_string(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flag = |b: bool| b.then(|| "true".to_string());
        put("data_dir", path(&self.data_dir));
        put("per_class", self.per_class.map(|v| v.to_string()));
        put("test_per_class", self.test_per_class.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("budget_seconds", self.budget_seconds.map(|v| v.to_string()));
        put("optimizer", self.optimizer.clone());
        put("gc", flag(self.gc));
        put("ip", flag(self.ip));
        put("mltp", flag(self.mltp));
        put("max_epochs", self.max_epochs.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("lr_peak", self.lr_peak.map(|v| v.to_string()));
        put("momentum", self.momentum.map(|v| v.to_string()));
        put("rho", self.rho.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("warmup_fraction", self.warmup_fraction.map(|v| v.to_string()));
        put("precision", self.precision.clone());
        put("metrics_out", path(&self.metrics_out));
        put("deterministic", flag(self.deterministic));
        put("width_divisor", self.width_divisor.map(|v| v.to_string()));
        put("augment", self.no_augment.then(|| "false".to_string()));
        put("whitening_patches", self.whitening_patches.map(|v| v.to_string()));
        put("mltp_beta", self.mltp_beta.map(|v| v.to_string()));
        put("mltp_inner_steps", self.mltp_inner_steps.map(|v| v.to_string()));
        put("meta_iterations", self.meta_iterations.map(|v| v.to_string()));
        l
    }

    pub fn recipes(&self) -> Result<Option<Vec<Recipe>>> {
        self.recipe_matrix
            .as_ref()
            .map(|names| names.iter().map(|n| n.parse::<Recipe>().map_err(Into::into)).collect())
            .transpose()
    }
}

/// Everything `main` needs to start a run.
#[derive(Debug)]
pub struct Invocation {
    pub config: RunConfig,
    pub sources: ConfigSources,
    pub recipes: Option<Vec<Recipe>>,
}

/// Parses arguments (including the program name) and resolves the run
/// configuration: flags over the config file over `env_data_dir` over defaults.
pub fn parse_config<I, S>(args: I, env_data_dir: Option<String>) -> Result<Invocation>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let file = match &cli.config {
        Some(p) => read_config_file(p).with_context(|| format!("reading config file {}", p.display()))?,
        None => ConfigLayer::new(),
    };
    let sources = ConfigSources {
        file_path: cli.config.clone(),
        file,
        cli: cli.layer(),
        env_data_dir,
    };
    let config = sources.resolve()?;
    Ok(Invocation {
        config,
        sources,
        recipes: cli.recipes()?,
    })
}
