//! Command-line flags, the optional JSON config, and their merge.
//!
//! Every tunable flag is optional at the clap level so an explicitly passed
//! value can be told apart from a default. Resolution order per field is
//! command line, then config file, then built-in default.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "mxdog",
    version,
    about = "MXDoG filtering and abstract style transfer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Apply one stage of the MXDoG filter chain to an image.
    Filter(FilterArgs),
    /// Optimize an image toward a content/style objective.
    Stylize(StylizeArgs),
    /// Compare analytic and finite-difference gradients on random inputs.
    Gradcheck(GradcheckArgs),
    /// Print the layer table of a weight file.
    InspectWeights(InspectArgs),
}

#[derive(ValueEnum, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Gaussian,
    Dog,
    Xdog,
    /// Mean-thresholded XDoG.
    Txdog,
    Mxdog,
}

#[derive(ValueEnum, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    Content,
    Noise,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FilterArgs {
    /// JSON file with defaults for any of these flags.
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Filter stage to apply (required)
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Image to filter (required)
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Where to write the result (required)
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Inner Gaussian scale [default: 1.0]
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    /// Outer-to-inner scale ratio [default: 1.6]
    #[arg(long, allow_negative_numbers = true)]
    pub k: Option<f64>,
    /// Weight of the outer blur [default: 0.94]
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    /// Ramp steepness [default: 50]
    #[arg(long, allow_negative_numbers = true)]
    pub phi: Option<f64>,
    /// Ramp threshold [default: -0.1]
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    /// Minimum region area kept by the morphology step [default: 10]
    #[arg(long)]
    pub amin: Option<usize>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct StylizeArgs {
    /// JSON file with defaults for any of these flags.
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Content image (required)
    #[arg(long, value_name = "PATH")]
    pub content: Option<PathBuf>,
    /// Style image (required)
    #[arg(long, value_name = "PATH")]
    pub style: Option<PathBuf>,
    /// Where to write the result (required)
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Feature network weight file; random test weights if omitted.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Adam iterations [default: 500]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Adam learning rate [default: 0.01]
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    /// Content weight [default: 1]
    #[arg(long, allow_negative_numbers = true)]
    pub lambda1: Option<f64>,
    /// Abstract content weight [default: 0.2]
    #[arg(long, allow_negative_numbers = true)]
    pub lambda2: Option<f64>,
    /// Style weight [default: 5]
    #[arg(long, allow_negative_numbers = true)]
    pub lambda3: Option<f64>,
    /// MXDoG content constraint weight [default: 200]
    #[arg(long, allow_negative_numbers = true)]
    pub lambda4: Option<f64>,
    /// MXDoG style constraint weight [default: 1000]
    #[arg(long, allow_negative_numbers = true)]
    pub lambda5: Option<f64>,
    /// Surrogate threshold steepness [default: 50]
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    /// Longest edge the content image is downscaled to [default: 768]
    #[arg(long)]
    pub max_edge: Option<usize>,
    /// Seed for noise init and the fallback test network [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: content]
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Write the loss history here.
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    /// Iterations between loss records [default: 10]
    #[arg(long)]
    pub log_interval: Option<usize>,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GradcheckArgs {
    /// JSON file with defaults for any of these flags.
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Image side length, at least 16 [default: 16]
    #[arg(long)]
    pub size: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Floating-point width of the analytic gradient, 32 or 64 [default: 64]
    #[arg(long)]
    pub precision: Option<u32>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(value_name = "FILE")]
    pub file: PathBuf,
}

/// Fills every unset field of `cli` from the config file, if one was given.
pub trait Merge: Sized + DeserializeOwned + Default {
    fn config_path(&self) -> Option<&Path>;
    fn or(self, config: Self) -> Self;

    fn resolve(self) -> Result<Self, CliError> {
        let Some(path) = self.config_path() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        Ok(self.or(config))
    }
}

macro_rules! merge_fields {
    ($ty:ty { $($field:ident),* }) => {
        impl Merge for $ty {
            fn config_path(&self) -> Option<&Path> {
                self.config.as_deref()
            }

            fn or(self, config: Self) -> Self {
                Self {
                    config: self.config,
                    $($field: self.$field.or(config.$field),)*
                }
            }
        }
    };
}

merge_fields!(FilterArgs {
    mode,
    input,
    output,
    sigma,
    k,
    tau,
    phi,
    epsilon,
    amin
});
merge_fields!(StylizeArgs {
    content,
    style,
    output,
    weights,
    iters,
    lr,
    lambda1,
    lambda2,
    lambda3,
    lambda4,
    lambda5,
    rho,
    max_edge,
    seed,
    init,
    log,
    log_interval
});
merge_fields!(GradcheckArgs {
    size,
    seed,
    precision
});

/// Unwraps a field that has no default.
pub fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing required flag --{flag}")))
}
