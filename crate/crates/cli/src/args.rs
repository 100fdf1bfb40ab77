//! Command-line arguments.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "smal",
    version,
    about = "Articulated animal shape modelling pipeline"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set image.weights.silhouette=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Directory receiving every output of the command.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Seed of every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of scans, keypoints and renders.
    Synth(SynthArgs),
    /// Register every scan of a dataset with the part model and ARAP.
    Register(RegisterArgs),
    /// Build a shape model from registrations by co-registration.
    BuildModel(BuildModelArgs),
    /// Fit a model to an annotated image.
    FitImage(FitImageArgs),
    /// Run the gradient-check and invariant suite.
    Verify(VerifyArgs),
    /// Render a model instance.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of animals.
    #[arg(long)]
    pub count: Option<usize>,
    /// Template ring resolution.
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Dataset produced by `synth`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Register only these animals.
    #[arg(long = "only", value_name = "ID")]
    pub only: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BuildModelArgs {
    /// Dataset produced by `synth`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory of `register`.
    #[arg(long)]
    pub registrations: PathBuf,
    /// Co-registration rounds; 0 builds the model from the registrations.
    #[arg(long)]
    pub rounds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitImageArgs {
    /// Model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Annotation JSON with keypoints and a silhouette mask.
    #[arg(long)]
    pub annotation: PathBuf,
    /// Use this family's shape prior.
    #[arg(long)]
    pub family: Option<String>,
    /// Number of keypoint stages with decaying priors.
    #[arg(long)]
    pub stages: Option<usize>,
    /// Silhouette pyramid levels; 0 skips the silhouette stage.
    #[arg(long)]
    pub pyramid_levels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Random points per gradient check.
    #[arg(long)]
    pub points: Option<usize>,
    /// Random cases per invariant check.
    #[arg(long)]
    pub cases: Option<usize>,
    /// Skip the gradient checks.
    #[arg(long)]
    pub invariants_only: bool,
    /// Corrupt one analytic gradient to exercise the failure path.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Fit result from `fit-image`; the model mean when absent.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Extra rotation about the vertical axis, in degrees.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub yaw: f64,
    /// Image width and height.
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    pub resolution: Option<Vec<usize>>,
}
