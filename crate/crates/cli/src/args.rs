use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "attnseg", version, about = "Segmentation masks from diffusion attention bundles")]
pub struct Cli {
    /// `key = value` file; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bundle with ground truth from a scene spec.
    Synth(SynthArgs),
    /// Fuse bundles into correlation maps and masks.
    Fuse(FuseArgs),
    /// Refine correlation maps with a dense CRF.
    Crf(CrfArgs),
    /// Localize personalized instances in a scene.
    Assign(AssignArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Compose or check prompt plans.
    Plan(PlanArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML scene description.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub seed: Option<u64>,
    /// Noise samples to emit; sample `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    pub samples: u32,
    /// Treat the spec as a personalized-instance scene.
    #[arg(long)]
    pub instance: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct FusionFlags {
    #[arg(long, allow_negative_numbers = true)]
    pub order: Option<u32>,
    #[arg(long = "cross-layers", value_delimiter = ',', num_args = 1..)]
    pub cross_layers: Option<Vec<u32>>,
    #[arg(long = "bg-thr", allow_negative_numbers = true)]
    pub bg_thr: Option<f32>,
    #[arg(long = "bg-power", allow_negative_numbers = true)]
    pub bg_power: Option<f32>,
    #[arg(long, allow_negative_numbers = true)]
    pub band: Option<f32>,
    #[arg(long = "bg-after-ensemble")]
    pub bg_after_ensemble: Option<bool>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Bundle directories, or directories holding bundle directories.
    /// Bundles sharing an image id are ensembled.
    pub bundles: Vec<PathBuf>,
    /// Bundle directories that are noise samples of one image.
    #[arg(long, num_args = 1..)]
    pub samples: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub fusion: FusionFlags,
}

#[derive(Debug, Args, Default)]
pub struct CrfFlags {
    #[arg(long = "crf.iterations", allow_negative_numbers = true)]
    pub iterations: Option<u32>,
    #[arg(long = "crf.w1", allow_negative_numbers = true)]
    pub w1: Option<f32>,
    #[arg(long = "crf.sxy_a", allow_negative_numbers = true)]
    pub sxy_a: Option<f32>,
    #[arg(long = "crf.srgb", allow_negative_numbers = true)]
    pub srgb: Option<f32>,
    #[arg(long = "crf.w2", allow_negative_numbers = true)]
    pub w2: Option<f32>,
    #[arg(long = "crf.sxy_s", allow_negative_numbers = true)]
    pub sxy_s: Option<f32>,
    #[arg(long = "crf.unary_epsilon", allow_negative_numbers = true)]
    pub unary_epsilon: Option<f32>,
    #[arg(long = "crf.max_side", allow_negative_numbers = true)]
    pub max_side: Option<u32>,
}

#[derive(Debug, Args)]
pub struct CrfArgs {
    /// Correlation map headers (`<id>.sc.json`) written by `fuse`.
    #[arg(required = true)]
    pub maps: Vec<PathBuf>,
    /// Directory holding `<id>.png` or `<id>.jpg` for every map.
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub band: Option<f32>,
    #[arg(long, allow_negative_numbers = true)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub crf: CrfFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Greedy,
    Hungarian,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    /// Bundle queried with the plain class prompt.
    #[arg(long)]
    pub scene: PathBuf,
    /// One bundle per instance, each queried with its identifier prompt.
    #[arg(long, required = true, num_args = 1..)]
    pub identifiers: Vec<PathBuf>,
    /// Segment count; defaults to instances + 1.
    #[arg(long, allow_negative_numbers = true)]
    pub k: Option<usize>,
    #[arg(long = "auto-k")]
    pub auto_k: bool,
    #[arg(long, allow_negative_numbers = true)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// JSON result file.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional instance mask at image resolution for the chosen mode.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub fusion: FusionFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted `<id>.png` masks.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Directory of ground-truth `<id>.png` masks.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Class ids in the mean; defaults to 0..=20.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub classes: Option<Vec<u8>>,
    #[arg(long, allow_negative_numbers = true)]
    pub ignore: Option<u8>,
    /// Assignment results written by `assign`.
    #[arg(long, num_args = 1..)]
    pub assignments: Vec<PathBuf>,
    /// Instance truth files written by `synth --instance`, paired with
    /// `--assignments`.
    #[arg(long = "instance-truth", num_args = 1..)]
    pub instance_truth: Vec<PathBuf>,
    /// JSON report path; the table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(subcommand)]
    pub command: PlanCommand,
}

#[derive(Debug, Subcommand)]
pub enum PlanCommand {
    /// Build the query for a set of image labels.
    Compose {
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        classes: Vec<String>,
        /// `class = surface text` lines; the built-in table when omitted.
        #[arg(long)]
        synonyms: Option<PathBuf>,
        /// One background prompt per line; the built-in list when omitted.
        #[arg(long)]
        backgrounds: Option<PathBuf>,
        #[arg(long = "no-backgrounds")]
        no_backgrounds: bool,
        #[arg(long = "no-synonyms")]
        no_synonyms: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the query for a personalized instance.
    Identifier {
        #[arg(long)]
        class: String,
        #[arg(long)]
        identifier: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that a bundle's token manifest realizes a plan.
    Validate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
    },
}
