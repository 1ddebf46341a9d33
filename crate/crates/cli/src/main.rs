mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "handguide",
    version,
    about = "Guided diffusion sampling with visual and textual guidance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a toy denoiser on the synthetic corpus of the configured backbone.
    TrainDenoiser(TrainDenoiserArgs),
    /// Train the discriminator on a dataset manifest.
    TrainDiscriminator(TrainDiscriminatorArgs),
    /// Train a low-rank slider adapter on prompt triples.
    TrainLora(TrainLoraArgs),
    /// Filter, caption and pair a corpus with generated fakes.
    BuildDataset(BuildDatasetArgs),
    /// Guided sampling: writes samples, final masks and the step trace.
    Sample(SampleArgs),
    /// Score generated samples against a reference set.
    Evaluate(EvaluateArgs),
    /// Run every stage end to end.
    RunPipeline(RunPipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackboneArg {
    Point,
    Image,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Default,
    Smoke,
}

/// Settings shared by every subcommand.
#[derive(Args)]
struct Common {
    /// Run configuration (TOML); the default profile when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model family; overrides the config.
    #[arg(long, value_enum)]
    backbone: Option<BackboneArg>,
}

#[derive(Args)]
struct TrainDenoiserArgs {
    #[command(flatten)]
    common: Common,
    /// Run seed; every stochastic stage derives from it.
    #[arg(long)]
    seed: u64,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Size of the synthetic training set.
    #[arg(long)]
    train_size: Option<usize>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainDiscriminatorArgs {
    #[command(flatten)]
    common: Common,
    /// Run seed; every stochastic stage derives from it.
    #[arg(long)]
    seed: u64,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Dataset manifest. Without one, the point backbone pairs well-formed
    /// points with samples from `--denoiser`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Denoiser checkpoint.
    #[arg(long)]
    denoiser: Option<PathBuf>,
    /// Share of the data held out for the accuracy check.
    #[arg(long)]
    held_out: Option<f64>,
    /// Output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainLoraArgs {
    #[command(flatten)]
    common: Common,
    /// Run seed; every stochastic stage derives from it.
    #[arg(long)]
    seed: u64,
    /// Adapter rank.
    #[arg(long)]
    rank: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// JSON array of `{"neutral", "positives", "negatives"}` phrase triples;
    /// the five default sets when omitted.
    #[arg(long)]
    triples: Option<PathBuf>,
    /// Denoiser checkpoint.
    #[arg(long)]
    denoiser: Option<PathBuf>,
    /// Output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildDatasetArgs {
    #[command(flatten)]
    common: Common,
    /// Directory holding `corpusA/` and `corpusB/`.
    #[arg(long)]
    input: PathBuf,
    /// Minimum detector score for a real image, inclusive.
    #[arg(long)]
    threshold: Option<f64>,
    /// `stub` or `http:<url>`.
    #[arg(long)]
    captioner: Option<String>,
    /// Seed for the generated fakes.
    #[arg(long)]
    seed: u64,
    /// Image denoiser used to draw fakes; smoothed noise when omitted.
    #[arg(long)]
    denoiser: Option<PathBuf>,
    /// Largest share of kept images a single source may hold.
    #[arg(long)]
    max_source_share: Option<f64>,
    /// Fail the build when more captions than this fail.
    #[arg(long)]
    max_caption_failure_rate: Option<f64>,
    /// Manifest to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GuidanceFlags {
    /// Visual guidance weight.
    #[arg(long)]
    w: Option<f64>,
    /// Textual merge scale.
    #[arg(long)]
    v: Option<f64>,
    /// Mask confidence threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Sampler steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Classifier-free guidance scale.
    #[arg(long)]
    cfg: Option<f64>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    guidance: GuidanceFlags,
    /// Prompt phrase, e.g. `hands` or `realistic hands`.
    #[arg(long)]
    prompt: Option<String>,
    /// Run seed; every stochastic stage derives from it.
    #[arg(long)]
    seed: u64,
    /// Number of samples; sample `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Denoiser checkpoint.
    #[arg(long)]
    denoiser: Option<PathBuf>,
    /// Discriminator checkpoint.
    #[arg(long)]
    discriminator: Option<PathBuf>,
    /// Adapter checkpoint.
    #[arg(long)]
    adapter: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of generated PNGs or a `points.jsonl`.
    #[arg(long)]
    generated: PathBuf,
    /// Reference samples, same layout as `--generated`.
    #[arg(long)]
    reference: PathBuf,
    /// One prompt per generated sample.
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Seed for the KID subsets.
    #[arg(long)]
    seed: u64,
    /// Name recorded in the report.
    #[arg(long, default_value = "model")]
    model_id: String,
    /// Detector score above which an image counts as a detection.
    #[arg(long, default_value_t = handguide::metrics::DEFAULT_TAU_DETECT)]
    tau_detect: f64,
    /// Output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunPipelineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    guidance: GuidanceFlags,
    /// Starting profile when no config file is given.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// Run seed; every stochastic stage derives from it.
    #[arg(long)]
    seed: u64,
    /// Number of samples per arm.
    #[arg(long)]
    samples: Option<usize>,
    /// Run directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainDenoiser(a) => commands::train_denoiser(a),
        Command::TrainDiscriminator(a) => commands::train_discriminator(a),
        Command::TrainLora(a) => commands::train_lora(a),
        Command::BuildDataset(a) => commands::build_dataset(a),
        Command::Sample(a) => commands::sample(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::RunPipeline(a) => commands::run_pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<handguide::Error>() {
                Some(handguide::Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
