//! Command-line frontend for the segmentation pipeline: dataset
//! synthesis, preprocessing preview, training, evaluation, inference
//! with overlays, decoder attribution maps, and ablation tables.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "VFSEG_OUT";

#[derive(Parser)]
#[command(name = "vfseg", version, about = "Videofluoroscopy frame segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset.
    Synth(SynthArgs),
    /// Apply enhancement pipelines or a trained fusion layer to one image.
    Preprocess(PreprocessArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Run inference, writing per-region masks and overlays.
    Infer(InferArgs),
    /// Attribution heatmap for one decoder block of the final stage.
    Gradcam(GradcamArgs),
    /// Ablation tables (stage count, preprocessing, context set).
    Ablate(AblateArgs),
}

fn parse_ambiguity(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("ambiguity {v} outside [0, 1]"))
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory [default: $VFSEG_OUT/dataset].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    patients: usize,
    /// Frames per patient.
    #[arg(long, default_value_t = 5)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Distractor strength in [0, 1].
    #[arg(long, default_value_t = 0.0, value_parser = parse_ambiguity)]
    ambiguity: f64,
    /// Square frame size in pixels (>= 32).
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args)]
#[command(group = ArgGroup::new("source").required(true).multiple(true).args(["pipeline", "checkpoint"]))]
struct PreprocessArgs {
    /// Input grayscale PNG.
    #[arg(long)]
    image: PathBuf,
    /// Pipeline token list, e.g. "clahe,sharpen"; repeatable.
    #[arg(long)]
    pipeline: Vec<String>,
    /// Trained checkpoint; writes the 3 fused channels plus their average.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory [default: $VFSEG_OUT/preprocess].
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Training-configuration source shared by train/ablate: an optional
/// TOML file overlaid with individual flags (flags win).
#[derive(Args)]
struct ConfigArgs {
    /// TOML training config; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Binarization threshold.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Number of cascade stages.
    #[arg(long)]
    stages: Option<usize>,
    /// Input resolution (square).
    #[arg(long)]
    resolution: Option<usize>,
    /// Model preset; selecting one resets the model section to that
    /// preset's defaults before other model flags apply.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Mini,
    Paper,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (from `synth` or external).
    #[arg(long)]
    data: PathBuf,
    /// Artifact directory [default: $VFSEG_OUT/train].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Patient-level split ratio as train,val,test.
    #[arg(long, default_value = "70,15,15")]
    split: String,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    /// Output CSV path [default: $VFSEG_OUT/eval.csv].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory with ground truth (enables Dice + overlays).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Single grayscale PNGs without ground truth; repeatable.
    #[arg(long)]
    image: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    /// Output directory [default: $VFSEG_OUT/infer].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Sample index within the dataset.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Target region name (e.g. bolus).
    #[arg(long, default_value = "bolus")]
    target: String,
    /// Decoder block 1..=4.
    #[arg(long, default_value_t = 4)]
    block: usize,
    /// Mask the objective to the ground-truth region.
    #[arg(long)]
    gt_masked: bool,
    /// Also print the per-region importance ranking over the dataset.
    #[arg(long)]
    importance: bool,
    /// Output PNG path [default: $VFSEG_OUT/gradcam.png].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(subcommand)]
    which: AblateKind,
}

#[derive(Subcommand)]
enum AblateKind {
    /// Vary the number of cascade stages.
    Stages {
        /// Comma-separated stage counts, e.g. "1,2".
        #[arg(long, default_value = "1,2,3,4")]
        list: String,
        /// Comma-separated seeds to average over.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[command(flatten)]
        common: AblateCommon,
    },
    /// Vary the preprocessing front end.
    Preprocessing {
        #[command(flatten)]
        common: AblateCommon,
    },
    /// Vary the context set passed between stages.
    Context {
        #[command(flatten)]
        common: AblateCommon,
    },
}

#[derive(Args)]
struct AblateCommon {
    #[arg(long)]
    data: PathBuf,
    /// Patient-level split ratio as train,val,test.
    #[arg(long, default_value = "70,15,15")]
    split: String,
    /// Output CSV path [default: $VFSEG_OUT/ablate_<kind>.csv].
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Gradcam(a) => commands::gradcam(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
