//! `eegdiff`: generate synthetic EEG, build electrode-frequency maps, train
//! and sample per-class diffusion models, train classifiers and run
//! augmentation experiments.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "eegdiff", version, about = "EEG electrode-frequency maps with diffusion augmentation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Base seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Upper bound on worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// Directory that receives every output file.
    #[arg(long, visible_alias = "out_dir", global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// Log the resolved configuration and stop.
    #[arg(long, visible_alias = "dry_run", global = true, default_value_t = false)]
    pub dry_run: bool,

    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic band-limited multichannel recordings.
    GenData(GenData),
    /// Turn a directory of recordings into an EFDM dataset file.
    BuildEfdm(BuildEfdm),
    /// Train a single-class diffusion model.
    TrainDiffusion(TrainDiffusion),
    /// Draw maps from a diffusion checkpoint.
    Sample(Sample),
    /// Train a classifier on a dataset file.
    TrainClassifier(TrainClassifier),
    /// Score a classifier checkpoint on a dataset file.
    Eval(Eval),
    /// Repeated-seed experiments.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Write one map as a PGM or PPM image.
    ExportImage(ExportImage),
}

#[derive(Args, Debug)]
pub struct GenData {
    /// Class as label:center_hz:width_hz:amplitude, repeatable.
    #[arg(long = "class", default_values_t = ["sad:10:4:10".to_string(), "happy:30:10:10".to_string()])]
    pub classes: Vec<String>,

    #[arg(long, visible_alias = "n_channels", default_value_t = 8)]
    pub n_channels: usize,

    #[arg(long, visible_alias = "sample_rate", default_value_t = 250.0)]
    pub sample_rate: f64,

    /// Recording length in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub duration: f64,

    #[arg(long, visible_alias = "noise_sigma", default_value_t = 1.0)]
    pub noise_sigma: f64,

    /// Sinusoids per recording.
    #[arg(long, default_value_t = 3)]
    pub tones: usize,

    /// Add a 1/f background.
    #[arg(long, visible_alias = "one_over_f", default_value_t = false)]
    pub one_over_f: bool,

    /// Recordings per class.
    #[arg(long, default_value_t = 4)]
    pub instances: usize,

    /// Index of the first instance; disjoint ranges give disjoint data.
    #[arg(long, visible_alias = "first_instance", default_value_t = 0)]
    pub first_instance: usize,
}

#[derive(Args, Debug)]
pub struct BuildEfdm {
    /// Directory of recordings (`.eegr` binary or delimited text), named `<label>_<n>.<ext>`.
    #[arg(long)]
    pub input: PathBuf,

    /// Output file name inside the output directory.
    #[arg(long, default_value = "dataset.efdm")]
    pub output: String,

    /// Class order as a comma-separated list; empty means sorted labels.
    #[arg(long, default_value = "")]
    pub classes: String,

    /// Sample rate assumed for text recordings.
    #[arg(long, visible_alias = "sample_rate", default_value_t = 250.0)]
    pub sample_rate: f64,

    #[arg(long, visible_alias = "cut_hz", default_value_t = 100.0)]
    pub cut_hz: f64,

    /// Map height and width.
    #[arg(long, visible_alias = "image_size", default_value_t = 32)]
    pub image_size: usize,

    /// STFT window; 0 picks the largest power of two that fits.
    #[arg(long, default_value_t = 0)]
    pub wsize: usize,

    /// STFT hop; 0 means equal to the window.
    #[arg(long, default_value_t = 0)]
    pub hop: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NoiseScheduleKind {
    Linear,
}

#[derive(Args, Debug)]
pub struct TrainDiffusion {
    /// Dataset file holding the training maps.
    #[arg(long)]
    pub data: PathBuf,

    /// Class to train on.
    #[arg(long)]
    pub class: String,

    #[arg(long, default_value_t = 15)]
    pub epochs: usize,

    /// Epochs to checkpoint, comma-separated; 0 saves the untrained model.
    /// The final epoch is always saved.
    #[arg(long, default_value = "1,8,15")]
    pub checkpoints: String,

    #[arg(long, visible_alias = "image_size", default_value_t = 32)]
    pub image_size: usize,

    #[arg(long, visible_alias = "diffusion_steps", default_value_t = 200)]
    pub diffusion_steps: usize,

    #[arg(long, visible_alias = "noise_schedule", value_enum, default_value_t = NoiseScheduleKind::Linear)]
    pub noise_schedule: NoiseScheduleKind,

    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,

    #[arg(long, visible_alias = "batch_size", default_value_t = eegdiff_core::diffusion::DiffusionConfig::default().batch_size)]
    pub batch_size: usize,

    #[arg(long, visible_alias = "num_channels", default_value_t = 32)]
    pub num_channels: usize,

    #[arg(long, visible_alias = "num_res_blocks", default_value_t = 2)]
    pub num_res_blocks: usize,
}

#[derive(Args, Debug)]
pub struct Sample {
    /// Diffusion checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Number of maps to draw.
    #[arg(long, default_value_t = 32)]
    pub n: usize,

    #[arg(long, default_value = "samples.efdm")]
    pub output: String,

    /// Class vocabulary of the output file; empty means the checkpoint's class only.
    #[arg(long, default_value = "")]
    pub classes: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Desk,
    Full,
}

#[derive(Args, Debug, Clone)]
pub struct ClassifierFlags {
    /// Layer layout.
    #[arg(long, value_enum, default_value_t = Arch::Desk)]
    pub arch: Arch,

    /// Learning rate; the full-scale layout uses 1e-4 unless given.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,

    #[arg(long, visible_alias = "batch_size", default_value_t = 128)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct TrainClassifier {
    #[arg(long)]
    pub train: PathBuf,

    /// Held-out dataset scored after every epoch.
    #[arg(long)]
    pub val: PathBuf,

    #[arg(long, default_value_t = 10)]
    pub epochs: usize,

    #[command(flatten)]
    pub model: ClassifierFlags,
}

#[derive(Args, Debug)]
pub struct Eval {
    /// Classifier checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Experiment {
    /// Real-only arm against real plus synthetic, over repeated seeds.
    TwoArm(TwoArm),
    /// Accuracy of a real-data classifier on samples from each diffusion epoch.
    Synthetic(SyntheticExp),
}

#[derive(Args, Debug)]
pub struct PlanFlags {
    /// Plan file of `key = value` lines; explicit flags override it.
    #[arg(long)]
    pub plan: Option<PathBuf>,

    #[arg(long, visible_alias = "n_runs", default_value_t = 5)]
    pub n_runs: usize,

    #[arg(long, default_value_t = 10)]
    pub epochs: usize,

    #[arg(long, visible_alias = "train_per_class", default_value_t = 2000)]
    pub train_per_class: usize,

    #[arg(long, visible_alias = "test_per_class", default_value_t = 500)]
    pub test_per_class: usize,

    #[arg(long, visible_alias = "synth_per_class", default_value_t = 1200)]
    pub synth_per_class: usize,
}

#[derive(Args, Debug)]
pub struct TwoArm {
    #[arg(long)]
    pub train: PathBuf,

    #[arg(long)]
    pub test: PathBuf,

    /// Synthetic maps added to the augmented arm.
    #[arg(long)]
    pub synth: PathBuf,

    #[command(flatten)]
    pub plan: PlanFlags,

    #[command(flatten)]
    pub model: ClassifierFlags,
}

#[derive(Args, Debug)]
pub struct SyntheticExp {
    /// Classifier checkpoint trained on real maps.
    #[arg(long)]
    pub classifier: PathBuf,

    /// Diffusion checkpoints, one per class per epoch.
    #[arg(long, num_args = 1.., required = true)]
    pub diffusion: Vec<PathBuf>,

    /// Maps sampled per class per epoch.
    #[arg(long, visible_alias = "n_samples", default_value_t = 32)]
    pub n_samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    Pgm,
    Ppm,
}

#[derive(Args, Debug)]
pub struct ExportImage {
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, default_value_t = 0)]
    pub index: usize,

    /// PGM is the single map, PPM the three-plane classifier input.
    #[arg(long, value_enum, default_value_t = ImageFormat::Pgm)]
    pub format: ImageFormat,
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(&cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e);
            ExitCode::from(1)
        }
    }
}
