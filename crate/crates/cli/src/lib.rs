//! Command-line front end: argument definitions, config resolution and
//! exit-code mapping. `main.rs` only wires these together.

use std::path::{Path, PathBuf};

use avfusion::eval::Distance;
use avfusion::fusion::HeadKind;
use avfusion::pipeline::{cmd_diagnose, cmd_evaluate, cmd_generate, cmd_train, Profile, RunConfig, TEST_FILE, TRAIN_FILE, VAL_FILE};
use avfusion::{Error, ErrorClass, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "avfusion", version, about = "Audio-visual fusion heads: synthetic data, training, verification and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as train/val/test embedding files
    Generate(GenerateArgs),
    /// Train a fusion head; writes a checkpoint and an epoch log
    Train(TrainArgs),
    /// Score six-mode verification trials; writes EER reports
    Evaluate(EvaluateArgs),
    /// Angle, silhouette and boxplot diagnostics for trained heads
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HeadArg {
    Mean,
    Mlp,
    Multiview,
}

impl From<HeadArg> for HeadKind {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::Mean => HeadKind::Mean,
            HeadArg::Mlp => HeadKind::Mlp,
            HeadArg::Multiview => HeadKind::MultiView,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProfileArg {
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DistanceArg {
    Cosine,
    Euclidean,
}

/// Flags shared by every subcommand. Each overrides the matching entry of
/// the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// TOML run configuration; flags override its values
    #[arg(long, short = 'c', value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random stream (data, split, init, dropout, masking, shuffle, trials)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for all outputs
    #[arg(long, short = 'o', value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Input and embedding widths
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Fusion head to train
    #[arg(long, value_enum)]
    pub head: Option<HeadArg>,
    /// Number of synthetic identities
    #[arg(long)]
    pub n_identities: Option<usize>,
    /// Samples drawn per identity
    #[arg(long)]
    pub samples_per_identity: Option<usize>,
    /// Audio noise standard deviation
    #[arg(long)]
    pub audio_sigma: Option<f64>,
    /// Video noise standard deviation
    #[arg(long)]
    pub video_sigma: Option<f64>,
    /// Per-identity fraction held out for validation
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Per-identity fraction held out for testing
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial AdamW learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Arc-margin logit scale
    #[arg(long)]
    pub arc_scale: Option<f64>,
    /// Arc-margin additive angle in radians
    #[arg(long)]
    pub arc_margin: Option<f64>,
    /// Same-identity verification trials per mode
    #[arg(long)]
    pub n_positive: Option<usize>,
    /// Different-identity verification trials per mode
    #[arg(long)]
    pub n_negative: Option<usize>,
    /// Distance used for silhouette scores
    #[arg(long, value_enum)]
    pub distance: Option<DistanceArg>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// Training embeddings [default: <out-dir>/train.avfe]
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Validation embeddings [default: <out-dir>/val.avfe]
    #[arg(long, value_name = "FILE")]
    pub val: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// Checkpoint to evaluate; repeat to compare several models
    #[arg(long = "checkpoint", value_name = "FILE", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Test embeddings [default: <out-dir>/test.avfe]
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// Checkpoint to diagnose; repeat to compare several models
    #[arg(long = "checkpoint", value_name = "FILE", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Embeddings to diagnose on [default: <out-dir>/test.avfe]
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
}

/// The configuration file (or defaults) with flags applied on top.
pub fn resolve_config(flags: &RunFlags) -> Result<RunConfig> {
    let mut c = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = flags.seed {
        c.seed = v;
    }
    if let Some(v) = &flags.out_dir {
        c.output_dir = v.clone();
    }
    if let Some(v) = flags.profile {
        c.profile = match v {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Full => Profile::Full,
        };
    }
    if let Some(v) = flags.head {
        c.head = v.into();
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+;)*) => {
            $(if let Some(v) = flags.$flag { c.$($field).+ = v; })*
        };
    }
    set! {
        n_identities => data.n_identities;
        samples_per_identity => data.samples_per_identity;
        audio_sigma => data.audio_noise_sigma;
        video_sigma => data.video_noise_sigma;
        val_fraction => data.val_fraction;
        test_fraction => data.test_fraction;
        epochs => training.max_epochs;
        batch_size => training.batch_size;
        lr => training.learning_rate;
        arc_scale => training.arc_scale;
        arc_margin => training.arc_margin;
        n_positive => trials.n_positive;
        n_negative => trials.n_negative;
    }
    if let Some(v) = flags.distance {
        c.trials.distance = match v {
            DistanceArg::Cosine => Distance::Cosine,
            DistanceArg::Euclidean => Distance::Euclidean,
        };
    }
    Ok(c)
}

fn or_default(path: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| dir.join(name))
}

/// Runs one subcommand and returns the files it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(&resolve_config(&a.run)?),
        Command::Train(a) => {
            let c = resolve_config(&a.run)?;
            let train = or_default(&a.train, &c.output_dir, TRAIN_FILE);
            let val = or_default(&a.val, &c.output_dir, VAL_FILE);
            let t = cmd_train(&c, &train, &val)?;
            let best = t.outcome.best_record();
            log::info!("best epoch {} with validation accuracy {:.4}", best.epoch, best.val_accuracy);
            Ok(vec![t.checkpoint, t.epoch_log])
        }
        Command::Evaluate(a) => {
            let c = resolve_config(&a.run)?;
            let test = or_default(&a.test, &c.output_dir, TEST_FILE);
            cmd_evaluate(&c, &a.checkpoints, &test)
        }
        Command::Diagnose(a) => {
            let c = resolve_config(&a.run)?;
            let emb = or_default(&a.embeddings, &c.output_dir, TEST_FILE);
            cmd_diagnose(&c, &a.checkpoints, &emb)
        }
    }
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_IO: u8 = 4;

pub fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Io => EXIT_IO,
    }
}
