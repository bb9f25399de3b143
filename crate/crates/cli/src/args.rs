use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ciphertune", version, about = "Encrypted softmax-regression fine-tuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a key set into a private key directory.
    Keygen(KeygenArgs),
    /// Client: prepare and encrypt a dataset into a session directory.
    Encrypt(EncryptArgs),
    /// Cloud: train on the encrypted upload in a session directory.
    TrainCloud(TrainCloudArgs),
    /// Client and cloud in one process over an in-memory channel.
    TrainLocal(TrainLocalArgs),
    /// Cleartext comparator with the same batching and schedule.
    TrainPlain(TrainPlainArgs),
    /// Client: serve refreshes and validation for a running cloud.
    Validate(ValidateArgs),
    /// Client: decrypt the final model of a finished session.
    DecryptModel(DecryptModelArgs),
    /// Predict with a model file on raw features.
    Infer(InferArgs),
    /// Write a Gaussian-blob feature and label file pair.
    SynthData(SynthArgs),
    /// Print a run report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct KeygenArgs {
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Key directory to create.
    #[arg(long)]
    pub out: PathBuf,
}

/// Hyperparameters; unset values come from `--dataset` defaults.
#[derive(Args, Debug, Clone)]
pub struct TrainFlags {
    /// Named dataset whose default hyperparameters apply (mnist, cifar10,
    /// facemask, dermamnist).
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub refresh_interval: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Softmax domain bound `B`.
    #[arg(long)]
    pub domain_bound: Option<f64>,
}

/// Input data; without `--features` a synthetic dataset is generated.
#[derive(Args, Debug, Clone)]
pub struct DataFlags {
    #[arg(long, requires = "labels")]
    pub features: Option<PathBuf>,
    #[arg(long, requires = "features")]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthFlags,
}

#[derive(Args, Debug, Clone)]
pub struct SynthFlags {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    /// Seed of the synthetic data; defaults to the training seed.
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EncryptArgs {
    #[arg(long)]
    pub keys: PathBuf,
    /// Session directory shared with the cloud.
    #[arg(long)]
    pub session: PathBuf,
    /// Private client directory for the session state and test split.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct TrainCloudArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Seconds to wait for each client message.
    #[arg(long, default_value_t = 86400)]
    pub timeout: u64,
    /// Optional JSON summary of the cloud's traffic.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainLocalArgs {
    #[arg(long, default_value = "desk")]
    pub preset: String,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Output directory for the model, report, metrics and test split.
    #[arg(long)]
    pub out: PathBuf,
    /// Also classify the test split with encrypted inference.
    #[arg(long)]
    pub encrypted_infer: bool,
    /// Save the session transcript as `transcript.bttr`.
    #[arg(long)]
    pub transcript: bool,
    /// Skip the cleartext comparison run.
    #[arg(long)]
    pub no_oracle: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SoftmaxArg {
    Exact,
    Approx,
}

#[derive(Args, Debug)]
pub struct TrainPlainArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long, value_enum, default_value_t = SoftmaxArg::Exact)]
    pub softmax: SoftmaxArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub keys: PathBuf,
    /// Private client directory written by `encrypt`.
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long, default_value_t = 86400)]
    pub timeout: u64,
}

#[derive(Args, Debug)]
pub struct DecryptModelArgs {
    #[arg(long)]
    pub keys: PathBuf,
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Labels to score predictions against.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Write predictions as a label file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    /// Directory for `features.btft` and `labels.btlb`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// Print the raw JSON instead of a summary.
    #[arg(long)]
    pub json: bool,
}
