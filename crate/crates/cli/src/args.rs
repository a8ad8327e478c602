use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcmatch::data::Scenario;
use dcmatch::eval::Metric;
use dcmatch::learn::ParamId;
use dcmatch::matching::ShotAggregation;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "dcmatch", version, about = "Alpha-distance-correlation few-shot video matching")]
pub struct Cli {
    /// Worker threads for episode evaluation (0: one per core).
    #[arg(long, global = true, env = "DCM_JOBS", default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Squared alpha-distance correlation of two observation CSV files.
    Dcorr(DcorrArgs),
    /// Generate a synthetic feature bundle.
    Synth(SynthArgs),
    /// Evaluate one metric on N-way K-shot episodes.
    Eval(EvalArgs),
    /// Train the matching model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate several metrics over several alphas.
    Compare(CompareArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DcorrArgs {
    pub x: PathBuf,
    pub y: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioArg {
    A,
    B,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::A => Scenario::A,
            ScenarioArg::B => Scenario::B,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub novel_classes: Option<usize>,
    #[arg(long)]
    pub videos_per_class: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub distractor_rows: Option<usize>,
    #[arg(long)]
    pub distractor_scale: Option<f64>,
    #[arg(long)]
    pub teacher_fidelity: Option<f64>,
    #[arg(long)]
    pub text_dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationArg {
    #[default]
    MeanScore,
    MeanFeatures,
}

impl From<AggregationArg> for ShotAggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::MeanScore => ShotAggregation::MeanScore,
            AggregationArg::MeanFeatures => ShotAggregation::MeanFeatures,
        }
    }
}

/// Episode shape and frame options shared by the evaluating commands.
#[derive(Debug, Args, Serialize)]
pub struct EpisodeArgs {
    #[arg(long, default_value_t = 5)]
    pub way: usize,
    #[arg(long, default_value_t = 1)]
    pub shot: usize,
    /// Queries per class.
    #[arg(long, default_value_t = 1)]
    pub queries: usize,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leave the class token out of the channel observations.
    #[arg(long)]
    pub exclude_class_token: bool,
    #[arg(long, value_enum, default_value_t)]
    pub aggregation: AggregationArg,
    /// Evaluate on every class instead of the bundle's novel split.
    #[arg(long)]
    pub all_classes: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, value_parser = parse_metric)]
    pub metric: Metric,
    #[command(flatten)]
    #[serde(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long, default_value_t = 0.8)]
    pub alpha: f64,
    /// Trained parameters; required by tsdcm, optional gate for ifdc.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory for report.json and episodes.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.8,1.2,1.6")]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_metric, default_value = "ifdc,cosine,gap,bimhm")]
    pub metrics: Vec<Metric>,
    #[command(flatten)]
    #[serde(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct LossArgs {
    #[arg(long, default_value_t = 0.8)]
    pub alpha: f64,
    #[arg(long)]
    pub exclude_class_token: bool,
    #[arg(long, value_enum, default_value_t)]
    pub aggregation: AggregationArg,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub match_temperature: f64,
    #[arg(long, default_value_t = 1.0)]
    pub glac_temperature: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lsn_temperature: f64,
    /// Drop the text-alignment term.
    #[arg(long)]
    pub no_lsn: bool,
    /// Drop the cross-entropy half of the distillation term.
    #[arg(long)]
    pub no_glac_ce: bool,
    /// Tensors excluded from training, e.g. gate,bank.
    #[arg(long, value_delimiter = ',', value_parser = parse_param)]
    pub freeze: Vec<ParamId>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Checkpoint path; the loss curve and report are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub way: usize,
    #[arg(long, default_value_t = 1)]
    pub shot: usize,
    #[arg(long, default_value_t = 1)]
    pub queries: usize,
    #[arg(long, default_value_t = 2000)]
    pub episodes: usize,
    /// Episodes averaged per optimizer step.
    #[arg(long, default_value_t = 1)]
    pub accumulate: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub weight_decay: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub loss: LossArgs,
    /// Summary dimension when the bundle has no text embeddings.
    #[arg(long, default_value_t = 16)]
    pub proto_dim: usize,
    /// Start prototypes from small random matrices instead of class means.
    #[arg(long)]
    pub random_bank: bool,
    #[arg(long, default_value_t = 500)]
    pub eval_interval: usize,
    #[arg(long, default_value_t = 500)]
    pub eval_episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub episodes: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    /// Coordinates checked per tensor and episode.
    #[arg(long, default_value_t = dcmatch::learn::gradcheck::MIN_COORDINATES)]
    pub samples: usize,
    #[arg(long, default_value_t = 5)]
    pub way: usize,
    #[arg(long, default_value_t = 1)]
    pub shot: usize,
    #[arg(long, default_value_t = 1)]
    pub queries: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub loss: LossArgs,
    /// Parameters to check at; a seeded initialization otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: dcmatch::Error| e.to_string())
}

fn parse_param(s: &str) -> Result<ParamId, String> {
    ParamId::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = ParamId::ALL.iter().map(|p| p.name()).collect();
        format!("unknown tensor {s:?} (expected one of {})", names.join(", "))
    })
}
