use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use slproto::dataio::DataFormat;
use slproto::linefit::{LineAlgorithm, DEFAULT_BRUTE_FORCE_BUDGET, DEFAULT_EPSILON};
use slproto::protogen::FitConfig;
use slproto::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "slproto", version, about = "Soft-label prototypes for few-shot classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a prototype model on a dataset (or a sampled support set).
    Fit(FitArgs),
    /// Evaluate classifiers over episodes and write JSON and CSV reports.
    Eval(EvalArgs),
    /// Print a model's prototypes and export bar-chart CSV.
    Inspect(InspectArgs),
    /// Generate a synthetic Gaussian dataset.
    Synth(SynthArgs),
}

/// `--lines` value: a positive count or `auto` (n − 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum Lines {
    Count(usize),
    #[serde(deserialize_with = "auto")]
    Auto,
}

fn auto<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<(), D::Error> {
    let s = String::deserialize(d)?;
    if s == "auto" {
        Ok(())
    } else {
        Err(serde::de::Error::custom(format!("expected \"auto\" or a count, got {s:?}")))
    }
}

impl FromStr for Lines {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Lines::Auto);
        }
        s.parse()
            .map(Lines::Count)
            .map_err(|_| format!("expected a count or \"auto\", got {s:?}"))
    }
}

/// Line-search and prototype flags shared by `fit` and `eval`. Every field
/// is optional so the config file can fill the gaps.
#[derive(Debug, Clone, Default, Args)]
pub struct FitFlags {
    /// Line budget l, or `auto` for n − 1.
    #[arg(long)]
    pub lines: Option<Lines>,
    /// Tolerance ε for a centroid to count as on a line [default: 0.1].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Line search: brute or recursive [default: recursive].
    #[arg(long)]
    pub algo: Option<String>,
    /// Subset-evaluation cap for brute-force search [default: 10000000].
    #[arg(long)]
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataFlags {
    /// Embedding dataset (JSONL or SLPB binary).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset format; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    /// JSON config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Support instances per class.
    #[arg(long)]
    pub shots: Option<usize>,
    /// Seed for episode sampling [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Where to write the model JSON.
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Episode file, or `sample:N,SEED` to sample N episodes.
    #[arg(long)]
    pub episodes: Option<String>,
    /// Comma-separated list of slp, 1nn, centroid [default: slp].
    #[arg(long)]
    pub classifiers: Option<String>,
    /// Neighbours for SLP [default: 1].
    #[arg(long)]
    pub k: Option<usize>,
    /// Report JSON path.
    #[arg(long, default_value = "report.json")]
    pub out_json: PathBuf,
    /// Report CSV path.
    #[arg(long, default_value = "report.csv")]
    pub out_csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Model JSON written by `fit`.
    pub model: PathBuf,
    /// Write (prototype, class, probability) rows here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Print the dump as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON spec: {"classes": [{"label", "mean", "sigma", "count"}]}.
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// Built-in spec: `three-collinear` (means (0,0), (1,0), (2,0)).
    #[arg(long)]
    pub preset: Option<String>,
    /// Noise for the preset.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    /// Instances per class for the preset.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Output format; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
}

/// Config file contents. Keys mirror the long flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub format: Option<String>,
    pub shots: Option<usize>,
    pub seed: Option<u64>,
    pub lines: Option<Lines>,
    pub epsilon: Option<f64>,
    pub algo: Option<String>,
    pub budget: Option<u64>,
    pub episodes: Option<String>,
    pub classifiers: Option<Vec<String>>,
    pub k: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&PathBuf>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Dataset location, sampling and fitting settings after layering.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub data: PathBuf,
    pub format: DataFormat,
    pub shots: Option<usize>,
    pub seed: u64,
    pub fit: FitConfig,
}

pub fn resolve(data: &DataFlags, fit: &FitFlags, file: &FileConfig) -> Result<Resolved> {
    let path = data
        .data
        .clone()
        .or_else(|| file.data.clone())
        .ok_or_else(|| Error::Usage("--data is required".into()))?;
    let format = match data.format.as_ref().or(file.format.as_ref()) {
        Some(f) => f.parse()?,
        None => DataFormat::from_path(&path),
    };
    let algorithm: LineAlgorithm = match fit.algo.as_ref().or(file.algo.as_ref()) {
        Some(a) => a.parse()?,
        None => LineAlgorithm::RecursiveRegression,
    };
    let lines = fit.lines.or(file.lines).unwrap_or(Lines::Auto);
    let config = FitConfig {
        algorithm,
        max_lines: match lines {
            Lines::Auto => None,
            Lines::Count(n) => Some(n),
        },
        epsilon: fit.epsilon.or(file.epsilon).unwrap_or(DEFAULT_EPSILON),
        budget: fit.budget.or(file.budget).unwrap_or(DEFAULT_BRUTE_FORCE_BUDGET),
        ..FitConfig::default()
    };
    config.validate()?;
    let shots = data.shots.or(file.shots);
    if shots == Some(0) {
        return Err(Error::Usage("--shots must be at least 1".into()));
    }
    Ok(Resolved {
        data: path,
        format,
        shots,
        seed: data.seed.or(file.seed).unwrap_or(0),
        fit: config,
    })
}
