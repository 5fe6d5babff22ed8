//! Episodic evaluation: fit each classifier on an episode's support set,
//! score it on the query set, and aggregate accuracy over episodes.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{EmbeddingDataset, Episode};
use crate::error::{Error, ErrorKind, Result};
use crate::protogen::{fit_prototypes, FitConfig};
use crate::slpknn::{classify_1nn, classify_centroid, SlpClassifier};
use crate::vectorspace::compute_centroids;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "classifier", rename_all = "snake_case")]
pub enum ClassifierConfig {
    Slp { k: usize, fit: FitConfig },
    #[serde(rename = "1nn")]
    OneNn,
    Centroid,
}

impl ClassifierConfig {
    pub fn slp(k: usize) -> Self {
        ClassifierConfig::Slp {
            k,
            fit: FitConfig::default(),
        }
    }

    /// Short name used in reports: `slp`, `1nn` or `centroid`.
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierConfig::Slp { .. } => "slp",
            ClassifierConfig::OneNn => "1nn",
            ClassifierConfig::Centroid => "centroid",
        }
    }
}

impl fmt::Display for ClassifierConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierConfig::Slp { k, fit } => write!(
                f,
                "slp(k={k}, algo={}, epsilon={}, lines={})",
                fit.algorithm,
                fit.epsilon,
                fit.max_lines.map_or("auto".to_string(), |l| l.to_string())
            ),
            other => f.write_str(other.name()),
        }
    }
}

/// Wall-clock milliseconds of the three training operations. Encode-load
/// covers resolving the episode's embeddings from the dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub encode_load_ms: f64,
    pub line_construction_ms: f64,
    pub prototype_generation_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub timings: PhaseTimings,
    /// Prototypes the classifier keeps: M for SLP, N for centroids, the
    /// support size for 1-NN.
    pub num_prototypes: usize,
    pub num_classes: usize,
}

type Predictor = Box<dyn Fn(&[f64]) -> Result<String>>;

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Fits `config` on the episode's support and scores it on its query.
pub fn run_episode(
    dataset: &EmbeddingDataset,
    episode: &Episode,
    config: &ClassifierConfig,
) -> Result<EpisodeResult> {
    let started = Instant::now();
    let support = dataset.select(&episode.support)?;
    let query = dataset.select(&episode.query)?;
    if support.is_empty() || query.is_empty() {
        return Err(Error::usage(format!(
            "episode {:?} needs a non-empty support and query",
            episode.task
        )));
    }
    let mut timings = PhaseTimings {
        encode_load_ms: ms_since(started),
        ..PhaseTimings::default()
    };

    let predict: Predictor;
    let num_prototypes;
    let num_classes;
    match config {
        ClassifierConfig::Slp { k, fit } => {
            let t = Instant::now();
            let centroids = compute_centroids(&support)?;
            let centroid_ms = ms_since(t);
            let model = fit_prototypes(&centroids, fit)?;
            timings.line_construction_ms = centroid_ms + model.timings.line_construction_ms;
            timings.prototype_generation_ms = model.timings.prototype_generation_ms;
            num_prototypes = model.num_prototypes();
            num_classes = model.num_classes();
            let clf = SlpClassifier::new(model, *k)?;
            predict = Box::new(move |x| Ok(clf.classify(x)?.class));
        }
        ClassifierConfig::OneNn => {
            num_prototypes = support.len();
            num_classes = compute_centroids(&support)?.len();
            predict = Box::new(move |x| Ok(classify_1nn(&support, x)?.to_string()));
        }
        ClassifierConfig::Centroid => {
            let t = Instant::now();
            let centroids = compute_centroids(&support)?;
            timings.prototype_generation_ms = ms_since(t);
            num_prototypes = centroids.len();
            num_classes = centroids.len();
            predict = Box::new(move |x| Ok(classify_centroid(&centroids, x)?.to_string()));
        }
    }

    let mut correct = 0;
    for q in &query {
        if predict(&q.values)? == q.label {
            correct += 1;
        }
    }
    Ok(EpisodeResult {
        accuracy: correct as f64 / query.len() as f64,
        correct,
        total: query.len(),
        timings,
        num_prototypes,
        num_classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Position of the episode in the input list.
    pub episode: usize,
    pub result: EpisodeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFailure {
    pub episode: usize,
    pub kind: ErrorKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub shots: usize,
    pub classifier: String,
    pub hyperparameters: ClassifierConfig,
    /// Accuracies of the successful episodes, in episode order.
    pub accuracies: Vec<f64>,
    /// Absent when every episode failed.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub episodes: Vec<EpisodeRecord>,
    pub failures: Vec<EpisodeFailure>,
}

impl EvalReport {
    /// Per-phase timings averaged over the successful episodes.
    pub fn mean_timings(&self) -> PhaseTimings {
        let n = self.episodes.len().max(1) as f64;
        let mut t = PhaseTimings::default();
        for e in &self.episodes {
            t.encode_load_ms += e.result.timings.encode_load_ms / n;
            t.line_construction_ms += e.result.timings.line_construction_ms / n;
            t.prototype_generation_ms += e.result.timings.prototype_generation_ms / n;
        }
        t
    }
}

/// Arithmetic mean and sample standard deviation (divisor E−1, 0 for a
/// single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    // corrected two-pass: the second term cancels the rounding of `mean`,
    // so identical values give exactly 0
    let dev: f64 = values.iter().map(|v| v - mean).sum();
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() - dev * dev / n;
    Some((mean, (ss.max(0.0) / (n - 1.0)).sqrt()))
}

/// Runs every configuration on every episode, one report per configuration
/// and (task, shots) group. All configurations see the same episodes.
/// Episodes run in parallel; results are assembled in input order.
pub fn run_task(
    dataset: &EmbeddingDataset,
    episodes: &[Episode],
    configs: &[ClassifierConfig],
) -> Result<Vec<EvalReport>> {
    if episodes.is_empty() {
        return Err(Error::usage("no episodes to run"));
    }
    if configs.is_empty() {
        return Err(Error::usage("no classifiers to run"));
    }
    // (task, shots) groups in order of first appearance
    let mut groups: Vec<(&str, usize, Vec<usize>)> = Vec::new();
    for (i, e) in episodes.iter().enumerate() {
        match groups.iter_mut().find(|g| g.0 == e.task && g.1 == e.shots) {
            Some(g) => g.2.push(i),
            None => groups.push((&e.task, e.shots, vec![i])),
        }
    }

    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..episodes.len()).map(move |e| (c, e)))
        .collect();
    let outcomes: Vec<Result<EpisodeResult>> = jobs
        .par_iter()
        .map(|&(c, e)| {
            episodes[e]
                .validate(dataset)
                .and_then(|_| run_episode(dataset, &episodes[e], &configs[c]))
        })
        .collect();

    let mut reports = Vec::new();
    for (c, config) in configs.iter().enumerate() {
        for (task, shots, members) in &groups {
            let mut records = Vec::new();
            let mut failures = Vec::new();
            for &e in members {
                match &outcomes[c * episodes.len() + e] {
                    Ok(r) => records.push(EpisodeRecord {
                        episode: e,
                        result: r.clone(),
                    }),
                    Err(err) => failures.push(EpisodeFailure {
                        episode: e,
                        kind: err.kind(),
                        reason: err.to_string(),
                    }),
                }
            }
            let accuracies: Vec<f64> = records.iter().map(|r| r.result.accuracy).collect();
            let stats = mean_std(&accuracies);
            reports.push(EvalReport {
                task: task.to_string(),
                shots: *shots,
                classifier: config.to_string(),
                hyperparameters: config.clone(),
                accuracies,
                mean: stats.map(|s| s.0),
                std: stats.map(|s| s.1),
                episodes: records,
                failures,
            });
        }
    }
    Ok(reports)
}

pub fn write_reports_json<W: Write>(reports: &[EvalReport], w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, reports)?;
    Ok(())
}

/// Column names of the CSV summary; the timing columns are per-episode
/// means over successful episodes.
pub const CSV_HEADER: [&str; 12] = [
    "task",
    "shots",
    "classifier",
    "episodes",
    "failed",
    "mean",
    "std",
    "accuracies",
    "mean_prototypes",
    "encode_load_ms",
    "line_construction_ms",
    "prototype_generation_ms",
];

/// One row per classifier × task × shots.
pub fn write_reports_csv<W: Write>(reports: &[EvalReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    out.write_record(CSV_HEADER).map_err(csv_err)?;
    let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in reports {
        let t = r.mean_timings();
        let protos = if r.episodes.is_empty() {
            None
        } else {
            Some(r.episodes.iter().map(|e| e.result.num_prototypes as f64).sum::<f64>() / r.episodes.len() as f64)
        };
        let accs: Vec<String> = r.accuracies.iter().map(|a| a.to_string()).collect();
        out.write_record([
            r.task.clone(),
            r.shots.to_string(),
            r.classifier.clone(),
            (r.episodes.len() + r.failures.len()).to_string(),
            r.failures.len().to_string(),
            fmt_opt(r.mean),
            fmt_opt(r.std),
            accs.join(";"),
            fmt_opt(protos),
            t.encode_load_ms.to_string(),
            t.line_construction_ms.to_string(),
            t.prototype_generation_ms.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
