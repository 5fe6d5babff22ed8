//! Soft-label prototypes at line endpoints.
//!
//! Every line through a group of centroids is cut into per-class intervals
//! at the midpoints between consecutive centroid projections. Two prototypes
//! sit at the ends of the line and their soft labels are chosen by a linear
//! program: at every sample point of a class's interval, that class's
//! inverse-distance influence must be the largest, and its excess over the
//! summed influence of all other classes must reach a margin that the
//! program maximizes.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linefit::{self, LineAlgorithm, LineSet};
use crate::lpsolve::{solve_lp, LinearProgram, LpStatus, Relation};
use crate::vectorspace::{CentroidSet, Line};

pub const MODEL_SCHEMA_VERSION: u32 = 1;
// solver round-off below this is dropped from soft labels
const LABEL_FLOOR: f64 = 1e-12;

/// Where a prototype came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrototypeOrigin {
    LineStart { line: usize },
    LineEnd { line: usize },
    /// One-hot prototype at a class centroid.
    Hard { class: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelPrototype {
    pub location: Vec<f64>,
    /// Distribution over the model's global class order.
    pub soft_label: Vec<f64>,
    pub origin: PrototypeOrigin,
}

impl SoftLabelPrototype {
    pub fn hard(location: Vec<f64>, class_index: usize, classes: &[String]) -> Self {
        let mut soft_label = vec![0.0; classes.len()];
        soft_label[class_index] = 1.0;
        Self {
            location,
            soft_label,
            origin: PrototypeOrigin::Hard {
                class: classes[class_index].clone(),
            },
        }
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        crate::slpknn::argmax(&self.soft_label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInterval {
    pub class: String,
    /// Centroid projection, measured from the start of the line.
    pub position: f64,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalLayout {
    pub line: usize,
    pub length: f64,
    pub intervals: Vec<ClassInterval>,
}

pub fn build_intervals(line: &Line, line_index: usize) -> Result<IntervalLayout> {
    let n = line.member_offsets.len();
    if n < 2 {
        return Err(Error::usage(format!(
            "line {line_index} has {n} member classes, needs at least 2"
        )));
    }
    let base = line.member_offsets[0];
    let pos: Vec<f64> = line.member_offsets.iter().map(|o| o - base).collect();
    let length = pos[n - 1];
    let min_gap = 1e-12 * length.abs().max(f64::MIN_POSITIVE);
    for i in 1..n {
        if (pos[i] - pos[i - 1]).is_nan() || pos[i] - pos[i - 1] <= min_gap {
            return Err(Error::DegenerateInterval(
                line.member_classes[i - 1].clone(),
                line.member_classes[i].clone(),
            ));
        }
    }
    let intervals = (0..n)
        .map(|i| ClassInterval {
            class: line.member_classes[i].clone(),
            position: pos[i],
            start: if i == 0 { 0.0 } else { 0.5 * (pos[i - 1] + pos[i]) },
            end: if i + 1 == n { length } else { 0.5 * (pos[i] + pos[i + 1]) },
        })
        .collect();
    Ok(IntervalLayout {
        line: line_index,
        length,
        intervals,
    })
}

/// Inverse-distance influence of two endpoint soft labels at arc-length `t`
/// on a line of length `length`.
pub fn influence(y1: &[f64], y2: &[f64], t: f64, length: f64) -> Result<Vec<f64>> {
    crate::vectorspace::check_dims(y1, y2)?;
    if !(t > 0.0 && t < length) {
        return Err(Error::usage(format!(
            "influence needs 0 < t < L, got t={t}, L={length}"
        )));
    }
    let (a, b) = (1.0 / t, 1.0 / (length - t));
    Ok(y1.iter().zip(y2).map(|(p, q)| p * a + q * b).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtoConfig {
    /// Relative positions inside each interval where the margin is enforced.
    pub sample_fractions: Vec<f64>,
    /// Sample points closer than `clamp * L` to an endpoint are moved inward.
    pub clamp: f64,
}

impl Default for ProtoConfig {
    fn default() -> Self {
        Self {
            sample_fractions: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            clamp: 1e-3,
        }
    }
}

/// Sample points as (interval index, arc-length position).
pub fn sample_points(layout: &IntervalLayout, config: &ProtoConfig) -> Vec<(usize, f64)> {
    let l = layout.length;
    let (lo, hi) = (config.clamp * l, l - config.clamp * l);
    layout
        .intervals
        .iter()
        .enumerate()
        .flat_map(|(i, iv)| {
            config
                .sample_fractions
                .iter()
                .map(move |f| (i, (iv.start + f * (iv.end - iv.start)).clamp(lo, hi)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinePrototypes {
    pub line: usize,
    pub start: SoftLabelPrototype,
    pub end: SoftLabelPrototype,
    /// Optimal worst-case margin, in influence units of the original space.
    pub margin: f64,
}

/// Solves the margin LP for one line. `classes` is the global class order
/// the soft labels are expressed in.
pub fn generate_line_prototypes(
    line: &Line,
    layout: &IntervalLayout,
    classes: &[String],
    config: &ProtoConfig,
) -> Result<LinePrototypes> {
    let k = layout.intervals.len();
    let len = layout.length;
    let fail = |reason: String| Error::PrototypeGeneration {
        line: layout.line,
        reason,
    };
    let global: Vec<usize> = layout
        .intervals
        .iter()
        .map(|iv| {
            classes
                .binary_search(&iv.class)
                .map_err(|_| fail(format!("class {} is not in the model", iv.class)))
        })
        .collect::<Result<_>>()?;

    // Variables: Y1[0..k], Y2[0..k], margin. Positions are normalized by the
    // line length so the program does not depend on scale.
    let nvar = 2 * k + 1;
    let mut objective = vec![0.0; nvar];
    objective[2 * k] = 1.0;
    let mut lp = LinearProgram::maximize(objective);
    lp.set_bounds(2 * k, f64::NEG_INFINITY, f64::INFINITY);
    let mut sum1 = vec![0.0; nvar];
    sum1[..k].iter_mut().for_each(|x| *x = 1.0);
    let mut sum2 = vec![0.0; nvar];
    sum2[k..2 * k].iter_mut().for_each(|x| *x = 1.0);
    lp.constrain(sum1, Relation::Eq, 1.0).constrain(sum2, Relation::Eq, 1.0);
    for (c, t) in sample_points(layout, config) {
        let u = t / len;
        let (w1, w2) = (1.0 / u, 1.0 / (1.0 - u));
        let mut row = vec![0.0; nvar];
        for j in 0..k {
            let s = if j == c { 1.0 } else { -1.0 };
            row[j] = s * w1;
            row[k + j] = s * w2;
        }
        row[2 * k] = -1.0;
        lp.constrain(row, Relation::Ge, 0.0);
        // the interval's class must also beat every other class on its own
        for j in (0..k).filter(|&j| j != c) {
            let mut row = vec![0.0; nvar];
            row[c] = w1;
            row[k + c] = w2;
            row[j] = -w1;
            row[k + j] = -w2;
            lp.constrain(row, Relation::Ge, 0.0);
        }
    }

    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(fail("linear program is infeasible".into())),
        LpStatus::Unbounded => {
            return Err(Error::Internal(format!(
                "margin program for line {} is unbounded",
                layout.line
            )))
        }
    }
    let label = |vals: &[f64]| -> Vec<f64> {
        let clean: Vec<f64> = vals.iter().map(|&v| if v > LABEL_FLOOR { v } else { 0.0 }).collect();
        let total: f64 = clean.iter().sum();
        let mut out = vec![0.0; classes.len()];
        for (j, v) in clean.iter().enumerate() {
            out[global[j]] = v / total;
        }
        out
    };
    let y1 = label(&sol.values[..k]);
    let y2 = label(&sol.values[k..2 * k]);
    Ok(LinePrototypes {
        line: layout.line,
        start: SoftLabelPrototype {
            location: line.endpoints.0.clone(),
            soft_label: y1,
            origin: PrototypeOrigin::LineStart { line: layout.line },
        },
        end: SoftLabelPrototype {
            location: line.endpoints.1.clone(),
            soft_label: y2,
            origin: PrototypeOrigin::LineEnd { line: layout.line },
        },
        margin: sol.values[2 * k] / len,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub index: usize,
    pub member_classes: Vec<String>,
    pub assigned_classes: Vec<String>,
    pub length: f64,
    /// LP margin; absent when the line fell back to hard prototypes.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub algorithm: LineAlgorithm,
    /// Line budget; `None` means `n - 1`.
    pub max_lines: Option<usize>,
    pub epsilon: f64,
    pub budget: u64,
    #[serde(default)]
    pub proto: ProtoConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            algorithm: LineAlgorithm::RecursiveRegression,
            max_lines: None,
            epsilon: linefit::DEFAULT_EPSILON,
            budget: linefit::DEFAULT_BRUTE_FORCE_BUDGET,
            proto: ProtoConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::usage(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_lines == Some(0) {
            return Err(Error::usage("the line budget must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTimings {
    pub line_construction_ms: f64,
    pub prototype_generation_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeModel {
    pub schema_version: u32,
    pub classes: Vec<String>,
    pub prototypes: Vec<SoftLabelPrototype>,
    pub lines: Vec<LineRecord>,
    pub uncovered: Vec<String>,
    pub config: FitConfig,
    pub timings: FitTimings,
    pub warnings: Vec<String>,
}

impl PrototypeModel {
    pub fn num_prototypes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, |p| p.location.len())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Load {
                line: 1,
                message: "model has no schema_version".into(),
            })?;
        if found != u64::from(MODEL_SCHEMA_VERSION) {
            return Err(Error::SchemaVersion {
                found: found as u32,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Prototype pairs for every line, with hard prototypes for uncovered
/// classes and for lines whose program could not be solved.
pub fn generate_prototype_model(
    centroids: &CentroidSet,
    lineset: &LineSet,
    config: &FitConfig,
) -> Result<PrototypeModel> {
    let started = Instant::now();
    let classes = &centroids.classes;
    let hard = |class: &str| -> Result<SoftLabelPrototype> {
        let i = centroids
            .index_of(class)
            .ok_or_else(|| Error::Internal(format!("line set names unknown class {class}")))?;
        Ok(SoftLabelPrototype::hard(centroids.centroids[i].clone(), i, classes))
    };

    let per_line: Vec<Result<LinePrototypes>> = lineset
        .lines
        .par_iter()
        .enumerate()
        .map(|(i, line)| {
            let layout = build_intervals(line, i)?;
            generate_line_prototypes(line, &layout, classes, &config.proto)
        })
        .collect();

    let mut prototypes = Vec::new();
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, (line, outcome)) in lineset.lines.iter().zip(per_line).enumerate() {
        let assigned: Vec<String> = lineset.assigned_to(i).into_iter().map(String::from).collect();
        let margin = match outcome {
            Ok(pair) => {
                let m = pair.margin;
                prototypes.push(pair.start);
                prototypes.push(pair.end);
                Some(m)
            }
            Err(e @ Error::Internal(_)) => return Err(e),
            Err(e) => {
                warnings.push(format!("line {i}: {e}; using hard prototypes for its classes"));
                for class in &assigned {
                    prototypes.push(hard(class)?);
                }
                None
            }
        };
        records.push(LineRecord {
            index: i,
            member_classes: line.member_classes.clone(),
            assigned_classes: assigned,
            length: line.length(),
            margin,
        });
    }
    for class in &lineset.uncovered {
        prototypes.push(hard(class)?);
    }
    Ok(PrototypeModel {
        schema_version: MODEL_SCHEMA_VERSION,
        classes: classes.clone(),
        prototypes,
        lines: records,
        uncovered: lineset.uncovered.clone(),
        config: config.clone(),
        timings: FitTimings {
            line_construction_ms: 0.0,
            prototype_generation_ms: started.elapsed().as_secs_f64() * 1e3,
        },
        warnings,
    })
}

/// Line search followed by prototype generation, timing both phases.
pub fn fit_prototypes(centroids: &CentroidSet, config: &FitConfig) -> Result<PrototypeModel> {
    config.validate()?;
    if centroids.is_empty() {
        return Err(Error::usage("cannot fit prototypes without classes"));
    }
    let started = Instant::now();
    let lineset = if centroids.len() == 1 {
        LineSet {
            lines: Vec::new(),
            assignment: Default::default(),
            score: 0.0,
            uncovered: centroids.classes.clone(),
        }
    } else {
        let l = config
            .max_lines
            .unwrap_or_else(|| linefit::default_max_lines(centroids.len()));
        linefit::find_lines(centroids, config.algorithm, l, config.epsilon, config.budget)?
    };
    let line_ms = started.elapsed().as_secs_f64() * 1e3;
    let mut model = generate_prototype_model(centroids, &lineset, config)?;
    model.timings.line_construction_ms = line_ms;
    Ok(model)
}
