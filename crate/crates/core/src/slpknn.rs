//! Soft-label prototype kNN and the two non-meta-trained baselines
//! (1-nearest-neighbour over the support set, nearest class centroid).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protogen::PrototypeModel;
use crate::vectorspace::{check_dims, dist, CentroidSet, EmbeddingVector};

/// Distances at or below this count as an exact hit on a prototype.
pub const ZERO_DISTANCE: f64 = 1e-12;

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: String,
    pub class_index: usize,
    /// Inverse-distance weighted sum of the neighbours' soft labels.
    pub scores: Vec<f64>,
    /// (prototype index, distance) of the neighbours used, nearest first.
    pub neighbors: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct SlpClassifier {
    model: PrototypeModel,
    k: usize,
}

impl SlpClassifier {
    pub fn new(model: PrototypeModel, k: usize) -> Result<Self> {
        let m = model.num_prototypes();
        if m == 0 {
            return Err(Error::usage("prototype model is empty"));
        }
        if k == 0 || k > m {
            return Err(Error::KExceedsPrototypes { k, m });
        }
        Ok(Self { model, k })
    }

    pub fn model(&self) -> &PrototypeModel {
        &self.model
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn classes(&self) -> &[String] {
        &self.model.classes
    }

    pub fn classify(&self, x: &[f64]) -> Result<Prediction> {
        let protos = &self.model.prototypes;
        check_dims(&protos[0].location, x)?;
        let mut order: Vec<(usize, f64)> = protos
            .iter()
            .enumerate()
            .map(|(i, p)| (i, dist(&p.location, x)))
            .collect();
        // stable sort keeps prototype index order on equal distances
        order.sort_by(|a, b| a.1.total_cmp(&b.1));
        let neighbors: Vec<(usize, f64)> = order.into_iter().take(self.k).collect();

        let n = self.model.num_classes();
        let (scores, class_index) = match neighbors.iter().find(|(_, d)| *d <= ZERO_DISTANCE) {
            Some(&(hit, _)) => {
                let label = protos[hit].soft_label.clone();
                let c = argmax(&label);
                (label, c)
            }
            None => {
                let mut scores = vec![0.0; n];
                for &(i, d) in &neighbors {
                    for (s, y) in scores.iter_mut().zip(&protos[i].soft_label) {
                        *s += y / d;
                    }
                }
                let c = argmax(&scores);
                (scores, c)
            }
        };
        Ok(Prediction {
            class: self.model.classes[class_index].clone(),
            class_index,
            scores,
            neighbors,
        })
    }
}

pub fn classify_slp(clf: &SlpClassifier, x: &[f64]) -> Result<Prediction> {
    clf.classify(x)
}

/// Label of the nearest support instance; equal distances go to the
/// lexicographically smaller instance id.
pub fn classify_1nn<'a>(support: &'a [EmbeddingVector], x: &[f64]) -> Result<&'a str> {
    let first = support
        .first()
        .ok_or_else(|| Error::usage("1-NN needs a non-empty support set"))?;
    check_dims(&first.values, x)?;
    let mut best = (first, dist(&first.values, x));
    for v in &support[1..] {
        check_dims(&v.values, x)?;
        let d = dist(&v.values, x);
        if d < best.1 || (d == best.1 && v.id < best.0.id) {
            best = (v, d);
        }
    }
    Ok(best.0.label.as_str())
}

/// Class of the nearest centroid; ties go to the earlier class in
/// lexicographic order.
pub fn classify_centroid<'a>(centroids: &'a CentroidSet, x: &[f64]) -> Result<&'a str> {
    if centroids.is_empty() {
        return Err(Error::usage("nearest-centroid needs at least one class"));
    }
    check_dims(&centroids.centroids[0], x)?;
    let mut best = (0, dist(&centroids.centroids[0], x));
    for (i, c) in centroids.centroids.iter().enumerate().skip(1) {
        let d = dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(centroids.classes[best.0].as_str())
}
