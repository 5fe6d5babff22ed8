//! Dense vector primitives shared by the rest of the crate: Euclidean
//! distance, per-class centroids and line geometry (including the total
//! least squares line fit used to group centroids).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One embedded instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub id: String,
    pub label: String,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(id: impl Into<String>, label: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub(crate) fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// Euclidean distance without the dimension check. Callers guarantee equal
/// lengths.
#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a, b)?;
    Ok(dist(a, b))
}

/// Per-class means of a support set, in lexicographic class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    pub classes: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl CentroidSet {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.classes
            .binary_search_by(|c| c.as_str().cmp(class))
            .ok()
    }

    pub fn centroid(&self, class: &str) -> Option<&[f64]> {
        self.index_of(class).map(|i| self.centroids[i].as_slice())
    }

    /// Builds a centroid set from explicit points, one per class. Handy when
    /// the centroids are already known (tests, synthetic geometry).
    pub fn from_points<S: Into<String>>(points: impl IntoIterator<Item = (S, Vec<f64>)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (class, p) in points {
            let class = class.into();
            if map.insert(class.clone(), p).is_some() {
                return Err(Error::usage(format!("duplicate class {class}")));
            }
        }
        if map.is_empty() {
            return Err(Error::usage("no centroids given"));
        }
        let dim = map.values().next().map_or(0, Vec::len);
        for p in map.values() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
        }
        let n = map.len();
        let (classes, centroids) = map.into_iter().unzip();
        Ok(Self {
            classes,
            centroids,
            counts: vec![1; n],
        })
    }
}

pub fn compute_centroids(support: &[EmbeddingVector]) -> Result<CentroidSet> {
    let first = support
        .first()
        .ok_or_else(|| Error::usage("cannot compute centroids of an empty support set"))?;
    let dim = first.dim();
    if dim == 0 {
        return Err(Error::usage("embedding dimension must be at least 1"));
    }
    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for v in support {
        check_dims(&first.values, &v.values)?;
        let entry = sums
            .entry(v.label.as_str())
            .or_insert_with(|| (vec![0.0; dim], 0));
        for (s, x) in entry.0.iter_mut().zip(&v.values) {
            *s += x;
        }
        entry.1 += 1;
    }
    let mut out = CentroidSet {
        classes: Vec::with_capacity(sums.len()),
        centroids: Vec::with_capacity(sums.len()),
        counts: Vec::with_capacity(sums.len()),
    };
    for (label, (mut sum, count)) in sums {
        let c = count as f64;
        sum.iter_mut().for_each(|s| *s /= c);
        out.classes.push(label.to_string());
        out.centroids.push(sum);
        out.counts.push(count);
    }
    Ok(out)
}

/// A line through a group of class centroids.
///
/// `member_offsets[i]` is the signed projection of the centroid of
/// `member_classes[i]` onto `direction`, measured from `anchor`. Members are
/// kept in ascending offset order (ties by class-id) and `endpoints` are the
/// points at the smallest and largest offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub anchor: Vec<f64>,
    pub direction: Vec<f64>,
    pub member_classes: Vec<String>,
    pub member_offsets: Vec<f64>,
    pub endpoints: (Vec<f64>, Vec<f64>),
}

impl Line {
    /// Builds a line through `anchor` along `direction` (normalized here) and
    /// projects the given member points onto it.
    pub fn through(
        anchor: Vec<f64>,
        direction: Vec<f64>,
        members: &[(&str, &[f64])],
    ) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::usage(format!(
                "a line needs at least 2 member classes, got {}",
                members.len()
            )));
        }
        check_dims(&anchor, &direction)?;
        let n = norm(&direction);
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::DegenerateLine(members.len()));
        }
        let direction: Vec<f64> = direction.iter().map(|d| d / n).collect();
        let mut projected = Vec::with_capacity(members.len());
        for &(class, p) in members {
            check_dims(&anchor, p)?;
            projected.push((class.to_string(), projection(p, &anchor, &direction)));
        }
        projected.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        let (member_classes, member_offsets): (Vec<_>, Vec<_>) = projected.into_iter().unzip();
        let mut line = Self {
            anchor,
            direction,
            member_classes,
            member_offsets,
            endpoints: (Vec::new(), Vec::new()),
        };
        line.refresh_endpoints();
        Ok(line)
    }

    fn refresh_endpoints(&mut self) {
        let lo = self.member_offsets[0];
        let hi = self.member_offsets[self.member_offsets.len() - 1];
        self.endpoints = (self.point_at(lo), self.point_at(hi));
    }

    pub fn point_at(&self, offset: f64) -> Vec<f64> {
        self.anchor
            .iter()
            .zip(&self.direction)
            .map(|(a, d)| a + offset * d)
            .collect()
    }

    /// Distance between the two endpoints.
    pub fn length(&self) -> f64 {
        self.member_offsets[self.member_offsets.len() - 1] - self.member_offsets[0]
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// Reverses the orientation; members and endpoints are re-sorted to stay
    /// ascending.
    pub fn reverse(&mut self) {
        self.direction.iter_mut().for_each(|d| *d = -*d);
        let mut pairs: Vec<(String, f64)> = self
            .member_classes
            .drain(..)
            .zip(self.member_offsets.drain(..))
            .map(|(c, o)| (c, -o))
            .collect();
        pairs.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        for (c, o) in pairs {
            self.member_classes.push(c);
            self.member_offsets.push(o);
        }
        self.refresh_endpoints();
    }
}

#[inline]
fn projection(p: &[f64], anchor: &[f64], direction: &[f64]) -> f64 {
    p.iter()
        .zip(anchor)
        .zip(direction)
        .map(|((x, a), d)| (x - a) * d)
        .sum()
}

/// Perpendicular distance from `p` to the infinite line through `anchor`
/// with unit `direction`.
pub(crate) fn perp_distance(p: &[f64], anchor: &[f64], direction: &[f64]) -> f64 {
    let t = projection(p, anchor, direction);
    p.iter()
        .zip(anchor)
        .zip(direction)
        .map(|((x, a), d)| {
            let r = x - a - t * d;
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

pub fn point_line_distance(p: &[f64], line: &Line) -> Result<f64> {
    check_dims(&line.anchor, p)?;
    Ok(perp_distance(p, &line.anchor, &line.direction))
}

/// Result of a total least squares fit: the mean of the points, the unit
/// first principal axis and the perpendicular residual of every input point.
#[derive(Debug, Clone, PartialEq)]
pub struct TlsFit {
    pub anchor: Vec<f64>,
    pub direction: Vec<f64>,
    pub offsets: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

impl TlsFit {
    /// Attaches class ids (in input order) and returns the fitted line.
    pub fn into_line(self, classes: &[&str], points: &[&[f64]]) -> Result<Line> {
        let members: Vec<(&str, &[f64])> = classes.iter().copied().zip(points.iter().copied()).collect();
        Line::through(self.anchor, self.direction, &members)
    }
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 1000;
// Below this size the matrix is squared a few times before iterating, which
// raises the eigenvalue ratio to the 16th power without changing eigenvectors.
const SQUARING_MAX_DIM: usize = 64;
const SQUARINGS: usize = 4;

pub fn fit_line_tls(points: &[&[f64]]) -> Result<TlsFit> {
    let m = points.len();
    if m < 2 {
        return Err(Error::usage(format!(
            "line fit needs at least 2 points, got {m}"
        )));
    }
    let dim = points[0].len();
    for p in points {
        check_dims(points[0], p)?;
    }
    let mut anchor = vec![0.0; dim];
    for p in points {
        for (a, x) in anchor.iter_mut().zip(p.iter()) {
            *a += x;
        }
    }
    anchor.iter_mut().for_each(|a| *a /= m as f64);
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&anchor).map(|(x, a)| x - a).collect())
        .collect();

    let scale = points
        .iter()
        .flat_map(|p| p.iter())
        .fold(1.0f64, |acc, x| acc.max(x.abs()));
    let spread = centered.iter().map(|c| norm(c)).fold(0.0, f64::max);
    if spread <= 1e-12 * scale {
        return Err(Error::DegenerateLine(m));
    }

    let mut direction = if m < dim {
        // Gram route: top eigenvector u of X Xᵀ maps to Xᵀu.
        let gram: Vec<Vec<f64>> = centered
            .iter()
            .map(|a| centered.iter().map(|b| dot(a, b)).collect())
            .collect();
        let u = dominant_eigenvector(gram);
        let mut d = vec![0.0; dim];
        for (ui, row) in u.iter().zip(&centered) {
            for (dj, x) in d.iter_mut().zip(row) {
                *dj += ui * x;
            }
        }
        d
    } else {
        let mut scatter = vec![vec![0.0; dim]; dim];
        for row in &centered {
            for i in 0..dim {
                for j in 0..dim {
                    scatter[i][j] += row[i] * row[j];
                }
            }
        }
        dominant_eigenvector(scatter)
    };
    let n = norm(&direction);
    if n.is_nan() || n <= 0.0 {
        return Err(Error::DegenerateLine(m));
    }
    direction.iter_mut().for_each(|d| *d /= n);
    canonicalize_sign(&mut direction);

    let offsets: Vec<f64> = points.iter().map(|p| projection(p, &anchor, &direction)).collect();
    let residuals: Vec<f64> = points
        .iter()
        .map(|p| perp_distance(p, &anchor, &direction))
        .collect();
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(TlsFit {
        anchor,
        direction,
        offsets,
        residuals,
        max_residual,
    })
}

/// Flips `v` so its first component that is clearly nonzero is positive.
pub(crate) fn canonicalize_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-9) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| dot(row, v)).collect()
}

fn mat_square(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = a.len();
    let mut out = vec![vec![0.0; k]; k];
    for (row, out_row) in a.iter().zip(out.iter_mut()) {
        for (&ail, a_l) in row.iter().zip(a) {
            if ail == 0.0 {
                continue;
            }
            for (o, x) in out_row.iter_mut().zip(a_l) {
                *o += ail * x;
            }
        }
    }
    let peak = out
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, x| acc.max(x.abs()));
    if peak > 0.0 {
        out.iter_mut()
            .flat_map(|r| r.iter_mut())
            .for_each(|x| *x /= peak);
    }
    out
}

/// Power iteration for the dominant eigenvector of a symmetric PSD matrix.
/// Starts from the column with the largest diagonal entry.
fn dominant_eigenvector(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let k = a.len();
    let start = (0..k)
        .max_by(|&i, &j| a[i][i].total_cmp(&a[j][j]).then(j.cmp(&i)))
        .unwrap_or(0);
    let mut v: Vec<f64> = a.iter().map(|row| row[start]).collect();
    if k <= SQUARING_MAX_DIM {
        for _ in 0..SQUARINGS {
            a = mat_square(&a);
        }
    }
    let n = norm(&v);
    if n == 0.0 {
        return v;
    }
    v.iter_mut().for_each(|x| *x /= n);
    for _ in 0..POWER_MAX_ITER {
        let mut next = mat_vec(&a, &v);
        let n = norm(&next);
        if n == 0.0 {
            break;
        }
        next.iter_mut().for_each(|x| *x /= n);
        let delta = dist(&next, &v);
        v = next;
        if delta < POWER_TOL {
            break;
        }
    }
    v
}
