//! Covering class centroids with a small number of lines.
//!
//! Two strategies are provided. [`brute_force_lines`] scores every subset of
//! at most `l` lines drawn through centroid pairs and keeps the best one; it
//! is exact but exponential in `l`. [`recursive_regression_lines`] grows
//! clusters of centroids that fit a total least squares line within a
//! tolerance, ejecting members that drift away, and is what the rest of the
//! pipeline uses by default.
//!
//! A line may list, besides the classes assigned to it, one extra class that
//! is assigned elsewhere. This happens when a lone centroid is joined to its
//! nearest neighbour (or when two chosen brute-force lines share a defining
//! centroid), so every line always carries at least two classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vectorspace::{fit_line_tls, perp_distance, CentroidSet, Line};

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_BRUTE_FORCE_BUDGET: u64 = 10_000_000;
const MAX_EJECTION_ROUNDS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineAlgorithm {
    BruteForce,
    RecursiveRegression,
}

impl std::str::FromStr for LineAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brute" | "brute_force" => Ok(Self::BruteForce),
            "recursive" | "recursive_regression" => Ok(Self::RecursiveRegression),
            other => Err(Error::usage(format!(
                "unknown line algorithm {other:?} (expected brute or recursive)"
            ))),
        }
    }
}

impl std::fmt::Display for LineAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::BruteForce => "brute",
            Self::RecursiveRegression => "recursive",
        })
    }
}

/// Default line budget for `n` classes: `n - 1`, at least one.
pub fn default_max_lines(n: usize) -> usize {
    n.saturating_sub(1).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSet {
    pub lines: Vec<Line>,
    /// Class-id to the index of the line it is assigned to.
    pub assignment: BTreeMap<String, usize>,
    /// Sum of distances to the nearest line over centroids farther than
    /// epsilon from every line.
    pub score: f64,
    /// Classes no line could take; they become hard prototypes downstream.
    pub uncovered: Vec<String>,
}

impl LineSet {
    /// Classes assigned to line `index`, in class order.
    pub fn assigned_to(&self, index: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &i)| i == index)
            .map(|(c, _)| c.as_str())
            .collect()
    }
}

fn check_args(centroids: &CentroidSet, l: usize, epsilon: f64) -> Result<()> {
    if centroids.len() < 2 {
        return Err(Error::DegenerateInput(centroids.len()));
    }
    if l == 0 {
        return Err(Error::usage("the line budget must be at least 1"));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::usage(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// Orients a line so the lexicographically smallest member class sits at a
/// smaller offset than the largest one. Unlike a coordinate-based sign rule
/// this survives rotations of the embedding space.
fn orient(mut line: Line) -> Line {
    let first = line
        .member_classes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.cmp(b.1))
        .map(|(i, _)| i);
    let last = line
        .member_classes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1))
        .map(|(i, _)| i);
    if let (Some(i), Some(j)) = (first, last) {
        if line.member_offsets[i] > line.member_offsets[j] {
            line.reverse();
        }
    }
    line
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

struct Candidate {
    a: usize,
    b: usize,
    anchor: Vec<f64>,
    direction: Vec<f64>,
}

pub fn brute_force_lines(
    centroids: &CentroidSet,
    l: usize,
    epsilon: f64,
    budget: u64,
) -> Result<LineSet> {
    check_args(centroids, l, epsilon)?;
    let n = centroids.len();
    let pts = &centroids.centroids;

    let mut candidates = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let mut direction: Vec<f64> = pts[b].iter().zip(&pts[a]).map(|(x, y)| x - y).collect();
            let len = crate::vectorspace::norm(&direction);
            if len == 0.0 {
                continue;
            }
            direction.iter_mut().for_each(|d| *d /= len);
            candidates.push(Candidate {
                a,
                b,
                anchor: pts[a].clone(),
                direction,
            });
        }
    }
    let p = candidates.len();
    if p == 0 {
        return Err(Error::DegenerateLine(n));
    }
    let max_size = l.min(p);
    let required: u128 = (1..=max_size as u128).map(|s| binomial(p as u128, s)).fold(0u128, u128::saturating_add);
    if required > budget as u128 {
        return Err(Error::BudgetExceeded {
            n,
            lines: l,
            required,
            budget,
        });
    }

    // dist[k][c]: centroid c to candidate k
    let dist: Vec<Vec<f64>> = candidates
        .iter()
        .map(|cand| pts.iter().map(|c| perp_distance(c, &cand.anchor, &cand.direction)).collect())
        .collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut nearest = vec![0.0; n];
    for size in 1..=max_size {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            nearest.iter_mut().for_each(|d| *d = f64::INFINITY);
            for &k in &idx {
                for (d, &dk) in nearest.iter_mut().zip(&dist[k]) {
                    if dk < *d {
                        *d = dk;
                    }
                }
            }
            let score: f64 = nearest.iter().filter(|&&d| d > epsilon).sum();
            if best.as_ref().is_none_or(|(s, _)| score < *s) {
                best = Some((score, idx.clone()));
            }
            if !next_combination(&mut idx, p) {
                break;
            }
        }
        if best.as_ref().is_some_and(|(s, _)| *s == 0.0) {
            break;
        }
    }
    let (score, subset) = best.expect("at least one subset evaluated");

    // Assign each centroid to its nearest chosen line within epsilon.
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for c in 0..n {
        let mut pick: Option<(usize, f64)> = None;
        for (pos, &k) in subset.iter().enumerate() {
            let d = dist[k][c];
            if d <= epsilon && pick.is_none_or(|(_, bd)| d < bd) {
                pick = Some((pos, d));
            }
        }
        owner[c] = pick.map(|(pos, _)| pos);
    }

    let mut lines = Vec::new();
    let mut assignment = BTreeMap::new();
    for (pos, &k) in subset.iter().enumerate() {
        let assigned: Vec<usize> = (0..n).filter(|&c| owner[c] == Some(pos)).collect();
        if assigned.is_empty() {
            continue;
        }
        let cand = &candidates[k];
        let mut members = assigned.clone();
        for extra in [cand.a, cand.b] {
            if !members.contains(&extra) {
                members.push(extra);
            }
        }
        members.sort_unstable();
        let refs: Vec<(&str, &[f64])> = members
            .iter()
            .map(|&c| (centroids.classes[c].as_str(), pts[c].as_slice()))
            .collect();
        let mut direction = cand.direction.clone();
        crate::vectorspace::canonicalize_sign(&mut direction);
        let line = Line::through(cand.anchor.clone(), direction, &refs)?;
        let index = lines.len();
        lines.push(orient(line));
        for c in assigned {
            assignment.insert(centroids.classes[c].clone(), index);
        }
    }
    let uncovered = (0..n)
        .filter(|&c| owner[c].is_none())
        .map(|c| centroids.classes[c].clone())
        .collect();
    Ok(LineSet {
        lines,
        assignment,
        score,
        uncovered,
    })
}

/// Advances `idx` to the next `idx.len()`-combination of `0..p` in
/// lexicographic order.
fn next_combination(idx: &mut [usize], p: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < p - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn max_residual(centroids: &CentroidSet, members: &[usize]) -> f64 {
    let pts: Vec<&[f64]> = members.iter().map(|&c| centroids.centroids[c].as_slice()).collect();
    match fit_line_tls(&pts) {
        Ok(fit) => fit.max_residual,
        // coincident centroids sit on every line through them
        Err(_) => 0.0,
    }
}

#[derive(Debug, Clone)]
struct Cluster {
    /// Centroid indices assigned to this cluster, ascending.
    members: Vec<usize>,
    /// A centroid assigned elsewhere that only anchors this line.
    partner: Option<usize>,
}

impl Cluster {
    fn all(&self) -> Vec<usize> {
        let mut v = self.members.clone();
        if let Some(p) = self.partner {
            v.push(p);
            v.sort_unstable();
        }
        v
    }
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
    u.sort_unstable();
    u
}

/// Greedy agglomeration. Unions of three or more centroids are ranked by
/// their TLS max-residual; two singletons always fit a line exactly, so
/// those merges are only taken when no larger union fits and are ranked by
/// how many other loose centroids lie on the line through them, then by
/// distance.
fn agglomerate(centroids: &CentroidSet, epsilon: f64) -> Vec<Vec<usize>> {
    let n = centroids.len();
    let pts = &centroids.centroids;
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|c| vec![c]).collect();
    loop {
        let mut growth: Option<(f64, usize, usize)> = None;
        let mut pairing: Option<(usize, f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let u = union(&clusters[a], &clusters[b]);
                if u.len() >= 3 {
                    let r = max_residual(centroids, &u);
                    if r <= epsilon && growth.is_none_or(|(br, _, _)| r < br) {
                        growth = Some((r, a, b));
                    }
                } else if growth.is_none() {
                    let (i, j) = (u[0], u[1]);
                    let d = crate::vectorspace::dist(&pts[i], &pts[j]);
                    let support = if d == 0.0 {
                        0
                    } else {
                        let dir: Vec<f64> = pts[j].iter().zip(&pts[i]).map(|(x, y)| (x - y) / d).collect();
                        clusters
                            .iter()
                            .filter(|c| c.len() == 1 && c[0] != i && c[0] != j)
                            .filter(|c| perp_distance(&pts[c[0]], &pts[i], &dir) <= epsilon)
                            .count()
                    };
                    let better = pairing.is_none_or(|(bs, bd, _, _)| support > bs || (support == bs && d < bd));
                    if better {
                        pairing = Some((support, d, a, b));
                    }
                }
            }
        }
        let (a, b) = match (growth, pairing) {
            (Some((_, a, b)), _) => (a, b),
            (None, Some((_, _, a, b))) => (a, b),
            (None, None) => break,
        };
        let merged = union(&clusters[a], &clusters[b]);
        clusters.remove(b);
        clusters[a] = merged;
    }
    clusters
}

/// Index of the cluster (with at least two centroids) that can absorb
/// centroid `c` with the smallest distance to its current line, keeping the
/// refit max-residual within epsilon.
fn best_host(
    centroids: &CentroidSet,
    clusters: &[Cluster],
    c: usize,
    exclude: Option<usize>,
    epsilon: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, cl) in clusters.iter().enumerate() {
        if Some(k) == exclude || cl.members.len() + usize::from(cl.partner.is_some()) < 2 {
            continue;
        }
        let all = cl.all();
        let pts: Vec<&[f64]> = all.iter().map(|&i| centroids.centroids[i].as_slice()).collect();
        let d = match fit_line_tls(&pts) {
            Ok(fit) => perp_distance(&centroids.centroids[c], &fit.anchor, &fit.direction),
            Err(_) => crate::vectorspace::dist(&centroids.centroids[c], pts[0]),
        };
        if d > epsilon || best.is_some_and(|(_, bd)| d >= bd) {
            continue;
        }
        let mut grown = all.clone();
        grown.push(c);
        grown.sort_unstable();
        if max_residual(centroids, &grown) <= epsilon {
            best = Some((k, d));
        }
    }
    best.map(|(k, _)| k)
}

pub fn recursive_regression_lines(centroids: &CentroidSet, l: usize, epsilon: f64) -> Result<LineSet> {
    check_args(centroids, l, epsilon)?;
    let n = centroids.len();
    let pts = &centroids.centroids;

    let mut clusters: Vec<Cluster> = agglomerate(centroids, epsilon)
        .into_iter()
        .map(|members| Cluster { members, partner: None })
        .collect();

    // Outlier ejection to a fixed point.
    for _ in 0..MAX_EJECTION_ROUNDS {
        let mut ejected: Vec<(usize, usize)> = Vec::new();
        for (k, cl) in clusters.iter_mut().enumerate() {
            if cl.members.len() < 3 {
                continue;
            }
            let refs: Vec<&[f64]> = cl.members.iter().map(|&c| pts[c].as_slice()).collect();
            let Ok(fit) = fit_line_tls(&refs) else {
                continue;
            };
            let out: Vec<usize> = cl
                .members
                .iter()
                .zip(&fit.residuals)
                .filter(|(_, &r)| r > epsilon)
                .map(|(&c, _)| c)
                .collect();
            cl.members.retain(|c| !out.contains(c));
            ejected.extend(out.into_iter().map(|c| (c, k)));
        }
        if ejected.is_empty() {
            break;
        }
        for (c, from) in ejected {
            match best_host(centroids, &clusters, c, Some(from), epsilon) {
                Some(k) => {
                    clusters[k].members.push(c);
                    clusters[k].members.sort_unstable();
                }
                None => clusters.push(Cluster {
                    members: vec![c],
                    partner: None,
                }),
            }
        }
        // Clusters left with one member fall apart into singletons.
        clusters.retain(|cl| !cl.members.is_empty());
    }

    // Keep at most l lines: larger clusters first, then tighter ones.
    let (mut lines_kept, mut loose): (Vec<Cluster>, Vec<Cluster>) =
        clusters.into_iter().partition(|cl| cl.members.len() >= 2);
    if lines_kept.len() > l {
        let mut ranked: Vec<(usize, f64, usize, Cluster)> = lines_kept
            .into_iter()
            .map(|cl| (cl.members.len(), max_residual(centroids, &cl.members), cl.members[0], cl))
            .collect();
        ranked.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.total_cmp(&y.1)).then(x.2.cmp(&y.2)));
        lines_kept = Vec::new();
        for (rank, (_, _, _, cl)) in ranked.into_iter().enumerate() {
            if rank < l {
                lines_kept.push(cl);
            } else {
                loose.extend(cl.members.into_iter().map(|c| Cluster {
                    members: vec![c],
                    partner: None,
                }));
            }
        }
    }
    let mut singles: Vec<usize> = loose.into_iter().flat_map(|cl| cl.members).collect();
    singles.sort_unstable();

    // Singleton resolution.
    let mut clusters = lines_kept;
    let mut uncovered_idx = Vec::new();
    let mut pending = std::collections::VecDeque::from(singles);
    while let Some(s) = pending.pop_front() {
        if let Some(k) = best_host(centroids, &clusters, s, None, epsilon) {
            clusters[k].members.push(s);
            clusters[k].members.sort_unstable();
            continue;
        }
        if clusters.len() < l {
            let partner = (0..n)
                .filter(|&c| c != s)
                .min_by(|&a, &b| {
                    crate::vectorspace::dist(&pts[s], &pts[a])
                        .total_cmp(&crate::vectorspace::dist(&pts[s], &pts[b]))
                        .then(a.cmp(&b))
                })
                .expect("n >= 2");
            if let Some(pos) = pending.iter().position(|&c| c == partner) {
                pending.remove(pos);
                clusters.push(Cluster {
                    members: vec![s.min(partner), s.max(partner)],
                    partner: None,
                });
            } else {
                clusters.push(Cluster {
                    members: vec![s],
                    partner: Some(partner),
                });
            }
        } else {
            uncovered_idx.push(s);
        }
    }

    clusters.sort_by_key(|cl| cl.members[0]);
    let mut lines = Vec::with_capacity(clusters.len());
    let mut assignment = BTreeMap::new();
    for (index, cl) in clusters.iter().enumerate() {
        let all = cl.all();
        let refs: Vec<&[f64]> = all.iter().map(|&c| pts[c].as_slice()).collect();
        let classes: Vec<&str> = all.iter().map(|&c| centroids.classes[c].as_str()).collect();
        let line = fit_line_tls(&refs)?.into_line(&classes, &refs)?;
        lines.push(orient(line));
        for &c in &cl.members {
            assignment.insert(centroids.classes[c].clone(), index);
        }
    }
    let mut score = 0.0;
    for &c in &uncovered_idx {
        let d = lines
            .iter()
            .map(|line: &Line| perp_distance(&pts[c], &line.anchor, &line.direction))
            .fold(f64::INFINITY, f64::min);
        if d.is_finite() && d > epsilon {
            score += d;
        }
    }
    let uncovered = uncovered_idx.iter().map(|&c| centroids.classes[c].clone()).collect();
    Ok(LineSet {
        lines,
        assignment,
        score,
        uncovered,
    })
}

/// Runs the selected algorithm.
pub fn find_lines(
    centroids: &CentroidSet,
    algorithm: LineAlgorithm,
    l: usize,
    epsilon: f64,
    budget: u64,
) -> Result<LineSet> {
    match algorithm {
        LineAlgorithm::BruteForce => brute_force_lines(centroids, l, epsilon, budget),
        LineAlgorithm::RecursiveRegression => recursive_regression_lines(centroids, l, epsilon),
    }
}
