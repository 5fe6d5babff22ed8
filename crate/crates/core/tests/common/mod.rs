//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::Rng;
use slproto::lpsolve::{LinearProgram, Relation};
use slproto::vectorspace::{point_line_distance, CentroidSet, Line};

// ---------------------------------------------------------------------------
// LP: vertex enumeration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleLp {
    Optimal(f64),
    Infeasible,
    Unbounded,
}

fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let pivot = a[col].clone();
        for r in 0..n {
            if r != col {
                let f = a[r][col] / pivot[col];
                for (x, p) in a[r][col..].iter_mut().zip(&pivot[col..]) {
                    *x -= f * p;
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

fn enumerate_with_box(lp: &LinearProgram, cap: f64) -> Option<f64> {
    let v = lp.num_vars();
    // all constraints as (row, relation, rhs), bounds included
    let mut cons: Vec<(Vec<f64>, Relation, f64)> = lp
        .constraints
        .iter()
        .map(|c| (c.row.clone(), c.relation, c.rhs))
        .collect();
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        let mut e = vec![0.0; v];
        e[j] = 1.0;
        cons.push((e.clone(), Relation::Ge, if lo.is_finite() { lo } else { -cap }));
        cons.push((e, Relation::Le, if hi.is_finite() { hi } else { cap }));
    }
    let feasible = |x: &[f64]| {
        cons.iter().all(|(row, rel, rhs)| {
            let lhs: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            let tol = 1e-7 * (1.0 + rhs.abs());
            match rel {
                Relation::Le => lhs <= rhs + tol,
                Relation::Ge => lhs >= rhs - tol,
                Relation::Eq => (lhs - rhs).abs() <= tol,
            }
        })
    };
    let m = cons.len();
    let mut best: Option<f64> = None;
    let mut idx: Vec<usize> = (0..v).collect();
    loop {
        let a: Vec<Vec<f64>> = idx.iter().map(|&i| cons[i].0.clone()).collect();
        let b: Vec<f64> = idx.iter().map(|&i| cons[i].2).collect();
        if let Some(x) = solve_square(a, b) {
            if feasible(&x) {
                let obj: f64 = lp.objective.iter().zip(&x).map(|(c, xi)| c * xi).sum();
                best = Some(best.map_or(obj, |b: f64| b.max(obj)));
            }
        }
        // next combination
        let mut i = v;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] != i + m - v {
                break;
            }
            if i == 0 {
                return best;
            }
        }
        idx[i] += 1;
        for j in i + 1..v {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Brute-force LP answer: enumerate every vertex of the problem clipped to
/// a large box; growth of the optimum with the box size means unbounded.
pub fn lp_vertex_oracle(lp: &LinearProgram) -> OracleLp {
    let small = enumerate_with_box(lp, 1e7);
    let large = enumerate_with_box(lp, 1e8);
    match (small, large) {
        (None, _) | (_, None) => OracleLp::Infeasible,
        (Some(a), Some(b)) => {
            if (b - a).abs() > 1e-6 * (1.0 + a.abs()) {
                OracleLp::Unbounded
            } else {
                OracleLp::Optimal(a)
            }
        }
    }
}

pub fn random_small_lp<R: Rng>(rng: &mut R) -> LinearProgram {
    let v = rng.random_range(1..=4);
    let m = rng.random_range(1..=6);
    let mut lp = LinearProgram::maximize((0..v).map(|_| rng.random_range(-5..=5) as f64).collect());
    for _ in 0..m {
        let row: Vec<f64> = (0..v).map(|_| rng.random_range(-5..=5) as f64).collect();
        let rel = match rng.random_range(0..5) {
            0 => Relation::Eq,
            1 | 2 => Relation::Ge,
            _ => Relation::Le,
        };
        lp.constrain(row, rel, rng.random_range(-5..=5) as f64);
    }
    lp
}

// ---------------------------------------------------------------------------
// Line search: exhaustive subset enumeration
// ---------------------------------------------------------------------------

/// Minimum over all subsets (size 1..=l) of centroid-pair lines of the sum of
/// distances of centroids lying farther than `epsilon` from every line.
pub fn line_cover_oracle(centroids: &CentroidSet, l: usize, epsilon: f64) -> f64 {
    let n = centroids.len();
    let mut candidates = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let a = &centroids.centroids[i];
            let b = &centroids.centroids[j];
            let dir: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
            if dir.iter().all(|d| *d == 0.0) {
                continue;
            }
            let line = Line::through(a.clone(), dir, &[("i", a), ("j", b)]).unwrap();
            candidates.push(line);
        }
    }
    let p = candidates.len();
    let mut best = f64::INFINITY;
    // bitmask enumeration, fine for p <= 20
    for mask in 1u32..(1u32 << p) {
        if mask.count_ones() as usize > l {
            continue;
        }
        let mut score = 0.0;
        for c in &centroids.centroids {
            let d = (0..p)
                .filter(|k| mask & (1 << k) != 0)
                .map(|k| point_line_distance(c, &candidates[k]).unwrap())
                .fold(f64::INFINITY, f64::min);
            if d > epsilon {
                score += d;
            }
        }
        if score < best {
            best = score;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Soft labels: grid search over both simplices
// ---------------------------------------------------------------------------

/// Points on the simplex of dimension `n` with coordinates on a grid of
/// `steps` divisions.
pub fn simplex_grid(n: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: usize, steps: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if n == 1 {
            cur.push(left as f64 / steps as f64);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k as f64 / steps as f64);
            rec(n - 1, left - k, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, steps, steps, &mut Vec::new(), &mut out);
    out
}

/// Sample positions (as offsets from the first centroid) used for the
/// margin: five relative positions per midpoint interval, clamped δ·L away
/// from the ends.
pub fn sample_positions(offsets: &[f64]) -> Vec<(usize, f64)> {
    let base = offsets[0];
    let pos: Vec<f64> = offsets.iter().map(|o| o - base).collect();
    let len = pos[pos.len() - 1];
    let mut out = Vec::new();
    for c in 0..pos.len() {
        let start = if c == 0 { 0.0 } else { 0.5 * (pos[c - 1] + pos[c]) };
        let end = if c + 1 == pos.len() { len } else { 0.5 * (pos[c] + pos[c + 1]) };
        for f in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let t = (start + f * (end - start)).clamp(1e-3 * len, len - 1e-3 * len);
            out.push((c, t));
        }
    }
    out
}

/// Margin of a soft-label pair: min over sample points of the own-class
/// influence minus the summed influence of the other classes.
pub fn sampled_margin(y1: &[f64], y2: &[f64], samples: &[(usize, f64)], len: f64) -> f64 {
    let mut worst = f64::INFINITY;
    for &(c, t) in samples {
        let mut own = 0.0;
        let mut rest = 0.0;
        for j in 0..y1.len() {
            let infl = y1[j] / t + y2[j] / (len - t);
            if j == c {
                own += infl;
            } else {
                rest += infl;
            }
        }
        worst = worst.min(own - rest);
    }
    worst
}

/// Whether each sample point's own class has the largest influence.
pub fn own_class_dominates(y1: &[f64], y2: &[f64], samples: &[(usize, f64)], len: f64) -> bool {
    samples.iter().all(|&(c, t)| {
        let infl = |j: usize| y1[j] / t + y2[j] / (len - t);
        let own = infl(c);
        (0..y1.len()).all(|j| j == c || own >= infl(j))
    })
}

/// Best sampled margin over a `resolution` grid of both soft labels, among
/// grid points where every sample point's own class dominates.
pub fn grid_margin_oracle(offsets: &[f64], resolution: f64) -> f64 {
    let n = offsets.len();
    let steps = (1.0 / resolution).round() as usize;
    let grid = simplex_grid(n, steps);
    let samples = sample_positions(offsets);
    let len = offsets[n - 1] - offsets[0];
    let mut best = f64::NEG_INFINITY;
    for y1 in &grid {
        for y2 in &grid {
            let m = sampled_margin(y1, y2, &samples, len);
            if m > best && own_class_dominates(y1, y2, &samples, len) {
                best = m;
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Random centroid configurations with planted collinear structure
// ---------------------------------------------------------------------------

/// `n` centroids in `dim` dimensions. Some are placed exactly on one or two
/// random lines, the rest scattered, so exact low-line covers exist in a
/// good fraction of draws.
pub fn random_centroids<R: Rng>(rng: &mut R, n: usize, dim: usize) -> CentroidSet {
    let mut pts: Vec<Vec<f64>> = Vec::new();
    let n_lines = rng.random_range(0..=2usize);
    for _ in 0..n_lines {
        if pts.len() >= n {
            break;
        }
        let anchor: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = rng.random_range(2..=3usize).min(n - pts.len());
        for _ in 0..k {
            let t: f64 = rng.random_range(-3.0..3.0);
            pts.push(anchor.iter().zip(&dir).map(|(a, d)| a + t * d).collect());
        }
    }
    while pts.len() < n {
        pts.push((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect());
    }
    CentroidSet::from_points(pts.into_iter().enumerate().map(|(i, p)| (format!("c{i}"), p))).unwrap()
}
