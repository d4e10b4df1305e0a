//! K-means++ seeding, Lloyd iterations and silhouette scoring on 2-D points.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::seed::Rng;

pub type Point = [f64; 2];

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[inline]
pub fn dist(a: &Point, b: &Point) -> f64 {
    dist2(a, b).sqrt()
}

/// Stopping rule for Lloyd iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KmeansOptions {
    /// Stop once at most this fraction of points changed cluster...
    pub reassignment_tol: f64,
    /// ...and no centroid moved farther than this.
    pub movement_tol: f64,
    pub max_iter: usize,
    /// Independent K-means++ restarts; the lowest potential wins.
    pub restarts: usize,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        KmeansOptions {
            reassignment_tol: 0.0,
            movement_tol: 1e-9,
            max_iter: 100,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub centroids: Vec<Point>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub potential: f64,
    /// Potential at initialization, after every Lloyd iteration and after
    /// every refinement sweep of the winning restart.
    pub potential_history: Vec<f64>,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == cluster)
            .collect()
    }
}

/// K-means++ seeding: the first centroid is uniform, each further one is
/// drawn with probability proportional to its squared distance from the
/// nearest centroid chosen so far. When every remaining distance is zero
/// the pick is uniform over points not yet chosen.
pub fn kmeanspp_init(points: &[Point], k: usize, rng: &mut Rng) -> Result<Vec<Point>> {
    if k == 0 {
        return domain("k must be at least 1");
    }
    if points.len() < k {
        return domain(format!("{} points cannot seed {k} clusters", points.len()));
    }
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[first])).collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    if target < w {
                        idx = i;
                        break;
                    }
                    target -= w;
                }
            }
            // guard against rounding landing on a zero-weight tail
            if d2[idx] == 0.0 {
                idx = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap();
            }
            idx
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick]);
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(dist2(p, &points[pick]));
        }
    }
    Ok(centroids)
}

fn nearest(p: &Point, centroids: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = dist2(p, &centroids[0]);
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = dist2(p, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn potential(points: &[Point], centroids: &[Point], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| dist2(p, &centroids[a]))
        .sum()
}

/// Gives every empty cluster the point farthest from its own centroid,
/// taken from a cluster that can spare one.
fn repair_empty(points: &[Point], centroids: &mut [Point], assignment: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignment.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let a = assignment[i];
            if sizes[a] > 1 {
                let d = dist2(p, &centroids[a]);
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
        }
        let i = far.expect("at least k points");
        assignment[i] = empty;
        centroids[empty] = points[i];
    }
}

fn update_means(points: &[Point], centroids: &mut [Point], assignment: &[usize]) {
    let k = centroids.len();
    let mut sums = vec![[0.0f64; 2]; k];
    let mut sizes = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        sums[a][0] += p[0];
        sums[a][1] += p[1];
        sizes[a] += 1;
    }
    for j in 0..k {
        if sizes[j] > 0 {
            let s = sizes[j] as f64;
            centroids[j] = [sums[j][0] / s, sums[j][1] / s];
        }
    }
}

/// Single-point moves that lower the potential once the two affected
/// means are updated (Hartigan). Lloyd's fixed points are not always
/// stable under these; every accepted move strictly lowers phi.
fn hartigan(points: &[Point], centroids: &mut [Point], assignment: &mut [usize], history: &mut Vec<f64>) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    for _ in 0..points.len() * 10 {
        let mut improved = false;
        for (i, p) in points.iter().enumerate() {
            let a = assignment[i];
            if sizes[a] < 2 {
                continue;
            }
            let na = sizes[a] as f64;
            let leave = na / (na - 1.0) * dist2(p, &centroids[a]);
            let mut best = None;
            let mut best_gain = 1e-12 * leave.max(f64::MIN_POSITIVE);
            for b in (0..k).filter(|&b| b != a) {
                let nb = sizes[b] as f64;
                let gain = leave - nb / (nb + 1.0) * dist2(p, &centroids[b]);
                if gain > best_gain {
                    best_gain = gain;
                    best = Some(b);
                }
            }
            if let Some(b) = best {
                let (na, nb) = (sizes[a] as f64, sizes[b] as f64);
                for d in 0..2 {
                    centroids[a][d] = (centroids[a][d] * na - p[d]) / (na - 1.0);
                    centroids[b][d] = (centroids[b][d] * nb + p[d]) / (nb + 1.0);
                }
                sizes[a] -= 1;
                sizes[b] += 1;
                assignment[i] = b;
                improved = true;
            }
        }
        if !improved {
            break;
        }
        // exact means, free of incremental rounding
        update_means(points, centroids, assignment);
        history.push(potential(points, centroids, assignment));
    }
}

fn lloyd(points: &[Point], k: usize, opts: &KmeansOptions, rng: &mut Rng) -> Result<Clustering> {
    let mut centroids = kmeanspp_init(points, k, rng)?;
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    repair_empty(points, &mut centroids, &mut assignment);
    let mut history = vec![potential(points, &centroids, &assignment)];

    for _ in 0..opts.max_iter {
        let before = centroids.clone();
        update_means(points, &mut centroids, &assignment);
        let mut moved = 0usize;
        for (i, p) in points.iter().enumerate() {
            let j = nearest(p, &centroids);
            // keep the current cluster on ties so the potential never rises
            if j != assignment[i] && dist2(p, &centroids[j]) < dist2(p, &centroids[assignment[i]]) {
                assignment[i] = j;
                moved += 1;
            }
        }
        repair_empty(points, &mut centroids, &mut assignment);
        history.push(potential(points, &centroids, &assignment));
        let shift = before
            .iter()
            .zip(&centroids)
            .map(|(a, b)| dist(a, b))
            .fold(0.0, f64::max);
        if moved as f64 <= opts.reassignment_tol * points.len() as f64 && shift <= opts.movement_tol {
            break;
        }
    }
    update_means(points, &mut centroids, &assignment);
    history.push(potential(points, &centroids, &assignment));
    hartigan(points, &mut centroids, &mut assignment, &mut history);
    let phi = potential(points, &centroids, &assignment);
    Ok(Clustering {
        k,
        centroids,
        assignment,
        potential: phi,
        potential_history: history,
    })
}

/// Lloyd iterations from K-means++ seeds followed by single-point
/// refinement; best of `opts.restarts` runs.
pub fn kmeans_cluster(points: &[Point], k: usize, opts: &KmeansOptions, rng: &mut Rng) -> Result<Clustering> {
    let mut best: Option<Clustering> = None;
    for _ in 0..opts.restarts.max(1) {
        let c = lloyd(points, k, opts, rng)?;
        if best.as_ref().is_none_or(|b| c.potential < b.potential) {
            best = Some(c);
        }
    }
    Ok(best.unwrap())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteReport {
    pub per_point: Vec<f64>,
    pub mean_score: f64,
}

/// Silhouette of every point: `1 - a/b` when `a < b`, `0` when equal,
/// `b/a - 1` otherwise, where `a` is the mean distance to the rest of its
/// own cluster and `b` the smallest mean distance to another cluster.
/// Points in singleton clusters score 0.
pub fn silhouette(points: &[Point], clustering: &Clustering) -> Result<SilhouetteReport> {
    let k = clustering.k;
    if k < 2 {
        return domain("silhouette needs at least two clusters");
    }
    let mut sizes = vec![0usize; k];
    for &a in &clustering.assignment {
        sizes[a] += 1;
    }
    if sizes.contains(&0) {
        return domain("silhouette needs every cluster to be non-empty");
    }
    let n = points.len();
    let mut per_point = Vec::with_capacity(n);
    let mut sums = vec![0.0f64; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[clustering.assignment[j]] += dist(&points[i], &points[j]);
            }
        }
        let own = clustering.assignment[i];
        if sizes[own] == 1 {
            per_point.push(0.0);
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let s = if a < b {
            1.0 - a / b
        } else if a > b {
            b / a - 1.0
        } else {
            0.0
        };
        per_point.push(s);
    }
    let mean_score = per_point.iter().sum::<f64>() / n as f64;
    Ok(SilhouetteReport { per_point, mean_score })
}

/// Mean pairwise distance inside one cluster; `None` for singletons.
pub fn mean_intra_distance(points: &[Point], members: &[usize]) -> Option<f64> {
    let m = members.len();
    if m < 2 {
        return None;
    }
    let mut total = 0.0;
    for (x, &i) in members.iter().enumerate() {
        for &j in &members[x + 1..] {
            total += dist(&points[i], &points[j]);
        }
    }
    Some(total / (m * (m - 1) / 2) as f64)
}
