//! k-means++ / Lloyd clustering, silhouette scoring and k selection.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::squared_euclidean;

pub const MAX_ITERATIONS: usize = 300;
pub const SHIFT_TOLERANCE: f64 = 1e-6;
pub const SILHOUETTE_SAMPLE: usize = 5_000;
/// Seeded k-means++ restarts per fit; the lowest final inertia wins.
pub const RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansFit {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("no points to cluster"))?;
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points must share a non-zero dimension"));
    }
    Ok(dim)
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = squared_euclidean(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_euclidean(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = points[pick].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(squared_euclidean(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// k-means++ seeding then Lloyd iterations until the largest centroid move
/// is below 1e-6 or 300 iterations, repeated [`RESTARTS`] times from one
/// seeded stream. Empty clusters take the point farthest from its centroid
/// among clusters with more than one member.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    let dim = check_points(points)?;
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must be in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..RESTARTS {
        let fit = lloyd(points, dim, plus_plus_init(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn lloyd(points: &[Vec<f64>], dim: usize, mut centroids: Vec<Vec<f64>>) -> KMeansFit {
    let n = points.len();
    let k = centroids.len();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut assign: Vec<(usize, f64)>;
    loop {
        assign = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        trace.push(assign.iter().map(|a| a.1).sum());
        if iterations == MAX_ITERATIONS || converged {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &(c, _)) in points.iter().zip(&assign) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &cnt), old)| {
                if cnt == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|v| v / cnt as f64).collect()
                }
            })
            .collect();
        let mut labels: Vec<usize> = assign.iter().map(|a| a.0).collect();
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| !taken[i] && counts[labels[i]] > 1)
                .map(|i| (i, squared_euclidean(&points[i], &next[labels[i]])))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, d)) = donor {
                if d > 0.0 {
                    counts[labels[i]] -= 1;
                    counts[c] = 1;
                    labels[i] = c;
                    taken[i] = true;
                    next[c] = points[i].clone();
                }
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| squared_euclidean(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        converged = shift < SHIFT_TOLERANCE;
    }
    KMeansFit {
        k,
        labels: assign.iter().map(|a| a.0).collect(),
        inertia: *trace.last().unwrap(),
        centroids,
        inertia_trace: trace,
        iterations,
        converged,
    }
}

/// Mean silhouette (Euclidean) over at most `sample_cap` seeded points.
/// Zero when fewer than two clusters are represented or all points coincide.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize], sample_cap: usize, seed: u64) -> f64 {
    let n = points.len();
    if n < 2 || labels.len() != n {
        return 0.0;
    }
    let idx: Vec<usize> = if n > sample_cap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, n, sample_cap).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &i in &idx {
        sizes[labels[i]] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return 0.0;
    }
    let total: f64 = idx
        .par_iter()
        .map(|&i| {
            let own = labels[i];
            if sizes[own] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for &j in &idx {
                if j != i {
                    sums[labels[j]] += squared_euclidean(&points[i], &points[j]).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .sum();
    total / idx.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub inertia: f64,
    pub silhouette: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub best_k: usize,
    pub table: Vec<KScore>,
}

/// Fits every k in `k_range`; the best k maximizes silhouette, smaller k on ties.
pub fn select_k(points: &[Vec<f64>], k_range: &[usize], seed: u64) -> Result<KSelection> {
    if k_range.is_empty() {
        return Err(Error::invalid("empty k range"));
    }
    let n = points.len();
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if let Some(&bad) = ks.iter().find(|&&k| k < 2 || k > n) {
        return Err(Error::invalid(format!("k = {bad} outside 2..={n}")));
    }
    let table: Vec<KScore> = ks
        .iter()
        .map(|&k| {
            let fit = kmeans(points, k, seed)?;
            Ok(KScore {
                k,
                inertia: fit.inertia,
                silhouette: silhouette(points, &fit.labels, SILHOUETTE_SAMPLE, seed),
            })
        })
        .collect::<Result<_>>()?;
    let mut best = table[0];
    for row in &table[1..] {
        if row.silhouette > best.silhouette {
            best = *row;
        }
    }
    Ok(KSelection { best_k: best.k, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    pub(crate) fn blobs(centers: &[[f64; 2]], per: usize, sd: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        centers
            .iter()
            .flat_map(|c| {
                (0..per)
                    .map(|_| vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)])
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn two_blobs_separate() {
        let pts = blobs(&[[0.0, 0.0], [10.0, 10.0]], 50, 0.3, 1);
        let fit = kmeans(&pts, 2, 7).unwrap();
        assert!(fit.converged);
        assert!(fit.labels[..50].iter().all(|&l| l == fit.labels[0]));
        assert!(fit.labels[50..].iter().all(|&l| l != fit.labels[0]));
        assert!(silhouette(&pts, &fit.labels, SILHOUETTE_SAMPLE, 0) > 0.9);
    }

    #[test]
    fn identical_points_score_zero() {
        let pts = vec![vec![1.0, 2.0]; 10];
        let fit = kmeans(&pts, 2, 0).unwrap();
        assert_eq!(silhouette(&pts, &fit.labels, SILHOUETTE_SAMPLE, 0), 0.0);
        assert_eq!(fit.inertia, 0.0);
    }

    #[test]
    fn same_seed_same_result() {
        let pts = blobs(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]], 30, 1.0, 2);
        assert_eq!(kmeans(&pts, 3, 5).unwrap(), kmeans(&pts, 3, 5).unwrap());
    }

    #[test]
    fn inertia_never_increases() {
        let pts = blobs(&[[0.0, 0.0], [2.0, 0.0], [1.0, 2.0], [5.0, 5.0]], 40, 1.2, 3);
        for seed in 0..10 {
            let fit = kmeans(&pts, 6, seed).unwrap();
            for w in fit.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9 * w[0].max(1.0), "{:?}", fit.inertia_trace);
            }
        }
    }

    #[test]
    fn rejects_bad_k() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&pts, 3, 0).is_err());
        assert!(kmeans(&pts, 0, 0).is_err());
        assert!(select_k(&pts, &[], 0).is_err());
        assert!(select_k(&pts, &[1], 0).is_err());
    }

    #[test]
    fn planted_five_blobs() {
        let pts = blobs(
            &[[0.0, 0.0], [8.0, 0.0], [0.0, 8.0], [8.0, 8.0], [4.0, 16.0]],
            40,
            0.6,
            4,
        );
        let sel = select_k(&pts, &(2..=10).collect::<Vec<_>>(), 11).unwrap();
        assert_eq!(sel.best_k, 5, "{:?}", sel.table);
        assert_eq!(sel.table.len(), 9);
    }

    #[test]
    fn single_k_range() {
        let pts = blobs(&[[0.0, 0.0]], 20, 1.0, 5);
        assert_eq!(select_k(&pts, &[2], 0).unwrap().best_k, 2);
    }

    #[test]
    fn silhouette_matches_brute_force() {
        let pts = blobs(&[[0.0, 0.0], [3.0, 1.0], [1.0, 4.0]], 7, 1.0, 6);
        let labels: Vec<usize> = (0..pts.len()).map(|i| (i * 7 + 3) % 3).collect();
        let d = |a: &Vec<f64>, b: &Vec<f64>| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mut total = 0.0;
        for i in 0..pts.len() {
            let mean_to = |c: usize| {
                let others: Vec<f64> = (0..pts.len())
                    .filter(|&j| j != i && labels[j] == c)
                    .map(|j| d(&pts[i], &pts[j]))
                    .collect();
                others.iter().sum::<f64>() / others.len() as f64
            };
            let a = mean_to(labels[i]);
            let b = (0..3)
                .filter(|&c| c != labels[i])
                .map(mean_to)
                .fold(f64::INFINITY, f64::min);
            total += (b - a) / a.max(b);
        }
        let oracle = total / pts.len() as f64;
        assert!((silhouette(&pts, &labels, SILHOUETTE_SAMPLE, 0) - oracle).abs() < 1e-12);
    }
}
