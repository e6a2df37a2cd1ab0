//! Semantic mutation measures within claims.
//!
//! * [`pairwise_drift_curve`]: similarity of indirectly connected post pairs
//!   as a function of their day gap.
//! * [`cluster_similarity_stats`]: spread of pairwise similarity inside one
//!   claim (mean, SD, histogram entropy).
//! * [`early_drift`] / [`drift_groups`]: mean cosine distance to the seed post
//!   inside an early window, split into none / low / high groups around the
//!   median of the non-zero values.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::claim_graph::{ClaimCluster, SimilarityGraph};
use crate::corpus::EmbeddingStore;
use crate::vector;

pub const DEFAULT_WINDOW_HOURS: u32 = 24;
pub const ENTROPY_BIN_WIDTH: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftBin {
    pub day_gap: i64,
    pub mean_sim: f64,
    /// Sample SD over √pair_count; zero for a single pair.
    pub std_err: f64,
    pub pair_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftCurve {
    /// Ascending by `day_gap`; only bins with at least one pair.
    pub bins: Vec<DriftBin>,
}

#[derive(Clone, Copy, Default)]
struct Acc {
    sum: f64,
    sumsq: f64,
    n: usize,
}

/// Mean similarity of indirect (non-edge) member pairs binned by whole-day gap.
pub fn pairwise_drift_curve(
    clusters: &[ClaimCluster],
    store: &EmbeddingStore,
    graph: &SimilarityGraph,
    max_days: i64,
) -> DriftCurve {
    let max_days = max_days.max(0);
    let direct = graph.edge_set();
    let bins = (max_days + 1) as usize;
    // clusters of size <= 2 are fully connected by construction
    let partials: Vec<Vec<Acc>> = clusters
        .par_iter()
        .filter(|c| c.len() >= 3)
        .map(|c| {
            let mut acc = vec![Acc::default(); bins];
            let m = &c.members;
            for i in 0..m.len() {
                for j in (i + 1)..m.len() {
                    let (a, b) = (m[i].row.min(m[j].row), m[i].row.max(m[j].row));
                    if direct.contains(&(a, b)) {
                        continue;
                    }
                    let gap = (m[j].created_at - m[i].created_at).abs().div_euclid(86_400);
                    if gap > max_days {
                        continue;
                    }
                    let s = store.similarity(a, b);
                    let slot = &mut acc[gap as usize];
                    slot.sum += s;
                    slot.sumsq += s * s;
                    slot.n += 1;
                }
            }
            acc
        })
        .collect();

    let mut total = vec![Acc::default(); bins];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.sum += p.sum;
            t.sumsq += p.sumsq;
            t.n += p.n;
        }
    }
    DriftCurve {
        bins: total
            .iter()
            .enumerate()
            .filter(|(_, a)| a.n > 0)
            .map(|(gap, a)| {
                let n = a.n as f64;
                let mean = a.sum / n;
                let sd = if a.n > 1 {
                    ((a.sumsq - n * mean * mean) / (n - 1.0)).max(0.0).sqrt()
                } else {
                    0.0
                };
                DriftBin {
                    day_gap: gap as i64,
                    mean_sim: mean,
                    std_err: sd / n.sqrt(),
                    pair_count: a.n,
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSimilarityStats {
    pub claim_id: usize,
    pub mean_sim: f64,
    /// Population SD of the pairwise similarities.
    pub sd_sim: f64,
    /// Shannon entropy (nats) of the similarity histogram, bins of width
    /// 0.01 spanning `[threshold, 1]`; values below the threshold fall in the
    /// first bin.
    pub entropy: f64,
    pub pair_basis: usize,
    pub sampled: bool,
}

/// `None` for singleton claims.
pub fn cluster_similarity_stats(
    cluster: &ClaimCluster,
    store: &EmbeddingStore,
    threshold: f64,
    pair_cap: usize,
    seed: u64,
) -> Option<ClusterSimilarityStats> {
    let m = cluster.len();
    if m < 2 {
        return None;
    }
    let rows: Vec<usize> = cluster.rows().collect();
    let total = m * (m - 1) / 2;
    let sampled = total > pair_cap.max(1);
    let sims: Vec<f64> = if sampled {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ cluster.claim_id as u64);
        (0..pair_cap.max(1))
            .map(|_| {
                let i = rng.gen_range(0..m);
                let mut j = rng.gen_range(0..m - 1);
                if j >= i {
                    j += 1;
                }
                store.similarity(rows[i], rows[j])
            })
            .collect()
    } else {
        let mut v = Vec::with_capacity(total);
        for i in 0..m {
            for j in (i + 1)..m {
                v.push(store.similarity(rows[i], rows[j]));
            }
        }
        v
    };
    let n = sims.len() as f64;
    let mean = sims.iter().sum::<f64>() / n;
    let var = sims.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Some(ClusterSimilarityStats {
        claim_id: cluster.claim_id,
        mean_sim: mean,
        sd_sim: var.sqrt(),
        entropy: histogram_entropy(&sims, threshold),
        pair_basis: sims.len(),
        sampled,
    })
}

pub(crate) fn histogram_entropy(values: &[f64], threshold: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let nbins = (((1.0 - threshold) / ENTROPY_BIN_WIDTH) - 1e-9).ceil().max(1.0) as usize;
    let mut counts = vec![0usize; nbins];
    for &s in values {
        let b = ((s - threshold) / ENTROPY_BIN_WIDTH).floor();
        let b = if b.is_nan() || b < 0.0 {
            0
        } else {
            (b as usize).min(nbins - 1)
        };
        counts[b] += 1;
    }
    let n = values.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    h.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftGroup {
    #[serde(rename = "none")]
    NoDrift,
    Low,
    High,
}

impl fmt::Display for DriftGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriftGroup::NoDrift => "none",
            DriftGroup::Low => "low",
            DriftGroup::High => "high",
        })
    }
}

impl std::str::FromStr for DriftGroup {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(DriftGroup::NoDrift),
            "low" => Ok(DriftGroup::Low),
            "high" => Ok(DriftGroup::High),
            other => Err(format!("unknown drift group {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyDrift {
    pub claim_id: usize,
    pub window_hours: u32,
    /// Mean cosine distance of the window's non-seed posts to the seed.
    pub drift_value: f64,
    /// Posts inside the window, seed included.
    pub window_posts: usize,
    pub group: Option<DriftGroup>,
}

/// Cumulative drift from the seed (earliest) post over `[t0, t0 + window)`.
pub fn early_drift(cluster: &ClaimCluster, store: &EmbeddingStore, window_hours: u32) -> EarlyDrift {
    let mut drift = EarlyDrift {
        claim_id: cluster.claim_id,
        window_hours,
        drift_value: 0.0,
        window_posts: 0,
        group: None,
    };
    let Some(seed) = cluster.members.first() else {
        return drift;
    };
    let end = seed.created_at + window_hours as i64 * 3600;
    let window: Vec<_> = cluster.members.iter().take_while(|m| m.created_at < end).collect();
    drift.window_posts = window.len();
    if window.len() > 1 {
        let sum: f64 = window[1..]
            .iter()
            .map(|m| vector::cosine_distance(store.similarity(seed.row, m.row)))
            .sum();
        drift.drift_value = sum / (window.len() - 1) as f64;
    }
    drift
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftGrouping {
    pub drifts: Vec<EarlyDrift>,
    /// Median of the non-zero drifts; `None` when all drifts are zero.
    pub median: Option<f64>,
}

/// Assigns none / low / high. Values equal to the median go to low.
pub fn drift_groups(mut drifts: Vec<EarlyDrift>) -> DriftGrouping {
    let mut nonzero: Vec<f64> = drifts.iter().map(|d| d.drift_value).filter(|&v| v > 0.0).collect();
    nonzero.sort_by(|a, b| a.partial_cmp(b).expect("drift values are finite"));
    let median = match nonzero.len() {
        0 => None,
        n if n % 2 == 1 => Some(nonzero[n / 2]),
        n => Some(0.5 * (nonzero[n / 2 - 1] + nonzero[n / 2])),
    };
    for d in drifts.iter_mut() {
        d.group = Some(match median {
            _ if d.drift_value <= 0.0 => DriftGroup::NoDrift,
            Some(m) if d.drift_value <= m => DriftGroup::Low,
            _ => DriftGroup::High,
        });
    }
    DriftGrouping { drifts, median }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claim_graph::{ClaimMember, Edge};

    fn store_from(vecs: Vec<Vec<f32>>) -> EmbeddingStore {
        let ids = (0..vecs.len()).map(|i| format!("p{i}")).collect();
        EmbeddingStore::from_vectors(ids, vecs).unwrap()
    }

    fn cluster(ts: &[i64]) -> ClaimCluster {
        ClaimCluster {
            claim_id: 0,
            members: ts
                .iter()
                .enumerate()
                .map(|(i, &t)| ClaimMember {
                    post_id: format!("p{i}"),
                    created_at: t,
                    row: i,
                })
                .collect(),
        }
    }

    fn unit_at(sim: f64) -> Vec<f32> {
        vec![sim as f32, (1.0 - sim * sim).sqrt() as f32]
    }

    #[test]
    fn chain_counts_only_the_indirect_pair() {
        let store = store_from(vec![unit_at(1.0), unit_at(0.95), unit_at(0.8)]);
        let c = cluster(&[0, 86_400, 3 * 86_400]);
        let g = SimilarityGraph::from_edges(
            0.88,
            3,
            [
                Edge {
                    a: 0,
                    b: 1,
                    similarity: 0.95,
                },
                Edge {
                    a: 1,
                    b: 2,
                    similarity: 0.95,
                },
            ],
        );
        let curve = pairwise_drift_curve(&[c], &store, &g, 100);
        assert_eq!(curve.bins.len(), 1);
        assert_eq!(curve.bins[0].day_gap, 3);
        assert_eq!(curve.bins[0].pair_count, 1);
        assert!((curve.bins[0].mean_sim - store.similarity(0, 2)).abs() < 1e-12);
    }

    #[test]
    fn triangle_contributes_nothing() {
        let store = store_from(vec![unit_at(1.0); 3]);
        let g = SimilarityGraph::from_edges(
            0.88,
            3,
            [
                Edge {
                    a: 0,
                    b: 1,
                    similarity: 1.0,
                },
                Edge {
                    a: 1,
                    b: 2,
                    similarity: 1.0,
                },
                Edge {
                    a: 0,
                    b: 2,
                    similarity: 1.0,
                },
            ],
        );
        assert!(pairwise_drift_curve(&[cluster(&[0, 1, 2])], &store, &g, 10)
            .bins
            .is_empty());
    }

    #[test]
    fn identical_members_stats() {
        let store = store_from(vec![unit_at(0.3); 4]);
        let s = cluster_similarity_stats(&cluster(&[0, 1, 2, 3]), &store, 0.88, 1000, 0).unwrap();
        assert!((s.mean_sim - 1.0).abs() < 1e-6);
        assert!(s.sd_sim < 1e-6);
        assert_eq!(s.entropy, 0.0);
        assert_eq!(s.pair_basis, 6);
        assert!(cluster_similarity_stats(&cluster(&[0]), &store, 0.88, 10, 0).is_none());
    }

    #[test]
    fn two_members_at_point_nine() {
        let store = store_from(vec![unit_at(1.0), unit_at(0.9)]);
        let s = cluster_similarity_stats(&cluster(&[0, 5]), &store, 0.88, 10, 0).unwrap();
        assert!((s.mean_sim - 0.9).abs() < 1e-6);
        assert_eq!(s.sd_sim, 0.0);
    }

    #[test]
    fn entropy_of_two_equal_bins_is_ln2() {
        let h = histogram_entropy(&[0.905, 0.905, 0.955, 0.955], 0.88);
        assert!((h - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn seed_only_window_has_zero_drift() {
        let store = store_from(vec![unit_at(1.0), unit_at(0.5)]);
        let d = early_drift(&cluster(&[0, 2 * 86_400]), &store, 24);
        assert_eq!(d.drift_value, 0.0);
        assert_eq!(d.window_posts, 1);
    }

    #[test]
    fn drift_is_mean_distance_to_seed() {
        let store = store_from(vec![unit_at(1.0), unit_at(0.99), unit_at(0.97), unit_at(0.1)]);
        let d = early_drift(&cluster(&[0, 3600, 7200, 86_400]), &store, 24);
        // (0.01 + 0.03) / 2, up to f32 storage of the vectors
        assert!((d.drift_value - 0.02).abs() < 1e-6, "{}", d.drift_value);
        let one_hour = early_drift(&cluster(&[0, 1800, 7200]), &store, 1);
        assert_eq!(one_hour.window_posts, 2);
        assert!((one_hour.drift_value - 0.01).abs() < 1e-6);
    }

    fn d(v: f64) -> EarlyDrift {
        EarlyDrift {
            claim_id: 0,
            window_hours: 24,
            drift_value: v,
            window_posts: 2,
            group: None,
        }
    }

    #[test]
    fn groups_split_at_nonzero_median() {
        let g = drift_groups(vec![d(0.0), d(0.004), d(0.010)]);
        assert!((g.median.unwrap() - 0.007).abs() < 1e-15);
        let groups: Vec<_> = g.drifts.iter().map(|x| x.group.unwrap()).collect();
        assert_eq!(groups, [DriftGroup::NoDrift, DriftGroup::Low, DriftGroup::High]);
    }

    #[test]
    fn median_tie_goes_low() {
        let g = drift_groups(vec![d(0.1), d(0.2), d(0.3)]);
        assert_eq!(g.drifts[1].group, Some(DriftGroup::Low));
    }

    #[test]
    fn all_zero_is_all_none() {
        let g = drift_groups(vec![d(0.0), d(0.0)]);
        assert_eq!(g.median, None);
        assert!(g.drifts.iter().all(|x| x.group == Some(DriftGroup::NoDrift)));
    }
}
