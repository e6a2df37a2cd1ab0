//! Threshold similarity graph, claim extraction and clustering quality.
//!
//! Posts are nodes (rows of the [`EmbeddingStore`]); an undirected edge joins
//! two posts whose cosine similarity reaches the threshold. Claims are the
//! connected components of that graph.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::AnnIndex;
use crate::corpus::{EmbeddingStore, PostCollection};
use crate::error::{Error, Result};
use crate::union_find::UnionFind;
use crate::vector;

pub const DEFAULT_THRESHOLD: f64 = 0.88;
pub const DEFAULT_SAMPLE_CAP: usize = 200_000;

/// Edge between store rows `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub threshold: f64,
    pub node_count: usize,
    /// Sorted by `(a, b)`, no duplicates, no self-loops.
    pub edges: Vec<Edge>,
}

impl SimilarityGraph {
    pub fn from_edges(threshold: f64, node_count: usize, edges: impl IntoIterator<Item = Edge>) -> Self {
        let mut edges: Vec<Edge> = edges
            .into_iter()
            .filter(|e| e.a != e.b)
            .map(|e| if e.a < e.b { e } else { Edge { a: e.b, b: e.a, ..e } })
            .collect();
        edges.sort_by_key(|e| (e.a, e.b));
        edges.dedup_by(|x, y| x.a == y.a && x.b == y.b);
        Self {
            threshold,
            node_count,
            edges,
        }
    }

    pub fn edge_set(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().map(|e| (e.a, e.b)).collect()
    }
}

/// Graph from approximate threshold retrieval around every post.
pub fn build_claim_graph(index: &AnnIndex<'_>, threshold: f64, initial_k: usize) -> Result<SimilarityGraph> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let n = index.len();
    let per_query: Vec<Vec<Edge>> = (0..n)
        .into_par_iter()
        .map(|q| {
            index
                .neighbors_above_row(q, threshold, initial_k)
                .neighbors
                .into_iter()
                .map(|nb| Edge {
                    a: q.min(nb.row),
                    b: q.max(nb.row),
                    similarity: nb.similarity,
                })
                .collect()
        })
        .collect();
    Ok(SimilarityGraph::from_edges(
        threshold,
        n,
        per_query.into_iter().flatten(),
    ))
}

/// Graph from an exhaustive pair scan. Quadratic; meant for small corpora
/// and as the reference for [`build_claim_graph`].
pub fn exact_claim_graph(store: &EmbeddingStore, threshold: f64) -> SimilarityGraph {
    let n = store.len();
    let per_row: Vec<Vec<Edge>> = (0..n)
        .into_par_iter()
        .map(|a| {
            ((a + 1)..n)
                .filter_map(|b| {
                    let s = store.similarity(a, b);
                    (s >= threshold).then_some(Edge { a, b, similarity: s })
                })
                .collect()
        })
        .collect();
    SimilarityGraph::from_edges(threshold, n, per_row.into_iter().flatten())
}

/// Connected components of an `n`-node edge list; groups sorted by smallest node.
pub fn components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(n);
    for (a, b) in edges {
        uf.union(a, b);
    }
    uf.groups()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimMember {
    pub post_id: String,
    pub created_at: i64,
    /// Row in the embedding store the cluster was built from.
    pub row: usize,
}

/// One claim: its posts in time order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimCluster {
    pub claim_id: usize,
    pub members: Vec<ClaimMember>,
}

impl ClaimCluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn first_ts(&self) -> i64 {
        self.members.first().map_or(0, |m| m.created_at)
    }

    pub fn last_ts(&self) -> i64 {
        self.members.last().map_or(0, |m| m.created_at)
    }

    pub fn lifespan_days(&self) -> f64 {
        (self.last_ts() - self.first_ts()) as f64 / 86_400.0
    }

    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().map(|m| m.row)
    }
}

/// Claims as connected components over every post in `posts`.
///
/// Isolated posts become singleton claims. Claim ids follow the time order
/// of each claim's earliest post (collection order on ties).
pub fn connected_components(
    graph: &SimilarityGraph,
    posts: &PostCollection,
    store: &EmbeddingStore,
) -> Result<Vec<ClaimCluster>> {
    let mut uf = UnionFind::new(graph.node_count.max(store.len()));
    for e in &graph.edges {
        uf.union(e.a, e.b);
    }
    let mut slot_of_root = vec![usize::MAX; uf.len()];
    let mut clusters: Vec<ClaimCluster> = Vec::new();
    for post in posts.iter() {
        let row = store
            .row_of(&post.post_id)
            .ok_or_else(|| Error::UnknownId(post.post_id.clone()))?;
        let root = uf.find(row);
        if slot_of_root[root] == usize::MAX {
            slot_of_root[root] = clusters.len();
            clusters.push(ClaimCluster {
                claim_id: clusters.len(),
                members: Vec::new(),
            });
        }
        clusters[slot_of_root[root]].members.push(ClaimMember {
            post_id: post.post_id.clone(),
            created_at: post.created_at,
            row,
        });
    }
    Ok(clusters)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityStats {
    /// Mean over multi-member claims of their mean pairwise cosine distance.
    /// `None` when every claim is a singleton.
    pub mean_intra_distance: Option<f64>,
    /// Mean cosine distance between normalized claim centroids. `None` with
    /// fewer than two claims.
    pub mean_inter_distance: Option<f64>,
    pub cluster_count: usize,
    pub singleton_fraction: f64,
    pub sample_cap: usize,
    pub seed: u64,
}

/// Uniform random unordered pair of distinct indices below `m`.
fn random_pair(rng: &mut ChaCha8Rng, m: usize) -> (usize, usize) {
    let i = rng.gen_range(0..m);
    let mut j = rng.gen_range(0..m - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

fn sampled_mean_distance(m: usize, budget: usize, rng: &mut ChaCha8Rng, dist: impl Fn(usize, usize) -> f64) -> f64 {
    let total = m * (m - 1) / 2;
    if total <= budget {
        let mut sum = 0.0;
        for i in 0..m {
            for j in (i + 1)..m {
                sum += dist(i, j);
            }
        }
        sum / total as f64
    } else {
        let mut sum = 0.0;
        for _ in 0..budget {
            let (i, j) = random_pair(rng, m);
            sum += dist(i, j);
        }
        sum / budget as f64
    }
}

fn centroid(cluster: &ClaimCluster, store: &EmbeddingStore) -> Vec<f64> {
    let mut c = vec![0.0f64; store.dimension()];
    for row in cluster.rows() {
        for (acc, x) in c.iter_mut().zip(store.vector(row)) {
            *acc += *x as f64;
        }
    }
    vector::normalize64(&mut c);
    c
}

pub fn cluster_quality(
    clusters: &[ClaimCluster],
    store: &EmbeddingStore,
    sample_cap: usize,
    seed: u64,
) -> QualityStats {
    let sample_cap = sample_cap.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cluster_count = clusters.len();
    let singletons = clusters.iter().filter(|c| c.len() == 1).count();

    let multi: Vec<&ClaimCluster> = clusters.iter().filter(|c| c.len() >= 2).collect();
    let total_pairs: usize = multi.iter().map(|c| c.len() * (c.len() - 1) / 2).sum();
    let mean_intra_distance = (!multi.is_empty()).then(|| {
        let sum: f64 = multi
            .iter()
            .map(|c| {
                let pairs = c.len() * (c.len() - 1) / 2;
                let budget = if total_pairs <= sample_cap {
                    pairs
                } else {
                    ((sample_cap as f64 * pairs as f64 / total_pairs as f64) as usize).max(1)
                };
                let rows: Vec<usize> = c.rows().collect();
                sampled_mean_distance(rows.len(), budget, &mut rng, |i, j| {
                    vector::cosine_distance(store.similarity(rows[i], rows[j]))
                })
            })
            .sum();
        sum / multi.len() as f64
    });

    let mean_inter_distance = (cluster_count >= 2).then(|| {
        let centroids: Vec<Vec<f64>> = clusters.iter().map(|c| centroid(c, store)).collect();
        sampled_mean_distance(cluster_count, sample_cap, &mut rng, |i, j| {
            vector::cosine_distance(vector::dot64(&centroids[i], &centroids[j]))
        })
    });

    QualityStats {
        mean_intra_distance,
        mean_inter_distance,
        cluster_count,
        singleton_fraction: if cluster_count == 0 {
            0.0
        } else {
            singletons as f64 / cluster_count as f64
        },
        sample_cap,
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub stats: QualityStats,
    /// Claim size → number of claims of that size.
    pub size_histogram: BTreeMap<usize, usize>,
}

pub fn threshold_sweep(
    index: &AnnIndex<'_>,
    posts: &PostCollection,
    thresholds: &[f64],
    initial_k: usize,
    sample_cap: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    thresholds
        .iter()
        .map(|&t| {
            let graph = build_claim_graph(index, t, initial_k)?;
            let clusters = connected_components(&graph, posts, index.store())?;
            let mut size_histogram = BTreeMap::new();
            for c in &clusters {
                *size_histogram.entry(c.len()).or_insert(0) += 1;
            }
            Ok(SweepRow {
                threshold: t,
                stats: cluster_quality(&clusters, index.store(), sample_cap, seed),
                size_histogram,
            })
        })
        .collect()
}

/// The least similar member pair of a claim, for manual inspection.
/// Claims larger than `max_members` are scanned over their first
/// `max_members` posts only.
pub fn most_dissimilar_pair(
    cluster: &ClaimCluster,
    store: &EmbeddingStore,
    max_members: usize,
) -> Option<(String, String, f64)> {
    let members = &cluster.members[..cluster.len().min(max_members)];
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..members.len() {
        for j in (i + 1)..members.len() {
            let s = store.similarity(members[i].row, members[j].row);
            if best.is_none_or(|(_, _, b)| s < b) {
                best = Some((i, j, s));
            }
        }
    }
    best.map(|(i, j, s)| (members[i].post_id.clone(), members[j].post_id.clone(), s))
}

/// Recall helper: does the graph contain every exact edge?
pub fn edge_recall(approx: &SimilarityGraph, exact: &SimilarityGraph) -> f64 {
    if exact.edges.is_empty() {
        return 1.0;
    }
    let got = approx.edge_set();
    let hit = exact.edges.iter().filter(|e| got.contains(&(e.a, e.b))).count();
    hit as f64 / exact.edges.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::AnnConfig;
    use crate::corpus::Post;

    fn post(id: &str, ts: i64) -> Post {
        Post {
            post_id: id.into(),
            author_id: "u".into(),
            created_at: ts,
            text: String::new(),
            like_count: 0,
            retweet_count: 0,
            author_followers: 0,
            context_of: None,
        }
    }

    fn setup(vecs: Vec<Vec<f32>>) -> (PostCollection, EmbeddingStore) {
        let ids: Vec<String> = (0..vecs.len()).map(|i| format!("p{i}")).collect();
        let posts =
            PostCollection::new(ids.iter().enumerate().map(|(i, id)| post(id, 100 + i as i64)).collect()).unwrap();
        (posts, EmbeddingStore::from_vectors(ids, vecs).unwrap())
    }

    #[test]
    fn identical_triple_gives_three_edges() {
        let v = vec![0.2f32, 0.4, 0.1, 0.9];
        let (_, store) = setup(vec![v.clone(), v.clone(), v]);
        let index = AnnIndex::build(&store, AnnConfig::default()).unwrap();
        let g = build_claim_graph(&index, 0.88, 10).unwrap();
        assert_eq!(g.edges.len(), 3);
    }

    #[test]
    fn orthogonal_gives_no_edges() {
        let vecs = (0..5)
            .map(|i| {
                let mut v = vec![0.0f32; 5];
                v[i] = 1.0;
                v
            })
            .collect();
        let (_, store) = setup(vecs);
        let index = AnnIndex::build(&store, AnnConfig::default()).unwrap();
        assert!(build_claim_graph(&index, 0.88, 10).unwrap().edges.is_empty());
    }

    #[test]
    fn components_follow_edges_and_time() {
        let (posts, store) = setup(vec![vec![1.0, 0.0]; 4]);
        // p3–p1 edge, p0 and p2 isolated
        let g = SimilarityGraph::from_edges(
            0.9,
            4,
            [Edge {
                a: 3,
                b: 1,
                similarity: 1.0,
            }],
        );
        let cl = connected_components(&g, &posts, &store).unwrap();
        let ids: Vec<Vec<&str>> = cl
            .iter()
            .map(|c| c.members.iter().map(|m| m.post_id.as_str()).collect())
            .collect();
        assert_eq!(ids, vec![vec!["p0"], vec!["p1", "p3"], vec!["p2"]]);
        assert_eq!(cl.iter().map(|c| c.claim_id).collect::<Vec<_>>(), [0, 1, 2]);
        assert!(cl[1].first_ts() <= cl[1].last_ts());
    }

    #[test]
    fn chain_is_one_component() {
        let g = components(3, [(0, 1), (1, 2)]);
        assert_eq!(g, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn dedups_and_orients_edges() {
        let g = SimilarityGraph::from_edges(
            0.5,
            3,
            [
                Edge {
                    a: 2,
                    b: 0,
                    similarity: 0.9,
                },
                Edge {
                    a: 0,
                    b: 2,
                    similarity: 0.9,
                },
                Edge {
                    a: 1,
                    b: 1,
                    similarity: 1.0,
                },
            ],
        );
        assert_eq!(
            g.edges,
            vec![Edge {
                a: 0,
                b: 2,
                similarity: 0.9
            }]
        );
    }

    #[test]
    fn quality_two_orthogonal_blobs() {
        let (posts, store) = setup(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]);
        let g = exact_claim_graph(&store, 0.88);
        let cl = connected_components(&g, &posts, &store).unwrap();
        let q = cluster_quality(&cl, &store, 100, 1);
        assert_eq!(q.cluster_count, 2);
        assert_eq!(q.mean_intra_distance, Some(0.0));
        assert!((q.mean_inter_distance.unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(q.singleton_fraction, 0.0);

        let one = cluster_quality(&cl[..1], &store, 100, 1);
        assert_eq!(one.mean_inter_distance, None);
    }

    #[test]
    fn random_pairs_are_distinct_and_cover() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = HashSet::new();
        for _ in 0..2000 {
            let (i, j) = random_pair(&mut rng, 5);
            assert_ne!(i, j);
            seen.insert((i.min(j), i.max(j)));
        }
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn most_dissimilar_pair_found() {
        let (posts, store) = setup(vec![vec![1.0, 0.0], vec![1.0, 0.1], vec![1.0, 0.5]]);
        let g = exact_claim_graph(&store, 0.5);
        let cl = connected_components(&g, &posts, &store).unwrap();
        let (a, b, _) = most_dissimilar_pair(&cl[0], &store, 100).unwrap();
        assert_eq!((a.as_str(), b.as_str()), ("p0", "p2"));
    }
}
