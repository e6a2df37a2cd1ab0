//! Random-hyperplane partition forest for cosine retrieval over unit vectors.
//!
//! Each tree splits its subset by the hyperplane equidistant from two
//! randomly drawn members. Queries walk all trees at once through a single
//! priority queue keyed on the smallest margin seen along the path, gather
//! candidates, and re-rank them by exact dot product. Tree buckets only prune;
//! reported similarities are always exact.
//!
//! [`AnnIndex::neighbors_above`] implements threshold retrieval by candidate
//! doubling: start with `initial_k` neighbours and keep doubling `k` while the
//! least similar of them still clears the threshold.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingStore;
use crate::error::{Error, Result};
use crate::vector;

pub const SNAPSHOT_MAGIC: &[u8; 11] = b"CDRIFT-ANN1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnConfig {
    pub tree_count: usize,
    pub leaf_size: usize,
    /// Candidates inspected per query = `search_factor * tree_count * k`.
    pub search_factor: usize,
    pub seed: u64,
}

impl Default for AnnConfig {
    fn default() -> Self {
        Self {
            tree_count: 16,
            leaf_size: 32,
            search_factor: 4,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        normal: Vec<f32>,
        offset: f32,
        left: u32,
        right: u32,
    },
    Leaf(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row: usize,
    pub similarity: f64,
}

/// Neighbours sorted by descending similarity (ties by ascending row).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborSet {
    pub neighbors: Vec<Neighbor>,
}

impl NeighborSet {
    fn from_unsorted(mut neighbors: Vec<Neighbor>) -> Self {
        neighbors.sort_by(cmp_neighbor);
        Self { neighbors }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.neighbors.iter().map(|n| n.row)
    }

    /// `(post_id, similarity)` pairs.
    pub fn with_ids<'s>(&'s self, store: &'s EmbeddingStore) -> impl Iterator<Item = (&'s str, f64)> + 's {
        self.neighbors.iter().map(move |n| (store.id(n.row), n.similarity))
    }
}

fn cmp_neighbor(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.similarity
        .partial_cmp(&a.similarity)
        .unwrap_or(Ordering::Equal)
        .then(a.row.cmp(&b.row))
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold must lie in (0, 1], got {threshold}")))
    }
}

/// Exhaustive scan: every other row with similarity >= `threshold`.
pub fn exact_neighbors(store: &EmbeddingStore, query_id: &str, threshold: f64) -> Result<NeighborSet> {
    check_threshold(threshold)?;
    let q = store
        .row_of(query_id)
        .ok_or_else(|| Error::UnknownId(query_id.to_string()))?;
    Ok(exact_neighbors_row(store, q, threshold))
}

pub(crate) fn exact_neighbors_row(store: &EmbeddingStore, q: usize, threshold: f64) -> NeighborSet {
    let qv = store.vector(q);
    let found = (0..store.len())
        .filter(|&r| r != q)
        .filter_map(|r| {
            let s = vector::dot(qv, store.vector(r));
            (s >= threshold).then_some(Neighbor { row: r, similarity: s })
        })
        .collect();
    NeighborSet::from_unsorted(found)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnIndex<'a> {
    store: &'a EmbeddingStore,
    config: AnnConfig,
    trees: Vec<Tree>,
}

struct QueueEntry {
    margin: f64,
    tree: u32,
    node: u32,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.margin
            .partial_cmp(&other.margin)
            .unwrap_or(Ordering::Equal)
            // lower tree/node first on ties so traversal order is fixed
            .then(other.tree.cmp(&self.tree))
            .then(other.node.cmp(&self.node))
    }
}

impl<'a> AnnIndex<'a> {
    pub fn build(store: &'a EmbeddingStore, config: AnnConfig) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::invalid("cannot index an empty embedding store"));
        }
        if config.tree_count == 0 {
            return Err(Error::invalid("tree_count must be at least 1"));
        }
        if config.leaf_size < 2 {
            return Err(Error::invalid("leaf_size must be at least 2"));
        }
        if config.search_factor == 0 {
            return Err(Error::invalid("search_factor must be at least 1"));
        }
        let trees = (0..config.tree_count)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(t as u64);
                build_tree(store, config.leaf_size, &mut rng)
            })
            .collect();
        Ok(Self { store, config, trees })
    }

    pub fn config(&self) -> AnnConfig {
        self.config
    }

    pub fn store(&self) -> &'a EmbeddingStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    /// Approximate top-`k` neighbours of row `q`, including `q` itself.
    pub fn top_k_row(&self, q: usize, k: usize) -> Vec<Neighbor> {
        let n = self.store.len();
        let k = k.min(n);
        if k == 0 {
            return Vec::new();
        }
        let qv = self.store.vector(q);
        let search_k = self.config.search_factor * self.trees.len() * k;
        let mut seen = vec![false; n];
        let mut candidates: Vec<u32> = Vec::with_capacity(search_k.min(n));
        let mut heap = BinaryHeap::new();
        for t in 0..self.trees.len() {
            heap.push(QueueEntry {
                margin: f64::INFINITY,
                tree: t as u32,
                node: 0,
            });
        }
        while candidates.len() < search_k {
            let Some(entry) = heap.pop() else { break };
            match &self.trees[entry.tree as usize].nodes[entry.node as usize] {
                Node::Leaf(items) => {
                    for &it in items {
                        if !std::mem::replace(&mut seen[it as usize], true) {
                            candidates.push(it);
                        }
                    }
                }
                Node::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    let m = vector::dot(normal, qv) - *offset as f64;
                    heap.push(QueueEntry {
                        margin: entry.margin.min(m),
                        tree: entry.tree,
                        node: *right,
                    });
                    heap.push(QueueEntry {
                        margin: entry.margin.min(-m),
                        tree: entry.tree,
                        node: *left,
                    });
                }
            }
        }
        let mut scored: Vec<Neighbor> = candidates
            .into_iter()
            .map(|r| Neighbor {
                row: r as usize,
                similarity: vector::dot(qv, self.store.vector(r as usize)),
            })
            .collect();
        scored.sort_by(cmp_neighbor);
        scored.truncate(k);
        scored
    }

    /// All rows whose similarity to `query_id` is at least `threshold`,
    /// found by candidate doubling from `initial_k`. Excludes the query.
    pub fn neighbors_above(&self, query_id: &str, threshold: f64, initial_k: usize) -> Result<NeighborSet> {
        check_threshold(threshold)?;
        let q = self
            .store
            .row_of(query_id)
            .ok_or_else(|| Error::UnknownId(query_id.to_string()))?;
        Ok(self.neighbors_above_row(q, threshold, initial_k))
    }

    pub fn neighbors_above_row(&self, q: usize, threshold: f64, initial_k: usize) -> NeighborSet {
        let n = self.store.len();
        let mut k = initial_k.max(1).min(n);
        let top = loop {
            let top = self.top_k_row(q, k);
            let exhausted = top.len() < k || k >= n;
            let least = top.last().map_or(f64::NEG_INFINITY, |nb| nb.similarity);
            if exhausted || least < threshold {
                break top;
            }
            k = (k * 2).min(n);
        };
        NeighborSet {
            neighbors: top
                .into_iter()
                .filter(|nb| nb.row != q && nb.similarity >= threshold)
                .collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_snapshot(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Snapshot layout (little-endian): magic `CDRIFT-ANN1`, `u64` seed,
    /// `u32` tree count, `u32` leaf size, `u32` search factor, `u64` item
    /// count, `u32` dimension, then per tree a `u32` node count and nodes
    /// tagged `0` (leaf: `u32` len + `u32` rows) or `1` (split: normal
    /// floats, `f32` offset, `u32` left, `u32` right).
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&self.config.seed.to_le_bytes())?;
        w.write_all(&(self.trees.len() as u32).to_le_bytes())?;
        w.write_all(&(self.config.leaf_size as u32).to_le_bytes())?;
        w.write_all(&(self.config.search_factor as u32).to_le_bytes())?;
        w.write_all(&(self.store.len() as u64).to_le_bytes())?;
        w.write_all(&(self.store.dimension() as u32).to_le_bytes())?;
        for tree in &self.trees {
            w.write_all(&(tree.nodes.len() as u32).to_le_bytes())?;
            for node in &tree.nodes {
                match node {
                    Node::Leaf(items) => {
                        w.write_all(&[0])?;
                        w.write_all(&(items.len() as u32).to_le_bytes())?;
                        for it in items {
                            w.write_all(&it.to_le_bytes())?;
                        }
                    }
                    Node::Split {
                        normal,
                        offset,
                        left,
                        right,
                    } => {
                        w.write_all(&[1])?;
                        for x in normal {
                            w.write_all(&x.to_le_bytes())?;
                        }
                        w.write_all(&offset.to_le_bytes())?;
                        w.write_all(&left.to_le_bytes())?;
                        w.write_all(&right.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, store: &'a EmbeddingStore) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_snapshot(&mut BufReader::new(file), store)
    }

    pub fn read_snapshot<R: Read>(r: &mut R, store: &'a EmbeddingStore) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("ANN snapshot: {m}"));
        let mut magic = [0u8; 11];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut rd = Reader(r);
        let seed = rd.u64()?;
        let tree_count = rd.u32()? as usize;
        let leaf_size = rd.u32()? as usize;
        let search_factor = rd.u32()? as usize;
        let count = rd.u64()? as usize;
        let dim = rd.u32()? as usize;
        if count != store.len() || dim != store.dimension() {
            return Err(bad(&format!(
                "built for {count} x {dim}, store is {} x {}",
                store.len(),
                store.dimension()
            )));
        }
        let mut trees = Vec::with_capacity(tree_count);
        for _ in 0..tree_count {
            let node_count = rd.u32()? as usize;
            let mut nodes = Vec::with_capacity(node_count);
            for _ in 0..node_count {
                let mut tag = [0u8; 1];
                rd.0.read_exact(&mut tag).map_err(|_| bad("truncated"))?;
                nodes.push(match tag[0] {
                    0 => {
                        let len = rd.u32()? as usize;
                        let mut items = Vec::with_capacity(len);
                        for _ in 0..len {
                            let it = rd.u32()?;
                            if it as usize >= count {
                                return Err(bad("row out of range"));
                            }
                            items.push(it);
                        }
                        Node::Leaf(items)
                    }
                    1 => {
                        let mut normal = Vec::with_capacity(dim);
                        for _ in 0..dim {
                            normal.push(rd.f32()?);
                        }
                        let offset = rd.f32()?;
                        let left = rd.u32()?;
                        let right = rd.u32()?;
                        if left as usize >= node_count || right as usize >= node_count {
                            return Err(bad("child out of range"));
                        }
                        Node::Split {
                            normal,
                            offset,
                            left,
                            right,
                        }
                    }
                    _ => return Err(bad("unknown node tag")),
                });
            }
            trees.push(Tree { nodes });
        }
        Ok(Self {
            store,
            config: AnnConfig {
                tree_count,
                leaf_size,
                search_factor,
                seed,
            },
            trees,
        })
    }
}

struct Reader<'r, R: Read>(&'r mut R);

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|_| Error::invalid("ANN snapshot: truncated"))?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        self.bytes::<4>().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Result<u64> {
        self.bytes::<8>().map(u64::from_le_bytes)
    }
    fn f32(&mut self) -> Result<f32> {
        self.bytes::<4>().map(f32::from_le_bytes)
    }
}

fn build_tree(store: &EmbeddingStore, leaf_size: usize, rng: &mut ChaCha8Rng) -> Tree {
    let mut nodes = Vec::new();
    let items: Vec<u32> = (0..store.len() as u32).collect();
    // explicit stack of (node slot, items) to avoid deep recursion
    nodes.push(Node::Leaf(Vec::new()));
    let mut stack = vec![(0usize, items)];
    while let Some((slot, items)) = stack.pop() {
        if items.len() <= leaf_size {
            nodes[slot] = Node::Leaf(items);
            continue;
        }
        let (normal, offset, mut left, mut right) = split(store, &items, rng);
        if left.is_empty() || right.is_empty() {
            // degenerate (near-identical points): random halves, flat hyperplane
            let mut all = items;
            all.shuffle(rng);
            right = all.split_off(all.len() / 2);
            left = all;
            let l = nodes.len() as u32;
            nodes.push(Node::Leaf(Vec::new()));
            nodes.push(Node::Leaf(Vec::new()));
            nodes[slot] = Node::Split {
                normal: vec![0.0; store.dimension()],
                offset: 0.0,
                left: l,
                right: l + 1,
            };
            stack.push((l as usize + 1, right));
            stack.push((l as usize, left));
            continue;
        }
        let l = nodes.len() as u32;
        nodes.push(Node::Leaf(Vec::new()));
        nodes.push(Node::Leaf(Vec::new()));
        nodes[slot] = Node::Split {
            normal,
            offset,
            left: l,
            right: l + 1,
        };
        stack.push((l as usize + 1, right));
        stack.push((l as usize, left));
    }
    Tree { nodes }
}

type Split = (Vec<f32>, f32, Vec<u32>, Vec<u32>);

fn split(store: &EmbeddingStore, items: &[u32], rng: &mut ChaCha8Rng) -> Split {
    let dim = store.dimension();
    let mut normal = vec![0.0f32; dim];
    let mut offset = 0.0f32;
    for _ in 0..8 {
        let a = items[rng.gen_range(0..items.len())] as usize;
        let b = items[rng.gen_range(0..items.len())] as usize;
        if a == b {
            continue;
        }
        let (va, vb) = (store.vector(a), store.vector(b));
        for i in 0..dim {
            normal[i] = va[i] - vb[i];
        }
        if vector::normalize(&mut normal) == 0.0 {
            continue;
        }
        let mid: f64 = (0..dim)
            .map(|i| normal[i] as f64 * (va[i] as f64 + vb[i] as f64) * 0.5)
            .sum();
        offset = mid as f32;
        break;
    }
    let (mut left, mut right) = (Vec::new(), Vec::new());
    if normal.iter().all(|&x| x == 0.0) {
        return (normal, offset, left, right);
    }
    for &it in items {
        let m = vector::dot(&normal, store.vector(it as usize)) - offset as f64;
        if m > 0.0 {
            right.push(it);
        } else {
            left.push(it);
        }
    }
    (normal, offset, left, right)
}
