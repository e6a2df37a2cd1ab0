use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cdrift_core::claim_graph::{ClaimCluster, Edge, SimilarityGraph};
use cdrift_core::corpus::PostCollection;
use cdrift_core::drift::{cluster_similarity_stats, drift_groups, early_drift, pairwise_drift_curve, DriftGroup};
use cdrift_core::plot::drift_curve_svg;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{cluster, csv_writer, write_json, Ctx, Stage};

pub const EARLY_FILE: &str = "early_drift.csv";
pub const SIMILARITY_FILE: &str = "similarity.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const CURVE_SVG: &str = "curve.svg";
pub const SUMMARY_FILE: &str = "summary.json";

/// One row of `early_drift.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyRow {
    pub claim_id: usize,
    pub window_hours: u32,
    pub drift_value: f64,
    pub group: DriftGroup,
    pub early_posts: usize,
    pub early_likes: u64,
    pub early_retweets: u64,
    pub early_users: usize,
    /// Sum over distinct authors of their largest follower count.
    pub early_followers: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window_hours: u32,
    pub claims: usize,
    pub median: Option<f64>,
    pub none: usize,
    pub low: usize,
    pub high: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    pub windows: Vec<WindowSummary>,
    pub curve_bins: usize,
}

pub fn inputs(ctx: &Ctx<'_>) -> (serde_json::Value, Vec<PathBuf>) {
    let p = &ctx.cfg.paths;
    (
        json!({
            "seed": ctx.cfg.seed,
            "threshold": ctx.cfg.cluster.threshold,
            "context_append": ctx.cfg.cluster.context_append,
            "drift": ctx.cfg.drift,
        }),
        vec![
            p.posts.clone(),
            p.embeddings.clone(),
            ctx.file(Stage::Cluster, cluster::MEMBERS_FILE),
            ctx.file(Stage::Cluster, cluster::EDGES_FILE),
        ],
    )
}

fn early_controls(c: &ClaimCluster, posts: &PostCollection, window_hours: u32) -> Result<(u64, u64, usize, u64)> {
    let end = c.first_ts() + i64::from(window_hours) * 3600;
    let (mut likes, mut retweets) = (0, 0);
    let mut followers: BTreeMap<&str, u64> = BTreeMap::new();
    for m in c.members.iter().take_while(|m| m.created_at < end) {
        let p = posts
            .get(&m.post_id)
            .with_context(|| format!("post {} is not in the posts file", m.post_id))?;
        likes += p.like_count;
        retweets += p.retweet_count;
        let f = followers.entry(&p.author_id).or_insert(0);
        *f = (*f).max(p.author_followers);
    }
    Ok((likes, retweets, followers.len(), followers.values().sum()))
}

pub fn run(ctx: &Ctx<'_>, dir: &Path) -> Result<()> {
    let cfg = &ctx.cfg.drift;
    let posts = ctx.load_posts()?;
    let store = ctx.load_embeddings()?;
    let clusters = ctx.load_clusters(Some(&store))?;
    let multi: Vec<&ClaimCluster> = clusters.iter().filter(|c| c.len() >= 2).collect();

    let mut windows = vec![cfg.window_hours];
    if cfg.sensitivity_window_hours != cfg.window_hours {
        windows.push(cfg.sensitivity_window_hours);
    }
    let mut w = csv_writer(&dir.join(EARLY_FILE))?;
    let mut summaries = Vec::new();
    for &hours in &windows {
        let grouping = drift_groups(multi.iter().map(|c| early_drift(c, &store, hours)).collect());
        let mut count = [0usize; 3];
        for (c, d) in multi.iter().zip(&grouping.drifts) {
            let group = d.group.expect("drift_groups assigns every claim");
            count[group as usize] += 1;
            let (likes, retweets, users, followers) = early_controls(c, &posts, hours)?;
            w.serialize(EarlyRow {
                claim_id: c.claim_id,
                window_hours: hours,
                drift_value: d.drift_value,
                group,
                early_posts: d.window_posts,
                early_likes: likes,
                early_retweets: retweets,
                early_users: users,
                early_followers: followers,
            })?;
        }
        summaries.push(WindowSummary {
            window_hours: hours,
            claims: multi.len(),
            median: grouping.median,
            none: count[DriftGroup::NoDrift as usize],
            low: count[DriftGroup::Low as usize],
            high: count[DriftGroup::High as usize],
        });
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join(SIMILARITY_FILE))?;
    w.write_record(["claim_id", "mean_sim", "sd_sim", "entropy", "pair_basis", "sampled"])?;
    for c in &multi {
        if let Some(s) = cluster_similarity_stats(c, &store, ctx.cfg.cluster.threshold, cfg.pair_cap, ctx.cfg.seed) {
            w.write_record([
                s.claim_id.to_string(),
                s.mean_sim.to_string(),
                s.sd_sim.to_string(),
                s.entropy.to_string(),
                s.pair_basis.to_string(),
                s.sampled.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let edges_path = ctx.file(Stage::Cluster, cluster::EDGES_FILE);
    let mut rdr = csv::Reader::from_path(&edges_path)?;
    let mut edges = Vec::new();
    for rec in rdr.deserialize() {
        let (a, b, similarity): (String, String, f64) =
            rec.with_context(|| format!("parsing {}", edges_path.display()))?;
        let row = |id: &str| {
            store
                .row_of(id)
                .with_context(|| format!("edge endpoint {id} has no embedding"))
        };
        edges.push(Edge {
            a: row(&a)?,
            b: row(&b)?,
            similarity,
        });
    }
    let graph = SimilarityGraph::from_edges(ctx.cfg.cluster.threshold, store.len(), edges);
    let owned: Vec<ClaimCluster> = multi.iter().map(|c| (*c).clone()).collect();
    let curve = pairwise_drift_curve(&owned, &store, &graph, cfg.curve_max_days);
    let mut w = csv_writer(&dir.join(CURVE_FILE))?;
    w.write_record(["day_gap", "mean_sim", "std_err", "pair_count"])?;
    for b in &curve.bins {
        w.write_record([
            b.day_gap.to_string(),
            b.mean_sim.to_string(),
            b.std_err.to_string(),
            b.pair_count.to_string(),
        ])?;
    }
    w.flush()?;
    std::fs::write(
        dir.join(CURVE_SVG),
        drift_curve_svg(&curve, "Similarity of indirectly linked posts by time gap"),
    )?;

    log::info!(
        "drift: {} claims, median {}h drift {:?}",
        multi.len(),
        cfg.window_hours,
        summaries[0].median
    );
    write_json(
        &dir.join(SUMMARY_FILE),
        &DriftSummary {
            windows: summaries,
            curve_bins: curve.bins.len(),
        },
    )
}
