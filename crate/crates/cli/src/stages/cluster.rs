use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use cdrift_core::ann::{AnnConfig, AnnIndex};
use cdrift_core::claim_graph::{
    build_claim_graph, cluster_quality, connected_components, threshold_sweep, QualityStats,
};
use cdrift_core::corpus::validate_corpus;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{csv_writer, write_json, Ctx};

pub const MEMBERS_FILE: &str = "members.csv";
pub const CLAIMS_FILE: &str = "claims.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub threshold: f64,
    pub posts: usize,
    pub edges: usize,
    pub claims: usize,
    pub multi_post_claims: usize,
    pub singleton_claims: usize,
    pub largest_claim: usize,
    pub quality: QualityStats,
}

fn ann_config(ctx: &Ctx<'_>) -> AnnConfig {
    let c = &ctx.cfg.cluster;
    AnnConfig {
        tree_count: c.tree_count,
        leaf_size: c.leaf_size,
        search_factor: c.search_factor,
        seed: ctx.cfg.seed,
    }
}

pub fn inputs(ctx: &Ctx<'_>) -> (serde_json::Value, Vec<PathBuf>) {
    let p = &ctx.cfg.paths;
    (
        json!({"seed": ctx.cfg.seed, "cluster": ctx.cfg.cluster}),
        vec![p.posts.clone(), p.embeddings.clone()],
    )
}

pub fn run(ctx: &Ctx<'_>, dir: &Path) -> Result<()> {
    let cfg = &ctx.cfg.cluster;
    let posts = ctx.load_posts()?;
    let store = ctx.load_embeddings()?;
    let report = validate_corpus(posts.posts(), &store);
    if !report.ready() {
        bail!(
            "{} posts lack embeddings (e.g. {}); run `cdrift ingest` for details",
            report.missing_embedding_count,
            report.missing_examples.join(", ")
        );
    }

    let index = AnnIndex::build(&store, ann_config(ctx))?;
    let graph = build_claim_graph(&index, cfg.threshold, cfg.initial_k)?;
    let clusters = connected_components(&graph, &posts, &store)?;

    let mut w = csv_writer(&dir.join(MEMBERS_FILE))?;
    w.write_record(["claim_id", "post_id", "created_at"])?;
    for c in &clusters {
        for m in &c.members {
            w.write_record([c.claim_id.to_string(), m.post_id.clone(), m.created_at.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join(CLAIMS_FILE))?;
    w.write_record(["claim_id", "size", "first_ts", "last_ts", "lifespan_days"])?;
    for c in &clusters {
        w.write_record([
            c.claim_id.to_string(),
            c.len().to_string(),
            c.first_ts().to_string(),
            c.last_ts().to_string(),
            c.lifespan_days().to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join(EDGES_FILE))?;
    w.write_record(["a", "b", "similarity"])?;
    for e in &graph.edges {
        w.write_record([store.id(e.a), store.id(e.b), &e.similarity.to_string()])?;
    }
    w.flush()?;

    if !cfg.sweep.is_empty() {
        let rows = threshold_sweep(
            &index,
            &posts,
            &cfg.sweep,
            cfg.initial_k,
            cfg.quality_sample_cap,
            ctx.cfg.seed,
        )?;
        let mut w = csv_writer(&dir.join(SWEEP_FILE))?;
        w.write_record([
            "threshold",
            "claims",
            "singleton_fraction",
            "mean_intra_distance",
            "mean_inter_distance",
        ])?;
        for r in rows {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                r.threshold.to_string(),
                r.stats.cluster_count.to_string(),
                r.stats.singleton_fraction.to_string(),
                opt(r.stats.mean_intra_distance),
                opt(r.stats.mean_inter_distance),
            ])?;
        }
        w.flush()?;
    }

    let multi = clusters.iter().filter(|c| c.len() >= 2).count();
    let summary = ClusterSummary {
        threshold: cfg.threshold,
        posts: posts.len(),
        edges: graph.edges.len(),
        claims: clusters.len(),
        multi_post_claims: multi,
        singleton_claims: clusters.len() - multi,
        largest_claim: clusters.iter().map(|c| c.len()).max().unwrap_or(0),
        quality: cluster_quality(&clusters, &store, cfg.quality_sample_cap, ctx.cfg.seed),
    };
    log::info!(
        "cluster: {} claims ({} with two or more posts) from {} edges",
        summary.claims,
        summary.multi_post_claims,
        summary.edges
    );
    write_json(&dir.join(SUMMARY_FILE), &summary)
}
