use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use cdrift_core::corpus::validate_corpus;
use serde_json::json;

use super::{write_json, Ctx};

pub const REPORT_FILE: &str = "corpus_report.json";

pub fn inputs(ctx: &Ctx<'_>) -> (serde_json::Value, Vec<PathBuf>) {
    let p = &ctx.cfg.paths;
    (
        json!({"context_append": ctx.cfg.cluster.context_append}),
        vec![p.posts.clone(), p.embeddings.clone()],
    )
}

pub fn run(ctx: &Ctx<'_>, dir: &Path) -> Result<()> {
    let posts = ctx.load_posts()?;
    let store = ctx.load_embeddings()?;
    let report = validate_corpus(posts.posts(), &store);
    write_json(&dir.join(REPORT_FILE), &report)?;
    if !report.ready() {
        bail!(
            "corpus not ready: {} posts lack embeddings (e.g. {}), {} duplicate ids",
            report.missing_embedding_count,
            report.missing_examples.join(", "),
            report.duplicate_id_count
        );
    }
    log::info!(
        "ingest: {} posts, {} vectors of dimension {}",
        report.post_count,
        store.len(),
        store.dimension()
    );
    Ok(())
}
