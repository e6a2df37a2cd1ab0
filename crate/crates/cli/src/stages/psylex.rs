use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cdrift_core::psylex::{detect_mutations, score_text, CategoryScores, Lexicon, MutationFlags};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{cluster, csv_writer, write_json, Ctx, Stage};

pub const SCORES_FILE: &str = "scores.csv";
pub const MUTATIONS_FILE: &str = "mutations.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// One row of `mutations.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationRow {
    pub threshold: f64,
    pub claim_id: usize,
    pub category: String,
    pub mutated: bool,
    pub fluctuation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPrevalence {
    pub threshold: f64,
    /// Per category, in lexicon order: claims flagged as mutated.
    pub mutated: Vec<usize>,
    pub any_mutated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsylexSummary {
    pub categories: Vec<String>,
    pub claims: usize,
    pub mutation_threshold: f64,
    pub thresholds: Vec<ThresholdPrevalence>,
    /// Every claim flagged at a higher threshold is flagged at each lower one.
    pub nested_across_thresholds: bool,
}

pub fn inputs(ctx: &Ctx<'_>) -> (serde_json::Value, Vec<PathBuf>) {
    let p = &ctx.cfg.paths;
    let mut files = vec![p.posts.clone(), ctx.file(Stage::Cluster, cluster::MEMBERS_FILE)];
    files.extend(p.lexicon.clone());
    (
        json!({"context_append": ctx.cfg.cluster.context_append, "psylex": ctx.cfg.psylex}),
        files,
    )
}

fn load_lexicon(ctx: &Ctx<'_>) -> Result<Lexicon> {
    match &ctx.cfg.paths.lexicon {
        Some(p) => Lexicon::load(p).with_context(|| format!("loading lexicon {}", p.display())),
        None => Ok(Lexicon::demo()),
    }
}

fn thresholds(ctx: &Ctx<'_>) -> Vec<f64> {
    let mut t = ctx.cfg.psylex.sensitivity_thresholds.clone();
    t.push(ctx.cfg.psylex.mutation_threshold);
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

pub fn run(ctx: &Ctx<'_>, dir: &Path) -> Result<()> {
    let lexicon = load_lexicon(ctx)?;
    let names: Vec<String> = lexicon.category_names().iter().map(|s| s.to_string()).collect();
    let posts = ctx.load_posts()?;
    let clusters = ctx.load_clusters(None)?;

    let scores: Vec<CategoryScores> = posts
        .posts()
        .par_iter()
        .map(|p| score_text(&lexicon, &p.post_id, &p.text))
        .collect();
    let mut w = csv_writer(&dir.join(SCORES_FILE))?;
    let mut header = vec!["post_id".to_string(), "total_tokens".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for s in &scores {
        let mut rec = vec![s.post_id.clone(), s.total_tokens.to_string()];
        rec.extend(s.percents.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let multi: Vec<_> = clusters.iter().filter(|c| c.len() >= 2).collect();
    let claim_scores: Vec<Vec<CategoryScores>> = multi
        .iter()
        .map(|c| {
            c.members
                .iter()
                .map(|m| {
                    posts
                        .position(&m.post_id)
                        .map(|i| scores[i].clone())
                        .with_context(|| format!("post {} is not in the posts file", m.post_id))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut w = csv_writer(&dir.join(MUTATIONS_FILE))?;
    let mut prevalence = Vec::new();
    let mut previous: Option<Vec<MutationFlags>> = None;
    let mut nested = true;
    for t in thresholds(ctx) {
        let flags: Vec<MutationFlags> = multi
            .iter()
            .zip(&claim_scores)
            .map(|(c, s)| detect_mutations(c.claim_id, s, t))
            .collect();
        let mut mutated = vec![0usize; names.len()];
        for f in &flags {
            for (j, cm) in f.categories.iter().enumerate() {
                mutated[j] += usize::from(cm.mutated);
                w.serialize(MutationRow {
                    threshold: t,
                    claim_id: f.claim_id,
                    category: names[j].clone(),
                    mutated: cm.mutated,
                    fluctuation: cm.fluctuation,
                })?;
            }
        }
        if let Some(prev) = &previous {
            nested &= prev.iter().zip(&flags).all(|(lo, hi)| {
                lo.categories
                    .iter()
                    .zip(&hi.categories)
                    .all(|(l, h)| l.mutated || !h.mutated)
            });
        }
        prevalence.push(ThresholdPrevalence {
            threshold: t,
            mutated,
            any_mutated: flags.iter().filter(|f| f.any_mutated()).count(),
        });
        previous = Some(flags);
    }
    w.flush()?;
    if !nested {
        log::warn!("psylex: mutation flags are not nested across thresholds");
    }
    log::info!("psylex: scored {} posts, {} claims", scores.len(), multi.len());
    write_json(
        &dir.join(SUMMARY_FILE),
        &PsylexSummary {
            categories: names,
            claims: multi.len(),
            mutation_threshold: ctx.cfg.psylex.mutation_threshold,
            thresholds: prevalence,
            nested_across_thresholds: nested,
        },
    )
}
