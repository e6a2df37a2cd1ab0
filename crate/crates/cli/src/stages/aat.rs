use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cdrift_core::aat::{
    clean, cluster_phrases, detect_aat_mutations, filter_triplets, hashed_phrase_vector, mmr_sample, request_label,
    select_k, slot_phrases, write_triplets, HttpTransport, OfflineExtractor, PhraseClusters, PostText, RemoteConfig,
    RemoteExtractor, Slot, Triplet, TripletExtractor, WordLists, API_KEY_ENV,
};
use cdrift_core::corpus::load_embeddings;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{cluster, csv_writer, write_json, Ctx, Stage};
use crate::config::ExtractorMode;

pub const TRIPLETS_FILE: &str = "triplets.jsonl";
pub const CLUSTERS_FILE: &str = "phrase_clusters.csv";
pub const K_FILE: &str = "k_selection.csv";
pub const REPRESENTATIVES_FILE: &str = "representatives.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const MUTATIONS_FILE: &str = "mutations.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// One row of `mutations.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AatRow {
    pub claim_id: usize,
    pub actor: bool,
    pub action: bool,
    pub target: bool,
    pub any: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSummary {
    pub slot: Slot,
    pub unique_phrases: usize,
    pub k_requested: [usize; 2],
    /// `None` when the slot had fewer than two phrases.
    pub k: Option<usize>,
    pub clamped: bool,
    pub silhouette: Option<f64>,
    pub inertia: Option<f64>,
    pub degenerate: bool,
    pub mutated_claims: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AatSummary {
    pub extractor: ExtractorMode,
    pub posts: usize,
    pub triplets: usize,
    pub claims: usize,
    pub any_mutated: usize,
    pub slots: Vec<SlotSummary>,
}

pub fn inputs(ctx: &Ctx<'_>) -> (serde_json::Value, Vec<PathBuf>) {
    let p = &ctx.cfg.paths;
    let mut files = vec![p.posts.clone(), ctx.file(Stage::Cluster, cluster::MEMBERS_FILE)];
    files.extend(p.pronouns.clone());
    files.extend(p.phrase_vectors.clone());
    files.extend(p.prompt.clone());
    (
        json!({
            "seed": ctx.cfg.seed,
            "context_append": ctx.cfg.cluster.context_append,
            "aat": ctx.cfg.aat,
        }),
        files,
    )
}

fn remote_config(ctx: &Ctx<'_>) -> RemoteConfig {
    let a = &ctx.cfg.aat;
    RemoteConfig {
        endpoint: a.endpoint.clone(),
        model: a.model.clone(),
        batch_size: a.batch_size,
        concurrency: a.concurrency,
        ..RemoteConfig::default()
    }
}

fn extract(ctx: &Ctx<'_>, lists: &WordLists, posts: &[(&str, &str)]) -> Result<Vec<Triplet>> {
    match ctx.cfg.aat.extractor {
        ExtractorMode::Offline => {
            let items: Vec<PostText<'_>> = posts.iter().map(|&(id, text)| PostText { id, text }).collect();
            Ok(OfflineExtractor::new(lists.clone()).extract(&items)?)
        }
        ExtractorMode::Remote => {
            if std::env::var(API_KEY_ENV).is_err() {
                log::warn!("aat: {API_KEY_ENV} is not set; sending requests without a key");
            }
            let mut remote = RemoteExtractor::from_env(remote_config(ctx), HttpTransport::default());
            if let Some(p) = &ctx.cfg.paths.prompt {
                remote.prompt =
                    std::fs::read_to_string(p).with_context(|| format!("reading prompt {}", p.display()))?;
            }
            let cleaned: Vec<(&str, String)> = posts.iter().map(|&(id, text)| (id, clean(text))).collect();
            let items: Vec<PostText<'_>> = cleaned.iter().map(|(id, text)| PostText { id, text }).collect();
            Ok(remote.extract(&items)?)
        }
    }
}

fn phrase_vectors(ctx: &Ctx<'_>, phrases: &[String]) -> Result<Vec<Vec<f64>>> {
    let Some(path) = &ctx.cfg.paths.phrase_vectors else {
        return Ok(phrases
            .iter()
            .map(|p| hashed_phrase_vector(p, ctx.cfg.aat.vector_dim, ctx.cfg.seed))
            .collect());
    };
    let store = load_embeddings(path, None).with_context(|| format!("loading phrase vectors {}", path.display()))?;
    let missing: Vec<&str> = phrases
        .iter()
        .filter(|p| store.row_of(p).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        bail!(
            "{} lacks vectors for {} phrases (e.g. {:?}); the phrase list is in {}",
            path.display(),
            missing.len(),
            &missing[..missing.len().min(5)],
            CLUSTERS_FILE
        );
    }
    Ok(phrases
        .iter()
        .map(|p| {
            store
                .get(p)
                .expect("checked above")
                .iter()
                .map(|&x| f64::from(x))
                .collect()
        })
        .collect())
}

pub fn run(ctx: &Ctx<'_>, dir: &Path) -> Result<()> {
    let cfg = &ctx.cfg.aat;
    let lists = match &ctx.cfg.paths.pronouns {
        Some(p) => WordLists::with_pronoun_file(p)?,
        None => WordLists::bundled().clone(),
    };
    let posts = ctx.load_posts()?;
    let clusters = ctx.load_clusters(None)?;
    let multi: Vec<_> = clusters.iter().filter(|c| c.len() >= 2).collect();

    let mut claim_of: HashMap<&str, usize> = HashMap::new();
    let mut texts: Vec<(&str, &str)> = Vec::new();
    for c in &multi {
        for m in &c.members {
            let p = posts
                .get(&m.post_id)
                .with_context(|| format!("post {} is not in the posts file", m.post_id))?;
            claim_of.insert(&p.post_id, c.claim_id);
            texts.push((&p.post_id, &p.text));
        }
    }
    texts.sort_unstable();

    let raw = extract(ctx, &lists, &texts)?;
    write_triplets(BufWriter::new(File::create(dir.join(TRIPLETS_FILE))?), &raw)?;
    let filtered = filter_triplets(&raw, &lists);

    let mut fitted: HashMap<Slot, PhraseClusters> = HashMap::new();
    let mut slot_rows = Vec::new();
    let mut kw = csv_writer(&dir.join(K_FILE))?;
    kw.write_record(["slot", "k", "inertia", "silhouette"])?;
    let mut cw = csv_writer(&dir.join(CLUSTERS_FILE))?;
    cw.write_record(["slot", "phrase", "cluster_id"])?;
    let mut rw = csv_writer(&dir.join(REPRESENTATIVES_FILE))?;
    rw.write_record(["slot", "cluster_id", "rank", "phrase"])?;
    let mut labels: Vec<(Slot, usize, String)> = Vec::new();

    for slot in Slot::ALL {
        let requested = match slot {
            Slot::Actor => cfg.k.actor,
            Slot::Action => cfg.k.action,
            Slot::Target => cfg.k.target,
        };
        let phrases = slot_phrases(&filtered, slot, &lists);
        let n = phrases.len();
        let mut row = SlotSummary {
            slot,
            unique_phrases: n,
            k_requested: requested,
            k: None,
            clamped: false,
            silhouette: None,
            inertia: None,
            degenerate: false,
            mutated_claims: 0,
        };
        if n < 2 {
            log::warn!("aat: {slot} has {n} distinct phrases; no clusters fitted");
            slot_rows.push(row);
            continue;
        }
        let hi = requested[1].min(n);
        let lo = requested[0].min(hi);
        if hi < requested[1] {
            row.clamped = true;
            log::warn!(
                "aat: {slot} k range {:?} exceeds {n} distinct phrases; using [{lo}, {hi}]",
                requested
            );
        }
        let vectors = phrase_vectors(ctx, &phrases)?;
        let k = if lo == hi {
            lo
        } else {
            let ks: Vec<usize> = (lo..=hi).collect();
            let sel = select_k(&vectors, &ks, ctx.cfg.seed)?;
            for s in &sel.table {
                kw.write_record([
                    slot.to_string(),
                    s.k.to_string(),
                    s.inertia.to_string(),
                    s.silhouette.to_string(),
                ])?;
            }
            sel.best_k
        };
        let pc = cluster_phrases(slot, &phrases, &vectors, k, ctx.cfg.seed)?;
        if lo == hi {
            kw.write_record([
                slot.to_string(),
                k.to_string(),
                pc.inertia.to_string(),
                pc.silhouette.to_string(),
            ])?;
        }
        for (phrase, id) in &pc.assignments {
            cw.write_record([slot.as_str(), phrase, &id.to_string()])?;
        }
        let position: BTreeMap<&str, usize> = phrases.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
        for (cid, members) in pc.members().iter().enumerate() {
            let vecs: Vec<Vec<f64>> = members.iter().map(|p| vectors[position[p]].clone()).collect();
            let picks = mmr_sample(&vecs, cfg.mmr_samples, cfg.mmr_lambda);
            for (rank, &i) in picks.iter().enumerate() {
                rw.write_record([slot.as_str(), &cid.to_string(), &rank.to_string(), members[i]])?;
            }
            if cfg.label_clusters && cfg.extractor == ExtractorMode::Remote && !picks.is_empty() {
                let sample: Vec<String> = picks.iter().map(|&i| members[i].to_string()).collect();
                let key = std::env::var(API_KEY_ENV).ok();
                let label = request_label(&HttpTransport::default(), &remote_config(ctx), key.as_deref(), &sample)?;
                labels.push((slot, cid, label));
            }
        }
        row.k = Some(k);
        row.silhouette = Some(pc.silhouette);
        row.inertia = Some(pc.inertia);
        row.degenerate = pc.degenerate;
        fitted.insert(slot, pc);
        slot_rows.push(row);
    }
    kw.flush()?;
    cw.flush()?;
    rw.flush()?;
    if !labels.is_empty() {
        let mut w = csv_writer(&dir.join(LABELS_FILE))?;
        w.write_record(["slot", "cluster_id", "description"])?;
        for (slot, cid, label) in &labels {
            w.write_record([slot.as_str(), &cid.to_string(), label])?;
        }
        w.flush()?;
    }

    let mut by_claim: BTreeMap<usize, Vec<Triplet>> = multi.iter().map(|c| (c.claim_id, Vec::new())).collect();
    for t in filtered {
        if let Some(&cid) = claim_of.get(t.post_id.as_str()) {
            by_claim.entry(cid).or_default().push(t);
        }
    }
    let mut w = csv_writer(&dir.join(MUTATIONS_FILE))?;
    let mut any = 0;
    for (&cid, trips) in &by_claim {
        let f = detect_aat_mutations(cid, trips, &fitted, &lists);
        for row in slot_rows.iter_mut() {
            row.mutated_claims += usize::from(f.get(row.slot));
        }
        any += usize::from(f.any_mutated);
        w.serialize(AatRow {
            claim_id: cid,
            actor: f.actor_mutated,
            action: f.action_mutated,
            target: f.target_mutated,
            any: f.any_mutated,
        })?;
    }
    w.flush()?;

    log::info!(
        "aat: {} triplets from {} posts in {} claims",
        raw.len(),
        texts.len(),
        by_claim.len()
    );
    write_json(
        &dir.join(SUMMARY_FILE),
        &AatSummary {
            extractor: cfg.extractor,
            posts: texts.len(),
            triplets: raw.len(),
            claims: by_claim.len(),
            any_mutated: any,
            slots: slot_rows,
        },
    )
}
