//! File-based pipeline stages.
//!
//! Each stage writes into `<output>/<stage>/` and finishes by writing
//! `manifest.json`, which records a hash of everything the stage read plus
//! the hash of every file it wrote. A stage whose manifest matches its
//! current inputs, and whose outputs are intact, is skipped.

mod aat;
mod cluster;
mod drift;
mod ingest;
mod psylex;
mod report;
mod survive;

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cdrift_core::claim_graph::{ClaimCluster, ClaimMember};
use cdrift_core::corpus::{self, EmbeddingStore, PostCollection};
use clap::ValueEnum;
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Stage {
    Ingest,
    Cluster,
    Drift,
    Psylex,
    Aat,
    Survive,
    Report,
}

impl Stage {
    /// Stages run by `cdrift run` without arguments, in order.
    pub const PIPELINE: [Stage; 6] = [
        Stage::Cluster,
        Stage::Drift,
        Stage::Psylex,
        Stage::Aat,
        Stage::Survive,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Cluster => "cluster",
            Stage::Drift => "drift",
            Stage::Psylex => "psylex",
            Stage::Aat => "aat",
            Stage::Survive => "survive",
            Stage::Report => "report",
        }
    }

    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Ingest | Stage::Cluster => &[],
            Stage::Drift | Stage::Psylex | Stage::Aat => &[Stage::Cluster],
            Stage::Survive => &[Stage::Cluster, Stage::Drift, Stage::Psylex, Stage::Aat],
            Stage::Report => &[Stage::Survive],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A stage was asked to run before one of its predecessors completed.
#[derive(Debug)]
pub struct MissingDependency {
    pub stage: Stage,
    pub needs: Stage,
    pub dir: PathBuf,
}

impl fmt::Display for MissingDependency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stage {} needs completed {} outputs in {} (run `cdrift {}` first)",
            self.stage,
            self.needs,
            self.dir.display(),
            self.needs
        )
    }
}

impl std::error::Error for MissingDependency {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    stage: String,
    input_hash: String,
    outputs: Vec<OutputEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OutputEntry {
    file: String,
    sha256: String,
}

pub struct Ctx<'a> {
    pub cfg: &'a PipelineConfig,
    pub out: PathBuf,
}

impl<'a> Ctx<'a> {
    pub fn new(cfg: &'a PipelineConfig) -> Self {
        Self {
            cfg,
            out: cfg.paths.output.clone(),
        }
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    pub fn file(&self, stage: Stage, name: &str) -> PathBuf {
        self.stage_dir(stage).join(name)
    }

    pub fn load_posts(&self) -> Result<PostCollection> {
        let path = &self.cfg.paths.posts;
        corpus::load_posts(path, self.cfg.cluster.context_append)
            .with_context(|| format!("loading posts from {}", path.display()))
    }

    pub fn load_embeddings(&self) -> Result<EmbeddingStore> {
        let path = &self.cfg.paths.embeddings;
        corpus::load_embeddings(path, None).with_context(|| format!("loading embeddings from {}", path.display()))
    }

    /// Claims written by the cluster stage. Member rows index `store` when
    /// given and are zero otherwise.
    pub fn load_clusters(&self, store: Option<&EmbeddingStore>) -> Result<Vec<ClaimCluster>> {
        let path = self.file(Stage::Cluster, cluster::MEMBERS_FILE);
        let mut rdr = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut clusters: Vec<ClaimCluster> = Vec::new();
        for rec in rdr.deserialize() {
            let (claim_id, post_id, created_at): (usize, String, i64) =
                rec.with_context(|| format!("parsing {}", path.display()))?;
            let row = match store {
                Some(s) => s
                    .row_of(&post_id)
                    .with_context(|| format!("post {post_id} from {} has no embedding", path.display()))?,
                None => 0,
            };
            if claim_id == clusters.len() {
                clusters.push(ClaimCluster {
                    claim_id,
                    members: Vec::new(),
                });
            } else if claim_id + 1 != clusters.len() {
                anyhow::bail!("{}: claim ids must be contiguous and grouped", path.display());
            }
            clusters[claim_id].members.push(ClaimMember {
                post_id,
                created_at,
                row,
            });
        }
        Ok(clusters)
    }
}

fn hash_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

fn input_hash(stage: Stage, settings: &serde_json::Value, inputs: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION"));
    h.update(stage.name());
    h.update(serde_json::to_vec(settings)?);
    for p in inputs {
        h.update(hash_file(p)?);
    }
    Ok(format!("{:x}", h.finalize()))
}

fn up_to_date(dir: &Path, hash: &str) -> bool {
    let Ok(text) = fs::read_to_string(dir.join(MANIFEST)) else {
        return false;
    };
    let Ok(m) = serde_json::from_str::<Manifest>(&text) else {
        return false;
    };
    m.input_hash == hash
        && m.outputs
            .iter()
            .all(|o| hash_file(&dir.join(&o.file)).is_ok_and(|h| h == o.sha256))
}

/// Settings and input files that determine a stage's outputs.
fn stage_inputs(stage: Stage, ctx: &Ctx<'_>) -> (serde_json::Value, Vec<PathBuf>) {
    match stage {
        Stage::Ingest => ingest::inputs(ctx),
        Stage::Cluster => cluster::inputs(ctx),
        Stage::Drift => drift::inputs(ctx),
        Stage::Psylex => psylex::inputs(ctx),
        Stage::Aat => aat::inputs(ctx),
        Stage::Survive => survive::inputs(ctx),
        Stage::Report => report::inputs(ctx),
    }
}

fn execute(stage: Stage, ctx: &Ctx<'_>, dir: &Path) -> Result<()> {
    match stage {
        Stage::Ingest => ingest::run(ctx, dir),
        Stage::Cluster => cluster::run(ctx, dir),
        Stage::Drift => drift::run(ctx, dir),
        Stage::Psylex => psylex::run(ctx, dir),
        Stage::Aat => aat::run(ctx, dir),
        Stage::Survive => survive::run(ctx, dir),
        Stage::Report => report::run(ctx, dir),
    }
}

pub fn run_stage(stage: Stage, ctx: &Ctx<'_>) -> Result<Outcome> {
    for &dep in stage.dependencies() {
        if !ctx.file(dep, MANIFEST).is_file() {
            return Err(MissingDependency {
                stage,
                needs: dep,
                dir: ctx.stage_dir(dep),
            }
            .into());
        }
    }
    let (settings, inputs) = stage_inputs(stage, ctx);
    let hash = input_hash(stage, &settings, &inputs).with_context(|| format!("hashing inputs of {stage}"))?;
    let dir = ctx.stage_dir(stage);
    if up_to_date(&dir, &hash) {
        info!("{stage}: inputs unchanged, skipping");
        return Ok(Outcome::UpToDate);
    }
    if dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    info!("{stage}: running");
    execute(stage, ctx, &dir).with_context(|| format!("stage {stage} failed"))?;

    let mut files: Vec<String> = fs::read_dir(&dir)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    files.sort();
    let outputs = files
        .into_iter()
        .map(|file| {
            let sha256 = hash_file(&dir.join(&file))?;
            Ok(OutputEntry { file, sha256 })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        stage: stage.name().to_string(),
        input_hash: hash,
        outputs,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    info!("{stage}: done");
    Ok(Outcome::Ran)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}
