mod config;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use cdrift_core::corpus::write_posts;
use cdrift_core::synth::{generate, SynthConfig};
use clap::{Parser, Subcommand};

use config::PipelineConfig;
use stages::{run_stage, Ctx, MissingDependency, Stage};

const DEFAULT_CONFIG: &str = "cdrift.toml";
const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Cluster embedded posts into claims, measure how claims mutate, and model
/// how long they persist.
#[derive(Debug, Parser)]
#[command(name = "cdrift", version)]
struct Cli {
    /// Pipeline config (TOML). Defaults to ./cdrift.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `paths.output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel steps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for every randomized step, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate posts and embeddings.
    Ingest,
    /// Build the similarity graph and claim clusters.
    Cluster,
    /// Early drift, similarity statistics and the drift curve.
    Drift,
    /// Lexicon scores and psycholinguistic mutation flags.
    Psylex,
    /// Actor-action-target extraction, phrase clustering and mutation flags.
    Aat,
    /// Lifespans, Kaplan-Meier curves, log-rank tests and AFT models.
    Survive,
    /// Markdown summary of all stages.
    Report,
    /// Run several stages in order (default: cluster through report).
    Run {
        #[arg(value_enum)]
        stages: Vec<Stage>,
    },
    /// Print the resolved configuration.
    Config,
    /// Write a synthetic corpus with planted drift plus a matching config.
    Synth {
        dir: PathBuf,
        #[arg(long)]
        posts: Option<usize>,
        #[arg(long)]
        claims: Option<usize>,
        #[arg(long)]
        synth_seed: Option<u64>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None if Path::new(DEFAULT_CONFIG).is_file() => PipelineConfig::load(Path::new(DEFAULT_CONFIG))?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.paths.output = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_stages(cfg: &PipelineConfig, stages: &[Stage]) -> Result<()> {
    std::fs::create_dir_all(&cfg.paths.output).with_context(|| format!("creating {}", cfg.paths.output.display()))?;
    std::fs::write(cfg.paths.output.join(RESOLVED_CONFIG), cfg.to_toml())?;
    let ctx = Ctx::new(cfg);
    for &stage in stages {
        run_stage(stage, &ctx)?;
    }
    Ok(())
}

fn synth(dir: &Path, posts: Option<usize>, claims: Option<usize>, seed: Option<u64>) -> Result<()> {
    let mut sc = SynthConfig::default();
    if let Some(n) = posts {
        sc.posts = n;
    }
    if let Some(n) = claims {
        sc.claims = n;
    }
    if let Some(s) = seed {
        sc.seed = s;
    }
    let corpus = generate(&sc)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_posts(dir.join("posts.jsonl"), &corpus.posts)?;
    corpus.embeddings.write(dir.join("embeddings.bin"))?;
    let truth = serde_json::json!({"config": sc, "corpus_end": corpus.corpus_end, "claims": corpus.claims});
    std::fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&truth)? + "\n")?;

    // the synthetic vocabulary is far smaller than a real corpus, so k is searched
    let mut cfg = PipelineConfig::default();
    cfg.aat.k.actor = [2, 15];
    cfg.aat.k.action = [2, 15];
    cfg.aat.k.target = [2, 15];
    cfg.survival.corpus_end = Some(corpus.corpus_end);
    std::fs::write(dir.join(DEFAULT_CONFIG), cfg.to_toml())?;
    log::info!(
        "synth: {} posts, {} planted claims in {}",
        corpus.posts.len(),
        corpus.claims.len(),
        dir.display()
    );
    Ok(())
}

fn real_main(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    let single = |s: Stage| -> Result<()> { run_stages(&load_config(&cli)?, &[s]) };
    match &cli.command {
        Command::Ingest => single(Stage::Ingest),
        Command::Cluster => single(Stage::Cluster),
        Command::Drift => single(Stage::Drift),
        Command::Psylex => single(Stage::Psylex),
        Command::Aat => single(Stage::Aat),
        Command::Survive => single(Stage::Survive),
        Command::Report => single(Stage::Report),
        Command::Run { stages } => {
            let stages = if stages.is_empty() {
                Stage::PIPELINE.to_vec()
            } else {
                stages.clone()
            };
            run_stages(&load_config(&cli)?, &stages)
        }
        Command::Config => {
            print!("{}", load_config(&cli)?.to_toml());
            Ok(())
        }
        Command::Synth {
            dir,
            posts,
            claims,
            synth_seed,
        } => synth(dir, *posts, *claims, *synth_seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<MissingDependency>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
