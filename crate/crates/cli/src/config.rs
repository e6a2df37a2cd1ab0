//! Pipeline configuration (TOML).
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cdrift_core::{claim_graph, drift, psylex, survival};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for every randomized step (ANN trees, sampling, k-means).
    pub seed: u64,
    pub paths: Paths,
    pub cluster: ClusterSettings,
    pub drift: DriftSettings,
    pub psylex: PsylexSettings,
    pub aat: AatSettings,
    pub survival: SurvivalSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            paths: Paths::default(),
            cluster: ClusterSettings::default(),
            drift: DriftSettings::default(),
            psylex: PsylexSettings::default(),
            aat: AatSettings::default(),
            survival: SurvivalSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub posts: PathBuf,
    pub embeddings: PathBuf,
    /// Category lexicon; the bundled demo lexicon when absent.
    pub lexicon: Option<PathBuf>,
    /// CDRIFT01 file keyed by phrase text; hashed character n-gram vectors
    /// when absent.
    pub phrase_vectors: Option<PathBuf>,
    /// Extra pronoun list, one per line.
    pub pronouns: Option<PathBuf>,
    /// Replacement extraction prompt for the remote extractor.
    pub prompt: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            posts: "posts.jsonl".into(),
            embeddings: "embeddings.bin".into(),
            lexicon: None,
            phrase_vectors: None,
            pronouns: None,
            prompt: None,
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSettings {
    pub threshold: f64,
    pub initial_k: usize,
    /// Append the text of a post's `context_of` parent before analysis.
    pub context_append: bool,
    pub tree_count: usize,
    pub leaf_size: usize,
    pub search_factor: usize,
    /// Extra thresholds for the cluster-quality sweep; empty skips it.
    pub sweep: Vec<f64>,
    pub quality_sample_cap: usize,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        Self {
            threshold: claim_graph::DEFAULT_THRESHOLD,
            initial_k: 10,
            context_append: false,
            tree_count: 16,
            leaf_size: 32,
            search_factor: 4,
            sweep: Vec::new(),
            quality_sample_cap: claim_graph::DEFAULT_SAMPLE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSettings {
    pub window_hours: u32,
    pub sensitivity_window_hours: u32,
    pub curve_max_days: i64,
    pub pair_cap: usize,
}

impl Default for DriftSettings {
    fn default() -> Self {
        Self {
            window_hours: drift::DEFAULT_WINDOW_HOURS,
            sensitivity_window_hours: 1,
            curve_max_days: 30,
            pair_cap: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsylexSettings {
    pub mutation_threshold: f64,
    pub sensitivity_thresholds: Vec<f64>,
}

impl Default for PsylexSettings {
    fn default() -> Self {
        Self {
            mutation_threshold: psylex::DEFAULT_MUTATION_THRESHOLD,
            sensitivity_thresholds: vec![0.25, 0.5, 0.75],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorMode {
    Offline,
    Remote,
}

/// Inclusive `[min, max]` cluster counts per slot; equal bounds fix k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KRanges {
    pub actor: [usize; 2],
    pub action: [usize; 2],
    pub target: [usize; 2],
}

impl Default for KRanges {
    fn default() -> Self {
        Self {
            actor: [110, 110],
            action: [130, 130],
            target: [95, 95],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AatSettings {
    pub extractor: ExtractorMode,
    pub endpoint: String,
    pub model: String,
    pub batch_size: usize,
    pub concurrency: usize,
    /// Ask the remote model for a short label per phrase cluster.
    pub label_clusters: bool,
    pub k: KRanges,
    /// Dimension of hashed phrase vectors.
    pub vector_dim: usize,
    pub mmr_samples: usize,
    pub mmr_lambda: f64,
}

impl Default for AatSettings {
    fn default() -> Self {
        Self {
            extractor: ExtractorMode::Offline,
            endpoint: String::new(),
            model: String::new(),
            batch_size: 20,
            concurrency: 4,
            label_clusters: false,
            k: KRanges::default(),
            vector_dim: 64,
            mmr_samples: 10,
            mmr_lambda: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurvivalSettings {
    pub gap_days: u32,
    pub min_lifespan_days: f64,
    /// UTC seconds; the latest post timestamp when absent.
    pub corpus_end: Option<i64>,
}

impl Default for SurvivalSettings {
    fn default() -> Self {
        Self {
            gap_days: survival::DEFAULT_GAP_DAYS,
            min_lifespan_days: survival::DEFAULT_MIN_LIFESPAN_DAYS,
            corpus_end: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        fix(&mut paths.posts);
        fix(&mut paths.embeddings);
        fix(&mut paths.output);
        for p in [
            &mut paths.lexicon,
            &mut paths.phrase_vectors,
            &mut paths.pronouns,
            &mut paths.prompt,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.cluster.threshold;
        if !(t > 0.0 && t < 1.0) {
            bail!("cluster.threshold must be in (0, 1), got {t}");
        }
        if let Some(bad) = self.cluster.sweep.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            bail!("cluster.sweep threshold {bad} outside (0, 1)");
        }
        if self.cluster.initial_k == 0 || self.cluster.tree_count == 0 || self.cluster.leaf_size == 0 {
            bail!("cluster.initial_k, tree_count and leaf_size must be positive");
        }
        if self.drift.window_hours == 0 || self.drift.sensitivity_window_hours == 0 {
            bail!("drift windows must be at least one hour");
        }
        let m = self.psylex.mutation_threshold;
        if !(m > 0.0 && m <= 2.0) {
            bail!("psylex.mutation_threshold must be in (0, 2], got {m}");
        }
        for (slot, [lo, hi]) in [
            ("actor", self.aat.k.actor),
            ("action", self.aat.k.action),
            ("target", self.aat.k.target),
        ] {
            if lo < 2 || lo > hi {
                bail!("aat.k.{slot} = [{lo}, {hi}] must satisfy 2 <= min <= max");
            }
        }
        if !(0.0..=1.0).contains(&self.aat.mmr_lambda) {
            bail!("aat.mmr_lambda must be in [0, 1]");
        }
        if self.aat.vector_dim == 0 {
            bail!("aat.vector_dim must be positive");
        }
        if self.aat.extractor == ExtractorMode::Remote && self.aat.endpoint.is_empty() {
            bail!("aat.extractor = \"remote\" needs aat.endpoint");
        }
        if self.survival.min_lifespan_days.is_nan() || self.survival.min_lifespan_days < 0.0 {
            bail!("survival.min_lifespan_days must be non-negative");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = PipelineConfig::default();
        let back: PipelineConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.cluster.threshold, 0.88);
        assert_eq!(c.drift.window_hours, 24);
        assert_eq!(c.psylex.mutation_threshold, 0.5);
        assert_eq!(c.survival.gap_days, 30);
        assert_eq!(c.aat.k.action, [130, 130]);
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            "seed = 3\n[paths]\nposts = \"data/p.jsonl\"\n[aat.k]\nactor = [2, 15]\n",
        )
        .unwrap();
        let c = PipelineConfig::load(&p).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.paths.posts, dir.path().join("data/p.jsonl"));
        assert_eq!(c.paths.output, dir.path().join("out"));
        assert_eq!(c.aat.k.actor, [2, 15]);
        assert_eq!(c.aat.k.target, [95, 95]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(toml::from_str::<PipelineConfig>("[cluster]\nthreshhold = 0.9\n").is_err());
        let mut c = PipelineConfig::default();
        c.cluster.threshold = 1.2;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.aat.k.actor = [5, 3];
        assert!(c.validate().is_err());
    }
}
