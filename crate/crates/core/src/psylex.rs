//! Word-category lexicon scoring and consecutive-post mutation detection.
//!
//! Lexicon files are plain text: `[category]` header lines followed by one
//! lowercase entry per line. `medic*` is a stem (prefix match); an entry with
//! spaces is a multiword phrase. Blank lines and `#` comments are ignored.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

pub const DEFAULT_MUTATION_THRESHOLD: f64 = 0.5;

/// Bundled open demonstration lexicon (not LIWC).
pub const DEMO_LEXICON: &str = include_str!("../data/demo_lexicon.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    pub name: String,
    exact: HashSet<String>,
    stems: Vec<String>,
    /// Longest first, for greedy matching.
    phrases: Vec<Vec<String>>,
}

impl Category {
    fn new(name: String) -> Self {
        Self {
            name,
            exact: HashSet::new(),
            stems: Vec::new(),
            phrases: Vec::new(),
        }
    }

    pub fn entry_count(&self) -> usize {
        self.exact.len() + self.stems.len() + self.phrases.len()
    }

    pub fn matches_token(&self, token: &str) -> bool {
        self.exact.contains(token) || self.stems.iter().any(|s| token.starts_with(s.as_str()))
    }

    /// Number of tokens a phrase starting at `tokens[0]` covers, if any.
    fn phrase_at(&self, tokens: &[String]) -> Option<usize> {
        self.phrases
            .iter()
            .find(|p| p.len() <= tokens.len() && p.iter().zip(tokens).all(|(a, b)| a == b))
            .map(Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    categories: Vec<Category>,
}

impl Lexicon {
    pub fn parse(src: &str) -> Result<Self> {
        let mut categories: Vec<Category> = Vec::new();
        for (i, raw) in src.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .map(str::trim)
                    .filter(|n| !n.is_empty())
                    .ok_or_else(|| Error::Lexicon(format!("line {line_no}: malformed header {line:?}")))?;
                if categories.iter().any(|c| c.name == name) {
                    return Err(Error::Lexicon(format!("line {line_no}: duplicate category [{name}]")));
                }
                categories.push(Category::new(name.to_string()));
                continue;
            }
            let cat = categories
                .last_mut()
                .ok_or_else(|| Error::Lexicon(format!("line {line_no}: entry before any [category] header")))?;
            if line.chars().any(char::is_uppercase) {
                return Err(Error::Lexicon(format!(
                    "line {line_no}: entry {line:?} contains uppercase; entries must be lowercase"
                )));
            }
            if line.contains(char::is_whitespace) {
                let words: Vec<String> = tokenize(line);
                if words.len() < 2 {
                    return Err(Error::Lexicon(format!("line {line_no}: bad phrase {line:?}")));
                }
                if !cat.phrases.contains(&words) {
                    cat.phrases.push(words);
                }
            } else if let Some(stem) = line.strip_suffix('*') {
                if stem.is_empty() || stem.contains('*') {
                    return Err(Error::Lexicon(format!("line {line_no}: bad stem {line:?}")));
                }
                if !cat.stems.iter().any(|s| s == stem) {
                    cat.stems.push(stem.to_string());
                }
            } else {
                if line.contains('*') {
                    return Err(Error::Lexicon(format!("line {line_no}: '*' only allowed at the end")));
                }
                cat.exact.insert(line.to_string());
            }
        }
        for cat in categories.iter_mut() {
            cat.phrases.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        }
        Ok(Self { categories })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&src)
    }

    pub fn demo() -> Self {
        Self::parse(DEMO_LEXICON).expect("bundled lexicon parses")
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category_names(&self) -> Vec<&str> {
        self.categories.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    Lexicon::load(path)
}

/// Unicode word-boundary tokens, lowercased.
pub fn tokenize(text: &str) -> Vec<String> {
    text.unicode_words().map(str::to_lowercase).collect()
}

/// Per-category word percentages for one post, aligned with the lexicon's
/// category order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub post_id: String,
    pub total_tokens: usize,
    pub percents: Vec<f64>,
}

/// Scores `text` against every category. A phrase match counts once in the
/// numerator while its tokens all count toward the total.
pub fn score_text(lexicon: &Lexicon, post_id: &str, text: &str) -> CategoryScores {
    let tokens = tokenize(text);
    let total = tokens.len();
    let percents = lexicon
        .categories
        .iter()
        .map(|cat| {
            if total == 0 {
                return 0.0;
            }
            let mut matched = 0usize;
            let mut i = 0;
            while i < total {
                if let Some(len) = cat.phrase_at(&tokens[i..]) {
                    matched += 1;
                    i += len;
                    continue;
                }
                if cat.matches_token(&tokens[i]) {
                    matched += 1;
                }
                i += 1;
            }
            100.0 * matched as f64 / total as f64
        })
        .collect();
    CategoryScores {
        post_id: post_id.to_string(),
        total_tokens: total,
        percents,
    }
}

/// Relative difference `|a - b| / ((a + b) / 2)`, zero when both are zero.
pub fn pairwise_change(a: f64, b: f64) -> f64 {
    let mean = (a + b) / 2.0;
    if mean == 0.0 {
        0.0
    } else {
        (a - b).abs() / mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryMutation {
    pub mutated: bool,
    /// Population SD of the consecutive relative-change series.
    pub fluctuation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationFlags {
    pub claim_id: usize,
    pub categories: Vec<CategoryMutation>,
}

impl MutationFlags {
    pub fn any_mutated(&self) -> bool {
        self.categories.iter().any(|c| c.mutated)
    }
}

/// Flags each category whose score changes by at least `threshold` between
/// some pair of consecutive posts (time-ordered `scores`).
pub fn detect_mutations(claim_id: usize, scores: &[CategoryScores], threshold: f64) -> MutationFlags {
    let ncat = scores.first().map_or(0, |s| s.percents.len());
    let categories = (0..ncat)
        .map(|c| {
            if scores.len() < 2 {
                return CategoryMutation {
                    mutated: false,
                    fluctuation: 0.0,
                };
            }
            let mut mutated = false;
            let changes: Vec<f64> = scores
                .windows(2)
                .map(|w| {
                    let (a, b) = (w[0].percents[c], w[1].percents[c]);
                    let change = pairwise_change(a, b);
                    if change >= threshold && a.max(b) > 0.0 {
                        mutated = true;
                    }
                    change
                })
                .collect();
            let n = changes.len() as f64;
            let mean = changes.iter().sum::<f64>() / n;
            let var = changes.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            CategoryMutation {
                mutated,
                fluctuation: var.sqrt(),
            }
        })
        .collect();
    MutationFlags { claim_id, categories }
}
