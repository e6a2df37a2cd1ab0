//! Post cleaning, light lemmatization and the bundled word lists.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

const PRONOUNS: &str = include_str!("../../data/pronouns.txt");
const VERBS: &str = include_str!("../../data/verbs.txt");
const LEMMA_STEMS: &str = include_str!("../../data/lemma_stems.txt");

/// Words left alone by the plural rules.
const PLURAL_EXCEPTIONS: &[&str] = &[
    "always",
    "perhaps",
    "news",
    "series",
    "species",
    "politics",
    "economics",
    "ethics",
    "physics",
    "mathematics",
    "whereas",
    "across",
    "this",
    "thus",
    "does",
    "goes",
    "bias",
    "canvas",
    "atlas",
    "lens",
    "chaos",
    "sometimes",
    "besides",
    "towards",
    "afterwards",
    "less",
    "unless",
    "various",
    "serious",
    "famous",
    "dangerous",
    "previous",
    "vs",
    "yes",
    "is",
    "was",
    "has",
    "its",
    "his",
    "hers",
    "ours",
    "yours",
    "theirs",
    "us",
    "plus",
    "gas",
];

/// `-use` nouns whose singular keeps the `e`.
const USE_NOUNS: &[&str] = &[
    "house", "clause", "pause", "spouse", "blouse", "excuse", "muse", "ruse", "fuse",
];

/// Word lists used by lemmatization, the offline extractor and slot filtering.
#[derive(Debug, Clone)]
pub struct WordLists {
    pub pronouns: HashSet<String>,
    /// Base-form verbs; a lone target in this set is dropped.
    pub verbs: HashSet<String>,
    /// Noun/verb stems that only confirm suffix stripping.
    pub stems: HashSet<String>,
}

fn parse_list(src: &str) -> HashSet<String> {
    src.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

impl WordLists {
    pub fn bundled() -> &'static WordLists {
        static LISTS: OnceLock<WordLists> = OnceLock::new();
        LISTS.get_or_init(|| WordLists {
            pronouns: parse_list(PRONOUNS),
            verbs: parse_list(VERBS),
            stems: parse_list(LEMMA_STEMS),
        })
    }

    /// Bundled lists with the pronoun list replaced by the file at `path`.
    pub fn with_pronoun_file(path: impl AsRef<Path>) -> Result<WordLists> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lists = Self::bundled().clone();
        lists.pronouns = parse_list(&src);
        Ok(lists)
    }

    pub fn is_known_stem(&self, w: &str) -> bool {
        self.verbs.contains(w) || self.stems.contains(w)
    }
}

struct Patterns {
    url: Regex,
    mention: Regex,
    tag: Regex,
    emoji: Regex,
    space: Regex,
    word: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        url: Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap(),
        mention: Regex::new(r"@\w+").unwrap(),
        tag: Regex::new(r"<[^<>]*>").unwrap(),
        emoji: Regex::new(r"[\p{Extended_Pictographic}\p{Emoji_Modifier}\u{1F1E6}-\u{1F1FF}\u{FE0F}\u{200D}\u{20E3}]")
            .unwrap(),
        space: Regex::new(r"\s+").unwrap(),
        word: Regex::new(r"[\p{L}\p{N}][\p{L}\p{N}'’-]*").unwrap(),
    })
}

/// Strips URLs, @mentions, HTML tags/entities, emoji and `#`, lowercases and
/// collapses whitespace. Punctuation is kept so clause boundaries survive.
pub fn clean(text: &str) -> String {
    let p = patterns();
    let s = p.url.replace_all(text, " ");
    let s = p.mention.replace_all(&s, " ");
    let s = p.tag.replace_all(&s, " ");
    let s = s
        .replace("&amp;", "&")
        .replace("&lt;", " ")
        .replace("&gt;", " ")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&nbsp;", " ");
    let s = p.emoji.replace_all(&s, " ");
    let s = s.replace('#', " ").to_lowercase();
    p.space.replace_all(s.trim(), " ").into_owned()
}

/// Word tokens of already-cleaned text.
pub fn words(cleaned: &str) -> Vec<&str> {
    patterns()
        .word
        .find_iter(cleaned)
        .map(|m| m.as_str().trim_end_matches(['\'', '’', '-']))
        .filter(|w| !w.is_empty())
        .collect()
}

fn undouble(stem: &str) -> Option<&str> {
    let b = stem.as_bytes();
    let n = b.len();
    (n >= 3 && b[n - 1] == b[n - 2] && b[n - 1].is_ascii_alphabetic()).then(|| &stem[..n - 1])
}

fn strip_verb_suffix(w: &str, lists: &WordLists) -> Option<String> {
    let (stem, with_e) = if let Some(stem) = w.strip_suffix("ing") {
        (stem, format!("{stem}e"))
    } else {
        let stem = w.strip_suffix("ed")?;
        if w.ends_with("eed") && w.len() <= 5 {
            return None;
        }
        (stem, w[..w.len() - 1].to_string())
    };
    if stem.len() < 2 {
        return None;
    }
    if lists.is_known_stem(stem) {
        return Some(stem.to_string());
    }
    if lists.is_known_stem(&with_e) {
        return Some(with_e);
    }
    if let Some(u) = undouble(stem) {
        if lists.is_known_stem(u) {
            return Some(u.to_string());
        }
    }
    if let Some(y) = w.strip_suffix("ied") {
        let y = format!("{y}y");
        if lists.is_known_stem(&y) {
            return Some(y);
        }
    }
    None
}

fn singular(w: &str, lists: &WordLists) -> Option<String> {
    if w.len() <= 3 || PLURAL_EXCEPTIONS.contains(&w) {
        return None;
    }
    if let Some(stem) = w.strip_suffix("'s").or_else(|| w.strip_suffix("’s")) {
        return Some(stem.to_string());
    }
    if let Some(stem) = w.strip_suffix("ies") {
        return (w.len() > 4).then(|| format!("{stem}y"));
    }
    if w.ends_with("sses") {
        return Some(w[..w.len() - 2].to_string());
    }
    if w.ends_with("uses") {
        let minus_s = &w[..w.len() - 1];
        if lists.is_known_stem(minus_s) || USE_NOUNS.contains(&minus_s) {
            return Some(minus_s.to_string());
        }
        return Some(w[..w.len() - 2].to_string());
    }
    if w.ends_with("xes") || w.ends_with("ches") || w.ends_with("shes") || w.ends_with("zzes") {
        return Some(w[..w.len() - 2].to_string());
    }
    if let Some(stem) = w.strip_suffix("es") {
        if lists.is_known_stem(stem) {
            return Some(stem.to_string());
        }
    }
    if w.ends_with("ss") || w.ends_with("us") || w.ends_with("is") || w.ends_with("ous") {
        return None;
    }
    w.strip_suffix('s').map(str::to_string)
}

/// Suffix-rule lemma of one lowercase word; unchanged when no rule applies.
pub fn lemmatize_word(w: &str, lists: &WordLists) -> String {
    if !w.chars().all(|c| c.is_alphabetic() || c == '\'' || c == '’') {
        return w.to_string();
    }
    strip_verb_suffix(w, lists)
        .or_else(|| singular(w, lists))
        .unwrap_or_else(|| w.to_string())
}

/// Full normalization: [`clean`], keep word tokens only, lemmatize each.
pub fn preprocess(text: &str) -> String {
    preprocess_with(text, WordLists::bundled())
}

pub fn preprocess_with(text: &str, lists: &WordLists) -> String {
    let cleaned = clean(text);
    words(&cleaned)
        .into_iter()
        .map(|w| lemmatize_word(w, lists))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Cuts a phrase to its first `max_words` whitespace-separated words.
pub fn truncate_words(phrase: &str, max_words: usize) -> (String, bool) {
    let parts: Vec<&str> = phrase.split_whitespace().collect();
    let cut = parts.len() > max_words;
    (parts[..parts.len().min(max_words)].join(" "), cut)
}

/// Clustering key for a slot phrase: preprocessed and at most three words.
pub fn normalize_phrase(phrase: &str, lists: &WordLists) -> String {
    truncate_words(&preprocess_with(phrase, lists), 3).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_noise() {
        assert_eq!(preprocess("Check https://x.co @bob <b>NOW</b>"), "check now");
        assert_eq!(preprocess(""), "");
        assert_eq!(clean("Wake up 🐑🐑 #Plandemic &amp; more"), "wake up plandemic & more");
    }

    #[test]
    fn suffix_rules() {
        assert_eq!(preprocess("labs leaked viruses"), "lab leak virus");
        assert_eq!(preprocess("Vaccines created stories"), "vaccine create story");
        assert_eq!(
            preprocess("they covered it up and planned it"),
            "they cover it up and plan it"
        );
        assert_eq!(
            preprocess("news is dangerous, boxes denied"),
            "news is dangerous box deny"
        );
        assert_eq!(preprocess("seed need nothing"), "seed need nothing");
        assert_eq!(preprocess("hiding causes crisis"), "hide cause crisis");
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate_words("a b c d", 3), ("a b c".to_string(), true));
        assert_eq!(truncate_words(" a  b ", 3), ("a b".to_string(), false));
    }

    #[test]
    fn bundled_lists_contain_expected_words() {
        let l = WordLists::bundled();
        assert!(l.pronouns.contains("they"));
        assert!(l.verbs.contains("vaccinate"));
        assert!(!l.verbs.contains("test"));
        assert!(l.stems.contains("test"));
    }
}
