//! Triplet extraction: a deterministic pattern extractor and a remote client
//! for an HTTP JSON model endpoint.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::text::{clean, lemmatize_word, truncate_words, words, WordLists};
use super::Triplet;
use crate::error::{Error, Result};

pub const EXTRACT_PROMPT: &str = include_str!("../../data/aat_extract_prompt.txt");
pub const LABEL_PROMPT: &str = include_str!("../../data/aat_label_prompt.txt");
pub const API_KEY_ENV: &str = "CDRIFT_LLM_KEY";

/// A post as seen by an extractor.
#[derive(Debug, Clone, Copy)]
pub struct PostText<'a> {
    pub id: &'a str,
    pub text: &'a str,
}

pub trait TripletExtractor {
    /// Triplets for every post, ordered by post id.
    fn extract(&self, posts: &[PostText<'_>]) -> Result<Vec<Triplet>>;
}

const AUXILIARIES: &[&str] = &[
    "will", "would", "can", "could", "should", "shall", "may", "might", "must", "not", "never", "just", "also",
    "already", "still", "really", "even", "to", "don't", "doesn't", "didn't", "won't", "can't", "cannot", "isn't",
    "aren't", "wasn't", "weren't", "haven't", "hasn't", "hadn't", "being", "been",
];
const BE_HAVE_DO: &[&str] = &[
    "is", "are", "was", "were", "be", "am", "has", "have", "had", "do", "does", "did", "'s",
];
const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "our", "their", "my", "your", "his", "her", "its", "some",
    "all", "any", "every", "each", "no", "such", "more", "most", "many", "much",
];
const BOUNDARY_WORDS: &[&str] = &[
    "in", "on", "at", "with", "from", "by", "of", "for", "about", "into", "over", "under", "through", "during",
    "after", "before", "since", "until", "against", "without", "within", "among", "via", "per", "to", "and", "or",
    "but", "because", "so", "while", "if", "when", "then", "than", "that", "which", "who", "whom", "whose", "where",
    "as", "like", "there",
];
const PARTICLES: &[&str] = &["up", "out", "down", "off", "away", "back"];
const IRREGULAR: &[&str] = &[
    "made",
    "took",
    "taken",
    "gave",
    "given",
    "said",
    "knew",
    "known",
    "thought",
    "found",
    "told",
    "sold",
    "brought",
    "built",
    "bought",
    "caught",
    "fought",
    "hid",
    "hidden",
    "kept",
    "left",
    "lost",
    "paid",
    "ran",
    "saw",
    "seen",
    "sent",
    "stole",
    "stolen",
    "won",
    "wrote",
    "written",
    "came",
    "went",
    "gone",
    "got",
    "gotten",
    "began",
    "begun",
    "broke",
    "broken",
    "chose",
    "chosen",
    "drove",
    "fell",
    "felt",
    "forgot",
    "grew",
    "grown",
    "held",
    "heard",
    "hurt",
    "led",
    "lied",
    "meant",
    "met",
    "put",
    "rose",
    "risen",
    "sat",
    "shut",
    "spoke",
    "spoken",
    "spent",
    "spread",
    "stood",
    "taught",
    "threw",
    "thrown",
    "understood",
    "woke",
    "wore",
    "released",
];

/// Subject-verb-object patterns over cleaned text. Lower fidelity than a
/// model-based extractor; used for hermetic runs and tests.
#[derive(Debug, Clone)]
pub struct OfflineExtractor {
    lists: WordLists,
}

impl Default for OfflineExtractor {
    fn default() -> Self {
        Self {
            lists: WordLists::bundled().clone(),
        }
    }
}

impl OfflineExtractor {
    pub fn new(lists: WordLists) -> Self {
        Self { lists }
    }

    fn is_verb(&self, w: &str) -> bool {
        if self.lists.verbs.contains(w) || IRREGULAR.contains(&w) {
            return true;
        }
        if w.ends_with("ed") || w.ends_with("ing") {
            let lemma = lemmatize_word(w, &self.lists);
            return lemma != w && self.lists.is_known_stem(&lemma);
        }
        if let Some(stem) = w.strip_suffix('s') {
            let lemma = lemmatize_word(w, &self.lists);
            return self.lists.verbs.contains(&lemma) || self.lists.verbs.contains(stem);
        }
        false
    }

    /// Main-verb positions in one clause.
    fn verb_positions(&self, toks: &[&str]) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, &w) in toks.iter().enumerate() {
            let prev = i.checked_sub(1).map(|j| toks[j]);
            if prev.is_some_and(|p| DETERMINERS.contains(&p)) {
                continue;
            }
            let next = toks.get(i + 1).copied();
            if BE_HAVE_DO.contains(&w) {
                // copula or possession only when no main verb follows
                let next_is_verb = next.is_some_and(|n| self.is_verb(n) || AUXILIARIES.contains(&n));
                if !next_is_verb && next.is_some() {
                    out.push(i);
                }
                continue;
            }
            if AUXILIARIES.contains(&w) {
                continue;
            }
            if self.is_verb(w) {
                out.push(i);
            }
        }
        out
    }

    fn extract_clause(&self, toks: &[&str], out: &mut Vec<(String, String, String)>) {
        let verbs = self.verb_positions(toks);
        let mut prev_actor = String::new();
        let mut prev_end = 0usize;
        for (j, &v) in verbs.iter().enumerate() {
            if v < prev_end {
                continue;
            }
            let next_verb = verbs.get(j + 1).copied().unwrap_or(toks.len());

            let mut actor_words: Vec<&str> = Vec::new();
            let mut i = v;
            while i > prev_end {
                i -= 1;
                let w = toks[i];
                if BOUNDARY_WORDS.contains(&w) {
                    break;
                }
                if DETERMINERS.contains(&w) || AUXILIARIES.contains(&w) || BE_HAVE_DO.contains(&w) {
                    continue;
                }
                actor_words.push(w);
            }
            actor_words.reverse();
            let actor = if actor_words.is_empty() && j > 0 {
                prev_actor.clone()
            } else {
                let start = actor_words.len().saturating_sub(3);
                actor_words[start..].join(" ")
            };

            let mut action = toks[v].to_string();
            let mut has_particle = false;
            let mut k = v + 1;
            let mut target_words: Vec<&str> = Vec::new();
            while k < next_verb && target_words.len() < 3 {
                let w = toks[k];
                if BOUNDARY_WORDS.contains(&w) && !target_words.is_empty() {
                    break;
                }
                if !has_particle && k <= v + 2 && PARTICLES.contains(&w) {
                    action.push(' ');
                    action.push_str(w);
                    has_particle = true;
                    k += 1;
                    continue;
                }
                if !(DETERMINERS.contains(&w) || BOUNDARY_WORDS.contains(&w) || AUXILIARIES.contains(&w)) {
                    target_words.push(w);
                }
                k += 1;
            }
            prev_end = k.min(next_verb);
            out.push((actor.clone(), action, target_words.join(" ")));
            prev_actor = actor;
        }
    }

    pub fn extract_text(&self, post_id: &str, text: &str) -> Vec<Triplet> {
        let cleaned = clean(text);
        let mut raw = Vec::new();
        for clause in cleaned.split(['.', '!', '?', ';', ':', ',', '(', ')', '"', '“', '”']) {
            let toks = words(clause);
            if !toks.is_empty() {
                self.extract_clause(&toks, &mut raw);
            }
        }
        raw.into_iter()
            .map(|(actor, action, target)| Triplet {
                post_id: post_id.to_string(),
                actor,
                action,
                target,
            })
            .collect()
    }
}

impl TripletExtractor for OfflineExtractor {
    fn extract(&self, posts: &[PostText<'_>]) -> Result<Vec<Triplet>> {
        let mut out: Vec<Triplet> = posts.iter().flat_map(|p| self.extract_text(p.id, p.text)).collect();
        out.sort_by(|a, b| a.post_id.cmp(&b.post_id));
        Ok(out)
    }
}

/// Sends one JSON request; returns the response body or a message.
pub trait Transport: Sync {
    fn post_json(&self, endpoint: &str, api_key: Option<&str>, body: &Value) -> std::result::Result<String, String>;
}

#[derive(Debug, Clone)]
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: std::time::Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(std::time::Duration::from_secs(120))
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, endpoint: &str, api_key: Option<&str>, body: &Value) -> std::result::Result<String, String> {
        let mut req = self.agent.post(endpoint);
        if let Some(key) = api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        req.send_json(body.clone())
            .map_err(|e| e.to_string())?
            .into_string()
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub batch_size: usize,
    pub concurrency: usize,
    pub max_attempts: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            batch_size: 20,
            concurrency: 4,
            max_attempts: 3,
        }
    }
}

pub struct RemoteExtractor<T: Transport> {
    pub config: RemoteConfig,
    pub prompt: String,
    api_key: Option<String>,
    transport: T,
}

impl<T: Transport> RemoteExtractor<T> {
    pub fn new(config: RemoteConfig, transport: T, api_key: Option<String>) -> Self {
        Self {
            config,
            prompt: EXTRACT_PROMPT.to_string(),
            api_key,
            transport,
        }
    }

    /// Reads the key from `CDRIFT_LLM_KEY`.
    pub fn from_env(config: RemoteConfig, transport: T) -> Self {
        Self::new(config, transport, std::env::var(API_KEY_ENV).ok())
    }

    fn request_body(&self, batch: &[PostText<'_>]) -> Value {
        serde_json::json!({
            "model": self.config.model,
            "prompt": self.prompt,
            "batch": batch.iter().map(|p| serde_json::json!({"id": p.id, "text": p.text})).collect::<Vec<_>>(),
        })
    }

    fn run_batch(&self, batch: &[PostText<'_>]) -> Result<Vec<Triplet>> {
        let body = self.request_body(batch);
        let ids: HashSet<&str> = batch.iter().map(|p| p.id).collect();
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts.max(1) {
            let reply = self
                .transport
                .post_json(&self.config.endpoint, self.api_key.as_deref(), &body)
                .and_then(|text| parse_reply(&text, &ids));
            match reply {
                Ok(t) => return Ok(t),
                Err(e) => {
                    log::warn!("extractor batch attempt {attempt} failed: {e}");
                    last = e;
                }
            }
        }
        Err(Error::Extractor(format!(
            "batch starting at post {} failed after {} attempts: {last}",
            batch.first().map_or("", |p| p.id),
            self.config.max_attempts.max(1)
        )))
    }
}

impl<T: Transport> TripletExtractor for RemoteExtractor<T> {
    fn extract(&self, posts: &[PostText<'_>]) -> Result<Vec<Triplet>> {
        if self.config.endpoint.is_empty() {
            return Err(Error::Extractor("remote extractor needs an endpoint".into()));
        }
        let batches: Vec<&[PostText<'_>]> = posts.chunks(self.config.batch_size.max(1)).collect();
        let results: Mutex<Vec<Option<Result<Vec<Triplet>>>>> = Mutex::new((0..batches.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let workers = self.config.concurrency.clamp(1, batches.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= batches.len() {
                        break;
                    }
                    let r = self.run_batch(batches[i]);
                    results.lock().unwrap()[i] = Some(r);
                });
            }
        });
        let mut out = Vec::new();
        for r in results.into_inner().unwrap() {
            out.extend(r.expect("every batch ran")?);
        }
        out.sort_by(|a, b| a.post_id.cmp(&b.post_id));
        Ok(out)
    }
}

fn slot(obj: &serde_json::Map<String, Value>, key: &str, id: &str) -> std::result::Result<String, String> {
    let v = obj
        .get(key)
        .ok_or_else(|| format!("post {id}: triplet missing \"{key}\""))?
        .as_str()
        .ok_or_else(|| format!("post {id}: \"{key}\" is not a string"))?;
    let (s, cut) = truncate_words(&clean(v), 3);
    if cut {
        log::warn!("post {id}: {key} {v:?} longer than three words, truncated");
    }
    Ok(s)
}

/// Unwraps chat-style envelopes so the strict reply array is parsed either way.
fn reply_payload(text: &str) -> std::result::Result<Value, String> {
    let v: Value = serde_json::from_str(text.trim()).map_err(|e| format!("reply is not JSON: {e}"))?;
    if v.is_array() {
        return Ok(v);
    }
    let inner = v
        .pointer("/choices/0/message/content")
        .or_else(|| v.get("content"))
        .or_else(|| v.get("output"))
        .and_then(Value::as_str)
        .ok_or("reply is neither an array nor a known envelope")?;
    serde_json::from_str(inner.trim()).map_err(|e| format!("reply content is not JSON: {e}"))
}

/// Parses `[{"<id>": [{"actor":..,"action":..,"target":..}]}]`.
pub fn parse_reply(text: &str, batch_ids: &HashSet<&str>) -> std::result::Result<Vec<Triplet>, String> {
    let payload = reply_payload(text)?;
    let items = payload.as_array().ok_or("reply is not a JSON array")?;
    let mut by_id: HashMap<String, Vec<Triplet>> = HashMap::new();
    for item in items {
        let obj = item.as_object().ok_or("reply item is not an object")?;
        for (id, list) in obj {
            if !batch_ids.contains(id.as_str()) {
                return Err(format!("reply mentions unknown post id {id}"));
            }
            let list = list
                .as_array()
                .ok_or_else(|| format!("post {id}: value is not a list"))?;
            let entry = by_id.entry(id.clone()).or_default();
            for t in list {
                let t = t
                    .as_object()
                    .ok_or_else(|| format!("post {id}: triplet is not an object"))?;
                entry.push(Triplet {
                    post_id: id.clone(),
                    actor: slot(t, "actor", id)?,
                    action: slot(t, "action", id)?,
                    target: slot(t, "target", id)?,
                });
            }
        }
    }
    let mut out: Vec<Triplet> = by_id.into_values().flatten().collect();
    out.sort_by(|a, b| a.post_id.cmp(&b.post_id));
    Ok(out)
}

/// Label-request prompt for one cluster's representative phrases.
pub fn label_prompt(phrases: &[String]) -> String {
    format!("{}{}\n", LABEL_PROMPT, phrases.join(", "))
}

/// Asks the remote model for a short label for one cluster.
pub fn request_label<T: Transport>(
    transport: &T,
    config: &RemoteConfig,
    api_key: Option<&str>,
    phrases: &[String],
) -> Result<String> {
    let body = serde_json::json!({"model": config.model, "prompt": label_prompt(phrases)});
    let mut last = String::new();
    for _ in 0..config.max_attempts.max(1) {
        match transport.post_json(&config.endpoint, api_key, &body) {
            Ok(text) => {
                let label = match serde_json::from_str::<Value>(text.trim()) {
                    Ok(Value::String(s)) => s,
                    Ok(v) => v
                        .pointer("/choices/0/message/content")
                        .or_else(|| v.get("content"))
                        .and_then(Value::as_str)
                        .unwrap_or_default()
                        .to_string(),
                    Err(_) => text,
                };
                let label = truncate_words(label.trim().trim_matches('"'), 3).0.replace(',', "");
                if !label.is_empty() {
                    return Ok(label);
                }
                last = "empty label".into();
            }
            Err(e) => last = e,
        }
    }
    Err(Error::Extractor(format!("label request failed: {last}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn offline(text: &str) -> Vec<(String, String, String)> {
        OfflineExtractor::default()
            .extract_text("1", text)
            .into_iter()
            .map(|t| (t.actor, t.action, t.target))
            .collect()
    }

    fn t(a: &str, b: &str, c: &str) -> (String, String, String) {
        (a.into(), b.into(), c.into())
    }

    #[test]
    fn offline_simple_svo() {
        assert_eq!(
            offline("chinese government created covid bioweapon"),
            vec![t("chinese government", "created", "covid bioweapon")]
        );
        assert!(offline("").is_empty());
    }

    #[test]
    fn offline_handles_particles_and_shared_actor() {
        let got = offline("They covered it up and arrested the doctors.");
        assert_eq!(got[0], t("they", "covered up", "it"));
        assert_eq!(got[1], t("they", "arrested", "doctors"));
    }

    #[test]
    fn offline_copula_and_aux() {
        assert_eq!(offline("the mask is useless"), vec![t("mask", "is", "useless")]);
        assert_eq!(
            offline("big pharma will hide the data"),
            vec![t("big pharma", "hide", "data")]
        );
    }

    #[test]
    fn offline_is_deterministic_and_sorted() {
        let ex = OfflineExtractor::default();
        let posts = [
            PostText {
                id: "b",
                text: "bill gates funded labs",
            },
            PostText {
                id: "a",
                text: "media hides deaths",
            },
        ];
        let one = ex.extract(&posts).unwrap();
        assert_eq!(one, ex.extract(&posts).unwrap());
        assert_eq!(one[0].post_id, "a");
        assert_eq!(one[0].action, "hides");
    }

    struct Scripted {
        replies: Vec<std::result::Result<String, String>>,
        calls: AtomicUsize,
    }

    impl Transport for Scripted {
        fn post_json(&self, _: &str, key: Option<&str>, body: &Value) -> std::result::Result<String, String> {
            assert_eq!(key, Some("k"));
            assert!(body["batch"].is_array());
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies[i.min(self.replies.len() - 1)].clone()
        }
    }

    fn remote(replies: Vec<std::result::Result<String, String>>) -> RemoteExtractor<Scripted> {
        let config = RemoteConfig {
            endpoint: "http://localhost/x".into(),
            model: "m".into(),
            concurrency: 1,
            ..Default::default()
        };
        RemoteExtractor::new(
            config,
            Scripted {
                replies,
                calls: AtomicUsize::new(0),
            },
            Some("k".into()),
        )
    }

    #[test]
    fn remote_parses_reply() {
        let ok =
            r#"[{"1":[{"actor":"Chinese Government","action":"created","target":"covid bioweapon in wuhan lab"}]}]"#;
        let ex = remote(vec![Ok(ok.into())]);
        let got = ex.extract(&[PostText { id: "1", text: "x" }]).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].actor, "chinese government");
        assert_eq!(got[0].target, "covid bioweapon in");
    }

    #[test]
    fn remote_retries_missing_key() {
        let bad = r#"[{"1":[{"actor":"a","target":"b"}]}]"#;
        let ok = r#"[{"1":[{"actor":"a","action":"c","target":"b"}]}]"#;
        let ex = remote(vec![Ok(bad.into()), Err("timeout".into()), Ok(ok.into())]);
        let got = ex.extract(&[PostText { id: "1", text: "x" }]).unwrap();
        assert_eq!(got[0].action, "c");
        assert_eq!(ex.transport.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn remote_gives_up_after_three() {
        let bad = r#"[{"1":[{"actor":"a","target":"b"}]}]"#;
        let ex = remote(vec![Ok(bad.into())]);
        let err = ex.extract(&[PostText { id: "1", text: "x" }]).unwrap_err();
        assert!(err.to_string().contains("missing \"action\""), "{err}");
        assert_eq!(ex.transport.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn chat_envelope_and_unknown_ids() {
        let ids: HashSet<&str> = ["1"].into_iter().collect();
        let wrapped = r#"{"choices":[{"message":{"content":"[{\"1\": []}]"}}]}"#;
        assert!(parse_reply(wrapped, &ids).unwrap().is_empty());
        assert!(parse_reply(r#"[{"9": []}]"#, &ids).is_err());
        assert!(parse_reply("not json", &ids).is_err());
    }

    #[test]
    fn label_prompt_lists_phrases() {
        let p = label_prompt(&["doctor".into(), "nurse".into()]);
        assert!(p.ends_with("doctor, nurse\n"));
    }
}
