//! Actor-action-target triplets: extraction, filtering, phrase clustering,
//! representative sampling and per-claim mutation flags.

mod extract;
mod kmeans;
mod mmr;
mod text;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use extract::{
    label_prompt, parse_reply, request_label, HttpTransport, OfflineExtractor, PostText, RemoteConfig, RemoteExtractor,
    Transport, TripletExtractor, API_KEY_ENV, EXTRACT_PROMPT, LABEL_PROMPT,
};
pub use kmeans::{kmeans, select_k, silhouette, KMeansFit, KScore, KSelection, MAX_ITERATIONS, SILHOUETTE_SAMPLE};
pub use mmr::mmr_sample;
pub use text::{clean, lemmatize_word, normalize_phrase, preprocess, preprocess_with, truncate_words, WordLists};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Actor,
    Action,
    Target,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Actor, Slot::Action, Slot::Target];

    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Actor => "actor",
            Slot::Action => "action",
            Slot::Target => "target",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Slot {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "actor" => Ok(Slot::Actor),
            "action" => Ok(Slot::Action),
            "target" => Ok(Slot::Target),
            _ => Err(Error::invalid(format!("unknown slot {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub post_id: String,
    pub actor: String,
    pub action: String,
    pub target: String,
}

impl Triplet {
    pub fn get(&self, slot: Slot) -> &str {
        match slot {
            Slot::Actor => &self.actor,
            Slot::Action => &self.action,
            Slot::Target => &self.target,
        }
    }
}

pub fn read_triplets(reader: impl BufRead) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

pub fn write_triplets(mut w: impl Write, triplets: &[Triplet]) -> std::io::Result<()> {
    for t in triplets {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Clears actors and targets that are a lone pronoun, and targets that are
/// a lone verb. Actions are never touched.
pub fn filter_triplets(triplets: &[Triplet], lists: &WordLists) -> Vec<Triplet> {
    let bare = |s: &str| s.trim().to_string();
    triplets
        .iter()
        .map(|t| {
            let mut t = t.clone();
            if lists.pronouns.contains(&bare(&t.actor)) {
                t.actor.clear();
            }
            let target = bare(&t.target);
            if lists.pronouns.contains(&target) || lists.verbs.contains(&target) {
                t.target.clear();
            }
            t
        })
        .collect()
}

/// Distinct normalized phrases of one slot, sorted.
pub fn slot_phrases(triplets: &[Triplet], slot: Slot, lists: &WordLists) -> Vec<String> {
    triplets
        .iter()
        .map(|t| normalize_phrase(t.get(slot), lists))
        .filter(|p| !p.is_empty())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Deterministic unit vector from hashed character trigrams and words.
/// Stand-in for a phrase embedding model in hermetic runs.
pub fn hashed_phrase_vector(phrase: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let mut add = |feature: &str, weight: f64| {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
        for b in feature.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        for x in v.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *x += weight * g;
        }
    };
    let padded: Vec<char> = format!(" {phrase} ").chars().collect();
    for w in padded.windows(3) {
        add(&w.iter().collect::<String>(), 1.0);
    }
    for word in phrase.split_whitespace() {
        add(word, 2.0);
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseClusters {
    pub slot: Slot,
    pub k: usize,
    /// Sorted by phrase.
    pub assignments: BTreeMap<String, usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub inertia_trace: Vec<f64>,
    pub silhouette: f64,
    /// Fewer distinct vectors than clusters.
    pub degenerate: bool,
}

impl PhraseClusters {
    pub fn cluster_of(&self, phrase: &str) -> Option<usize> {
        self.assignments.get(phrase).copied()
    }

    /// Phrases of each cluster, in phrase order.
    pub fn members(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.k];
        for (p, &c) in &self.assignments {
            out[c].push(p.as_str());
        }
        out
    }
}

/// Clusters unique `phrases` (one vector each) into `k` groups.
pub fn cluster_phrases(
    slot: Slot,
    phrases: &[String],
    vectors: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<PhraseClusters> {
    if phrases.len() != vectors.len() {
        return Err(Error::invalid("one vector per phrase required"));
    }
    if k < 2 || k > phrases.len() {
        return Err(Error::invalid(format!(
            "k = {k} needs 2 <= k <= {} phrases",
            phrases.len()
        )));
    }
    let fit = kmeans(vectors, k, seed)?;
    let mut assignments = BTreeMap::new();
    for (p, &l) in phrases.iter().zip(&fit.labels) {
        if assignments.insert(p.clone(), l).is_some() {
            return Err(Error::invalid(format!("duplicate phrase {p:?}")));
        }
    }
    let distinct = {
        let mut keys: Vec<Vec<u64>> = vectors
            .iter()
            .map(|v| v.iter().map(|x| x.to_bits()).collect())
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    };
    Ok(PhraseClusters {
        slot,
        k,
        assignments,
        silhouette: silhouette(vectors, &fit.labels, SILHOUETTE_SAMPLE, seed),
        centroids: fit.centroids,
        inertia: fit.inertia,
        inertia_trace: fit.inertia_trace,
        degenerate: distinct < k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AatMutationFlags {
    pub claim_id: usize,
    pub actor_mutated: bool,
    pub action_mutated: bool,
    pub target_mutated: bool,
    pub any_mutated: bool,
}

impl AatMutationFlags {
    pub fn get(&self, slot: Slot) -> bool {
        match slot {
            Slot::Actor => self.actor_mutated,
            Slot::Action => self.action_mutated,
            Slot::Target => self.target_mutated,
        }
    }
}

/// A slot mutates when the claim's phrases span at least two clusters.
/// `triplets` are the (filtered) triplets of the claim's posts.
pub fn detect_aat_mutations(
    claim_id: usize,
    triplets: &[Triplet],
    clusters: &HashMap<Slot, PhraseClusters>,
    lists: &WordLists,
) -> AatMutationFlags {
    let mutated = |slot: Slot| {
        let Some(pc) = clusters.get(&slot) else {
            return false;
        };
        let ids: BTreeSet<usize> = triplets
            .iter()
            .filter_map(|t| pc.cluster_of(&normalize_phrase(t.get(slot), lists)))
            .collect();
        ids.len() >= 2
    };
    let (a, b, c) = (mutated(Slot::Actor), mutated(Slot::Action), mutated(Slot::Target));
    AatMutationFlags {
        claim_id,
        actor_mutated: a,
        action_mutated: b,
        target_mutated: c,
        any_mutated: a || b || c,
    }
}
