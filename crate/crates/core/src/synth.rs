//! Deterministic synthetic corpus with planted claims.
//!
//! Each claim is a bundle of posts around a random base direction. Half of
//! the claims drift: their posts rotate away from the base as time passes,
//! starting inside the first day, and they live longer. Independently, some
//! claims change their wording category mix or their actor group over time.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal, Weibull};
use serde::{Deserialize, Serialize};

use crate::corpus::{EmbeddingStore, Post};
use crate::error::Result;

const DAY: i64 = 86_400;
const HOUR: i64 = 3_600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub posts: usize,
    pub claims: usize,
    /// Fraction of posts that belong to no claim.
    pub noise_fraction: f64,
    pub dimension: usize,
    pub start: i64,
    pub span_days: i64,
    /// Weibull scale (days) of a non-drifting claim's lifespan.
    pub base_lifespan_days: f64,
    pub lifespan_shape: f64,
    /// Log time ratio of the planted effects.
    pub drift_effect: f64,
    pub lexical_effect: f64,
    pub actor_effect: f64,
    /// Per-post rotation (radians) of drifting claims.
    pub drift_step: f64,
    pub noise_sd: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            posts: 5_000,
            claims: 240,
            noise_fraction: 0.2,
            dimension: 64,
            start: 1_577_836_800,
            span_days: 365,
            base_lifespan_days: 10.0,
            lifespan_shape: 0.9,
            drift_effect: 1.0,
            lexical_effect: 0.4,
            actor_effect: 0.3,
            drift_step: 0.15,
            noise_sd: 0.02,
        }
    }
}

/// Ground truth for one planted claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedClaim {
    pub index: usize,
    pub post_ids: Vec<String>,
    pub drifting: bool,
    pub lexical_mutation: bool,
    pub actor_mutation: bool,
    pub planted_lifespan_days: f64,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub posts: Vec<Post>,
    pub embeddings: EmbeddingStore,
    pub claims: Vec<PlantedClaim>,
    pub corpus_end: i64,
}

const ACTOR_GROUPS: &[&[&str]] = &[
    &["mainstream media", "news anchors", "reporters", "the press"],
    &[
        "chinese government",
        "beijing officials",
        "communist party",
        "the regime",
    ],
    &["big pharma", "drug companies", "vaccine makers", "pharma executives"],
    &["bill gates", "globalist elites", "billionaire donors", "the elite"],
    &["wuhan lab", "lab scientists", "virus researchers", "biolab directors"],
    &[
        "health officials",
        "the cdc",
        "public health agencies",
        "hospital bosses",
    ],
];
const ACTIONS: &[&[&str]] = &[
    &["created", "engineered", "designed"],
    &["hid", "covered up", "concealed", "suppressed"],
    &["released", "spread", "unleashed"],
    &["manipulate", "track", "monitor"],
    &["exploit", "sell", "push"],
];
const TARGETS: &[&[&str]] = &[
    &["covid bioweapon", "the virus", "lab virus"],
    &["vaccine data", "death numbers", "test results", "the truth"],
    &["elderly people", "our children", "local families"],
    &["mrna shots", "experimental vaccines", "booster jabs"],
    &["5g towers", "microchips", "digital passports"],
];
/// Verbless wording blocks with different category mixes, so they add
/// lexicon hits without adding triplets.
const FILLERS: &[&[&str]] = &[
    &[
        "a dangerous and deadly threat to safety",
        "toxic risk and a real hazard",
        "an outbreak emergency with danger everywhere",
    ],
    &[
        "obvious reason and clear evidence",
        "proof for anyone curious",
        "logic and facts with no question",
    ],
    &[
        "elite power and control over the law",
        "total authority for the regime and its leaders",
        "police power behind every mandate",
    ],
    &[
        "families and friends and neighbours first",
        "parents and kids and the elderly",
        "our community and every citizen",
    ],
];
const CHATTER: &[&str] = &[
    "wow",
    "unbelievable",
    "huge if true",
    "no words",
    "thread below",
    "more soon",
];

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn orthonormal_to(rng: &mut ChaCha8Rng, base: &[f64]) -> Vec<f64> {
    let mut u = unit(rng, base.len());
    let d: f64 = u.iter().zip(base).map(|(a, b)| a * b).sum();
    u.iter_mut().zip(base).for_each(|(x, b)| *x -= d * b);
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter_mut().for_each(|x| *x /= n);
    u
}

struct Draft {
    created_at: i64,
    vector: Vec<f32>,
    text: String,
    claim: Option<usize>,
}

fn post_text(rng: &mut ChaCha8Rng, actor: &str, action: &str, target: &str, filler: &str) -> String {
    let mut s = format!("{actor} {action} {target}. {filler}");
    match rng.gen_range(0..6) {
        0 => s.push_str(" https://example.org/a"),
        1 => s = format!("@user{} {s}", rng.gen_range(0..500)),
        2 => s.push_str(&format!(". {}", CHATTER[rng.gen_range(0..CHATTER.len())])),
        _ => {}
    }
    s
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.gen_range(0..xs.len())]
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.dimension;
    let noise_posts = (cfg.posts as f64 * cfg.noise_fraction).round() as usize;
    let claim_posts = cfg.posts - noise_posts;
    let end = cfg.start + cfg.span_days * DAY;

    // claim sizes: lognormal weights scaled to the budget, at least 3 posts
    let weights: Vec<f64> = {
        let ln = LogNormal::new(0.0, 0.7).unwrap();
        (0..cfg.claims).map(|_| ln.sample(&mut rng)).collect()
    };
    let wsum: f64 = weights.iter().sum();
    let spare = claim_posts - 3 * cfg.claims;
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| 3 + (w / wsum * spare as f64).floor() as usize)
        .collect();
    let mut short = claim_posts - sizes.iter().sum::<usize>();
    let mut i = 0;
    while short > 0 {
        sizes[i % cfg.claims] += 1;
        short -= 1;
        i += 1;
    }

    let mut drifting: Vec<bool> = (0..cfg.claims).map(|i| i < cfg.claims / 2).collect();
    drifting.shuffle(&mut rng);

    let lifespan = Weibull::new(cfg.base_lifespan_days, cfg.lifespan_shape).unwrap();
    let mut drafts: Vec<Draft> = Vec::with_capacity(cfg.posts);
    let mut claims = Vec::with_capacity(cfg.claims);
    for (c, &size) in sizes.iter().enumerate() {
        let lexical = rng.gen_bool(0.5);
        let actor_mut = rng.gen_bool(0.5);
        let log_tr = cfg.drift_effect * f64::from(u8::from(drifting[c]))
            + cfg.lexical_effect * f64::from(u8::from(lexical))
            + cfg.actor_effect * f64::from(u8::from(actor_mut));
        let life_days = lifespan.sample(&mut rng) * log_tr.exp();
        let t0 = cfg.start + rng.gen_range(0..(cfg.span_days - 35) * DAY);
        let life = ((life_days * DAY as f64) as i64).min(end - HOUR - t0);

        let mut times: Vec<i64> = Vec::with_capacity(size);
        times.push(t0);
        if size > 1 {
            times.push(t0 + life);
        }
        let early = ((size as f64 * 0.25).round() as usize)
            .max(1)
            .min(size.saturating_sub(2));
        for k in 2..size {
            let t = if k < 2 + early || life <= DAY {
                t0 + rng.gen_range(1..(20 * HOUR).min(life.max(2)))
            } else {
                t0 + rng.gen_range(DAY..=life)
            };
            times.push(t.min(t0 + life));
        }
        times.sort_unstable();

        let base = unit(&mut rng, dim);
        let dir = orthonormal_to(&mut rng, &base);
        let (a0, a1) = {
            let a = rng.gen_range(0..ACTOR_GROUPS.len());
            (
                a,
                (a + 1 + rng.gen_range(0..ACTOR_GROUPS.len() - 1)) % ACTOR_GROUPS.len(),
            )
        };
        // one wording per claim; only the planted switches change it
        let actors = [pick(&mut rng, ACTOR_GROUPS[a0]), pick(&mut rng, ACTOR_GROUPS[a1])];
        let action = {
            let g = rng.gen_range(0..ACTIONS.len());
            pick(&mut rng, ACTIONS[g])
        };
        let target = {
            let g = rng.gen_range(0..TARGETS.len());
            pick(&mut rng, TARGETS[g])
        };
        let f0 = rng.gen_range(0..FILLERS.len());
        let f1 = (f0 + 1 + rng.gen_range(0..FILLERS.len() - 1)) % FILLERS.len();
        let fillers = [pick(&mut rng, FILLERS[f0]), pick(&mut rng, FILLERS[f1])];

        for (k, &t) in times.iter().enumerate() {
            let theta = if drifting[c] {
                (k as f64 * cfg.drift_step).min(1.3)
            } else {
                0.0
            };
            let (cs, sn) = (theta.cos(), theta.sin());
            let mut v: Vec<f64> = base
                .iter()
                .zip(&dir)
                .map(|(b, d)| cs * b + sn * d + cfg.noise_sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            let second_half = k * 2 >= size;
            let actor = actors[usize::from(actor_mut && second_half)];
            let filler = fillers[usize::from(lexical && k % 2 == 1)];
            drafts.push(Draft {
                created_at: t,
                vector: v.into_iter().map(|x| x as f32).collect(),
                text: post_text(&mut rng, actor, action, target, filler),
                claim: Some(c),
            });
        }
        claims.push(PlantedClaim {
            index: c,
            post_ids: Vec::new(),
            drifting: drifting[c],
            lexical_mutation: lexical,
            actor_mutation: actor_mut,
            planted_lifespan_days: life as f64 / DAY as f64,
        });
    }
    for _ in 0..noise_posts {
        let v = unit(&mut rng, dim);
        let actor = {
            let g = rng.gen_range(0..ACTOR_GROUPS.len());
            pick(&mut rng, ACTOR_GROUPS[g])
        };
        let action = {
            let g = rng.gen_range(0..ACTIONS.len());
            pick(&mut rng, ACTIONS[g])
        };
        let target = {
            let g = rng.gen_range(0..TARGETS.len());
            pick(&mut rng, TARGETS[g])
        };
        let filler = {
            let g = rng.gen_range(0..FILLERS.len());
            pick(&mut rng, FILLERS[g])
        };
        let text = post_text(&mut rng, actor, action, target, filler);
        drafts.push(Draft {
            created_at: cfg.start + rng.gen_range(0..cfg.span_days * DAY),
            vector: v.into_iter().map(|x| x as f32).collect(),
            text,
            claim: None,
        });
    }

    // stable order by time, then ids follow that order
    drafts.sort_by_key(|d| d.created_at);
    let followers = LogNormal::new(5.0, 1.5).unwrap();
    let author_followers: Vec<u64> = (0..800).map(|_| followers.sample(&mut rng) as u64).collect();
    let mut posts = Vec::with_capacity(drafts.len());
    let mut ids = Vec::with_capacity(drafts.len());
    let mut vectors = Vec::with_capacity(drafts.len());
    for (i, d) in drafts.into_iter().enumerate() {
        let id = format!("p{i:05}");
        let author = rng.gen_range(0..author_followers.len());
        let likes = (LogNormal::new(1.0, 1.2).unwrap().sample(&mut rng) as u64).saturating_sub(1);
        posts.push(Post {
            post_id: id.clone(),
            author_id: format!("u{author:03}"),
            created_at: d.created_at,
            text: d.text,
            like_count: likes,
            retweet_count: likes / 3 + rng.gen_range(0..2),
            author_followers: author_followers[author],
            context_of: None,
        });
        if let Some(c) = d.claim {
            claims[c].post_ids.push(id.clone());
        }
        ids.push(id);
        vectors.push(d.vector);
    }
    Ok(SynthCorpus {
        posts,
        embeddings: EmbeddingStore::from_vectors(ids, vectors)?,
        claims,
        corpus_end: end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            posts: 600,
            claims: 30,
            ..Default::default()
        }
    }

    #[test]
    fn sizes_and_determinism() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.posts, b.posts);
        assert_eq!(a.posts.len(), 600);
        assert_eq!(a.embeddings.len(), 600);
        assert_eq!(a.claims.iter().map(|c| c.post_ids.len()).sum::<usize>(), 480);
        assert_eq!(a.claims.iter().filter(|c| c.drifting).count(), 15);
        assert!(a.posts.windows(2).all(|w| w[0].created_at <= w[1].created_at));
        assert!(a.posts.iter().all(|p| p.created_at < a.corpus_end));
    }

    #[test]
    fn claims_are_internally_similar() {
        let s = generate(&small()).unwrap();
        for c in s.claims.iter().filter(|c| !c.drifting) {
            let rows: Vec<usize> = c.post_ids.iter().map(|id| s.embeddings.row_of(id).unwrap()).collect();
            for w in rows.windows(2) {
                assert!(s.embeddings.similarity(w[0], w[1]) > 0.9);
            }
        }
    }
}
