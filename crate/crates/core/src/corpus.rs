//! Post and embedding ingestion.
//!
//! Posts arrive as JSON lines; embeddings arrive precomputed in a small
//! binary container (`CDRIFT01`). Vectors are renormalized to unit length
//! on load so that cosine similarity downstream is a plain dot product.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"CDRIFT01";

/// One timestamped post. `created_at` is UTC seconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub author_id: String,
    pub created_at: i64,
    pub text: String,
    pub like_count: u64,
    pub retweet_count: u64,
    pub author_followers: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_of: Option<String>,
}

/// Posts sorted by `created_at` (stable, file order on ties).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PostCollection {
    posts: Vec<Post>,
    by_id: HashMap<String, usize>,
}

impl PostCollection {
    /// Builds a collection from already-parsed posts, sorting them by time.
    pub fn new(mut posts: Vec<Post>) -> Result<Self> {
        let dups = duplicate_ids(posts.iter().map(|p| p.post_id.as_str()));
        if !dups.is_empty() {
            return Err(Error::DuplicateIds(dups));
        }
        posts.sort_by_key(|p| p.created_at);
        let by_id = posts.iter().enumerate().map(|(i, p)| (p.post_id.clone(), i)).collect();
        Ok(Self { posts, by_id })
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Post> {
        self.posts.iter()
    }

    pub fn get(&self, post_id: &str) -> Option<&Post> {
        self.by_id.get(post_id).map(|&i| &self.posts[i])
    }

    /// Position of a post in time order.
    pub fn position(&self, post_id: &str) -> Option<usize> {
        self.by_id.get(post_id).copied()
    }

    pub fn time_range(&self) -> Option<(i64, i64)> {
        Some((self.posts.first()?.created_at, self.posts.last()?.created_at))
    }
}

fn duplicate_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dups: Vec<String> = Vec::new();
    for id in ids {
        if !seen.insert(id) && !dups.iter().any(|d| d == id) {
            dups.push(id.to_string());
        }
    }
    dups
}

/// serde_json appends " at line L column C"; our line numbers are file lines.
fn strip_position(msg: String) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg,
    }
}

/// Parses JSON-lines posts. Blank lines are skipped.
///
/// With `context_append`, a post whose `context_of` resolves within the
/// corpus gets the referenced post's original text appended after a single
/// space. The supplied embedding is expected to represent the combined text.
pub fn parse_posts<R: BufRead>(reader: R, context_append: bool) -> Result<PostCollection> {
    let mut posts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let post: Post = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: strip_position(e.to_string()),
        })?;
        if post.created_at <= 0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("created_at must be positive, got {}", post.created_at),
            });
        }
        posts.push(post);
    }

    if context_append {
        let original: HashMap<String, String> = posts.iter().map(|p| (p.post_id.clone(), p.text.clone())).collect();
        for post in posts.iter_mut() {
            if let Some(ctx) = post.context_of.as_deref() {
                if ctx == post.post_id {
                    continue;
                }
                if let Some(text) = original.get(ctx) {
                    post.text.push(' ');
                    post.text.push_str(text);
                }
            }
        }
    }

    PostCollection::new(posts)
}

pub fn load_posts(path: impl AsRef<Path>, context_append: bool) -> Result<PostCollection> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_posts(BufReader::new(file), context_append)
}

pub fn write_posts(path: impl AsRef<Path>, posts: &[Post]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in posts {
        let line = serde_json::to_string(p).expect("post serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Unit-normalized vectors keyed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    by_id: HashMap<String, usize>,
}

impl EmbeddingStore {
    /// Builds a store, normalizing every vector. Rejects zero vectors,
    /// ragged rows and duplicate ids.
    pub fn from_vectors(ids: Vec<String>, vectors: Vec<Vec<f32>>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::EmbeddingFormat(format!(
                "count mismatch: {} ids, {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        let dimension = vectors.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(dimension * vectors.len());
        for (id, v) in ids.iter().zip(vectors) {
            if v.len() != dimension {
                return Err(Error::EmbeddingFormat(format!(
                    "dimension mismatch for {id}: expected {dimension}, got {}",
                    v.len()
                )));
            }
            data.extend_from_slice(&v);
        }
        Self::from_flat(dimension, ids, data)
    }

    pub(crate) fn from_flat(dimension: usize, ids: Vec<String>, mut data: Vec<f32>) -> Result<Self> {
        if !ids.is_empty() && dimension == 0 {
            return Err(Error::EmbeddingFormat("dimension must be positive".into()));
        }
        let dups = duplicate_ids(ids.iter().map(String::as_str));
        if !dups.is_empty() {
            return Err(Error::DuplicateIds(dups));
        }
        if dimension > 0 {
            for (row, id) in data.chunks_mut(dimension).zip(&ids) {
                let n = vector::normalize(row);
                if n == 0.0 || !n.is_finite() {
                    return Err(Error::ZeroNorm(id.clone()));
                }
            }
        }
        let by_id = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Self {
            dimension,
            ids,
            data,
            by_id,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.data[row * self.dimension..(row + 1) * self.dimension]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.row_of(id).map(|r| self.vector(r))
    }

    /// Cosine similarity between two rows.
    #[inline]
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        vector::dot(self.vector(a), self.vector(b))
    }

    /// Writes the `CDRIFT01` container: magic, `u32` dimension, `u64` count,
    /// `count * dimension` little-endian `f32`, then `count` ids each as a
    /// `u32` byte length followed by UTF-8 bytes.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        for id in &self.ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, expected_count: Option<usize>) -> Result<Self> {
        let fmt = |m: &str| Error::EmbeddingFormat(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
        if &magic != EMBEDDING_MAGIC {
            return Err(fmt("bad magic, expected CDRIFT01"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4).map_err(|_| fmt("truncated header"))?;
        let dimension = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8).map_err(|_| fmt("truncated header"))?;
        let count = u64::from_le_bytes(b8) as usize;
        if let Some(expected) = expected_count {
            if expected != count {
                return Err(Error::EmbeddingFormat(format!(
                    "count mismatch: header says {count}, expected {expected}"
                )));
            }
        }
        if dimension == 0 && count > 0 {
            return Err(fmt("dimension mismatch: dimension is zero"));
        }
        let floats = dimension.checked_mul(count).ok_or_else(|| fmt("header overflow"))?;
        let mut raw = vec![0u8; floats * 4];
        r.read_exact(&mut raw).map_err(|_| {
            Error::EmbeddingFormat(format!(
                "dimension mismatch: payload shorter than {count} x {dimension} floats"
            ))
        })?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut ids = Vec::with_capacity(count);
        for i in 0..count {
            r.read_exact(&mut b4)
                .map_err(|_| Error::EmbeddingFormat(format!("count mismatch: only {i} of {count} ids present")))?;
            let len = u32::from_le_bytes(b4) as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(|_| fmt("truncated id"))?;
            ids.push(String::from_utf8(buf).map_err(|_| fmt("id is not UTF-8"))?);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| fmt(&e.to_string()))?;
        if !rest.is_empty() {
            return Err(Error::EmbeddingFormat(format!(
                "count mismatch: {} trailing bytes after {count} records",
                rest.len()
            )));
        }
        Self::from_flat(dimension, ids, data)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, expected_count: Option<usize>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::read_from(&mut BufReader::new(file), expected_count)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub post_count: usize,
    pub missing_embedding_count: usize,
    pub duplicate_id_count: usize,
    /// `None` for an empty corpus.
    pub time_range: Option<(i64, i64)>,
    /// Up to 20 ids lacking a vector, in time order.
    pub missing_examples: Vec<String>,
}

impl CorpusReport {
    pub fn ready(&self) -> bool {
        self.missing_embedding_count == 0 && self.duplicate_id_count == 0
    }
}

pub fn validate_corpus(posts: &[Post], embeddings: &EmbeddingStore) -> CorpusReport {
    let missing: Vec<&Post> = posts
        .iter()
        .filter(|p| embeddings.row_of(&p.post_id).is_none())
        .collect();
    let duplicates = duplicate_ids(posts.iter().map(|p| p.post_id.as_str()));
    let duplicate_id_count = duplicates
        .iter()
        .map(|d| posts.iter().filter(|p| &p.post_id == d).count() - 1)
        .sum();
    let time_range = posts
        .iter()
        .map(|p| p.created_at)
        .min()
        .zip(posts.iter().map(|p| p.created_at).max());
    CorpusReport {
        post_count: posts.len(),
        missing_embedding_count: missing.len(),
        duplicate_id_count,
        time_range,
        missing_examples: missing.iter().take(20).map(|p| p.post_id.clone()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn line(id: &str, ts: i64, text: &str, ctx: Option<&str>) -> String {
        let mut v = serde_json::json!({
            "post_id": id, "author_id": "u", "created_at": ts, "text": text,
            "like_count": 0, "retweet_count": 0, "author_followers": 5
        });
        if let Some(c) = ctx {
            v["context_of"] = c.into();
        }
        v.to_string()
    }

    #[test]
    fn three_lines_sorted_by_time() {
        let input = [
            line("a", 30, "x", None),
            line("b", 10, "y", None),
            line("c", 20, "z", None),
        ]
        .join("\n");
        let posts = parse_posts(Cursor::new(input), false).unwrap();
        let ids: Vec<_> = posts.iter().map(|p| p.post_id.as_str()).collect();
        assert_eq!(ids, ["b", "c", "a"]);
    }

    #[test]
    fn ties_keep_file_order() {
        let input = [line("z", 5, "", None), line("a", 5, "", None), line("m", 5, "", None)].join("\n");
        let posts = parse_posts(Cursor::new(input), false).unwrap();
        let ids: Vec<_> = posts.iter().map(|p| p.post_id.as_str()).collect();
        assert_eq!(ids, ["z", "a", "m"]);
    }

    #[test]
    fn missing_field_reports_line() {
        let input = format!(
            "{}\n{}",
            line("a", 1, "x", None),
            r#"{"post_id":"b","author_id":"u","text":"t","like_count":0,"retweet_count":0,"author_followers":0}"#
        );
        let err = parse_posts(Cursor::new(input), false).unwrap_err().to_string();
        assert!(err.starts_with("line 2: missing field"), "{err}");
        assert!(err.contains("created_at"));
    }

    #[test]
    fn non_positive_timestamp_rejected() {
        let err = parse_posts(Cursor::new(line("a", 0, "x", None)), false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicates_listed() {
        let input = [line("a", 1, "", None), line("b", 2, "", None), line("a", 3, "", None)].join("\n");
        match parse_posts(Cursor::new(input), false).unwrap_err() {
            Error::DuplicateIds(ids) => assert_eq!(ids, vec!["a".to_string()]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn context_append_uses_original_text() {
        let input = [
            line("a", 1, "original claim", None),
            line("b", 2, "quoting", Some("a")),
            line("c", 3, "reply to b", Some("b")),
            line("d", 4, "dangling", Some("zzz")),
        ]
        .join("\n");
        let posts = parse_posts(Cursor::new(input.clone()), true).unwrap();
        assert_eq!(posts.get("b").unwrap().text, "quoting original claim");
        assert_eq!(posts.get("c").unwrap().text, "reply to b quoting");
        assert_eq!(posts.get("d").unwrap().text, "dangling");
        let plain = parse_posts(Cursor::new(input), false).unwrap();
        assert_eq!(plain.get("b").unwrap().text, "quoting");
    }

    #[test]
    fn ingestion_is_idempotent() {
        let input = [line("a", 3, "x", None), line("b", 1, "y", Some("a"))].join("\n");
        let one = parse_posts(Cursor::new(input.clone()), true).unwrap();
        let two = parse_posts(Cursor::new(input), true).unwrap();
        assert_eq!(one, two);
    }

    fn roundtrip(store: &EmbeddingStore, expected: Option<usize>) -> Result<EmbeddingStore> {
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        EmbeddingStore::read_from(&mut Cursor::new(buf), expected)
    }

    #[test]
    fn embeddings_normalized_on_load() {
        let store = EmbeddingStore::from_vectors(
            vec!["a".into(), "b".into()],
            vec![vec![2.0, 0.0, 0.0, 0.0], vec![0.5, 0.5, 0.5, 0.5]],
        )
        .unwrap();
        let back = roundtrip(&store, Some(2)).unwrap();
        assert_eq!(back.dimension(), 4);
        assert_eq!(back.get("a").unwrap(), &[1.0, 0.0, 0.0, 0.0]);
        for r in 0..back.len() {
            assert!((vector::norm(back.vector(r)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_vector_rejected() {
        let err = EmbeddingStore::from_vectors(vec!["p9".into()], vec![vec![0.0; 3]]).unwrap_err();
        assert_eq!(err.to_string(), "zero-norm embedding for post_id p9");
    }

    #[test]
    fn count_and_dimension_mismatch() {
        let store = EmbeddingStore::from_vectors(vec!["a".into()], vec![vec![1.0, 2.0]]).unwrap();
        assert!(roundtrip(&store, Some(3))
            .unwrap_err()
            .to_string()
            .contains("count mismatch"));

        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        // claim dimension 3 while only 2 floats + id follow
        buf[8..12].copy_from_slice(&3u32.to_le_bytes());
        buf.truncate(8 + 4 + 8 + 8);
        let err = EmbeddingStore::read_from(&mut Cursor::new(buf), None).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");

        let ragged = EmbeddingStore::from_vectors(vec!["a".into(), "b".into()], vec![vec![1.0, 0.0], vec![1.0]]);
        assert!(ragged.unwrap_err().to_string().contains("dimension mismatch"));
    }

    #[test]
    fn bad_magic_rejected() {
        let err = EmbeddingStore::read_from(&mut Cursor::new(b"NOTMAGIC\0\0\0\0".to_vec()), None).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn validate_counts_missing() {
        let input = [line("a", 1, "", None), line("b", 2, "", None)].join("\n");
        let posts = parse_posts(Cursor::new(input), false).unwrap();
        let store = EmbeddingStore::from_vectors(vec!["a".into()], vec![vec![1.0]]).unwrap();
        let report = validate_corpus(posts.posts(), &store);
        assert_eq!(report.missing_embedding_count, 1);
        assert_eq!(report.time_range, Some((1, 2)));
        assert!(!report.ready());

        let empty = validate_corpus(&[], &store);
        assert_eq!(empty.post_count, 0);
        assert_eq!(empty.time_range, None);
    }
}
