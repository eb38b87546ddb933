//! Content-addressed feature cache.
//!
//! File layout (all integers little endian):
//!
//! ```text
//! magic   b"CEFC\x01"
//! record* key: [u8; 32]   SHA-256 of (kind byte, provider identity, 0x00, text)
//!         len: u32        number of values
//!         values: [f64; len]
//! ```
//!
//! The file is a pure cache; deleting it only costs recomputation. A corrupt file is ignored.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use sha2::{Digest, Sha256};

use super::{Embedder, EmbeddingVector, SentimentScore, SentimentScorer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 5] = b"CEFC\x01";

type Key = [u8; 32];

#[derive(Debug, Default)]
pub struct FeatureCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<Key, Vec<f64>>>,
}

impl FeatureCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a cache persisted at `path`.
    pub fn open(path: impl AsRef<Path>) -> Self {
        let path = path.as_ref().to_path_buf();
        let entries = match std::fs::read(&path) {
            Ok(bytes) => decode(&bytes).unwrap_or_else(|| {
                log::warn!("{}: ignoring corrupt feature cache", path.display());
                HashMap::new()
            }),
            Err(_) => HashMap::new(),
        };
        FeatureCache {
            path: Some(path),
            entries: RwLock::new(entries),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(kind: u8, identity: &str, text: &str) -> Key {
        let mut h = Sha256::new();
        h.update([kind]);
        h.update(identity.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        h.finalize().into()
    }

    fn get(&self, key: &Key) -> Option<Vec<f64>> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    fn put(&self, key: Key, values: Vec<f64>) {
        self.entries.write().expect("cache lock").insert(key, values);
    }

    /// Writes the cache file; entries are sorted by key so the file is reproducible.
    pub fn save(&self) -> Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let entries = self.entries.read().expect("cache lock");
        let mut keys: Vec<&Key> = entries.keys().collect();
        keys.sort();
        let mut out = MAGIC.to_vec();
        for k in keys {
            let v = &entries[k];
            out.extend_from_slice(k);
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, out).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

fn decode(bytes: &[u8]) -> Option<HashMap<Key, Vec<f64>>> {
    let mut rest = bytes.strip_prefix(MAGIC.as_slice())?;
    let mut map = HashMap::new();
    while !rest.is_empty() {
        let key: Key = rest.get(..32)?.try_into().ok()?;
        let len = u32::from_le_bytes(rest.get(32..36)?.try_into().ok()?) as usize;
        let body = rest.get(36..36 + len * 8)?;
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        map.insert(key, values);
        rest = &rest[36 + len * 8..];
    }
    Some(map)
}

/// Sentiment provider memoized through a [`FeatureCache`].
pub struct CachedSentiment<S> {
    inner: S,
    cache: Arc<FeatureCache>,
}

impl<S> CachedSentiment<S> {
    pub fn new(inner: S, cache: Arc<FeatureCache>) -> Self {
        CachedSentiment { inner, cache }
    }
}

impl<T: Scalar, S: SentimentScorer<T>> SentimentScorer<T> for CachedSentiment<S> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn score(&self, text: &str) -> Result<SentimentScore<T>> {
        let key = FeatureCache::key(0, &self.inner.identity(), text);
        if let Some(v) = self.cache.get(&key) {
            if let [x] = v.as_slice() {
                return SentimentScore::new(T::of(*x));
            }
        }
        let s = self.inner.score(text)?;
        self.cache.put(key, vec![s.value().as_f64()]);
        Ok(s)
    }
}

/// Embedding provider memoized through a [`FeatureCache`].
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Arc<FeatureCache>,
}

impl<E> CachedEmbedder<E> {
    pub fn new(inner: E, cache: Arc<FeatureCache>) -> Self {
        CachedEmbedder { inner, cache }
    }
}

impl<T: Scalar, E: Embedder<T>> Embedder<T> for CachedEmbedder<E> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn dimension(&self) -> Option<usize> {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector<T>> {
        let key = FeatureCache::key(1, &self.inner.identity(), text);
        if let Some(v) = self.cache.get(&key) {
            return EmbeddingVector::new(v.into_iter().map(T::of).collect());
        }
        let e = self.inner.embed(text)?;
        self.cache
            .put(key, e.components().iter().map(|c| c.as_f64()).collect());
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{HashedBagOfWords, LexiconSentiment};

    #[test]
    fn cache_round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.bin");
        let cache = Arc::new(FeatureCache::open(&path));
        let emb = CachedEmbedder::new(HashedBagOfWords::default(), cache.clone());
        let sent = CachedSentiment::new(LexiconSentiment::default(), cache.clone());
        let v: EmbeddingVector<f64> = emb.embed("la tierra ¿qué?").unwrap();
        let s: SentimentScore<f64> = sent.score("corruption is bad").unwrap();
        assert_eq!(cache.len(), 2);
        cache.save().unwrap();

        let reopened = Arc::new(FeatureCache::open(&path));
        assert_eq!(reopened.len(), 2);
        let emb2 = CachedEmbedder::new(HashedBagOfWords::default(), reopened.clone());
        let sent2 = CachedSentiment::new(LexiconSentiment::default(), reopened);
        assert_eq!(emb2.embed("la tierra ¿qué?").unwrap(), v);
        assert_eq!(sent2.score("corruption is bad").unwrap(), s);
    }

    #[test]
    fn corrupt_file_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.bin");
        std::fs::write(&path, b"CEFC\x01garbage").unwrap();
        assert!(FeatureCache::open(&path).is_empty());
    }
}
