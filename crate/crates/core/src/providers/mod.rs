//! Sentiment and sentence-embedding providers.
//!
//! Every metric consumes exactly two learned features: a sentiment score in `[-1, 1]` and a
//! fixed-dimension embedding. Both sit behind traits so that real models (reached over HTTP)
//! and the deterministic doubles used in tests are interchangeable.

mod cache;
mod embedding;
mod remote;
mod sentiment;

pub use cache::{CachedEmbedder, CachedSentiment, FeatureCache};
pub use embedding::{average_embedding, HashedBagOfWords, HASHED_BOW_DIM};
pub use remote::{RemoteEmbedder, RemoteSentiment};
pub use sentiment::{signed_confidence, LexiconSentiment};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sentiment in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SentimentScore<T>(T);

impl<T: Scalar> SentimentScore<T> {
    pub fn new(value: T) -> Result<Self> {
        if !value.is_finite() || value < -T::one() || value > T::one() {
            return Err(Error::invalid(format!("sentiment {value} outside [-1, 1]")));
        }
        Ok(SentimentScore(value))
    }

    pub fn value(self) -> T {
        self.0
    }
}

/// Dense embedding with finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T> {
    components: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(components: Vec<T>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("embedding has no components"));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("embedding has non-finite components"));
        }
        Ok(EmbeddingVector { components })
    }

    pub fn dimension(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[T] {
        &self.components
    }

    pub fn norm(&self) -> T {
        self.components.iter().map(|c| *c * *c).sum::<T>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_zero())
    }

    pub fn scaled(&self, factor: T) -> Result<Self> {
        Self::new(self.components.iter().map(|c| *c * factor).collect())
    }
}

pub trait SentimentScorer<T: Scalar>: Send + Sync {
    /// Stable identity recorded in run manifests and used to key caches.
    fn identity(&self) -> String;

    fn score(&self, text: &str) -> Result<SentimentScore<T>>;
}

pub trait Embedder<T: Scalar>: Send + Sync {
    fn identity(&self) -> String;

    /// Declared dimension, `None` until a remote provider has answered once.
    fn dimension(&self) -> Option<usize>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector<T>>;
}

impl<T: Scalar, S: SentimentScorer<T> + ?Sized> SentimentScorer<T> for Box<S> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn score(&self, text: &str) -> Result<SentimentScore<T>> {
        (**self).score(text)
    }
}

impl<T: Scalar, E: Embedder<T> + ?Sized> Embedder<T> for Box<E> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn dimension(&self) -> Option<usize> {
        (**self).dimension()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector<T>> {
        (**self).embed(text)
    }
}

pub(crate) fn require_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::invalid("text is empty"));
    }
    Ok(())
}

/// Options for building providers from `double:<name>` / `builtin:<name>` selectors.
#[derive(Debug, Clone, Default)]
pub struct ProviderOptions {
    pub sentiment_endpoint: Option<String>,
    pub embedding_endpoint: Option<String>,
    pub auth_env: Option<String>,
}

/// Builds a sentiment provider. Known selectors: `double:lexicon`, `builtin:http`.
pub fn sentiment_from_selector<T: Scalar>(
    selector: &str,
    options: &ProviderOptions,
) -> Result<Box<dyn SentimentScorer<T>>> {
    match selector.trim() {
        "double:lexicon" => Ok(Box::new(LexiconSentiment::default())),
        "builtin:http" => {
            let endpoint = options.sentiment_endpoint.clone().ok_or_else(|| {
                Error::Config("builtin:http sentiment provider needs sentiment_endpoint".into())
            })?;
            Ok(Box::new(RemoteSentiment::new(endpoint, options.auth_env.clone())))
        }
        other => Err(Error::Config(format!("unknown sentiment provider {other:?}"))),
    }
}

/// Builds an embedding provider. Known selectors: `double:hashed-bow`, `builtin:http`.
pub fn embedder_from_selector<T: Scalar>(
    selector: &str,
    options: &ProviderOptions,
) -> Result<Box<dyn Embedder<T>>> {
    match selector.trim() {
        "double:hashed-bow" => Ok(Box::new(HashedBagOfWords::default())),
        "builtin:http" => {
            let endpoint = options.embedding_endpoint.clone().ok_or_else(|| {
                Error::Config("builtin:http embedding provider needs embedding_endpoint".into())
            })?;
            Ok(Box::new(RemoteEmbedder::new(endpoint, options.auth_env.clone())))
        }
        other => Err(Error::Config(format!("unknown embedding provider {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentiment_range_is_enforced() {
        assert!(SentimentScore::new(1.0).is_ok());
        assert!(SentimentScore::new(-1.0).is_ok());
        assert!(SentimentScore::new(1.0001).is_err());
        assert!(SentimentScore::new(f64::NAN).is_err());
    }

    #[test]
    fn embedding_rejects_non_finite() {
        assert!(EmbeddingVector::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(EmbeddingVector::<f64>::new(vec![]).is_err());
        assert!(EmbeddingVector::new(vec![0.0f32, 0.0]).unwrap().is_zero());
    }

    #[test]
    fn selectors() {
        let opts = ProviderOptions::default();
        assert!(sentiment_from_selector::<f64>("double:lexicon", &opts).is_ok());
        assert!(embedder_from_selector::<f64>("double:hashed-bow", &opts).is_ok());
        assert!(matches!(
            sentiment_from_selector::<f64>("builtin:http", &opts),
            Err(Error::Config(_))
        ));
        assert!(embedder_from_selector::<f64>("double:nope", &opts).is_err());
    }
}
