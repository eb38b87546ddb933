use std::sync::OnceLock;

use serde::Deserialize;

use super::{require_text, signed_confidence, Embedder, EmbeddingVector, SentimentScore, SentimentScorer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Deserialize)]
struct LabelScore {
    label: String,
    score: f64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SentimentReply {
    Single(LabelScore),
    List(Vec<LabelScore>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum EmbeddingReply {
    Object { embedding: Vec<f64> },
    Bare(Vec<f64>),
}

fn post_json<R: for<'de> Deserialize<'de>>(
    endpoint: &str,
    auth_env: Option<&str>,
    text: &str,
) -> Result<R> {
    let mut req = ureq::post(endpoint);
    if let Some(var) = auth_env {
        if let Ok(token) = std::env::var(var) {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
    }
    let mut resp = req
        .send_json(serde_json::json!({ "text": text }))
        .map_err(|e| Error::Transport {
            target: endpoint.to_string(),
            message: e.to_string(),
        })?;
    resp.body_mut()
        .read_json::<R>()
        .map_err(|e| Error::Provider(format!("{endpoint}: malformed reply: {e}")))
}

/// Sentiment classifier served over HTTP.
///
/// Request: `POST {"text": ...}`. Reply: `{"label", "score"}` or a list of them (the first
/// entry is used), mapped through [`signed_confidence`]. Nothing is contacted until the first
/// call.
#[derive(Debug, Clone)]
pub struct RemoteSentiment {
    endpoint: String,
    auth_env: Option<String>,
}

impl RemoteSentiment {
    pub fn new(endpoint: impl Into<String>, auth_env: Option<String>) -> Self {
        RemoteSentiment {
            endpoint: endpoint.into(),
            auth_env,
        }
    }
}

impl<T: Scalar> SentimentScorer<T> for RemoteSentiment {
    fn identity(&self) -> String {
        format!("builtin:http({})", self.endpoint)
    }

    fn score(&self, text: &str) -> Result<SentimentScore<T>> {
        require_text(text)?;
        let reply: SentimentReply = post_json(&self.endpoint, self.auth_env.as_deref(), text)?;
        let top = match reply {
            SentimentReply::Single(s) => s,
            SentimentReply::List(mut v) if !v.is_empty() => v.swap_remove(0),
            SentimentReply::List(_) => {
                return Err(Error::Provider(format!("{}: empty reply", self.endpoint)))
            }
        };
        signed_confidence(&top.label, T::of(top.score))
    }
}

/// Sentence embedder served over HTTP.
///
/// Request: `POST {"text": ...}`. Reply: `{"embedding": [...]}` or a bare array. The dimension
/// is fixed by the first reply and enforced afterwards.
#[derive(Debug)]
pub struct RemoteEmbedder {
    endpoint: String,
    auth_env: Option<String>,
    dimension: OnceLock<usize>,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, auth_env: Option<String>) -> Self {
        RemoteEmbedder {
            endpoint: endpoint.into(),
            auth_env,
            dimension: OnceLock::new(),
        }
    }
}

impl<T: Scalar> Embedder<T> for RemoteEmbedder {
    fn identity(&self) -> String {
        format!("builtin:http({})", self.endpoint)
    }

    fn dimension(&self) -> Option<usize> {
        self.dimension.get().copied()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector<T>> {
        require_text(text)?;
        let reply: EmbeddingReply = post_json(&self.endpoint, self.auth_env.as_deref(), text)?;
        let values = match reply {
            EmbeddingReply::Object { embedding } => embedding,
            EmbeddingReply::Bare(v) => v,
        };
        let dim = *self.dimension.get_or_init(|| values.len());
        if values.len() != dim {
            return Err(Error::Provider(format!(
                "{}: dimension changed from {dim} to {}",
                self.endpoint,
                values.len()
            )));
        }
        EmbeddingVector::new(values.into_iter().map(T::of).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let s = RemoteSentiment::new("http://127.0.0.1:9/score", None);
        let err = SentimentScorer::<f64>::score(&s, "hola").unwrap_err();
        assert!(matches!(err, Error::Transport { .. }), "{err}");
    }

    #[test]
    fn replies_parse() {
        let r: SentimentReply = serde_json::from_str(r#"[{"label":"NEGATIVE","score":0.8}]"#).unwrap();
        assert!(matches!(r, SentimentReply::List(ref v) if v[0].label == "NEGATIVE"));
        let e: EmbeddingReply = serde_json::from_str(r#"{"embedding":[0.5,1.0]}"#).unwrap();
        assert!(matches!(e, EmbeddingReply::Object { ref embedding } if embedding.len() == 2));
    }
}
