//! Reduction of human respondent pools into two reference answers per question.
//!
//! Responses are ranked by centrality, the mean cosine similarity of a response's embedding
//! to every other response in the pool. The most central response becomes V1, the most
//! central response with a different text becomes V2, and the user sentiment is the mean of
//! their two scores.

use std::collections::HashSet;
use std::path::Path;

use crate::corpus::{check_header, csv_error};
use crate::error::{Error, Result};
use crate::metrics::cosine_similarity;
use crate::providers::{Embedder, SentimentScore, SentimentScorer};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserResponse {
    pub respondent_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserResponsePool {
    pub question: String,
    pub responses: Vec<UserResponse>,
}

impl UserResponsePool {
    pub fn new(question: impl Into<String>, responses: Vec<UserResponse>) -> Result<Self> {
        let question = question.into();
        if responses.is_empty() {
            return Err(Error::invalid(format!("no user responses for {question:?}")));
        }
        let mut ids = HashSet::new();
        for r in &responses {
            if r.text.trim().is_empty() {
                return Err(Error::invalid(format!(
                    "empty response from {} for {question:?}",
                    r.respondent_id
                )));
            }
            if !ids.insert(r.respondent_id.as_str()) {
                return Err(Error::invalid(format!(
                    "respondent {} answered {question:?} twice",
                    r.respondent_id
                )));
            }
        }
        Ok(UserResponsePool {
            question,
            responses,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePair<T> {
    pub question: String,
    pub v1: String,
    pub v2: String,
    pub s_user: SentimentScore<T>,
}

impl<T: Scalar> ReferencePair<T> {
    pub fn new(
        question: impl Into<String>,
        v1: impl Into<String>,
        v2: impl Into<String>,
        s_user: SentimentScore<T>,
    ) -> Result<Self> {
        Ok(ReferencePair {
            question: question.into(),
            v1: v1.into(),
            v2: v2.into(),
            s_user,
        })
    }

    /// Rebuilds a pair from stored texts, rescoring the user sentiment.
    pub fn from_texts(
        texts: ReferenceTexts,
        scorer: &dyn SentimentScorer<T>,
    ) -> Result<Self> {
        let s1 = scorer.score(&texts.v1)?;
        let s2 = scorer.score(&texts.v2)?;
        Ok(ReferencePair {
            question: texts.question,
            v1: texts.v1,
            v2: texts.v2,
            s_user: averaged_user_sentiment(s1, s2),
        })
    }

    pub fn texts(&self) -> ReferenceTexts {
        ReferenceTexts {
            question: self.question.clone(),
            v1: self.v1.clone(),
            v2: self.v2.clone(),
        }
    }
}

/// One row of the reference CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceTexts {
    pub question: String,
    pub v1: String,
    pub v2: String,
}

/// `(S(v1) + S(v2)) / 2`.
pub fn averaged_user_sentiment<T: Scalar>(
    s1: SentimentScore<T>,
    s2: SentimentScore<T>,
) -> SentimentScore<T> {
    let mean = (s1.value() + s2.value()) / T::of(2.0);
    SentimentScore::new(mean).expect("mean of two scores stays in range")
}

/// Centrality of each response, in respondent-id order.
pub fn centralities<T: Scalar>(
    pool: &UserResponsePool,
    embedder: &dyn Embedder<T>,
) -> Result<Vec<(UserResponse, T)>> {
    let mut members = pool.responses.clone();
    members.sort_by(|a, b| a.respondent_id.cmp(&b.respondent_id));
    if members.len() == 1 {
        return Ok(vec![(members.remove(0), T::one())]);
    }
    let embeddings = members
        .iter()
        .map(|r| embedder.embed(&r.text))
        .collect::<Result<Vec<_>>>()?;
    let n = members.len();
    let mut sims = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = cosine_similarity(&embeddings[i], &embeddings[j])?;
            sims[i][j] = s;
            sims[j][i] = s;
        }
    }
    let denom = T::of_usize(n - 1);
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let total = (0..n).filter(|&j| j != i).map(|j| sims[i][j]).sum::<T>();
            (r, total / denom)
        })
        .collect())
}

pub fn select_representatives<T: Scalar>(
    pool: &UserResponsePool,
    embedder: &dyn Embedder<T>,
    scorer: &dyn SentimentScorer<T>,
) -> Result<ReferencePair<T>> {
    let mut ranked = centralities(pool, embedder)?;
    // Stable sort: equal centralities stay in respondent-id order.
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let v1 = ranked[0].0.text.clone();
    let v2 = ranked
        .iter()
        .map(|(r, _)| &r.text)
        .find(|t| **t != v1)
        .unwrap_or(&v1)
        .clone();
    let s_user = averaged_user_sentiment(scorer.score(&v1)?, scorer.score(&v2)?);
    Ok(ReferencePair {
        question: pool.question.clone(),
        v1,
        v2,
        s_user,
    })
}

const USER_HEADER: [&str; 3] = ["Question", "RespondentID", "Response"];
const REFERENCE_HEADER: [&str; 3] = ["Question", "RespV1", "RespV2"];

/// Reads `Question,RespondentID,Response` rows into pools, in first-appearance order.
pub fn read_user_responses(path: impl AsRef<Path>) -> Result<Vec<UserResponsePool>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    check_header(path, &mut rdr, &USER_HEADER)?;
    let mut grouped: Vec<(String, Vec<UserResponse>)> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let response = UserResponse {
            respondent_id: row[1].to_string(),
            text: row[2].to_string(),
        };
        match grouped.iter_mut().find(|(q, _)| q == &row[0]) {
            Some((_, v)) => v.push(response),
            None => grouped.push((row[0].to_string(), vec![response])),
        }
    }
    grouped
        .into_iter()
        .map(|(q, rs)| UserResponsePool::new(q, rs))
        .collect()
}

pub fn write_user_responses(path: impl AsRef<Path>, pools: &[UserResponsePool]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(USER_HEADER).map_err(|e| csv_error(path, e))?;
    for p in pools {
        for r in &p.responses {
            w.write_record([p.question.as_str(), &r.respondent_id, &r.text])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_references(path: impl AsRef<Path>, refs: &[ReferenceTexts]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(REFERENCE_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for r in refs {
        w.write_record([r.question.as_str(), &r.v1, &r.v2])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_references(path: impl AsRef<Path>) -> Result<Vec<ReferenceTexts>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    check_header(path, &mut rdr, &REFERENCE_HEADER)?;
    rdr.records()
        .map(|row| {
            let row = row.map_err(|e| csv_error(path, e))?;
            Ok(ReferenceTexts {
                question: row[0].to_string(),
                v1: row[1].to_string(),
                v2: row[2].to_string(),
            })
        })
        .collect()
}
