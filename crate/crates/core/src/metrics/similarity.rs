use crate::aggregation::ReferencePair;
use crate::error::{Error, Result};
use crate::providers::{Embedder, EmbeddingVector, SentimentScore};
use crate::scalar::Scalar;

/// `|s_llm - s_user|`, in `[0, 2]`.
pub fn sentiment_diff<T: Scalar>(s_llm: SentimentScore<T>, s_user: SentimentScore<T>) -> T {
    (s_llm.value() - s_user.value()).abs()
}

pub fn cosine_similarity<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T> {
    if a.dimension() != b.dimension() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    if a.is_zero() || b.is_zero() {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    let dot: T = a
        .components()
        .iter()
        .zip(b.components())
        .map(|(x, y)| *x * *y)
        .sum();
    let sim = dot / (a.norm() * b.norm());
    Ok(sim.max(-T::one()).min(T::one()))
}

/// Per-question `(index, cos(llm, v1), cos(llm, v2))` over questions with a present response.
pub fn semantic_similarity_per_question<T: Scalar, S: AsRef<str>>(
    llm_responses: &[Option<S>],
    references: &[ReferencePair<T>],
    embedder: &dyn Embedder<T>,
) -> Result<Vec<(usize, T, T)>> {
    if llm_responses.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} responses but {} references",
            llm_responses.len(),
            references.len()
        )));
    }
    let mut out = Vec::new();
    for (i, (resp, refs)) in llm_responses.iter().zip(references).enumerate() {
        let Some(resp) = resp else { continue };
        let e = embedder.embed(resp.as_ref())?;
        let s1 = cosine_similarity(&e, &embedder.embed(&refs.v1)?)?;
        let s2 = cosine_similarity(&e, &embedder.embed(&refs.v2)?)?;
        out.push((i, s1, s2));
    }
    Ok(out)
}

/// Mean similarity of present responses to V1 and to V2.
pub fn semantic_similarity<T: Scalar, S: AsRef<str>>(
    llm_responses: &[Option<S>],
    references: &[ReferencePair<T>],
    embedder: &dyn Embedder<T>,
) -> Result<(T, T)> {
    let per = semantic_similarity_per_question(llm_responses, references, embedder)?;
    if per.is_empty() {
        return Err(Error::UndefinedMetric(
            "semantic similarity with no present responses".into(),
        ));
    }
    let n = T::of_usize(per.len());
    let s1 = per.iter().map(|p| p.1).sum::<T>() / n;
    let s2 = per.iter().map(|p| p.2).sum::<T>() / n;
    Ok((s1, s2))
}
