use std::collections::HashSet;

use super::{require_text, SentimentScore, SentimentScorer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::text::words;

const POSITIVE: &[&str] = &[
    "good", "great", "happy", "love", "beautiful", "rich", "proud", "pride", "friendly", "kind",
    "peace", "peaceful", "hope", "hopeful", "wonderful", "vibrant", "celebrate", "success",
    "successful", "best", "enjoy", "positive", "strong", "diverse", "bueno", "buena", "feliz",
    "amor", "hermoso", "hermosa", "orgullo", "paz", "esperanza", "alegría", "bom", "boa",
    "feliz", "lindo", "linda", "orgulho", "esperança", "alegria",
];

const NEGATIVE: &[&str] = &[
    "bad", "poor", "poverty", "corruption", "corrupt", "destroys", "destroy", "violence",
    "violent", "crime", "war", "hate", "sad", "inequality", "unfair", "crisis", "exploitation",
    "oppression", "colonization", "colonial", "racism", "worst", "fear", "danger", "dangerous",
    "negative", "ignorant", "malo", "mala", "pobreza", "corrupción", "violencia", "crimen",
    "guerra", "odio", "triste", "desigualdad", "miedo", "ruim", "pobreza", "corrupção",
    "violência", "crime", "ódio", "medo", "desigualdade",
];

/// Lexicon scorer: `(pos - neg) / (pos + neg)` over word hits, `0` with no hits.
#[derive(Debug, Clone)]
pub struct LexiconSentiment {
    positive: HashSet<String>,
    negative: HashSet<String>,
}

impl Default for LexiconSentiment {
    fn default() -> Self {
        Self::new(POSITIVE.iter().copied(), NEGATIVE.iter().copied())
    }
}

impl LexiconSentiment {
    pub fn new<'a>(
        positive: impl IntoIterator<Item = &'a str>,
        negative: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        LexiconSentiment {
            positive: positive.into_iter().map(str::to_lowercase).collect(),
            negative: negative.into_iter().map(str::to_lowercase).collect(),
        }
    }

    pub fn hits(&self, text: &str) -> (usize, usize) {
        words(text).iter().fold((0, 0), |(p, n), w| {
            (
                p + usize::from(self.positive.contains(w)),
                n + usize::from(self.negative.contains(w)),
            )
        })
    }
}

impl<T: Scalar> SentimentScorer<T> for LexiconSentiment {
    fn identity(&self) -> String {
        format!(
            "double:lexicon(pos={},neg={})",
            self.positive.len(),
            self.negative.len()
        )
    }

    fn score(&self, text: &str) -> Result<SentimentScore<T>> {
        require_text(text)?;
        let (pos, neg) = self.hits(text);
        if pos + neg == 0 {
            return SentimentScore::new(T::zero());
        }
        let (pos, neg) = (T::of_usize(pos), T::of_usize(neg));
        SentimentScore::new((pos - neg) / (pos + neg))
    }
}

/// Maps a binary classifier's `(label, confidence)` to a signed score: positive labels give
/// `+confidence`, negative labels `-confidence`.
pub fn signed_confidence<T: Scalar>(label: &str, confidence: T) -> Result<SentimentScore<T>> {
    if !(confidence >= T::zero() && confidence <= T::one()) {
        return Err(Error::Provider(format!("confidence {confidence} outside [0, 1]")));
    }
    match label.trim().to_uppercase().as_str() {
        "POSITIVE" | "POS" | "LABEL_1" => SentimentScore::new(confidence),
        "NEGATIVE" | "NEG" | "LABEL_0" => SentimentScore::new(-confidence),
        other => Err(Error::Provider(format!("unknown sentiment label {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn score(s: &LexiconSentiment, text: &str) -> f64 {
        SentimentScorer::<f64>::score(s, text).unwrap().value()
    }

    #[test]
    fn lexicon_examples() {
        let s = LexiconSentiment::default();
        assert_eq!(s.hits("corruption destroys trust"), (0, 2));
        assert_eq!(score(&s, "corruption destroys trust"), -1.0);
        assert_eq!(score(&s, "good people, bad roads"), 0.0);
        assert_eq!(score(&s, "nothing to see"), 0.0);
        assert_eq!(score(&s, "Good good bad"), 1.0 / 3.0);
        assert!(SentimentScorer::<f64>::score(&s, "   ").is_err());
    }

    #[test]
    fn signed_confidence_mapping() {
        assert_eq!(signed_confidence("POSITIVE", 0.9).unwrap().value(), 0.9);
        assert_eq!(signed_confidence("negative", 0.75).unwrap().value(), -0.75);
        assert!(signed_confidence("NEUTRAL", 0.5).is_err());
        assert!(signed_confidence("POSITIVE", 1.5).is_err());
    }

    proptest! {
        #[test]
        fn lexicon_score_in_range(text in "[a-z ]{0,10}(good|bad|poverty|peace)?[a-z ]{1,30}") {
            let s = LexiconSentiment::default();
            if !text.trim().is_empty() {
                let v = score(&s, &text);
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }
    }
}
