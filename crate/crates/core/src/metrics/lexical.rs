use std::collections::{BTreeSet, HashSet};

use super::KeywordLexicon;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::text::{sentences, words};

fn require_non_empty<S>(responses: &[S], what: &str) -> Result<()> {
    if responses.is_empty() {
        return Err(Error::invalid(format!("{what}: no responses")));
    }
    Ok(())
}

/// Mean over responses of (lexicon token count / token count).
///
/// A response without tokens contributes 0 and still counts toward the mean.
pub fn keyword_frequency<T: Scalar, S: AsRef<str>>(
    responses: &[S],
    terms: &BTreeSet<String>,
) -> Result<T> {
    require_non_empty(responses, "keyword frequency")?;
    if terms.is_empty() {
        return Err(Error::invalid("keyword frequency: empty term set"));
    }
    let total: T = responses
        .iter()
        .map(|r| {
            let toks = words(r.as_ref());
            if toks.is_empty() {
                log::warn!("keyword frequency: response without tokens counted as 0");
                return T::zero();
            }
            let hits = toks.iter().filter(|t| terms.contains(t.as_str())).count();
            T::of_usize(hits) / T::of_usize(toks.len())
        })
        .sum();
    Ok(total / T::of_usize(responses.len()))
}

/// Corpus-level type-token ratio over all responses.
pub fn ttr<T: Scalar, S: AsRef<str>>(responses: &[S]) -> Result<T> {
    let mut types = HashSet::new();
    let mut tokens = 0usize;
    for r in responses {
        for w in words(r.as_ref()) {
            tokens += 1;
            types.insert(w);
        }
    }
    if tokens == 0 {
        return Err(Error::UndefinedMetric("type-token ratio of zero tokens".into()));
    }
    Ok(T::of_usize(types.len()) / T::of_usize(tokens))
}

/// Mean token count per response.
pub fn avg_length<T: Scalar, S: AsRef<str>>(responses: &[S]) -> Result<T> {
    require_non_empty(responses, "average length")?;
    let total: usize = responses.iter().map(|r| words(r.as_ref()).len()).sum();
    Ok(T::of_usize(total) / T::of_usize(responses.len()))
}

/// Mean per response of the number of sentences holding at least one regional and one
/// Western term.
pub fn cooccurrence_rate<T: Scalar, S: AsRef<str>>(
    responses: &[S],
    lexicon: &KeywordLexicon,
) -> Result<T> {
    require_non_empty(responses, "co-occurrence rate")?;
    if lexicon.latin_american_terms.is_empty() || lexicon.western_terms.is_empty() {
        return Err(Error::invalid("co-occurrence rate needs both term sets"));
    }
    let count: usize = responses
        .iter()
        .map(|r| {
            sentences(r.as_ref())
                .filter(|s| {
                    let toks = words(s);
                    toks.iter().any(|t| lexicon.latin_american_terms.contains(t))
                        && toks.iter().any(|t| lexicon.western_terms.contains(t))
                })
                .count()
        })
        .sum();
    Ok(T::of_usize(count) / T::of_usize(responses.len()))
}

/// Lexical statistics of one text collection (a model or a reference set).
#[derive(Debug, Clone, PartialEq)]
pub struct LexicalProfile<T> {
    pub name: String,
    pub keyword_freq: T,
    pub ttr: T,
    pub avg_length_words: T,
    pub cooccurrence_rate: T,
    pub n: usize,
}

impl<T: Scalar> LexicalProfile<T> {
    pub fn compute<S: AsRef<str>>(
        name: impl Into<String>,
        texts: &[S],
        lexicon: &KeywordLexicon,
    ) -> Result<Self> {
        Ok(LexicalProfile {
            name: name.into(),
            keyword_freq: keyword_frequency(texts, &lexicon.latin_american_terms)?,
            ttr: ttr(texts)?,
            avg_length_words: avg_length(texts)?,
            cooccurrence_rate: cooccurrence_rate(texts, lexicon)?,
            n: texts.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn terms(ts: &[&str]) -> BTreeSet<String> {
        ts.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn keyword_frequency_examples() {
        let lex = terms(&["inca", "quechua"]);
        let kf: f64 = keyword_frequency(&["The Inca spoke Quechua"], &lex).unwrap();
        assert_eq!(kf, 0.5);
        let none: f64 = keyword_frequency(&["Nothing relevant here"], &lex).unwrap();
        assert_eq!(none, 0.0);
        let full: f64 = keyword_frequency(&["Inca quechua INCA"], &lex).unwrap();
        assert_eq!(full, 1.0);
        let with_empty: f64 = keyword_frequency(&["inca", "..."], &lex).unwrap();
        assert_eq!(with_empty, 0.5);
        assert!(keyword_frequency::<f64, &str>(&[], &lex).is_err());
    }

    #[test]
    fn ttr_examples() {
        let t: f64 = ttr(&["la la tierra"]).unwrap();
        assert!((t - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(ttr::<f64, _>(&["uno dos tres"]).unwrap(), 1.0);
        assert_eq!(ttr::<f64, _>(&["sí sí sí sí"]).unwrap(), 0.25);
        assert!(matches!(ttr::<f64, _>(&["!!"]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn avg_length_examples() {
        assert_eq!(avg_length::<f64, _>(&["a b", "c d e"]).unwrap(), 2.5);
        assert_eq!(avg_length::<f64, _>(&["   "]).unwrap(), 0.0);
    }

    #[test]
    fn cooccurrence_examples() {
        let lex = KeywordLexicon::new(
            vec!["quechua".into(), "inca".into()],
            vec!["europe".into()],
        )
        .unwrap();
        let none: f64 = cooccurrence_rate(&["Quechua is spoken. The Inca."], &lex).unwrap();
        assert_eq!(none, 0.0);
        let one: f64 = cooccurrence_rate(&["Quechua reached Europe late."], &lex).unwrap();
        assert_eq!(one, 1.0);
        let half: f64 =
            cooccurrence_rate(&["Quechua and Europe! Nothing.", "Inca. Europe."], &lex).unwrap();
        assert_eq!(half, 0.5);
    }

    proptest! {
        #[test]
        fn order_invariance(mut texts in proptest::collection::vec("(inca|la|tierra|quechua| ){1,12}", 1..8), seed in any::<u64>()) {
            prop_assume!(texts.iter().any(|t| !words(t).is_empty()));
            let lex = terms(&["inca", "quechua"]);
            let kf1: f64 = keyword_frequency(&texts, &lex).unwrap();
            let t1: f64 = ttr(&texts).unwrap();
            let k = (seed as usize) % texts.len();
            texts.rotate_left(k);
            texts.reverse();
            let kf2: f64 = keyword_frequency(&texts, &lex).unwrap();
            let t2: f64 = ttr(&texts).unwrap();
            prop_assert!((kf1 - kf2).abs() < 1e-12);
            prop_assert_eq!(t1, t2);
            prop_assert!(t1 <= 1.0);
        }
    }
}
