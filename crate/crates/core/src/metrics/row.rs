use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ce_score, cosine_similarity, keyword_frequency, sentiment_diff, CeInputs, CeWeights,
    KeywordLexicon, LexicalProfile,
};
use crate::aggregation::ReferencePair;
use crate::error::{Error, Result};
use crate::harness::ResponseSet;
use crate::providers::{Embedder, SentimentScore, SentimentScorer};
use crate::scalar::{mean, Scalar};
use crate::text::normalize_key;

/// Column labels of `metrics.csv`.
pub const METRICS_HEADER: [&str; 11] = [
    "Model",
    "Key. Freq.",
    "Sentiment Diff.",
    "Sem. Sim. (V1)",
    "Sem. Sim. (V2)",
    "TTR",
    "Avg. Response Length (words)",
    "Co-occurrence",
    "CE Score",
    "n_present",
    "n_missing",
];

/// Aggregate measurements of one model over its present responses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow<T> {
    pub model_name: String,
    pub keyword_freq: T,
    pub delta_s: T,
    pub sem_sim_v1: T,
    pub sem_sim_v2: T,
    pub ttr: T,
    pub avg_length_words: T,
    pub cooccurrence_rate: T,
    pub ce: T,
    pub n_present: usize,
    pub n_missing: usize,
}

impl<T: Scalar> MetricRow<T> {
    /// Mean of the two similarity columns, the similarity term of CE.
    pub fn sem_sim(&self) -> T {
        (self.sem_sim_v1 + self.sem_sim_v2) / T::of(2.0)
    }

    pub fn ce_inputs(&self) -> CeInputs<T> {
        CeInputs::new(self.keyword_freq, self.delta_s, self.sem_sim())
    }
}

/// Measurements of one present response.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionMetrics<T> {
    pub question: String,
    pub s_llm: T,
    pub s_user: T,
    pub delta_s: T,
    pub sim_v1: T,
    pub sim_v2: T,
    pub keyword_freq: T,
}

impl<T: Scalar> QuestionMetrics<T> {
    /// Signed `s_user - s_llm`, the paired difference tested for misalignment.
    pub fn user_minus_llm(&self) -> T {
        self.s_user - self.s_llm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEvaluation<T> {
    pub row: MetricRow<T>,
    pub per_question: Vec<QuestionMetrics<T>>,
}

/// Providers and parameters shared by every model evaluation of a run.
pub struct EvaluationContext<'a, T: Scalar> {
    pub embedder: &'a dyn Embedder<T>,
    pub sentiment: &'a dyn SentimentScorer<T>,
    pub lexicon: &'a KeywordLexicon,
    pub weights: CeWeights<T>,
}

/// Computes a [`MetricRow`] for one response set.
///
/// References are matched by question text. Missing responses are dropped pairwise: they
/// contribute to `n_missing` and to nothing else. `delta_s` is the mean of per-question
/// absolute differences.
pub fn evaluate_model<T: Scalar>(
    set: &ResponseSet,
    references: &[ReferencePair<T>],
    ctx: &EvaluationContext<'_, T>,
) -> Result<ModelEvaluation<T>> {
    let by_question: HashMap<String, &ReferencePair<T>> = references
        .iter()
        .map(|r| (normalize_key(&r.question), r))
        .collect();
    let mut per_question = Vec::new();
    let mut texts = Vec::new();
    for record in &set.records {
        let reference = by_question
            .get(&normalize_key(&record.question))
            .ok_or_else(|| Error::invalid(format!("no reference answers for {:?}", record.question)))?;
        let Some(resp) = record.response.as_deref() else {
            continue;
        };
        let s_llm: SentimentScore<T> = ctx.sentiment.score(resp)?;
        let e = ctx.embedder.embed(resp)?;
        let sim_v1 = cosine_similarity(&e, &ctx.embedder.embed(&reference.v1)?)?;
        let sim_v2 = cosine_similarity(&e, &ctx.embedder.embed(&reference.v2)?)?;
        per_question.push(QuestionMetrics {
            question: record.question.clone(),
            s_llm: s_llm.value(),
            s_user: reference.s_user.value(),
            delta_s: sentiment_diff(s_llm, reference.s_user),
            sim_v1,
            sim_v2,
            keyword_freq: keyword_frequency(&[resp], &ctx.lexicon.latin_american_terms)?,
        });
        texts.push(resp);
    }
    if per_question.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "{}: no present responses",
            set.model_name
        )));
    }
    let col = |f: fn(&QuestionMetrics<T>) -> T| -> T {
        mean(&per_question.iter().map(f).collect::<Vec<_>>()).expect("non-empty")
    };
    let lexical = LexicalProfile::<T>::compute(&set.model_name, &texts, ctx.lexicon)?;
    let mut row = MetricRow {
        model_name: set.model_name.clone(),
        keyword_freq: lexical.keyword_freq,
        delta_s: col(|q| q.delta_s),
        sem_sim_v1: col(|q| q.sim_v1),
        sem_sim_v2: col(|q| q.sim_v2),
        ttr: lexical.ttr,
        avg_length_words: lexical.avg_length_words,
        cooccurrence_rate: lexical.cooccurrence_rate,
        ce: T::zero(),
        n_present: per_question.len(),
        n_missing: set.n_missing(),
    };
    row.ce = ce_score(&row.ce_inputs(), &ctx.weights);
    Ok(ModelEvaluation { row, per_question })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement<T> {
    pub metric: String,
    pub before: T,
    pub after: T,
    /// `100 (after - before) / before`; `None` when `before` is zero. A drop in the
    /// sentiment difference shows as a negative value (a reduction).
    pub percent_change: Option<T>,
}

/// Signed percent change of the compared metrics.
pub fn improvement_report<T: Scalar>(before: &MetricRow<T>, after: &MetricRow<T>) -> Vec<Improvement<T>> {
    let entries: [(&'static str, T, T); 5] = [
        ("Keyword Freq.", before.keyword_freq, after.keyword_freq),
        ("Sentiment Diff.", before.delta_s, after.delta_s),
        ("Semantic Sim. (V1)", before.sem_sim_v1, after.sem_sim_v1),
        ("Semantic Sim. (V2)", before.sem_sim_v2, after.sem_sim_v2),
        ("CE Score", before.ce, after.ce),
    ];
    entries
        .into_iter()
        .map(|(metric, b, a)| Improvement {
            metric: metric.to_string(),
            before: b,
            after: a,
            percent_change: (!b.is_zero()).then(|| T::of(100.0) * (a - b) / b),
        })
        .collect()
}

fn fmt<T: Scalar>(x: T) -> String {
    format!("{:.6}", x.as_f64())
}

/// Writes one row per model under [`METRICS_HEADER`].
pub fn write_metrics_csv<T: Scalar>(path: impl AsRef<Path>, rows: &[MetricRow<T>]) -> Result<()> {
    let path = path.as_ref();
    let wrap = |e: csv::Error| crate::corpus::csv_error(path, e);
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(METRICS_HEADER).map_err(wrap)?;
    for r in rows {
        w.write_record([
            r.model_name.clone(),
            fmt(r.keyword_freq),
            fmt(r.delta_s),
            fmt(r.sem_sim_v1),
            fmt(r.sem_sim_v2),
            fmt(r.ttr),
            fmt(r.avg_length_words),
            fmt(r.cooccurrence_rate),
            fmt(r.ce),
            r.n_present.to_string(),
            r.n_missing.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_field<T: Scalar>(path: &Path, line: u64, column: &str, raw: &str) -> Result<T> {
    raw.trim().parse::<f64>().map(T::of).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("column {column:?}: {raw:?} is not a number"),
    })
}

fn parse_count(path: &Path, line: u64, column: &str, raw: &str) -> Result<usize> {
    raw.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("column {column:?}: {raw:?} is not a count"),
    })
}

/// Reads a file written by [`write_metrics_csv`].
pub fn read_metrics_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<MetricRow<T>>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| crate::corpus::csv_error(path, e))?;
    crate::corpus::check_header(path, &mut rdr, &METRICS_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| crate::corpus::csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| parse_field::<T>(path, line, METRICS_HEADER[i], &rec[i]);
        rows.push(MetricRow {
            model_name: rec[0].to_string(),
            keyword_freq: f(1)?,
            delta_s: f(2)?,
            sem_sim_v1: f(3)?,
            sem_sim_v2: f(4)?,
            ttr: f(5)?,
            avg_length_words: f(6)?,
            cooccurrence_rate: f(7)?,
            ce: f(8)?,
            n_present: parse_count(path, line, METRICS_HEADER[9], &rec[9])?,
            n_missing: parse_count(path, line, METRICS_HEADER[10], &rec[10])?,
        });
    }
    Ok(rows)
}

/// Column labels of the per-question file.
pub const PER_QUESTION_HEADER: [&str; 8] =
    ["Model", "Question", "S_LLM", "S_User", "Sentiment Diff.", "Sim. V1", "Sim. V2", "Key. Freq."];

/// Writes every present response's measurements, values at full precision.
pub fn write_per_question_csv<T: Scalar>(
    path: impl AsRef<Path>,
    models: &[(String, Vec<QuestionMetrics<T>>)],
) -> Result<()> {
    let path = path.as_ref();
    let wrap = |e: csv::Error| crate::corpus::csv_error(path, e);
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    w.write_record(PER_QUESTION_HEADER).map_err(wrap)?;
    for (model, qs) in models {
        for q in qs {
            let v = |x: T| x.as_f64().to_string();
            w.write_record([
                model.clone(),
                q.question.clone(),
                v(q.s_llm),
                v(q.s_user),
                v(q.delta_s),
                v(q.sim_v1),
                v(q.sim_v2),
                v(q.keyword_freq),
            ])
            .map_err(wrap)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the per-question file, grouped by model in first-appearance order.
pub fn read_per_question_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<QuestionMetrics<T>>)>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| crate::corpus::csv_error(path, e))?;
    crate::corpus::check_header(path, &mut rdr, &PER_QUESTION_HEADER)?;
    let mut out: Vec<(String, Vec<QuestionMetrics<T>>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| crate::corpus::csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| parse_field::<T>(path, line, PER_QUESTION_HEADER[i], &rec[i]);
        let q = QuestionMetrics {
            question: rec[1].to_string(),
            s_llm: f(2)?,
            s_user: f(3)?,
            delta_s: f(4)?,
            sim_v1: f(5)?,
            sim_v2: f(6)?,
            keyword_freq: f(7)?,
        };
        match out.iter_mut().find(|(m, _)| m == &rec[0]) {
            Some((_, v)) => v.push(q),
            None => out.push((rec[0].to_string(), vec![q])),
        }
    }
    Ok(out)
}
