//! Response collection from pluggable model backends.

mod backends;
mod config;

pub use backends::{EchoBackend, HttpJsonBackend, LocalModelBackend, ReplayBackend};
pub use config::{BackendKind, GenerationOverrides, ProviderConfig};

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{check_header, csv_error, QuestionRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub max_new_tokens: usize,
    /// 0 means greedy decoding.
    pub temperature: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            max_new_tokens: 512,
            temperature: 0.7,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::invalid("max_new_tokens must be positive"));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Worth one retry (timeouts, 5xx).
    Transient,
    /// Retrying will not help (tokenization failure, refused prompt).
    Permanent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendError {
    pub kind: FailureKind,
    pub message: String,
}

impl BackendError {
    pub fn transient(message: impl Into<String>) -> Self {
        BackendError {
            kind: FailureKind::Transient,
            message: message.into(),
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        BackendError {
            kind: FailureKind::Permanent,
            message: message.into(),
        }
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

/// A text generator. Implementations must tolerate concurrent calls.
pub trait ModelBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Called once before collection; an error means the backend is wholly unreachable.
    fn check(&self) -> Result<()> {
        Ok(())
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError>;

    /// Identity recorded in manifests (model path, endpoint, ...).
    fn describe(&self) -> String {
        self.name().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseStatus {
    Ok,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseRecord {
    pub question: String,
    pub response: Option<String>,
    pub model_name: String,
    pub status: ResponseStatus,
    pub failure_note: Option<String>,
}

impl ResponseRecord {
    pub fn ok(question: impl Into<String>, model: impl Into<String>, response: String) -> Self {
        if response.trim().is_empty() {
            return Self::missing(question, model, "empty response");
        }
        ResponseRecord {
            question: question.into(),
            response: Some(response),
            model_name: model.into(),
            status: ResponseStatus::Ok,
            failure_note: None,
        }
    }

    pub fn missing(
        question: impl Into<String>,
        model: impl Into<String>,
        note: impl Into<String>,
    ) -> Self {
        ResponseRecord {
            question: question.into(),
            response: None,
            model_name: model.into(),
            status: ResponseStatus::Missing,
            failure_note: Some(note.into()),
        }
    }
}

/// Responses of one model, aligned to the question order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseSet {
    pub model_name: String,
    pub records: Vec<ResponseRecord>,
}

impl ResponseSet {
    pub fn n_missing(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.status == ResponseStatus::Missing)
            .count()
    }

    pub fn n_present(&self) -> usize {
        self.records.len() - self.n_missing()
    }

    /// Missing responses as a percentage of all questions.
    pub fn missing_percent(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        100.0 * self.n_missing() as f64 / self.records.len() as f64
    }

    /// e.g. `9 missing responses (16.67% of the total)`.
    pub fn missing_summary(&self) -> String {
        let n = self.n_missing();
        format!(
            "{n} missing response{} ({:.2}% of the total)",
            if n == 1 { "" } else { "s" },
            self.missing_percent()
        )
    }

    pub fn responses(&self) -> Vec<Option<&str>> {
        self.records.iter().map(|r| r.response.as_deref()).collect()
    }

    pub fn present_responses(&self) -> Vec<&str> {
        self.records
            .iter()
            .filter_map(|r| r.response.as_deref())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CollectOptions {
    /// Questions in flight at once. 1 processes them sequentially.
    pub parallelism: usize,
    /// Extra attempts after a transient failure.
    pub retries: usize,
}

impl Default for CollectOptions {
    fn default() -> Self {
        CollectOptions {
            parallelism: 1,
            retries: 1,
        }
    }
}

/// Asks `backend` every question. Per-question failures become missing records; only an
/// unreachable backend aborts the run.
pub fn collect_responses(
    backend: &dyn ModelBackend,
    questions: &[QuestionRecord],
    params: &GenerationParams,
    options: CollectOptions,
) -> Result<ResponseSet> {
    if questions.is_empty() {
        return Err(Error::invalid("no questions to ask"));
    }
    params.validate()?;
    backend.check()?;
    let model = backend.name().to_string();
    let slots: Vec<Mutex<Option<ResponseRecord>>> =
        questions.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..options.parallelism.clamp(1, questions.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(q) = questions.get(i) else { break };
                let record = ask(backend, &model, &q.text, params, options.retries);
                *slots[i].lock().expect("slot lock") = Some(record);
            });
        }
    });
    let records: Vec<ResponseRecord> = slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every question asked"))
        .collect();
    let set = ResponseSet {
        model_name: model,
        records,
    };
    if set.n_missing() > 0 {
        log::warn!("{}: {}", set.model_name, set.missing_summary());
    }
    Ok(set)
}

fn ask(
    backend: &dyn ModelBackend,
    model: &str,
    question: &str,
    params: &GenerationParams,
    retries: usize,
) -> ResponseRecord {
    let mut attempt = 0;
    loop {
        match backend.generate(question, params) {
            Ok(text) => return ResponseRecord::ok(question, model, text),
            Err(e) if e.kind == FailureKind::Transient && attempt < retries => {
                log::info!("{model}: retrying after transient failure: {}", e.message);
                attempt += 1;
            }
            Err(e) => {
                log::warn!("{model}: no response for {question:?}: {e}");
                return ResponseRecord::missing(question, model, e.to_string());
            }
        }
    }
}

const RESPONSES_HEADER: [&str; 2] = ["Question", "Response"];

/// `responses_<model>.csv`.
pub fn responses_file_name(model: &str) -> String {
    format!("responses_{model}.csv")
}

/// Writes `Question,Response`; missing responses become empty cells.
pub fn save_responses(set: &ResponseSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(RESPONSES_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for r in &set.records {
        w.write_record([r.question.as_str(), r.response.as_deref().unwrap_or("")])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a responses file. The model name comes from the `responses_<model>.csv` file name.
pub fn load_responses(path: impl AsRef<Path>) -> Result<ResponseSet> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let model = stem.strip_prefix("responses_").unwrap_or(stem).to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    check_header(path, &mut rdr, &RESPONSES_HEADER)?;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let (q, r) = (&row[0], &row[1]);
        records.push(if r.trim().is_empty() {
            ResponseRecord::missing(q, &model, "empty response cell")
        } else {
            ResponseRecord::ok(q, &model, r.to_string())
        });
    }
    Ok(ResponseSet {
        model_name: model,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::atomic::AtomicUsize;

    struct FailOn {
        indices: Vec<usize>,
        kind: FailureKind,
        calls: AtomicUsize,
    }

    impl ModelBackend for FailOn {
        fn name(&self) -> &str {
            "failing"
        }
        fn generate(&self, prompt: &str, _: &GenerationParams) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let i: usize = prompt.trim_start_matches("Why ").trim_end_matches('?').parse().unwrap();
            if self.indices.contains(&i) {
                Err(BackendError {
                    kind: self.kind,
                    message: format!("fail {i}"),
                })
            } else {
                Ok(format!("answer {i}"))
            }
        }
    }

    fn questions(n: usize) -> Vec<QuestionRecord> {
        (0..n)
            .map(|i| QuestionRecord::offline(format!("Why {i}?")).unwrap())
            .collect()
    }

    #[test]
    fn nine_of_fifty_four_missing() {
        let backend = FailOn {
            indices: (0..54).step_by(6).collect(),
            kind: FailureKind::Permanent,
            calls: AtomicUsize::new(0),
        };
        let set = collect_responses(&backend, &questions(54), &GenerationParams::default(), CollectOptions::default()).unwrap();
        assert_eq!((set.n_present(), set.n_missing()), (45, 9));
        assert_eq!(format!("{:.2}", set.missing_percent()), "16.67");
        assert_eq!(set.missing_summary(), "9 missing responses (16.67% of the total)");
    }

    #[test]
    fn one_missing_and_retry() {
        let backend = FailOn {
            indices: vec![3],
            kind: FailureKind::Transient,
            calls: AtomicUsize::new(0),
        };
        let qs = questions(54);
        let opts = CollectOptions { parallelism: 4, retries: 1 };
        let set = collect_responses(&backend, &qs, &GenerationParams::default(), opts).unwrap();
        assert_eq!(format!("{:.2}", set.missing_percent()), "1.85");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 55);
        for (q, r) in qs.iter().zip(&set.records) {
            assert_eq!(q.text, r.question);
        }
        assert_eq!(set.records[4].response.as_deref(), Some("answer 4"));
    }

    #[test]
    fn echo_backend_identity() {
        let set = collect_responses(&EchoBackend::default(), &questions(5), &GenerationParams::default(), CollectOptions::default()).unwrap();
        assert!(set.records.iter().all(|r| r.response.as_deref() == Some(r.question.as_str())));
    }

    struct Down;
    impl ModelBackend for Down {
        fn name(&self) -> &str {
            "down"
        }
        fn check(&self) -> Result<()> {
            Err(Error::Transport {
                target: "down".into(),
                message: "connection refused".into(),
            })
        }
        fn generate(&self, _: &str, _: &GenerationParams) -> Result<String, BackendError> {
            unreachable!()
        }
    }

    #[test]
    fn unreachable_backend_aborts() {
        let err = collect_responses(&Down, &questions(2), &GenerationParams::default(), CollectOptions::default());
        assert!(matches!(err, Err(Error::Transport { .. })));
    }

    #[test]
    fn csv_load_examples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("responses_grok.csv");
        std::fs::write(&p, "Question,Response\n\"Why A?\",Because.\n¿Qué?,\"Sí, así\"\nHow?,\n").unwrap();
        let set = load_responses(&p).unwrap();
        assert_eq!(set.model_name, "grok");
        assert_eq!(set.n_present(), 2);
        assert_eq!(set.records[2].status, ResponseStatus::Missing);

        let bad = dir.path().join("responses_bad.csv");
        std::fs::write(&bad, "Q,Response\na,b\n").unwrap();
        assert!(matches!(load_responses(&bad), Err(Error::Format { .. })));
        let ragged = dir.path().join("responses_ragged.csv");
        std::fs::write(&ragged, "Question,Response\na,b\nc\n").unwrap();
        match load_responses(&ragged) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn save_load_round_trip(rows in proptest::collection::vec(("\\PC{1,20}", proptest::option::of("[a-záéíóúñç¿?,\" \n]{0,20}")), 1..10)) {
            let records: Vec<ResponseRecord> = rows.iter().map(|(q, r)| match r {
                Some(r) => ResponseRecord::ok(q.clone(), "m", r.clone()),
                None => ResponseRecord::missing(q.clone(), "m", "x"),
            }).collect();
            prop_assume!(records.iter().all(|r| !r.question.trim().is_empty() || r.question.is_empty()));
            let set = ResponseSet { model_name: "m".into(), records };
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join(responses_file_name("m"));
            save_responses(&set, &p).unwrap();
            let back = load_responses(&p).unwrap();
            prop_assert_eq!(back.records.len(), set.records.len());
            for (a, b) in set.records.iter().zip(&back.records) {
                prop_assert_eq!(&a.question, &b.question);
                prop_assert_eq!(&a.response, &b.response);
                prop_assert_eq!(a.status, b.status);
            }
        }
    }
}
