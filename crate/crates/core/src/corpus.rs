//! Question corpus ingestion: title filtering, deduplication and seeded sampling.

use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_key;

/// Subreddits scraped by default.
pub const DEFAULT_SUBREDDITS: [&str; 13] = [
    "AskLatinAmerica",
    "LatinAmerica",
    "Mexico",
    "Brazil",
    "Ecuador",
    "Colombia",
    "Peru",
    "Venezuela",
    "Chile",
    "Argentina",
    "Uruguay",
    "Bolivia",
    "Paraguay",
];

/// Environment variable holding an OAuth bearer token for the live forum source.
pub const SOURCE_TOKEN_ENV: &str = "CE_REDDIT_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Es,
    Pt,
    Unknown,
}

impl Language {
    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Es => "es",
            Language::Pt => "pt",
            Language::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "en" => Ok(Language::En),
            "es" => Ok(Language::Es),
            "pt" => Ok(Language::Pt),
            "unknown" | "" => Ok(Language::Unknown),
            other => Err(Error::invalid(format!("unknown language tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub text: String,
    pub source_url: String,
    pub subreddit: String,
    pub language_hint: Language,
}

impl QuestionRecord {
    pub fn new(
        text: impl Into<String>,
        source_url: impl Into<String>,
        subreddit: impl Into<String>,
        language_hint: Language,
    ) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invalid("question text is empty"));
        }
        Ok(QuestionRecord {
            text,
            source_url: source_url.into(),
            subreddit: subreddit.into(),
            language_hint,
        })
    }

    /// A record with no live origin, used for hand-written question lists.
    pub fn offline(text: impl Into<String>) -> Result<Self> {
        Self::new(text, "offline:", "offline", Language::Unknown)
    }
}

/// Interrogative title prefixes per language, checked in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub interrogative_keywords: Vec<(Language, Vec<String>)>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let list = |ks: &[&str]| ks.iter().map(|k| k.to_string()).collect::<Vec<_>>();
        FilterConfig {
            interrogative_keywords: vec![
                (Language::En, list(&["Why", "How", "What", "When", "Where"])),
                (
                    Language::Es,
                    list(&["¿", "Por qué", "Cómo", "Qué", "Dónde", "Cual"]),
                ),
                (Language::Pt, list(&["Quem"])),
            ],
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        for (lang, keywords) in &self.interrogative_keywords {
            if keywords.is_empty() || keywords.iter().any(|k| k.trim().is_empty()) {
                return Err(Error::Config(format!("empty keyword list for {lang}")));
            }
        }
        Ok(())
    }

    pub fn add_keyword(&mut self, language: Language, keyword: impl Into<String>) {
        let keyword = keyword.into();
        match self
            .interrogative_keywords
            .iter_mut()
            .find(|(l, _)| *l == language)
        {
            Some((_, ks)) => ks.push(keyword),
            None => self.interrogative_keywords.push((language, vec![keyword])),
        }
    }

    /// Language whose keyword list first matches the title prefix.
    pub fn matched_language(&self, title: &str) -> Option<Language> {
        let title = title.trim().to_lowercase();
        self.interrogative_keywords
            .iter()
            .find(|(_, ks)| {
                ks.iter()
                    .any(|k| title.starts_with(k.trim().to_lowercase().as_str()))
            })
            .map(|(lang, _)| *lang)
    }
}

pub fn is_question_title(title: &str, config: &FilterConfig) -> bool {
    config.matched_language(title).is_some()
}

/// Drops records whose casefolded, whitespace-collapsed text was already seen.
pub fn dedupe(records: Vec<QuestionRecord>) -> Vec<QuestionRecord> {
    let mut seen = HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert(normalize_key(&r.text)))
        .collect()
}

/// Seeded draw of `n` records without replacement. Both halves keep input order.
pub fn sample_subset<R: Clone>(records: &[R], n: usize, seed: u64) -> Result<(Vec<R>, Vec<R>)> {
    if n > records.len() {
        return Err(Error::invalid(format!(
            "cannot sample {n} records from {}",
            records.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, records.len(), n).into_vec();
    chosen.sort_unstable();
    Ok(split_by_index(records, &chosen))
}

/// Like [`sample_subset`], but questions named in `includes` (matched by text key) are always
/// in the subset and the remaining slots are drawn at random.
pub fn sample_with_includes(
    records: &[QuestionRecord],
    includes: &[String],
    n: usize,
    seed: u64,
) -> Result<(Vec<QuestionRecord>, Vec<QuestionRecord>)> {
    let wanted: HashSet<String> = includes.iter().map(|s| normalize_key(s)).collect();
    let forced: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| wanted.contains(&normalize_key(&r.text)))
        .map(|(i, _)| i)
        .collect();
    let found: HashSet<String> = forced
        .iter()
        .map(|&i| normalize_key(&records[i].text))
        .collect();
    if let Some(missing) = wanted.iter().find(|k| !found.contains(*k)) {
        return Err(Error::invalid(format!(
            "include-list question not in corpus: {missing:?}"
        )));
    }
    if forced.len() > n {
        return Err(Error::invalid(format!(
            "include list has {} questions but the subset size is {n}",
            forced.len()
        )));
    }
    let pool: Vec<usize> = (0..records.len()).filter(|i| !forced.contains(i)).collect();
    let (drawn, _) = sample_subset(&pool, n - forced.len(), seed)?;
    let mut chosen: Vec<usize> = forced.into_iter().chain(drawn).collect();
    chosen.sort_unstable();
    Ok(split_by_index(records, &chosen))
}

fn split_by_index<R: Clone>(records: &[R], sorted_chosen: &[usize]) -> (Vec<R>, Vec<R>) {
    let mut subset = Vec::with_capacity(sorted_chosen.len());
    let mut remainder = Vec::with_capacity(records.len() - sorted_chosen.len());
    let mut next = sorted_chosen.iter().peekable();
    for (i, r) in records.iter().enumerate() {
        if next.peek() == Some(&&i) {
            next.next();
            subset.push(r.clone());
        } else {
            remainder.push(r.clone());
        }
    }
    (subset, remainder)
}

/// One forum post as returned by a source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub title: String,
    pub url: String,
    pub subreddit: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedPost {
    pub subreddit: String,
    pub reason: String,
}

/// Something that can list posts of a subreddit.
pub trait ForumSource: Send + Sync {
    fn fetch(&self, subreddit: &str) -> Result<Vec<Result<RawPost, MalformedPost>>>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub fetched: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub malformed: usize,
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub records: Vec<QuestionRecord>,
    pub report: IngestReport,
}

type SourcePosts = Vec<Result<RawPost, MalformedPost>>;

/// Fetches every subreddit (at most `parallelism` at a time) and keeps question-like titles.
///
/// Results are merged in subreddit-list order, then in the order the source returned posts.
/// Duplicates are retained; see [`dedupe`].
pub fn ingest_source(
    client: &dyn ForumSource,
    subreddits: &[String],
    config: &FilterConfig,
    parallelism: usize,
) -> Result<IngestOutcome> {
    config.validate()?;
    let slots: Vec<Mutex<Option<Result<SourcePosts>>>> =
        subreddits.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..parallelism.clamp(1, subreddits.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= subreddits.len() {
                    break;
                }
                let fetched = client.fetch(&subreddits[i]);
                *slots[i].lock().expect("slot lock") = Some(fetched);
            });
        }
    });

    let mut report = IngestReport::default();
    let mut records = Vec::new();
    for (slot, subreddit) in slots.into_iter().zip(subreddits) {
        let posts = slot
            .into_inner()
            .expect("slot lock")
            .expect("every subreddit fetched")?;
        for post in posts {
            report.fetched += 1;
            let post = match post {
                Ok(p) if !p.title.trim().is_empty() => p,
                Ok(_) => {
                    log::warn!("r/{subreddit}: skipping post with empty title");
                    report.malformed += 1;
                    continue;
                }
                Err(m) => {
                    log::warn!("r/{}: skipping malformed post: {}", m.subreddit, m.reason);
                    report.malformed += 1;
                    continue;
                }
            };
            match config.matched_language(&post.title) {
                Some(lang) => {
                    report.accepted += 1;
                    let sub = if post.subreddit.is_empty() {
                        subreddit.clone()
                    } else {
                        post.subreddit
                    };
                    records.push(QuestionRecord {
                        text: post.title.trim().to_string(),
                        source_url: post.url,
                        subreddit: sub,
                        language_hint: lang,
                    });
                }
                None => report.rejected += 1,
            }
        }
    }
    Ok(IngestOutcome { records, report })
}

/// JSON-lines fixture: one `{"title", "url", "subreddit"}` object per line.
#[derive(Debug, Clone)]
pub struct JsonlFixtureSource {
    path: PathBuf,
    lines: Vec<String>,
}

impl JsonlFixtureSource {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let lines = std::io::BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(&path, e))?;
        Ok(JsonlFixtureSource { path, lines })
    }

    /// Subreddits mentioned in the fixture, in first-appearance order.
    pub fn subreddits(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for line in &self.lines {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(line) {
                if let Some(s) = v.get("subreddit").and_then(|s| s.as_str()) {
                    if !seen.iter().any(|x| x == s) {
                        seen.push(s.to_string());
                    }
                }
            }
        }
        seen
    }
}

impl ForumSource for JsonlFixtureSource {
    fn fetch(&self, subreddit: &str) -> Result<Vec<Result<RawPost, MalformedPost>>> {
        let mut out = Vec::new();
        for (n, line) in self.lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = match serde_json::from_str(line) {
                Ok(v) => v,
                Err(e) => {
                    // Unparseable lines cannot be attributed, so the first subreddit owns them.
                    if self.subreddits().first().map(String::as_str) == Some(subreddit) {
                        out.push(Err(MalformedPost {
                            subreddit: subreddit.to_string(),
                            reason: format!("{}:{}: {e}", self.path.display(), n + 1),
                        }));
                    }
                    continue;
                }
            };
            if value.get("subreddit").and_then(|s| s.as_str()) != Some(subreddit) {
                continue;
            }
            out.push(
                serde_json::from_value::<RawPost>(value).map_err(|e| MalformedPost {
                    subreddit: subreddit.to_string(),
                    reason: format!("{}:{}: {e}", self.path.display(), n + 1),
                }),
            );
        }
        Ok(out)
    }
}

/// Live Reddit listing client (`top` posts of all time).
///
/// Uses the OAuth API when [`SOURCE_TOKEN_ENV`] is set, the public JSON listing otherwise.
#[derive(Debug, Clone)]
pub struct RedditSource {
    pub limit: usize,
    pub retries: usize,
    pub backoff: Duration,
    token: Option<String>,
}

impl RedditSource {
    pub fn from_env() -> Self {
        RedditSource {
            limit: 100,
            retries: 2,
            backoff: Duration::from_millis(500),
            token: std::env::var(SOURCE_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        }
    }

    fn get(&self, subreddit: &str) -> std::result::Result<serde_json::Value, String> {
        let (base, auth) = match &self.token {
            Some(t) => ("https://oauth.reddit.com", Some(format!("Bearer {t}"))),
            None => ("https://www.reddit.com", None),
        };
        let url = format!(
            "{base}/r/{subreddit}/top.json?t=all&limit={}",
            self.limit
        );
        let mut req = ureq::get(&url).header("User-Agent", "ce-eval/0.1 (research corpus)");
        if let Some(a) = &auth {
            req = req.header("Authorization", a);
        }
        let mut resp = req.call().map_err(|e| e.to_string())?;
        resp.body_mut()
            .read_json::<serde_json::Value>()
            .map_err(|e| e.to_string())
    }
}

impl ForumSource for RedditSource {
    fn fetch(&self, subreddit: &str) -> Result<Vec<Result<RawPost, MalformedPost>>> {
        let mut last_err = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * (1 << (attempt - 1)));
            }
            match self.get(subreddit) {
                Ok(listing) => return Ok(parse_listing(subreddit, &listing)),
                Err(e) => last_err = e,
            }
        }
        Err(Error::Transport {
            target: format!("r/{subreddit}"),
            message: last_err,
        })
    }
}

fn parse_listing(subreddit: &str, listing: &serde_json::Value) -> Vec<Result<RawPost, MalformedPost>> {
    let children = listing
        .pointer("/data/children")
        .and_then(|c| c.as_array())
        .cloned()
        .unwrap_or_default();
    children
        .iter()
        .map(|child| {
            let data = child.get("data");
            let field = |k: &str| {
                data.and_then(|d| d.get(k))
                    .and_then(|v| v.as_str())
                    .map(str::to_string)
            };
            match (field("title"), field("permalink")) {
                (Some(title), Some(permalink)) => Ok(RawPost {
                    title,
                    url: format!("https://www.reddit.com{permalink}"),
                    subreddit: field("subreddit").unwrap_or_else(|| subreddit.to_string()),
                }),
                _ => Err(MalformedPost {
                    subreddit: subreddit.to_string(),
                    reason: "listing entry without title or permalink".into(),
                }),
            }
        })
        .collect()
}

const QUESTIONS_HEADER: [&str; 4] = ["Question", "URL", "Subreddit", "Language"];

pub fn write_questions_csv(path: impl AsRef<Path>, records: &[QuestionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(QUESTIONS_HEADER)
        .map_err(|e| csv_error(path, e))?;
    for r in records {
        w.write_record([
            r.text.as_str(),
            r.source_url.as_str(),
            r.subreddit.as_str(),
            r.language_hint.code(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_questions_csv(path: impl AsRef<Path>) -> Result<Vec<QuestionRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    check_header(path, &mut rdr, &QUESTIONS_HEADER)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let lang = row[3].parse().map_err(|e: Error| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let rec = QuestionRecord::new(&row[0], &row[1], &row[2], lang).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Include-list file: one question per line, `#` starts a comment.
pub fn read_include_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub(crate) fn check_header<R: std::io::Read>(
    path: &Path,
    rdr: &mut csv::Reader<R>,
    expected: &[&str],
) -> Result<()> {
    let header = rdr.headers().map_err(|e| csv_error(path, e))?;
    let got: Vec<&str> = header.iter().map(|h| h.trim_start_matches('\u{feff}')).collect();
    if got != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}
